use std::sync::Arc;

use hybrid_oc::hjb::{closed_loop, extract_policy, solve_dp, Axis, DpConfig, DpError};
use hybrid_oc::hpmp::{ControlSet, ControlSystem, OptimalControlProblem, Terminal};
use hybrid_oc::hybrid::{AffineGuard, FlowConfig, Guard};
use hybrid_oc::models::neuron::{build_neuron, NeuronParams, NeuronReset};

/// `ẋ = u`, `ℓ = ½u² + ½x²`.
struct Lqr;

impl ControlSystem for Lqr {
    fn dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn field(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }
    fn running_cost(&self, _t: f64, x: &[f64], u: &[f64]) -> f64 {
        0.5 * (u[0] * u[0] + x[0] * x[0])
    }
}

/// `ẋ = (1 + u, 0)` with `ℓ = ½u²`.
struct Drift;

impl ControlSystem for Drift {
    fn dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn field(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = 1.0 + u[0];
        out[1] = 0.0;
    }
    fn running_cost(&self, _t: f64, _x: &[f64], u: &[f64]) -> f64 {
        0.5 * u[0] * u[0]
    }
}

fn lqr() -> OptimalControlProblem {
    OptimalControlProblem::new(Arc::new(Lqr), Terminal::zero(1), ControlSet::Unbounded(1), (0.0, 1.0))
}

fn lqr_config() -> DpConfig {
    DpConfig {
        axes: vec![Axis::new(-1.0, 1.0, 101)],
        controls: vec![Axis::new(-2.0, 2.0, 401).points()],
        n_times: 101,
        max_substeps: 4,
        tol_event: 1e-12,
    }
}

#[test]
fn scalar_lqr_matches_riccati() {
    let grid = solve_dp(&lqr(), &lqr_config()).unwrap();
    // P(t) = tanh(1 − t) solves −Ṗ = 1 − P², P(1) = 0
    let p0 = 1f64.tanh();
    for x in [0.3, 0.5, -0.6] {
        let exact = 0.5 * p0 * x * x;
        let v = grid.value_at(0, &[x]);
        assert!((v - exact).abs() <= 0.02 * exact, "x = {x}: {v} vs {exact}");
    }
}

#[test]
fn terminal_slice_is_terminal_cost() {
    let ocp = OptimalControlProblem::new(
        Arc::new(Lqr),
        Terminal::Cost { g: Arc::new(|x| 3.0 * x[0] * x[0]), dg: Arc::new(|x| vec![6.0 * x[0]]) },
        ControlSet::Unbounded(1),
        (0.0, 1.0),
    );
    let grid = solve_dp(&ocp, &lqr_config()).unwrap();
    let last = grid.values.last().unwrap();
    for (i, v) in last.iter().enumerate() {
        let x = grid.node(i)[0];
        assert_eq!(*v, 3.0 * x * x);
    }
}

#[test]
fn on_node_query_returns_stored_argmin() {
    let grid = solve_dp(&lqr(), &lqr_config()).unwrap();
    for (k, i) in [(0usize, 20usize), (37, 64), (99, 3)] {
        let u = extract_policy(&grid, grid.times[k], &grid.node(i)).unwrap();
        assert_eq!(u[0], grid.policy[k][i]);
    }
    assert!(matches!(extract_policy(&grid, 0.5, &[1.5]), Err(DpError::OutOfGrid { .. })));
    assert!(matches!(extract_policy(&grid, 1.5, &[0.0]), Err(DpError::OutOfGrid { .. })));
}

#[test]
fn coarse_time_grid_is_rejected() {
    let cfg = DpConfig { n_times: 3, ..lqr_config() };
    assert!(matches!(solve_dp(&lqr(), &cfg), Err(DpError::GridTooCoarse { .. })));
}

#[test]
fn zero_cost_problem_keeps_control_at_zero() {
    struct Free;
    impl ControlSystem for Free {
        fn dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn field(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
            out[0] = u[0];
        }
        fn running_cost(&self, _t: f64, _x: &[f64], _u: &[f64]) -> f64 {
            0.0
        }
    }
    let ocp = OptimalControlProblem::new(Arc::new(Free), Terminal::zero(1), ControlSet::Unbounded(1), (0.0, 1.0));
    let grid = solve_dp(&ocp, &lqr_config()).unwrap();
    assert!(grid.policy.iter().flatten().all(|u| *u == 0.0));
    let run = closed_loop(&ocp, &grid, &[0.3], &FlowConfig::default()).unwrap();
    assert!((run.arc.final_state()[0] - 0.3).abs() < 1e-14);
    assert_eq!(run.cost, 0.0);
}

#[test]
fn identity_reset_matches_guard_free_values() {
    // a guard whose reset is the identity must not change the value
    let cfg = DpConfig {
        axes: vec![Axis::new(0.0, 1.0, 41), Axis::new(0.0, 1.0, 5)],
        controls: vec![Axis::new(-0.5, 0.5, 21).points()],
        n_times: 41,
        max_substeps: 4,
        tol_event: 1e-12,
    };
    let terminal = Terminal::Cost { g: Arc::new(|x| (x[0] - 0.8).powi(2)), dg: Arc::new(|x| vec![2.0 * (x[0] - 0.8), 0.0]) };
    let plain = OptimalControlProblem::new(Arc::new(Drift), terminal.clone(), ControlSet::Unbounded(1), (0.0, 0.5));
    let mut guarded = OptimalControlProblem::new(Arc::new(Drift), terminal, ControlSet::Unbounded(1), (0.0, 0.5));
    guarded.guards = vec![Arc::new(AffineGuard::identity("wall", 2, 0, 0.43, true)) as Arc<dyn Guard>];
    let a = solve_dp(&plain, &cfg).unwrap();
    let b = solve_dp(&guarded, &cfg).unwrap();
    let diff = a.values[0].iter().zip(&b.values[0]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn translating_reset_uses_post_reset_values() {
    // crossing x = 0.5 jumps back to x − 0.25
    let cfg = DpConfig {
        axes: vec![Axis::new(0.0, 1.0, 201), Axis::new(0.0, 1.0, 3)],
        controls: vec![vec![0.0]],
        n_times: 2,
        max_substeps: 4,
        tol_event: 1e-12,
    };
    let terminal = Terminal::Cost { g: Arc::new(|x| x[0]), dg: Arc::new(|_| vec![1.0, 0.0]) };
    let mut ocp = OptimalControlProblem::new(Arc::new(Drift), terminal, ControlSet::Unbounded(1), (0.0, 0.01));
    let jump = hybrid_oc::hybrid::AffineBoxChart {
        axis: 0,
        level: 0.5,
        fires_above: true,
        lower: vec![0.0, 0.0],
        upper: vec![1.0, 1.0],
        reset: vec![(Some(0), 1.0, -0.25), (Some(1), 1.0, 0.0)],
    };
    ocp.guards = vec![Arc::new(AffineGuard::new("jump", jump)) as Arc<dyn Guard>];
    let grid = solve_dp(&ocp, &cfg).unwrap();
    // 0.495 reaches 0.5 halfway through the step, jumps to 0.25 and ends at 0.255
    assert!((grid.value_at(0, &[0.495, 0.5]) - 0.255).abs() < 1e-12);
    assert!((grid.value_at(0, &[0.48, 0.5]) - 0.49).abs() < 1e-12);
}

fn neuron_smoke() -> (OptimalControlProblem, hybrid_oc::hjb::ValueGrid) {
    let ocp = build_neuron(&NeuronParams::default(), NeuronReset::Corrected).unwrap();
    let grid = solve_dp(&ocp, &DpConfig::unit_square(50, 50, 80)).unwrap();
    (ocp, grid)
}

#[test]
fn neuron_smoke_grid() {
    let (ocp, grid) = neuron_smoke();
    assert!(grid.values.last().unwrap().iter().all(|v| *v == 0.0));
    assert!(grid.values.iter().flatten().all(|v| v.is_finite()));

    // single input on the first neuron: swapping the neurons changes V
    let asym = (0..50)
        .flat_map(|i| (0..50).map(move |j| (i, j)))
        .map(|(i, j)| {
            let a = grid.values[0][grid.index(&[i, j])];
            let b = grid.values[0][grid.index(&[j, i])];
            (a - b).abs()
        })
        .fold(0.0, f64::max);
    assert!(asym > 1e-3, "{asym}");

    // no synchronisation penalty near the horizon on the diagonal
    let k = grid.times.len() - 2;
    for i in [10usize, 20, 30] {
        let u = grid.policy[k][grid.index(&[i, i])];
        assert!(u.abs() <= 0.1, "u = {u} at node {i}");
    }

    let run = closed_loop(&ocp, &grid, &[0.2, 0.8], &FlowConfig::default()).unwrap();
    let slack = 3.0 * (1.0 / 49.0) * 2.0;
    assert!(run.cost >= grid.value_at(0, &[0.2, 0.8]) - slack);
}
