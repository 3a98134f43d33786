//! Task dispatch: builds the model, runs the solver and writes the tables.

use std::sync::Arc;

use hybrid_oc::hjb::{closed_loop, solve_dp, Axis, DpConfig};
use hybrid_oc::hpmp::{
    fiber_seed, intersect_clouds, mesh_shoot, optimal_hamiltonian, propagate_lagrangian, terminal_seed, with_subproblem_closure,
    Direction, ExtremalConfig, NewtonConfig, OptimalControlProblem, ShootingMesh,
};
use hybrid_oc::hybrid::{accumulation_time, flow, FlowConfig, FlowError, HybridArc, HybridSystem};
use hybrid_oc::models::ball::{build_ball, impact_time, zeno_time, zeno_transition_limit, BallParams, Table as BallTable};
use hybrid_oc::models::mirror::{build_mirror, MirrorParams};
use hybrid_oc::models::neuron::{build_neuron, NeuronParams, NeuronReset};
use hybrid_oc::saltation::{caustic_trajectory, conjugate_points, propagate_variational, ConjugateConfig, ConjugateKind};
use serde::Serialize;

use crate::error::CliError;
use crate::output::{num, RunDir, Table};
use crate::scenario::{DirectionSpec, ModelSpec, ResetSpec, Scenario, SeedSpec, TableSpec, TaskSpec};

/// Contents of `run.json`.
#[derive(Debug, Serialize)]
pub struct RunMeta {
    pub name: Option<String>,
    pub model: String,
    pub task: String,
    pub state_dim: usize,
    /// Trajectory table used by `compare`, if the task wrote one.
    pub trajectory: Option<String>,
    pub status: &'static str,
    pub summary: String,
    pub files: Vec<String>,
}

fn ball_params(m: &ModelSpec) -> Option<BallParams> {
    match *m {
        ModelSpec::Ball { m, g, c, table } => Some(BallParams {
            m,
            g,
            c,
            table: match table {
                TableSpec::Stationary => BallTable::Stationary,
                TableSpec::Oscillating { amplitude, omega } => BallTable::Oscillating { amplitude, omega },
            },
        }),
        _ => None,
    }
}

fn neuron_params(m: &ModelSpec) -> Option<(NeuronParams, NeuronReset)> {
    match *m {
        ModelSpec::Neuron { eta, w, i0, horizon, reset } => Some((
            NeuronParams { eta, w, i0, horizon },
            match reset {
                ResetSpec::Corrected => NeuronReset::Corrected,
                ResetSpec::Naive => NeuronReset::Naive,
            },
        )),
        _ => None,
    }
}

/// Parameter validation through the model constructors.
pub fn check_model(m: &ModelSpec) -> Result<(), CliError> {
    let r = match m {
        ModelSpec::Ball { .. } => build_ball(&ball_params(m).unwrap()).map(|_| ()),
        ModelSpec::Neuron { .. } => {
            let (p, v) = neuron_params(m).unwrap();
            build_neuron(&p, v).map(|_| ())
        }
        ModelSpec::Mirror { a, b, horizon } => build_mirror(&MirrorParams { a: *a, b: *b, horizon: *horizon }).map(|_| ()),
    };
    r.map_err(|e| CliError::Validation(e.to_string()))
}

fn control_problem(m: &ModelSpec) -> Option<OptimalControlProblem> {
    match m {
        ModelSpec::Ball { .. } => None,
        ModelSpec::Neuron { .. } => {
            let (p, v) = neuron_params(m).unwrap();
            build_neuron(&p, v).ok()
        }
        ModelSpec::Mirror { a, b, horizon } => build_mirror(&MirrorParams { a: *a, b: *b, horizon: *horizon }).ok(),
    }
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i}")).collect()
}

/// Uniform samples of an arc plus both one-sided states at every event.
fn trajectory_rows(arc: &HybridArc, samples: usize) -> Vec<(f64, Vec<f64>)> {
    let (a, b) = (arc.t_start(), arc.t_end());
    let grid: Vec<f64> = (0..samples).map(|i| a + (b - a) * i as f64 / (samples - 1).max(1) as f64).collect();
    let mut out = Vec::new();
    for seg in &arc.segments {
        out.push((seg.t_start, seg.start_state()));
        for &t in grid.iter().filter(|&&t| t > seg.t_start && t < seg.t_end) {
            out.push((t, seg.state_at(t)));
        }
        if seg.t_end > seg.t_start {
            out.push((seg.t_end, seg.end_state()));
        }
    }
    // resets that fired at the end of the arc have no segment of their own
    let last = arc.segments.last().map_or(f64::NEG_INFINITY, |s| s.t_start);
    for e in arc.events.iter().filter(|e| e.t > last) {
        out.push((e.t, e.x_post.clone()));
    }
    out
}

fn events_table(arc: &HybridArc) -> Table {
    let mut t = Table::new(&["k", "t_k", "x_pre", "y_pre", "x_post", "y_post", "guard_id", "beat_count"]);
    for (k, e) in arc.events.iter().enumerate() {
        t.row(vec![
            k.to_string(),
            num(e.t),
            num(e.x_pre[0]),
            num(e.x_pre[1]),
            num(e.x_post[0]),
            num(e.x_post[1]),
            e.guard_id.clone(),
            e.beat_count.to_string(),
        ]);
    }
    t
}

fn state_trajectory(arc: &HybridArc, samples: usize, control: Option<&dyn Fn(f64, &[f64]) -> Vec<f64>>, m: usize) -> Table {
    let n = arc.dim;
    let mut header = vec!["t".to_string()];
    header.extend(indexed("x", n));
    if control.is_some() {
        header.extend(indexed("u", m));
    }
    let mut t = Table::new(&header);
    for (s, x) in trajectory_rows(arc, samples) {
        let mut r = vec![num(s)];
        r.extend(x.iter().map(|v| num(*v)));
        if let Some(u) = control {
            r.extend(u(s, &x).iter().map(|v| num(*v)));
        }
        t.row(r);
    }
    t
}

/// Runs the scenario and returns the one-line summary.
pub fn run(s: &Scenario, out: &mut RunDir) -> Result<RunMeta, CliError> {
    let n = s.model.dim();
    let mut trajectory = None;
    let mut status = "ok";
    let summary = match &s.task {
        TaskSpec::Simulate { x0, t_span, control, samples, max_events, zeno_window, tol_transversal } => {
            let cfg = FlowConfig {
                zeno_window: (*zeno_window > 0).then_some(*zeno_window),
                max_events: *max_events,
                tol_transversal: *tol_transversal,
                ..FlowConfig::default()
            };
            let (sys, u): (HybridSystem, Option<Vec<f64>>) = match control_problem(&s.model) {
                None => (build_ball(&ball_params(&s.model).unwrap()).unwrap(), None),
                Some(ocp) => {
                    let u = control.clone().unwrap_or_else(|| vec![0.0; ocp.system.control_dim()]);
                    let v = u.clone();
                    (ocp.closed_loop_system(move |_, _| v.clone()), Some(u))
                }
            };
            let r = flow(&sys, x0, (t_span[0], t_span[1]), &cfg);
            let (arc, note, err) = match r {
                Ok(a) => (a, String::new(), None),
                Err(FlowError::ZenoDetected { t_zeno, arc }) => {
                    status = "zeno_detected";
                    (*arc, format!(", Zeno accumulation at t = {t_zeno:.9}"), None)
                }
                Err(e) => match e.partial_arc() {
                    Some(a) => (a.clone(), String::new(), Some(e)),
                    None => return Err(CliError::solver(e.name(), e)),
                },
            };
            out.table("events.csv", &events_table(&arc))?;
            let m = u.as_ref().map_or(0, Vec::len);
            let uf = u.map(|u| move |_: f64, _: &[f64]| u.clone());
            let traj = state_trajectory(&arc, *samples, uf.as_ref().map(|f| f as &dyn Fn(f64, &[f64]) -> Vec<f64>), m);
            out.table("trajectory.csv", &traj)?;
            trajectory = Some("trajectory.csv".to_string());
            if let Some(e) = err {
                return Err(CliError::solver(e.name(), e));
            }
            format!("simulate: {} events, status {}{note}", arc.events.len(), arc.status.as_str())
        }
        TaskSpec::Variational { x0, t_span, samples } => {
            let sys = build_ball(&ball_params(&s.model).unwrap()).unwrap();
            let cfg = FlowConfig::default();
            let arc = flow(&sys, x0, (t_span[0], t_span[1]), &cfg).map_err(|e| CliError::solver(e.name(), e))?;
            let trace = propagate_variational(&sys, &arc, &cfg).map_err(|e| CliError::solver(e.name(), e))?;
            let entries: Vec<String> = (1..=n).flat_map(|i| (1..=n).map(move |j| format!("{i}{j}"))).collect();
            let mut header = vec!["t".to_string()];
            header.extend(entries.iter().map(|e| format!("phi_{e}")));
            let mut phi = Table::new(&header);
            for (t, _) in trajectory_rows(&arc, *samples) {
                let m = trace.phi_at(t).phi;
                let mut r = vec![num(t)];
                r.extend((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| num(m[(i, j)])));
                phi.row(r);
            }
            out.table("phi.csv", &phi)?;
            let mut header = vec!["t".to_string()];
            header.extend(entries.iter().map(|e| format!("s_{e}")));
            let mut jumps = Table::new(&header);
            for j in &trace.jumps {
                let mut r = vec![num(j.t)];
                r.extend((0..n).flat_map(|i| (0..n).map(move |k| (i, k))).map(|(i, k)| num(j.saltation[(i, k)])));
                jumps.row(r);
            }
            out.table("jumps.csv", &jumps)?;
            let conj = conjugate_points(&trace, (t_span[0], t_span[1]), &ConjugateConfig::default());
            let mut ct = Table::new(&["t", "kind"]);
            for c in &conj {
                ct.row(vec![num(c.t), kind_name(c.kind).into()]);
            }
            out.table("conjugate.csv", &ct)?;
            format!("variational: {} jumps, {} conjugate points", trace.jumps.len(), conj.len())
        }
        TaskSpec::Caustic { x0, p0, t_span, window } => {
            let sys = build_ball(&ball_params(&s.model).unwrap()).unwrap();
            let momenta: Vec<Vec<f64>> = {
                let m = ShootingMesh::cube(1, p0.lo, p0.hi, p0.n);
                (0..m.len()).map(|k| m.point(k)).collect()
            };
            let w = window.unwrap_or(*t_span);
            let cloud = caustic_trajectory(
                &sys,
                x0,
                &momenta,
                (t_span[0], t_span[1]),
                (w[0], w[1]),
                &FlowConfig::default(),
                &ConjugateConfig::default(),
            );
            let mut t = Table::new(&["p0", "t_star", "x_star"]);
            for c in &cloud.points {
                t.row(vec![num(c.p0[0]), num(c.t), num(c.x[0])]);
            }
            out.table("caustic.csv", &t)?;
            let mut sk = Table::new(&["p0", "error"]);
            for (p, e) in &cloud.skipped {
                sk.row(vec![num(p[0]), e.clone()]);
            }
            out.table("skipped.csv", &sk)?;
            format!("caustic: {} points from {} momenta, {} skipped", cloud.points.len(), momenta.len(), cloud.skipped.len())
        }
        TaskSpec::Dp { grid, controls, times, control_range, max_substeps, slice_stride, x0, samples } => {
            let ocp = control_problem(&s.model).unwrap();
            let bx = ocp.state_box.clone().ok_or_else(|| CliError::Validation("dp needs a model with a state box".into()))?;
            let cfg = DpConfig {
                axes: (0..n).map(|i| Axis::new(bx.lower[i], bx.upper[i], *grid)).collect(),
                controls: vec![Axis::new(control_range[0], control_range[1], *controls).points(); ocp.system.control_dim()],
                n_times: *times,
                max_substeps: *max_substeps,
                tol_event: 1e-12,
            };
            let g = solve_dp(&ocp, &cfg).map_err(|e| CliError::solver(e.name(), e))?;
            let mut axes = Table::new(&["axis", "index", "value"]);
            for (i, a) in g.axes.iter().enumerate() {
                for (k, v) in a.points().iter().enumerate() {
                    axes.row(vec![format!("x_{i}"), k.to_string(), num(*v)]);
                }
            }
            for (i, grid) in cfg.controls.iter().enumerate() {
                for (k, v) in grid.iter().enumerate() {
                    axes.row(vec![format!("u_{i}"), k.to_string(), num(*v)]);
                }
            }
            for (k, t) in g.times.iter().enumerate() {
                axes.row(vec!["t".into(), k.to_string(), num(*t)]);
            }
            out.table("axes.csv", &axes)?;
            let last = g.times.len() - 1;
            let m = g.control_dim;
            let mut vh = indexed("i", n);
            vh.extend(indexed("x", n));
            let mut ph = vh.clone();
            vh.push("value".into());
            ph.extend(indexed("u", m));
            for k in (0..=last).filter(|k| k % slice_stride == 0 || *k == last) {
                let mut vt = Table::new(&vh);
                let mut pt = Table::new(&ph);
                for node in 0..g.node_count() {
                    let mut ids = Vec::with_capacity(n);
                    let mut r = node;
                    for a in &g.axes {
                        ids.push(r % a.n);
                        r /= a.n;
                    }
                    let x = g.node(node);
                    let mut head: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
                    head.extend(x.iter().map(|v| num(*v)));
                    let mut vr = head.clone();
                    vr.push(num(g.values[k][node]));
                    vt.row(vr);
                    let mut pr = head;
                    pr.extend(g.policy[k][node * m..(node + 1) * m].iter().map(|v| num(*v)));
                    pt.row(pr);
                }
                out.table(&format!("values_t{k}.csv"), &vt)?;
                out.table(&format!("policy_t{k}.csv"), &pt)?;
            }
            let mut line = format!("dp: {} nodes x {} times, {} substeps", g.node_count(), g.times.len(), g.substeps);
            if let Some(x0) = x0 {
                let run = closed_loop(&ocp, &g, x0, &FlowConfig::default()).map_err(|e| CliError::solver(e.name(), e))?;
                let gp = Arc::new(g.clone());
                let policy = move |t: f64, x: &[f64]| {
                    let y: Vec<f64> = x.iter().zip(&gp.axes).map(|(v, a)| v.clamp(a.lo, a.hi)).collect();
                    let tc = t.clamp(gp.times[0], *gp.times.last().unwrap());
                    gp.policy_at_slice(gp.slice(tc), &y)
                };
                out.table("trajectory.csv", &state_trajectory(&run.arc, *samples, Some(&policy), m))?;
                out.table("events.csv", &events_table(&run.arc))?;
                trajectory = Some("trajectory.csv".to_string());
                line.push_str(&format!(
                    "; closed loop from {x0:?}: cost {:.6}, value {:.6}, {} events",
                    run.cost,
                    g.value_at(0, x0),
                    run.arc.events.len()
                ));
            }
            line
        }
        TaskSpec::Shoot { x0, mesh, eps, newton, min_events, closure, samples } => {
            let base = control_problem(&s.model).unwrap();
            let cfg = ExtremalConfig::default();
            let ocp = match closure {
                Some(c) => {
                    with_subproblem_closure(&base, &cfg, c.lo, c.hi, c.n, c.tol).map_err(|e| CliError::solver(e.name(), e))?
                }
                None => base,
            };
            let m = ShootingMesh {
                eps_terminal: *eps,
                min_events: *min_events,
                newton: newton.then(NewtonConfig::default),
                ..ShootingMesh::cube(n, mesh.lo, mesh.hi, mesh.n)
            };
            let r = mesh_shoot(&ocp, x0, &m, &cfg).map_err(|e| CliError::solver(e.name(), e))?;
            let mut header = vec!["index".to_string()];
            header.extend(indexed("p0", n));
            header.extend(["residual", "cost", "events", "accepted", "failure"].map(String::from));
            let mut ct = Table::new(&header);
            for c in &r.table {
                let mut row = vec![c.index.to_string()];
                row.extend(c.p0.iter().map(|v| num(*v)));
                row.extend([
                    num(c.residual),
                    num(c.cost),
                    c.events.to_string(),
                    u8::from(c.accepted).to_string(),
                    c.failure.clone().unwrap_or_default(),
                ]);
                ct.row(row);
            }
            out.table("candidates.csv", &ct)?;
            let h = optimal_hamiltonian(&ocp).map_err(|e| CliError::solver(e.name(), e))?;
            let mu = ocp.system.control_dim();
            let mut header = vec!["t".to_string()];
            header.extend(indexed("x", n));
            header.extend(indexed("p", n));
            header.extend(indexed("u", mu));
            let mut bt = Table::new(&header);
            for (t, z) in trajectory_rows(&r.best.arc, *samples) {
                let u = h.argmin(t, &z[..n], &z[n..]).unwrap_or_else(|_| vec![f64::NAN; mu]);
                let mut row = vec![num(t)];
                row.extend(z.iter().chain(&u).map(|v| num(*v)));
                bt.row(row);
            }
            out.table("best_trajectory.csv", &bt)?;
            out.table("events.csv", &events_table(&r.best.arc))?;
            trajectory = Some("best_trajectory.csv".to_string());
            format!(
                "shoot: {} of {} candidates accepted; best index {} p0 {:?} cost {:.6} residual {:.3e}, {} events, {} Newton iterations",
                r.accepted().count(),
                r.table.len(),
                r.best_index,
                r.best_p0,
                r.best.cost,
                r.best.residual_norm(),
                r.best.event_count(),
                r.newton_iterations
            )
        }
        TaskSpec::Lagrangian { seed, x0, mesh, direction, t_span, intersect } => {
            let ocp = control_problem(&s.model).unwrap();
            let cfg = ExtremalConfig::default();
            let sm = ShootingMesh::cube(n, mesh.lo, mesh.hi, mesh.n);
            let seeds = match seed {
                SeedSpec::Fiber => fiber_seed(x0.as_ref().unwrap(), &sm),
                SeedSpec::Terminal => terminal_seed(&ocp, &(0..sm.len()).map(|k| sm.point(k)).collect::<Vec<_>>()),
            };
            let dir = match direction {
                DirectionSpec::Forward => Direction::Forward,
                DirectionSpec::Backward => Direction::Backward,
            };
            let cloud = propagate_lagrangian(&ocp, &seeds, dir, (t_span[0], t_span[1]), &cfg)
                .map_err(|e| CliError::solver(e.name(), e))?;
            let mut header = vec!["seed".to_string(), "t".into(), "events".into()];
            header.extend(indexed("x", n));
            header.extend(indexed("p", n));
            let mut ct = Table::new(&header);
            for c in &cloud.points {
                let mut row = vec![c.seed.to_string(), num(c.t), c.events.to_string()];
                row.extend(c.z.iter().map(|v| num(*v)));
                ct.row(row);
            }
            out.table("cloud.csv", &ct)?;
            let mut ft = Table::new(&["seed", "error"]);
            for (k, e) in &cloud.failed {
                ft.row(vec![k.to_string(), e.clone()]);
            }
            out.table("failed.csv", &ft)?;
            let mut line = format!("lagrangian: {} of {} seeds propagated", cloud.points.len(), seeds.len());
            if let Some(tol) = intersect {
                let ends: Vec<Vec<f64>> = cloud.points.iter().map(|c| c.z[..n].to_vec()).collect();
                let other = terminal_seed(&ocp, &ends);
                let matches = intersect_clouds(&cloud.states(), &other, *tol);
                let mut mt = Table::new(&["seed", "distance"]);
                for m in &matches {
                    mt.row(vec![cloud.points[m.a].seed.to_string(), num(m.distance)]);
                }
                out.table("matches.csv", &mt)?;
                line.push_str(&format!("; {} points within {tol:e} of the terminal Lagrangian", matches.len()));
            }
            line
        }
        TaskSpec::Zeno { x0, impacts, tol_transversal } => {
            let p = ball_params(&s.model).unwrap();
            let sys = build_ball(&p).unwrap();
            let cfg = FlowConfig {
                tol_transversal: *tol_transversal,
                zeno_window: None,
                max_events: Some(*impacts),
                ..FlowConfig::default()
            };
            let t_closed = zeno_time(&p, x0[0], x0[1]);
            let t_end = if t_closed.is_finite() { 2.0 * t_closed + 1.0 } else { 1e3 };
            let arc = flow(&sys, x0, (0.0, t_end), &cfg).map_err(|e| CliError::solver(e.name(), e))?;
            let trace = propagate_variational(&sys, &arc, &cfg).map_err(|e| CliError::solver(e.name(), e))?;
            let first = arc.events.first().map_or(0.0, |e| e.t);
            let leave = arc.events.first().map_or(0.0, |e| e.x_post[1]);
            let mut it = Table::new(&["k", "t_k", "t_k_closed_form", "gap", "y_post"]);
            let mut prev = 0.0;
            for (k, e) in arc.events.iter().enumerate() {
                // closed-form times after the first impact
                let closed = if k == 0 { first } else { first + impact_time(&p, leave, k as u32) };
                it.row(vec![(k + 1).to_string(), num(e.t), num(closed), num(e.t - prev), num(e.x_post[1])]);
                prev = e.t;
            }
            out.table("impacts.csv", &it)?;
            let detect = FlowConfig { tol_transversal: *tol_transversal, ..FlowConfig::default() };
            let detected = accumulation_time(&sys, x0, (0.0, t_end), &detect).map_err(|e| CliError::solver(e.name(), e))?;
            let phi = trace.final_phi().phi;
            let mut zt = Table::new(&["quantity", "value"]);
            zt.row(vec!["t_zeno_closed_form".into(), num(t_closed)]);
            zt.row(vec!["t_zeno_detected".into(), num(detected.unwrap_or(f64::NAN))]);
            for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                zt.row(vec![format!("phi_{}{}", i + 1, j + 1), num(phi[(i, j)])]);
            }
            if leave > 0.0 {
                let lim = zeno_transition_limit(&p, leave);
                for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    zt.row(vec![format!("phi_limit_{}{}", i + 1, j + 1), num(lim[(i, j)])]);
                }
            }
            out.table("zeno.csv", &zt)?;
            format!(
                "zeno: {} impacts, closed-form t_Z {:.9}, detected {}",
                arc.events.len(),
                t_closed,
                detected.map_or("none".to_string(), |t| format!("{t:.9}"))
            )
        }
    };
    Ok(RunMeta {
        name: s.name.clone(),
        model: s.model.id().into(),
        task: s.task.id().into(),
        state_dim: n,
        trajectory,
        status,
        summary,
        files: Vec::new(),
    })
}

fn kind_name(k: ConjugateKind) -> &'static str {
    match k {
        ConjugateKind::SignChange => "sign_change",
        ConjugateKind::Tangential => "tangential",
        ConjugateKind::Degenerate => "degenerate",
    }
}
