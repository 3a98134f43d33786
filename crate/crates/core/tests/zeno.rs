use hybrid_oc::hybrid::{accumulation_time, flow, FlowConfig, TerminalStatus};
use hybrid_oc::models::ball::{build_ball, impact_time, zeno_time, zeno_transition_limit, BallParams};
use hybrid_oc::saltation::propagate_variational;
use nalgebra::DVector;

fn damped() -> BallParams {
    BallParams::damped(1.0, 2.0, 0.5)
}

fn forty_impacts() -> FlowConfig {
    FlowConfig { tol_transversal: 1e-15, zeno_window: None, max_events: Some(40), ..FlowConfig::default() }
}

#[test]
fn closed_form_examples() {
    let p = damped();
    assert!((zeno_time(&p, 0.0, 1.0) - 2.0).abs() < 1e-15);
    assert_eq!(zeno_time(&p, 0.0, 0.0), 0.0);
    assert_eq!(zeno_time(&BallParams::elastic(1.0, 2.0), 0.0, 1.0), f64::INFINITY);
    let near = BallParams::damped(1.0, 2.0, 0.999_999);
    assert!(zeno_time(&near, 0.0, 1.0) > 1e5);
}

#[test]
fn impact_times_are_partial_sums() {
    let p = damped();
    let arc = flow(&build_ball(&p).unwrap(), &[0.0, 1.0], (0.0, 3.0), &forty_impacts()).unwrap();
    assert_eq!(arc.status, TerminalStatus::EventLimit);
    assert_eq!(arc.events.len(), 40);
    for (k, t) in arc.event_times().iter().enumerate() {
        assert!((t - impact_time(&p, 1.0, k as u32 + 1)).abs() <= 1e-8);
    }
}

#[test]
fn detected_accumulation_time() {
    let p = damped();
    let cfg = FlowConfig { tol_transversal: 1e-12, ..FlowConfig::default() };
    let t = accumulation_time(&build_ball(&p).unwrap(), &[0.0, 1.0], (0.0, 3.0), &cfg).unwrap().unwrap();
    assert!((t - 2.0).abs() <= 1e-6, "{t}");
    let elastic = build_ball(&BallParams::elastic(1.0, 2.0)).unwrap();
    assert_eq!(accumulation_time(&elastic, &[1.0, 0.0], (0.0, 10.0), &cfg).unwrap(), None);
}

#[test]
fn transition_product_reaches_the_limit() {
    let p = damped();
    let sys = build_ball(&p).unwrap();
    let cfg = forty_impacts();
    let arc = flow(&sys, &[0.0, 1.0], (0.0, 3.0), &cfg).unwrap();
    let trace = propagate_variational(&sys, &arc, &cfg).unwrap();
    let phi = trace.final_phi().phi;
    let limit = zeno_transition_limit(&p, 1.0);
    assert!((&phi - &limit).amax() <= 1e-6, "{phi}");
    assert!((limit[(1, 0)] - 6.0).abs() < 1e-12 && (limit[(1, 1)] - 4.0).abs() < 1e-12);
    assert!((&phi * DVector::from_vec(vec![-2.0, 3.0])).amax() <= 1e-6);
    // volume shrinks by c² at every impact
    let dets: Vec<f64> = trace.jumps.iter().map(|j| j.phi_post.determinant()).collect();
    assert!(dets.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn accumulation_time_gradient_spans_the_kernel() {
    let p = damped();
    let sys = build_ball(&p).unwrap();
    let cfg = FlowConfig { tol_transversal: 1e-12, ..FlowConfig::default() };
    let zeta = |x: f64, y: f64| accumulation_time(&sys, &[x, y], (0.0, 5.0), &cfg).unwrap().unwrap();
    let h = 1e-4;
    // one-sided in height: the start sits on the table
    let dx = (-3.0 * zeta(0.0, 1.0) + 4.0 * zeta(h, 1.0) - zeta(2.0 * h, 1.0)) / (2.0 * h);
    let dy = (zeta(0.0, 1.0 + h) - zeta(0.0, 1.0 - h)) / (2.0 * h);
    assert!((dx - 3.0).abs() <= 3e-3, "{dx}");
    assert!((dy - 2.0).abs() <= 2e-3, "{dy}");
    // dζ annihilates the kernel direction of the limit
    assert!((-2.0 * dx + 3.0 * dy).abs() <= 1e-2);
}
