use hybrid_oc::hybrid::{flow, FlowConfig};
use hybrid_oc::models::ball::{build_ball, build_free_fall, conjugate_time_unit, impact_saltation, BallParams};
use hybrid_oc::saltation::{
    caustic_trajectory, conjugate_points, event_saltation, propagate_variational, symplectic_defect, ConjugateConfig,
    ConjugateKind,
};
use nalgebra::DMatrix;

fn flow_map(p: &BallParams, z0: &[f64], t: f64) -> Vec<f64> {
    let sys = build_ball(p).unwrap();
    flow(&sys, z0, (0.0, t), &FlowConfig::default()).unwrap().final_state()
}

#[test]
fn elastic_impact_saltation_matches_closed_form() {
    let p = BallParams::elastic(1.0, 2.0);
    let sys = build_ball(&p).unwrap();
    let arc = flow(&sys, &[1.0, 0.0], (0.0, 1.5), &FlowConfig::default()).unwrap();
    let s = event_saltation(&sys, &arc.events[0], 0, 1e-8).unwrap();
    let expect = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 2.0, -1.0]);
    assert!((&s.matrix - &expect).amax() < 1e-9, "{}", s.matrix);
    let f_pre = sys.field.value(1.0, &arc.events[0].x_pre);
    let f_post = sys.field.value(1.0, &arc.events[0].x_post);
    let mapped = &s.matrix * nalgebra::DVector::from_vec(f_pre);
    for i in 0..2 {
        assert!((mapped[i] - f_post[i]).abs() < 1e-8 * f_post[i].abs().max(1.0));
    }
}

#[test]
fn damped_impact_saltation_matches_closed_form() {
    let p = BallParams::damped(1.0, 2.0, 0.5);
    let sys = build_ball(&p).unwrap();
    let arc = flow(&sys, &[1.0, 0.0], (0.0, 1.2), &FlowConfig::default()).unwrap();
    let e = &arc.events[0];
    let s = event_saltation(&sys, e, 0, 1e-8).unwrap();
    assert!((&s.matrix - impact_saltation(&p, e.x_pre[1])).amax() < 1e-9);
}

#[test]
fn free_flight_transition_is_shear() {
    let p = BallParams::elastic(1.0, 2.0);
    let sys = build_free_fall(&p).unwrap();
    let arc = flow(&sys, &[1.0, 0.3], (0.0, 2.0), &FlowConfig::default()).unwrap();
    let tr = propagate_variational(&sys, &arc, &FlowConfig::default()).unwrap();
    for t in [0.0, 0.4, 1.3, 2.0] {
        let phi = tr.phi_at(t).phi;
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0]);
        assert!((phi - expect).amax() < 1e-10);
    }
    let conj = conjugate_points(&tr, (0.0, 2.0), &ConjugateConfig::default());
    assert!(conj.is_empty(), "{conj:?}");
}

#[test]
fn one_bounce_phi12_and_conjugate_time() {
    let p = BallParams::elastic(1.0, 2.0);
    let sys = build_ball(&p).unwrap();
    let cfg = FlowConfig::default();
    let arc = flow(&sys, &[1.0, 0.0], (0.0, 2.9), &cfg).unwrap();
    let tr = propagate_variational(&sys, &arc, &cfg).unwrap();
    let phi = tr.phi_at(1.5);
    assert!((phi.phi12()[(0, 0)] + 0.5).abs() < 1e-8);
    let conj = conjugate_points(&tr, (0.0, 2.9), &ConjugateConfig::default());
    assert_eq!(conj.len(), 1, "{conj:?}");
    assert_eq!(conj[0].kind, ConjugateKind::SignChange);
    assert!((conj[0].t - 2.0).abs() < 1e-8);
    // oracle: zero of d x(t) / d p0 by finite differences of the flow map
    let d = |t: f64| (flow_map(&p, &[1.0, 1e-6], t)[0] - flow_map(&p, &[1.0, -1e-6], t)[0]) / 2e-6;
    assert!(d(1.9) * d(2.1) < 0.0);
    assert!(d(2.0).abs() < 1e-5);
}

#[test]
fn transition_matches_finite_differences_of_flow_map() {
    let p = BallParams::damped(1.0, 2.0, 0.7);
    let sys = build_ball(&p).unwrap();
    let cfg = FlowConfig::default();
    let z0 = [1.0, 0.3];
    let t = 3.0;
    let arc = flow(&sys, &z0, (0.0, t), &cfg).unwrap();
    assert!(arc.events.len() >= 2);
    let tr = propagate_variational(&sys, &arc, &cfg).unwrap();
    let phi = tr.final_phi().phi;
    for j in 0..2 {
        let mut a = z0;
        let mut b = z0;
        a[j] += 1e-6;
        b[j] -= 1e-6;
        let (fa, fb) = (flow_map(&p, &a, t), flow_map(&p, &b, t));
        for i in 0..2 {
            let fd = (fa[i] - fb[i]) / 2e-6;
            assert!((fd - phi[(i, j)]).abs() <= 1e-4 * fd.abs().max(1.0), "({i},{j}) fd {fd} phi {}", phi[(i, j)]);
        }
    }
}

#[test]
fn elastic_bounce_is_symplectic_and_damped_is_not() {
    let cfg = FlowConfig::default();
    let p = BallParams::elastic(1.0, 2.0);
    let sys = build_ball(&p).unwrap();
    let arc = flow(&sys, &[1.0, 0.0], (0.0, 1.7), &cfg).unwrap();
    let tr = propagate_variational(&sys, &arc, &cfg).unwrap();
    let (d, v) = symplectic_defect(&tr.final_phi().phi);
    assert!(d <= 1e-7 && v <= 1e-7, "{d} {v}");

    let p = BallParams::damped(1.0, 2.0, 0.5);
    let sys = build_ball(&p).unwrap();
    let arc = flow(&sys, &[1.0, 0.0], (0.0, 1.2), &cfg).unwrap();
    let tr = propagate_variational(&sys, &arc, &cfg).unwrap();
    let (_, v) = symplectic_defect(&tr.final_phi().phi);
    assert!(v >= 1.0 - 0.25 - 1e-9, "{v}");
}

#[test]
fn caustic_cloud_of_the_ball() {
    let p = BallParams::elastic(1.0, 2.0);
    let sys = build_ball(&p).unwrap();
    let cfg = FlowConfig::default();
    let cc = ConjugateConfig::default();
    let one = caustic_trajectory(&sys, &[1.0], &[vec![0.0]], (0.0, 2.9), (1.0, 3.0), &cfg, &cc);
    assert_eq!(one.points.len(), 1);
    assert!((one.points[0].t - 2.0).abs() < 1e-8);
    // back at the release height: x = 2(t - 1) - (t - 1)^2
    assert!((one.points[0].x[0] - 1.0).abs() < 1e-8);

    let grid: Vec<Vec<f64>> = (0..=30).map(|i| vec![-1.0 + 0.1 * i as f64]).collect();
    let cloud = caustic_trajectory(&sys, &[1.0], &grid, (0.0, 4.0), (0.0, 4.0), &cfg, &cc);
    assert!(cloud.points.iter().any(|c| (c.t - 2.5).abs() <= 0.05));
    for c in &cloud.points {
        // the closed form holds between the first and second impacts
        let sq = (c.p0[0] * c.p0[0] + 4.0).sqrt();
        let second = (c.p0[0] + sq) / 2.0 + sq;
        if c.t < second {
            assert!((c.t - conjugate_time_unit(c.p0[0])).abs() < 1e-6, "{c:?}");
        }
    }
    for w in cloud.points.windows(2) {
        assert!(w[0].p0[0] < w[1].p0[0] || (w[0].p0 == w[1].p0 && w[0].t <= w[1].t));
    }

    let free = build_free_fall(&p).unwrap();
    let empty = caustic_trajectory(&free, &[1.0], &grid, (0.0, 4.0), (0.0, 4.0), &cfg, &cc);
    assert!(empty.points.is_empty());
}
