use hybrid_oc::hybrid::{apply_reset, classify_zeno, flow, FlowConfig, FlowError, StateBox, TerminalStatus, ZenoKind};
use hybrid_oc::models::ball::{build_ball, impact_time, zeno_time, BallParams, Table};

#[test]
fn free_flight_before_first_impact() {
    let sys = build_ball(&BallParams::elastic(1.0, 2.0)).unwrap();
    let arc = flow(&sys, &[1.0, 0.0], (0.0, 0.9), &FlowConfig::default()).unwrap();
    assert!(arc.events.is_empty());
    for (t, x) in arc.sample_uniform(50) {
        assert!((x[0] - (1.0 - t * t)).abs() < 1e-10, "t={t} x={}", x[0]);
        assert!((x[1] + 2.0 * t).abs() < 1e-10);
    }
}

#[test]
fn single_elastic_impact() {
    let sys = build_ball(&BallParams::elastic(1.0, 2.0)).unwrap();
    let arc = flow(&sys, &[1.0, 0.0], (0.0, 1.5), &FlowConfig::default()).unwrap();
    assert_eq!(arc.events.len(), 1);
    let e = &arc.events[0];
    assert!((e.t - 1.0).abs() < 1e-12);
    assert!(e.x_pre[0].abs() <= 1e-10);
    assert!((e.x_pre[1] + 2.0).abs() < 1e-10);
    assert!((e.x_post[1] - 2.0).abs() < 1e-10);
    assert_eq!(e.beat_count, 0);
    assert!(e.transversality > 1e-8);
    assert_eq!(arc.status, TerminalStatus::Completed);
}

#[test]
fn elastic_reset_does_not_beat() {
    let sys = build_ball(&BallParams::elastic(1.0, 2.0)).unwrap();
    let out = apply_reset(&sys, 0, 1.0, &[0.0, -2.0], &FlowConfig::default()).unwrap();
    assert_eq!(out.x_post, vec![0.0, 2.0]);
    assert_eq!(out.beat_count, 0);
}

#[test]
fn damped_ball_is_zeno_before_two() {
    let p = BallParams::damped(1.0, 2.0, 0.5);
    let sys = build_ball(&p).unwrap();
    // impact speeds halve each bounce; 32 gaps need speeds near 2^-32
    let cfg = FlowConfig { tol_transversal: 1e-12, ..FlowConfig::default() };
    let err = flow(&sys, &[0.0, 1.0], (0.0, 3.0), &cfg).unwrap_err();
    match err {
        FlowError::ZenoDetected { t_zeno, arc } => {
            assert!((t_zeno - 2.0).abs() < 1e-6, "t_zeno = {t_zeno}");
            assert!((zeno_time(&p, 0.0, 1.0) - 2.0).abs() < 1e-15);
            for (k, t) in arc.event_times().iter().enumerate() {
                let expect = impact_time(&p, 1.0, k as u32 + 1);
                assert!((t - expect).abs() < 1e-8, "impact {k}: {t} vs {expect}");
            }
            let b = StateBox::new(vec![-1.0, -2.0], vec![2.0, 2.0]);
            assert_eq!(classify_zeno(&arc, &b, 32, 0.999), ZenoKind::Steady);
        }
        other => panic!("expected Zeno, got {other:?}"),
    }
}

#[test]
fn elastic_ball_is_not_zeno() {
    let sys = build_ball(&BallParams::elastic(1.0, 2.0)).unwrap();
    let arc = flow(&sys, &[1.0, 0.0], (0.0, 10.0), &FlowConfig::default()).unwrap();
    assert_eq!(arc.events.len(), 5);
    let b = StateBox::new(vec![-1.0, -3.0], vec![2.0, 3.0]);
    assert_eq!(classify_zeno(&arc, &b, 4, 0.999), ZenoKind::None);
    assert_eq!(classify_zeno(&arc, &b, 32, 0.999), ZenoKind::None);
}

#[test]
fn oscillating_table_with_zero_amplitude_matches_stationary() {
    let p = BallParams { table: Table::Oscillating { amplitude: 0.0, omega: 3.0 }, ..BallParams::elastic(1.0, 2.0) };
    let sys = build_ball(&p).unwrap();
    let arc = flow(&sys, &[1.0, 0.0], (0.0, 1.5), &FlowConfig::default()).unwrap();
    assert_eq!(arc.events.len(), 1);
    assert!((arc.events[0].t - 1.0).abs() < 1e-12);
}

#[test]
fn oscillating_table_kicks_the_ball() {
    let (a, w) = (0.1, 2.0);
    let p = BallParams { table: Table::Oscillating { amplitude: a, omega: w }, ..BallParams::elastic(1.0, 2.0) };
    let sys = build_ball(&p).unwrap();
    let arc = flow(&sys, &[1.0, 0.0], (0.0, 1.5), &FlowConfig::default()).unwrap();
    let e = &arc.events[0];
    assert!((e.x_pre[0] - a * (w * e.t).sin()).abs() < 1e-10);
    let expect = -e.x_pre[1] + 2.0 * a * w * (w * e.t).cos();
    assert!((e.x_post[1] - expect).abs() < 1e-12);
}

#[test]
fn flow_is_deterministic() {
    let sys = build_ball(&BallParams::damped(1.0, 2.0, 0.7)).unwrap();
    let a = flow(&sys, &[1.0, 0.3], (0.0, 3.0), &FlowConfig::default());
    let b = flow(&sys, &[1.0, 0.3], (0.0, 3.0), &FlowConfig::default());
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}
