//! Random extremal arcs with resets for the symplectic checks.

#![allow(dead_code)]

use hybrid_oc::hamiltonian::Hamiltonian;
use hybrid_oc::hpmp::{extremal_flow, extremal_system, optimal_hamiltonian, ExtremalConfig};
use hybrid_oc::hybrid::{flow, FlowConfig, HybridArc};
use hybrid_oc::models::ball::{build_ball, BallHamiltonian, BallParams};
use hybrid_oc::models::mirror::{build_mirror, MirrorParams};
use hybrid_oc::models::neuron::{build_neuron, NeuronParams, NeuronReset};
use hybrid_oc::saltation::{propagate_variational, symplectic_defect};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Ball,
    Neuron,
    Mirror,
}

pub const MODELS: [Model; 3] = [Model::Ball, Model::Neuron, Model::Mirror];

#[derive(Debug, Clone)]
pub struct ArcCheck {
    pub model: Model,
    pub start: Vec<f64>,
    pub events: usize,
    /// `max |ΦᵀJΦ − J|` of the final transition matrix.
    pub defect: f64,
    pub det_defect: f64,
    /// `max |H(t) − H(t₀)|` over the integration knots.
    pub drift: f64,
}

fn drift(h: &dyn Hamiltonian, arc: &HybridArc) -> f64 {
    let n = h.dim();
    let knots = arc.knots();
    let h0 = h.value(knots[0].0, &knots[0].1[..n], &knots[0].1[n..]);
    knots.iter().fold(0.0f64, |m, (t, z)| m.max((h.value(*t, &z[..n], &z[n..]) - h0).abs()))
}

fn check(
    model: Model,
    start: Vec<f64>,
    sys: &hybrid_oc::hybrid::HybridSystem,
    arc: &HybridArc,
    h: &dyn Hamiltonian,
    cfg: &FlowConfig,
) -> ArcCheck {
    let trace = propagate_variational(sys, arc, cfg).expect("variational propagation");
    let (defect, det_defect) = symplectic_defect(&trace.final_phi().phi);
    ArcCheck { model, start, events: arc.events.len(), defect, det_defect, drift: drift(h, arc) }
}

/// A random arc of `model` with at least one reset.
pub fn random_arc(model: Model, rng: &mut impl Rng) -> ArcCheck {
    match model {
        Model::Ball => {
            let p = BallParams::elastic(1.0, 2.0);
            let sys = build_ball(&p).unwrap();
            let z0 = vec![rng.gen_range(0.2..2.0), rng.gen_range(-2.0..2.0)];
            let cfg = FlowConfig::default();
            let arc = flow(&sys, &z0, (0.0, 3.0), &cfg).unwrap();
            check(model, z0, &sys, &arc, &BallHamiltonian { m: p.m, g: p.g }, &cfg)
        }
        Model::Neuron => {
            let ocp = build_neuron(&NeuronParams::default(), NeuronReset::Corrected).unwrap();
            let cfg = ExtremalConfig::default();
            let sys = extremal_system(&ocp, &cfg).unwrap();
            let x0 = [rng.gen_range(0.85..0.95), rng.gen_range(0.0..0.15)];
            let p0 = [rng.gen_range(-1.5..-0.8), rng.gen_range(-0.5..0.5)];
            let arc = extremal_flow(&ocp, &x0, &p0, (0.0, 0.3), &cfg).unwrap();
            let h = optimal_hamiltonian(&ocp).unwrap();
            check(model, [x0, p0].concat(), &sys, &arc.arc, &h, &cfg.flow)
        }
        Model::Mirror => {
            let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..-0.2)];
            let params = MirrorParams { a, b: [2.0, -1.0], horizon: 1.0 };
            let ocp = build_mirror(&params).unwrap();
            let cfg = ExtremalConfig::default();
            let sys = extremal_system(&ocp, &cfg).unwrap();
            let p0 = [rng.gen_range(-2.0..2.0), rng.gen_range(-3.0..-2.1)];
            let arc = extremal_flow(&ocp, &a, &p0, ocp.horizon, &cfg).unwrap();
            let h = optimal_hamiltonian(&ocp).unwrap();
            check(model, [a, p0].concat(), &sys, &arc.arc, &h, &cfg.flow)
        }
    }
}
