//! Maximum-principle layer: optimal Hamiltonian, extremal flows, mesh
//! shooting and propagation of Lagrangian point clouds.

mod closure;
mod extremal;
mod lagrangian;
mod minimize;
mod ocp;
mod shoot;

pub use closure::{with_subproblem_closure, SubProblemClosure};
pub use extremal::{
    extremal_flow, extremal_flow_on, extremal_system, lift_system, running_cost, ExtremalArc, ExtremalConfig, ExtremalError,
    ExtremalFailure, LiftedGuard,
};
pub use lagrangian::{
    fiber_seed, intersect_clouds, propagate_cloud, propagate_lagrangian, reversed_extremal_system, terminal_seed, CloudMatch,
    CloudPoint, Direction, PointCloud,
};
pub use minimize::{extremal_hamiltonian, golden_section, optimal_hamiltonian, OptimalHamiltonian};
pub use ocp::{
    AffineQuadratic, BeatingClosure, ControlSet, ControlSystem, HpmpError, OptimalControlProblem, ScalarFn, Terminal, VectorFn,
};
pub use shoot::{mesh_shoot, shooting_jacobian, MeshCandidate, NewtonConfig, ShootResult, ShootingMesh};
