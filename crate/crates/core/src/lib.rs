//! Optimal transport, geodesics and first-order calculus in hierarchical
//! Wasserstein spaces `P₂⁽ⁿ⁾(M)` over Euclidean space and the unit sphere.
//!
//! A level-0 measure is a point of `M`; a level-`n` measure is a finitely
//! supported probability measure over level-`(n − 1)` measures. Distances are
//! computed exactly by recursive transport problems, and velocity plans carry
//! the tangent data of geodesics between measures.

pub mod coupling;
pub mod error;
pub mod functional;
pub mod geodesic;
pub mod json;
pub mod manifold;
pub mod measure;
pub mod numeric;
pub mod ot;
pub mod plan;
pub mod random;
pub mod suite;
pub mod tree;
pub mod wasserstein;

pub use coupling::{
    add, generic_coupling, inner_mu, inner_mu_direct, optimal_coupling, random_coupling, sub, w_mu, Coupling,
    CouplingEntry, CouplingFiber, CouplingNode,
};
pub use error::{Error, Result};
pub use functional::{
    eval_functional, gradient_descent, gradient_step, DescentTrace, FunctionalSpec, GeneralizedGeodesic, Potential, Term,
};
pub use geodesic::{
    equispaced_grid, interpolate, optimal_velocity_plan, pt_n, restriction_plan, verify_constant_speed,
    GeodesicSample, SpeedReport,
};
pub use manifold::{Manifold, ManifoldKind, Point, Tangent, TangentPair};
pub use measure::{BaseSupport, HierMeasure, UnrolledMeasure, UnrolledRow};
pub use ot::{permutation_oracle, solve_ot, verify_optimality, CostMatrix, DualPotentials, OtSolution, TransportPlan};
pub use plan::{Fiber, PlanNode, VelocityPlan};
pub use tree::Tree;
pub use wasserstein::{opt_hier_plan, w2, HierPlan, Limits, W2Solver};
