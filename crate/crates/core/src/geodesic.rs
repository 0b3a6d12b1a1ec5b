//! Optimal velocity plans, geodesic interpolation, hierarchical parallel
//! transport and constant-speed verification.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifold::Tangent;
use crate::measure::HierMeasure;
use crate::plan::{Fiber, PlanNode, VelocityPlan};
use crate::wasserstein::W2Solver;

/// Tolerance for treating a plan as optimal (`|‖γ‖ − W₂| ≤ tol`).
pub const OPTIMALITY_TOL: f64 = 1e-8;
/// Number of grid points used when none is given.
pub const DEFAULT_GRID_POINTS: usize = 11;

/// Builds an optimal velocity plan from μ to ν: optimal plans at every level,
/// `log` at the leaves.
pub fn optimal_velocity_plan(solver: &W2Solver, mu: &HierMeasure, nu: &HierMeasure) -> Result<VelocityPlan> {
    if mu.level() != nu.level() {
        return Err(Error::LevelMismatch {
            path: "measure".into(),
            detail: format!("levels {} and {} differ", mu.level(), nu.level()),
        });
    }
    // Validates manifolds and budget.
    solver.w2_sq(mu, nu)?;
    Ok(VelocityPlan::from_parts(mu.manifold(), plan_node(solver, mu, nu)?))
}

fn plan_node(solver: &W2Solver, mu: &HierMeasure, nu: &HierMeasure) -> Result<PlanNode> {
    if let (Some(x), Some(y)) = (mu.as_point(), nu.as_point()) {
        let m = mu.manifold();
        return Ok(PlanNode::Leaf(Tangent::new(x.clone(), m.log(x, y))));
    }
    let plan = solver.top_plan(mu, nu)?;
    let mut fibers = Vec::with_capacity(mu.atoms().len());
    for (i, (w, _)) in mu.atoms().iter().enumerate() {
        let mut entries = Vec::new();
        for j in 0..nu.atoms().len() {
            let p = plan.get(i, j);
            if p > 0.0 {
                entries.push((p, plan_node(solver, &mu.atom(i), &nu.atom(j))?));
            }
        }
        fibers.push(Fiber::from_entries(*w, entries));
    }
    Ok(PlanNode::Fibers(fibers))
}

/// `μ_t = [exp]^(n)(tγ)`.
pub fn interpolate(gamma: &VelocityPlan, t: f64) -> HierMeasure {
    gamma.scale(t).exp_push()
}

/// `PT_t^(n)(γ)`: every leaf `(x, v)` becomes `(exp_x(tv), PT_t(x, v, v))`.
/// Fibers are flattened, so the result is over `interpolate(γ, t)` with one
/// fiber per `(atom, entry)` pair.
pub fn pt_n(gamma: &VelocityPlan, t: f64) -> VelocityPlan {
    let m = gamma.manifold();
    fn go(node: &PlanNode, t: f64, m: &crate::manifold::Manifold) -> PlanNode {
        match node {
            PlanNode::Leaf(tan) => PlanNode::Leaf(m.parallel_transport(&tan.base, &tan.vec, &tan.vec, t)),
            PlanNode::Fibers(fibers) => PlanNode::Fibers(
                fibers
                    .iter()
                    .flat_map(|f| f.entries.iter())
                    .map(|(w, c)| Fiber::singleton(*w, go(c, t, m)))
                    .collect(),
            ),
        }
    }
    VelocityPlan::from_parts(m, go(gamma.node(), t, &m))
}

/// `|‖γ‖ − W₂(base, exp_push(γ))|`.
pub fn optimality_gap(solver: &W2Solver, gamma: &VelocityPlan) -> Result<f64> {
    let w = solver.w2(&gamma.base(), &gamma.exp_push())?;
    Ok((gamma.norm() - w).abs())
}

/// `(s − t)·PT_t^(n)(γ)`, an optimal plan from `μ_t` to `μ_s`.
pub fn restriction_plan(solver: &W2Solver, gamma: &VelocityPlan, t: f64, s: f64) -> Result<VelocityPlan> {
    let norm = gamma.norm();
    let w2 = solver.w2(&gamma.base(), &gamma.exp_push())?;
    if (norm - w2).abs() > OPTIMALITY_TOL {
        return Err(Error::NotOptimalInput { norm, w2 });
    }
    Ok(pt_n(gamma, t).scale(s - t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicSample {
    pub t: f64,
    pub measure: HierMeasure,
}

pub fn equispaced_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn sample_geodesic(gamma: &VelocityPlan, grid: &[f64]) -> Vec<GeodesicSample> {
    grid.iter().map(|&t| GeodesicSample { t, measure: interpolate(gamma, t) }).collect()
}

/// Result of checking `W₂(μ_t, μ_s) = |t − s|·W₂(μ_0, μ_1)` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedReport {
    pub grid: Vec<f64>,
    /// `W₂(μ_0, μ_1)`.
    pub endpoint_distance: f64,
    /// `‖γ‖`.
    pub speed: f64,
    /// Whether `‖γ‖ = W₂(μ_0, μ_1)` within [`OPTIMALITY_TOL`].
    pub speed_is_optimal: bool,
    /// Per grid point, the worst deviation against every other grid point.
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
    pub w2_to_start: Vec<f64>,
    pub w2_to_end: Vec<f64>,
}

impl SpeedReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.speed_is_optimal && self.max_deviation <= tol
    }
}

pub fn verify_constant_speed(solver: &W2Solver, gamma: &VelocityPlan, grid: &[f64]) -> Result<SpeedReport> {
    let start = gamma.base();
    let end = gamma.exp_push();
    let total = solver.w2(&start, &end)?;
    let samples = sample_geodesic(gamma, grid);
    let n = samples.len();
    let mut dev = vec![0.0f64; n];
    let mut to_start = Vec::with_capacity(n);
    let mut to_end = Vec::with_capacity(n);
    for a in 0..n {
        to_start.push(solver.w2(&start, &samples[a].measure)?);
        to_end.push(solver.w2(&samples[a].measure, &end)?);
        for b in a + 1..n {
            let d = solver.w2(&samples[a].measure, &samples[b].measure)?;
            let e = (d - (samples[a].t - samples[b].t).abs() * total).abs();
            dev[a] = dev[a].max(e);
            dev[b] = dev[b].max(e);
        }
    }
    let speed = gamma.norm();
    Ok(SpeedReport {
        grid: grid.to_vec(),
        endpoint_distance: total,
        speed,
        speed_is_optimal: (speed - total).abs() <= OPTIMALITY_TOL,
        max_deviation: dev.iter().cloned().fold(0.0, f64::max),
        deviations: dev,
        w2_to_start: to_start,
        w2_to_end: to_end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{Manifold, Point};
    use std::f64::consts::PI;

    #[test]
    fn pole_geodesic() {
        let m = Manifold::sphere(3).unwrap();
        let n = HierMeasure::point(m, Point(vec![0.0, 0.0, 1.0])).unwrap();
        let s = HierMeasure::point(m, Point(vec![0.0, 0.0, -1.0])).unwrap();
        let solver = W2Solver::default();
        let g = optimal_velocity_plan(&solver, &n, &s).unwrap();
        assert!((g.norm() - PI).abs() < 1e-12);
        let half = restriction_plan(&solver, &g, 0.0, 0.5).unwrap();
        assert!((half.norm() - PI / 2.0).abs() < 1e-12);
        let eq = half.exp_push();
        let p = eq.as_point().unwrap();
        assert!((p.0[0] - 1.0).abs() < 1e-12 && p.0[1].abs() < 1e-12 && p.0[2].abs() < 1e-12);
    }

    #[test]
    fn line_midpoint() {
        let m = Manifold::euclidean(1).unwrap();
        let a = HierMeasure::dirac_lift(m, Point(vec![0.0]), 2).unwrap();
        let b = HierMeasure::dirac_lift(m, Point(vec![2.0]), 2).unwrap();
        let solver = W2Solver::default();
        let g = optimal_velocity_plan(&solver, &a, &b).unwrap();
        let mid = interpolate(&g, 0.5);
        assert_eq!(mid, HierMeasure::dirac_lift(m, Point(vec![1.0]), 2).unwrap());
        let rep = verify_constant_speed(&solver, &g, &equispaced_grid(DEFAULT_GRID_POINTS)).unwrap();
        assert!(rep.passes(1e-12));
    }

    #[test]
    fn non_optimal_pole_plan_is_flagged() {
        let m = Manifold::sphere(3).unwrap();
        let x = Point(vec![0.0, 0.0, 1.0]);
        let g = VelocityPlan::new(m, PlanNode::Leaf(Tangent::new(x, vec![3.0 * PI, 0.0, 0.0]))).unwrap();
        let solver = W2Solver::default();
        let rep = verify_constant_speed(&solver, &g, &equispaced_grid(5)).unwrap();
        assert!(!rep.speed_is_optimal);
        assert!(matches!(restriction_plan(&solver, &g, 0.0, 0.5), Err(Error::NotOptimalInput { .. })));
    }
}
