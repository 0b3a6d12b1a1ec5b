//! First-order calculus on hierarchical Wasserstein spaces: potential
//! energies, the squared-distance supergradient, generalized geodesics,
//! convexity checks and a fixed-step gradient descent.

use rand::Rng;
use serde::Serialize;

use crate::coupling::{add, generic_coupling, random_coupling, Coupling};
use crate::error::{Error, Result};
use crate::geodesic::{interpolate, optimal_velocity_plan};
use crate::manifold::{Manifold, ManifoldKind, Point, TangentPair};
use crate::measure::HierMeasure;
use crate::numeric::{dot, lincomb, norm, norm_sq, scale, sub};
use crate::plan::VelocityPlan;
use crate::wasserstein::W2Solver;

/// Slack allowed on every inequality checked in this module.
pub const INEQUALITY_TOL: f64 = 1e-9;

/// A smooth function on the manifold, given in ambient coordinates, with an
/// analytic bound on the operator norm of its Riemannian Hessian.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Constant(f64),
    /// `½‖x − c‖²`
    Quadratic { center: Vec<f64> },
    /// `⟨x, a⟩`
    LinearAmbient { direction: Vec<f64> },
    Scaled { factor: f64, inner: Box<Potential> },
    Sum(Vec<Potential>),
}

impl Potential {
    pub fn quadratic(center: Vec<f64>) -> Self {
        Potential::Quadratic { center }
    }

    pub fn linear_ambient(direction: Vec<f64>) -> Self {
        Potential::LinearAmbient { direction }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Potential::Scaled { factor, inner: Box::new(self) }
    }

    pub fn check(&self, m: &Manifold) -> Result<()> {
        let dim = |v: &[f64]| -> Result<()> {
            if v.len() != m.ambient_dim || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!(
                    "potential parameter needs {} finite coordinates",
                    m.ambient_dim
                )));
            }
            Ok(())
        };
        match self {
            Potential::Constant(c) if c.is_finite() => Ok(()),
            Potential::Constant(_) => Err(Error::invalid("non-finite constant potential")),
            Potential::Quadratic { center } => dim(center),
            Potential::LinearAmbient { direction } => dim(direction),
            Potential::Scaled { factor, inner } => {
                if !factor.is_finite() {
                    return Err(Error::invalid("non-finite potential factor"));
                }
                inner.check(m)
            }
            Potential::Sum(terms) => terms.iter().try_for_each(|t| t.check(m)),
        }
    }

    pub fn value(&self, x: &Point) -> f64 {
        match self {
            Potential::Constant(c) => *c,
            Potential::Quadratic { center } => 0.5 * norm_sq(&sub(&x.0, center)),
            Potential::LinearAmbient { direction } => dot(&x.0, direction),
            Potential::Scaled { factor, inner } => factor * inner.value(x),
            Potential::Sum(terms) => terms.iter().map(|t| t.value(x)).sum(),
        }
    }

    /// Riemannian gradient at `x`: the ambient gradient projected onto `T_x M`.
    ///
    /// Sums and scalings are assembled from the gradients of their parts with
    /// the same arithmetic as plan addition and scaling, so the sum and scalar
    /// rules hold bit for bit.
    pub fn grad(&self, m: &Manifold, x: &Point) -> Vec<f64> {
        match self {
            Potential::Constant(_) => vec![0.0; x.dim()],
            Potential::Quadratic { center } => m.project_tangent(x, &sub(&x.0, center)),
            Potential::LinearAmbient { direction } => m.project_tangent(x, direction),
            Potential::Scaled { factor, inner } => scale(*factor, &inner.grad(m, x)),
            Potential::Sum(terms) => {
                let mut acc: Option<Vec<f64>> = None;
                for t in terms {
                    let g = t.grad(m, x);
                    acc = Some(match acc {
                        None => g,
                        Some(a) => lincomb(1.0, &a, 1.0, &g),
                    });
                }
                acc.unwrap_or_else(|| vec![0.0; x.dim()])
            }
        }
    }

    /// Bound `L` on the Hessian operator norm over the whole manifold.
    ///
    /// On the sphere both ambient forms restrict to `const ∓ ⟨x, a⟩`, whose
    /// Riemannian Hessian is `∓⟨x, a⟩·Id`.
    pub fn hessian_bound(&self, m: &Manifold) -> f64 {
        match (self, m.kind) {
            (Potential::Constant(_), _) => 0.0,
            (Potential::Quadratic { .. }, ManifoldKind::Euclidean) => 1.0,
            (Potential::Quadratic { center }, ManifoldKind::Sphere) => norm(center),
            (Potential::LinearAmbient { .. }, ManifoldKind::Euclidean) => 0.0,
            (Potential::LinearAmbient { direction }, ManifoldKind::Sphere) => norm(direction),
            (Potential::Scaled { factor, inner }, _) => factor.abs() * inner.hessian_bound(m),
            (Potential::Sum(terms), _) => terms.iter().map(|t| t.hessian_bound(m)).sum(),
        }
    }

    /// `V^(n)(μ) = E^(n)_μ[V]`.
    pub fn functional(&self, mu: &HierMeasure) -> f64 {
        mu.n_expectancy(|x| self.value(x))
    }
}

/// `[∇V]^(n)(μ)`, a fully deterministic plan.
pub fn grad_potential(v: &Potential, mu: &HierMeasure) -> Result<VelocityPlan> {
    let m = mu.manifold();
    v.check(&m)?;
    VelocityPlan::fd_from_field(mu, |x| v.grad(&m, x))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Potential { potential: Potential, weight: f64 },
    /// `λ·½W₂²(·, reference)`
    HalfW2Sq { reference: HierMeasure, weight: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSpec {
    pub terms: Vec<Term>,
}

impl FunctionalSpec {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("a functional needs at least one term"));
        }
        for t in &terms {
            match t {
                Term::Potential { weight, .. } if !weight.is_finite() => {
                    return Err(Error::invalid("non-finite term weight"))
                }
                Term::HalfW2Sq { weight, .. } if !(weight.is_finite() && *weight >= 0.0) => {
                    return Err(Error::invalid("distance terms need a finite weight >= 0"))
                }
                _ => {}
            }
        }
        Ok(FunctionalSpec { terms })
    }

    fn check(&self, mu: &HierMeasure) -> Result<()> {
        for t in &self.terms {
            match t {
                Term::Potential { potential, .. } => potential.check(&mu.manifold())?,
                Term::HalfW2Sq { reference, .. } => {
                    if reference.level() != mu.level() {
                        return Err(Error::LevelMismatch {
                            path: "reference".into(),
                            detail: format!(
                                "reference has level {} but the measure has level {}",
                                reference.level(),
                                mu.level()
                            ),
                        });
                    }
                    if reference.manifold() != mu.manifold() {
                        return Err(Error::invalid("reference measure lives on another manifold"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, solver: &W2Solver, mu: &HierMeasure) -> Result<f64> {
        self.check(mu)?;
        let mut total = 0.0;
        for t in &self.terms {
            total += match t {
                Term::Potential { potential, weight } => weight * potential.functional(mu),
                Term::HalfW2Sq { reference, weight } => weight * 0.5 * solver.w2_sq(mu, reference)?,
            };
        }
        Ok(total)
    }

    /// Upper smoothness constant: `Σ|w|·L_V + Σλ`.
    pub fn smoothness_bound(&self, m: &Manifold) -> f64 {
        self.terms
            .iter()
            .map(|t| match t {
                Term::Potential { potential, weight } => weight.abs() * potential.hessian_bound(m),
                Term::HalfW2Sq { weight, .. } => *weight,
            })
            .sum()
    }
}

pub fn eval_functional(solver: &W2Solver, spec: &FunctionalSpec, mu: &HierMeasure) -> Result<f64> {
    spec.eval(solver, mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl InequalityCheck {
    fn new(lhs: f64, rhs: f64, tol: f64) -> Self {
        InequalityCheck { lhs, rhs, pass: lhs <= rhs + tol }
    }

    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// `|V(ν) − V(μ) − E_α⟨v, ∇V⟩| ≤ ½L‖γ‖²` with `ν = exp_push(γ)` and `α` the
/// unique coupling of `γ` with the gradient plan.
pub fn taylor_remainder_check(v: &Potential, mu: &HierMeasure, gamma: &VelocityPlan) -> Result<InequalityCheck> {
    let grad = grad_potential(v, mu)?;
    let alpha = generic_coupling(gamma, &grad)?;
    let nu = gamma.exp_push();
    let lhs = (v.functional(&nu) - v.functional(mu) - alpha.inner()).abs();
    let bound = 0.5 * v.hessian_bound(&mu.manifold()) * gamma.norm_sq();
    Ok(InequalityCheck::new(lhs, bound, INEQUALITY_TOL))
}

/// `γ̄ ∈ Γ_o(μ, μ̄)`; `−γ̄` is a supergradient of `½W₂²(·, μ̄)` at `μ` on
/// manifolds of nonnegative curvature.
pub fn w2_supergradient(solver: &W2Solver, mu: &HierMeasure, mubar: &HierMeasure) -> Result<VelocityPlan> {
    if !mu.manifold().has_nonnegative_curvature() {
        return Err(Error::CurvatureUnsupported);
    }
    optimal_velocity_plan(solver, mu, mubar)
}

/// `F(ν) ≤ F(μ) − E_α⟨v₁, v₂⟩ + ½‖γ‖²` for `F = ½W₂²(·, μ̄)`,
/// `γ ∈ Γ_o(μ, ν)`, `γ̄ ∈ Γ_o(μ, μ̄)` and `α` the generic coupling.
pub fn supergradient_inequality_check(
    solver: &W2Solver,
    mu: &HierMeasure,
    nu: &HierMeasure,
    mubar: &HierMeasure,
) -> Result<InequalityCheck> {
    supergradient_check_impl(solver, mu, nu, mubar, |g, gb| generic_coupling(g, gb))
}

/// As [`supergradient_inequality_check`] with a random coupling of `γ` and `γ̄`.
pub fn supergradient_inequality_check_random<R: Rng + ?Sized>(
    solver: &W2Solver,
    mu: &HierMeasure,
    nu: &HierMeasure,
    mubar: &HierMeasure,
    rng: &mut R,
) -> Result<InequalityCheck> {
    supergradient_check_impl(solver, mu, nu, mubar, |g, gb| random_coupling(g, gb, rng))
}

fn supergradient_check_impl(
    solver: &W2Solver,
    mu: &HierMeasure,
    nu: &HierMeasure,
    mubar: &HierMeasure,
    couple: impl FnOnce(&VelocityPlan, &VelocityPlan) -> Result<Coupling>,
) -> Result<InequalityCheck> {
    let gamma = optimal_velocity_plan(solver, mu, nu)?;
    let gbar = w2_supergradient(solver, mu, mubar)?;
    let alpha = couple(&gamma, &gbar)?;
    let lhs = 0.5 * solver.w2_sq(nu, mubar)?;
    let rhs = 0.5 * solver.w2_sq(mu, mubar)? - alpha.inner() + 0.5 * gamma.norm_sq();
    Ok(InequalityCheck::new(lhs, rhs, INEQUALITY_TOL))
}

/// `t ↦ [exp ∘ ((1 − t)π₁ + tπ₂)]^(n)(α)` for `α` coupling optimal plans from
/// a common base `μ̄` to `μ₀` and `μ₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedGeodesic {
    pub base: HierMeasure,
    pub gamma0: VelocityPlan,
    pub gamma1: VelocityPlan,
    pub coupling: Coupling,
}

impl GeneralizedGeodesic {
    pub fn new(solver: &W2Solver, mubar: &HierMeasure, mu0: &HierMeasure, mu1: &HierMeasure) -> Result<Self> {
        let gamma0 = optimal_velocity_plan(solver, mubar, mu0)?;
        let gamma1 = optimal_velocity_plan(solver, mubar, mu1)?;
        let coupling = generic_coupling(&gamma0, &gamma1)?;
        Ok(GeneralizedGeodesic { base: mubar.clone(), gamma0, gamma1, coupling })
    }

    pub fn at(&self, t: f64) -> HierMeasure {
        let m = self.base.manifold();
        let tree = self
            .coupling
            .pair_tree()
            .map(&mut |p: &TangentPair| m.exp(&p.base, &lincomb(1.0 - t, &p.v1, t, &p.v2)));
        HierMeasure::from_parts(m, tree)
    }

    /// `E_α[‖v₀ − v₁‖²]`.
    pub fn energy(&self) -> f64 {
        self.coupling.energy()
    }
}

pub fn generalized_geodesic(
    solver: &W2Solver,
    mubar: &HierMeasure,
    mu0: &HierMeasure,
    mu1: &HierMeasure,
    t: f64,
) -> Result<HierMeasure> {
    Ok(GeneralizedGeodesic::new(solver, mubar, mu0, mu1)?.at(t))
}

/// A curve together with the data that generated it.
#[derive(Debug, Clone, Copy)]
pub enum Curve<'a> {
    /// `t ↦ interpolate(γ, t)`; the deficit uses `W₂²(μ₀, μ₁)`.
    Geodesic(&'a VelocityPlan),
    /// The deficit uses the coupling energy `E_α[‖v₀ − v₁‖²]`.
    Generalized(&'a GeneralizedGeodesic),
}

impl Curve<'_> {
    pub fn at(&self, t: f64) -> HierMeasure {
        match self {
            Curve::Geodesic(g) => interpolate(g, t),
            Curve::Generalized(g) => g.at(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityPoint {
    pub t: f64,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub lambda: f64,
    pub deficit_energy: f64,
    pub points: Vec<ConvexityPoint>,
    /// `max_t (φ(c(t)) − bound(t))`, positive when the inequality fails.
    pub max_violation: f64,
}

impl ConvexityReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}

/// Checks `φ(c(t)) ≤ (1 − t)φ(c(0)) + tφ(c(1)) − ½λt(1 − t)D` on a grid.
pub fn convexity_check(
    solver: &W2Solver,
    spec: &FunctionalSpec,
    curve: Curve<'_>,
    lambda: f64,
    grid: &[f64],
) -> Result<ConvexityReport> {
    let start = curve.at(0.0);
    let end = curve.at(1.0);
    let deficit_energy = match curve {
        Curve::Geodesic(_) => solver.w2_sq(&start, &end)?,
        Curve::Generalized(g) => g.energy(),
    };
    let f0 = spec.eval(solver, &start)?;
    let f1 = spec.eval(solver, &end)?;
    let mut points = Vec::with_capacity(grid.len());
    let mut max_violation = f64::NEG_INFINITY;
    for &t in grid {
        let value = spec.eval(solver, &curve.at(t))?;
        let bound = (1.0 - t) * f0 + t * f1 - 0.5 * lambda * t * (1.0 - t) * deficit_energy;
        max_violation = max_violation.max(value - bound);
        points.push(ConvexityPoint { t, value, bound });
    }
    Ok(ConvexityReport { lambda, deficit_energy, points, max_violation })
}

/// One explicit step: `−τ∇V` for potential terms and `+τλγ̄` for distance
/// terms, combined by coupling addition. Returns `μ⁺` and the step plan.
pub fn gradient_step(
    solver: &W2Solver,
    spec: &FunctionalSpec,
    mu: &HierMeasure,
    tau: f64,
) -> Result<(HierMeasure, VelocityPlan)> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::invalid(format!("step size must be finite and >= 0, got {tau}")));
    }
    spec.check(mu)?;
    let m = mu.manifold();
    let potentials: Vec<(&Potential, f64)> = spec
        .terms
        .iter()
        .filter_map(|t| match t {
            Term::Potential { potential, weight } => Some((potential, *weight)),
            _ => None,
        })
        .collect();
    let mut step = VelocityPlan::fd_from_field(mu, |x| {
        let mut v = vec![0.0; m.ambient_dim];
        for (p, w) in &potentials {
            v = lincomb(1.0, &v, -tau * w, &p.grad(&m, x));
        }
        v
    })?;
    for t in &spec.terms {
        if let Term::HalfW2Sq { reference, weight } = t {
            let pull = w2_supergradient(solver, mu, reference)?.scale(tau * weight);
            let alpha = generic_coupling(&step, &pull)?;
            step = add(&step, &pull, &alpha)?;
        }
    }
    Ok((step.exp_push(), step))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentIterate {
    pub step: usize,
    pub measure: HierMeasure,
    pub value: f64,
    /// Norm of the plan that produced this iterate (0 for the start).
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentTrace {
    pub iterates: Vec<DescentIterate>,
    pub tau: f64,
    pub smoothness: f64,
    /// Whether `τ ≤ 1/L`; descent is only guaranteed under this premise.
    pub premises_hold: bool,
}

impl DescentTrace {
    pub fn values(&self) -> Vec<f64> {
        self.iterates.iter().map(|it| it.value).collect()
    }

    pub fn is_monotone(&self, tol: f64) -> bool {
        self.iterates
            .windows(2)
            .all(|w| w[1].value <= w[0].value + tol * (1.0 + w[0].value.abs()))
    }

    pub fn last(&self) -> &DescentIterate {
        self.iterates.last().expect("trace has the starting point")
    }
}

pub fn gradient_descent(
    solver: &W2Solver,
    spec: &FunctionalSpec,
    mu0: &HierMeasure,
    tau: f64,
    iters: usize,
) -> Result<DescentTrace> {
    if iters == 0 {
        return Err(Error::invalid("gradient descent needs at least one iteration"));
    }
    let smoothness = spec.smoothness_bound(&mu0.manifold());
    let mut iterates = vec![DescentIterate {
        step: 0,
        measure: mu0.clone(),
        value: spec.eval(solver, mu0)?,
        step_norm: 0.0,
    }];
    let mut mu = mu0.clone();
    for k in 1..=iters {
        let (next, plan) = gradient_step(solver, spec, &mu, tau)?;
        mu = next;
        iterates.push(DescentIterate { step: k, measure: mu.clone(), value: spec.eval(solver, &mu)?, step_norm: plan.norm() });
    }
    Ok(DescentTrace { iterates, tau, smoothness, premises_hold: tau * smoothness <= 1.0 })
}

/// Directional first-order residuals `|g(V(exp_push(εξ))) − g(V(μ)) −
/// ε g'(V(μ)) E_α⟨∇V, ξ⟩|` for `ε = ε₀, ε₀/2, …` (`halvings + 1` values).
pub fn directional_residuals(
    v: &Potential,
    mu: &HierMeasure,
    xi: &VelocityPlan,
    eps0: f64,
    halvings: usize,
    outer: impl Fn(f64) -> f64,
    outer_deriv: impl Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    let grad = grad_potential(v, mu)?;
    let alpha = generic_coupling(xi, &grad)?;
    let slope = alpha.inner();
    let base = v.functional(mu);
    let g0 = outer(base);
    let dg = outer_deriv(base);
    let mut eps = eps0;
    let mut out = Vec::with_capacity(halvings + 1);
    for _ in 0..=halvings {
        let moved = v.functional(&xi.scale(eps).exp_push());
        out.push((outer(moved) - g0 - eps * dg * slope).abs());
        eps *= 0.5;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Manifold {
        Manifold::euclidean(1).unwrap()
    }

    fn dirac(x: f64) -> HierMeasure {
        HierMeasure::point(line(), Point(vec![x])).unwrap()
    }

    #[test]
    fn hand_checked_supergradient_equality() {
        let solver = W2Solver::default();
        let c = supergradient_inequality_check(&solver, &dirac(0.0), &dirac(1.0), &dirac(3.0)).unwrap();
        assert_eq!(c.lhs, 2.0);
        assert_eq!(c.rhs, 2.0);
        assert!(c.pass);
    }

    #[test]
    fn quadratic_step_hits_the_center() {
        let m = Manifold::euclidean(2).unwrap();
        let mu = HierMeasure::empirical(m, vec![Point(vec![0.25, 1.0]), Point(vec![-2.0, 0.5])]).unwrap();
        let spec = FunctionalSpec::new(vec![Term::Potential {
            potential: Potential::quadratic(vec![1.0, -1.0]),
            weight: 1.0,
        }])
        .unwrap();
        let solver = W2Solver::default();
        let (next, _) = gradient_step(&solver, &spec, &mu, 1.0).unwrap();
        next.tree().for_each_leaf(&mut |_, p| {
            assert!((p.0[0] - 1.0).abs() < 1e-15 && (p.0[1] + 1.0).abs() < 1e-15);
        });
        let (same, _) = gradient_step(&solver, &spec, &mu, 0.0).unwrap();
        assert_eq!(same.tree(), mu.tree());
    }

    #[test]
    fn eval_examples() {
        let m = line();
        let mu = HierMeasure::empirical(m, vec![Point(vec![0.0]), Point(vec![2.0])]).unwrap();
        let spec = FunctionalSpec::new(vec![Term::Potential { potential: Potential::quadratic(vec![0.0]), weight: 1.0 }])
            .unwrap();
        let solver = W2Solver::default();
        assert_eq!(spec.eval(&solver, &mu).unwrap(), 1.0);
        let dist = FunctionalSpec::new(vec![Term::HalfW2Sq { reference: mu.clone(), weight: 1.0 }]).unwrap();
        assert_eq!(dist.eval(&solver, &mu).unwrap(), 0.0);
        let lifted = HierMeasure::dirac_lift(m, Point(vec![0.0]), 2).unwrap();
        assert!(matches!(dist.eval(&solver, &lifted), Err(Error::LevelMismatch { .. })));
    }

    #[test]
    fn sphere_gradient_is_tangent() {
        let m = Manifold::sphere(3).unwrap();
        let x = Point(vec![0.6, 0.0, 0.8]);
        let v = Potential::linear_ambient(vec![1.0, 2.0, -0.5]);
        let g = v.grad(&m, &x);
        assert!(dot(&g, &x.0).abs() < 1e-15);
        assert_eq!(v.hessian_bound(&m), norm(&[1.0, 2.0, -0.5]));
    }
}
