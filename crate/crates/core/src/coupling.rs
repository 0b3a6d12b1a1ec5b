//! Couplings of velocity plans over a shared base, the W_μ distance and the
//! inner product `⟨·,·⟩_μ`, and addition along a coupling.
//!
//! Couplings are fiberwise: over base atom `i`, entries pair an entry of the
//! first plan's fiber with an entry of the second plan's fiber and carry a
//! coupling of the two child plans.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::manifold::{Manifold, Tangent, TangentPair};
use crate::numeric::{dist_sq, dot, kahan_sum, lincomb, max_abs_diff, norm_sq};
use crate::ot::{solve_ot, CostMatrix};
use crate::plan::{check_same_base, Fiber, PlanNode, VelocityPlan, FIBER_TOL};
use crate::tree::Tree;

#[derive(Debug, Clone, PartialEq)]
pub enum CouplingNode {
    Leaf(TangentPair),
    Fibers(Vec<CouplingFiber>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingFiber {
    pub weight: f64,
    pub entries: Vec<CouplingEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingEntry {
    pub weight: f64,
    /// Index into the first plan's fiber.
    pub left: usize,
    /// Index into the second plan's fiber.
    pub right: usize,
    pub child: CouplingNode,
}

impl CouplingNode {
    pub fn pair_tree(&self) -> Tree<TangentPair> {
        match self {
            CouplingNode::Leaf(p) => Tree::Leaf(p.clone()),
            CouplingNode::Fibers(fibers) => Tree::Mix(
                fibers
                    .iter()
                    .flat_map(|f| f.entries.iter())
                    .map(|e| (e.weight, e.child.pair_tree()))
                    .collect(),
            ),
        }
    }

    fn approx_eq(&self, other: &CouplingNode, tol: f64) -> bool {
        match (self, other) {
            (CouplingNode::Leaf(a), CouplingNode::Leaf(b)) => {
                max_abs_diff(&a.base.0, &b.base.0) <= tol
                    && max_abs_diff(&a.v1, &b.v1) <= tol
                    && max_abs_diff(&a.v2, &b.v2) <= tol
            }
            (CouplingNode::Fibers(a), CouplingNode::Fibers(b)) => {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(fa, fb)| {
                        (fa.weight - fb.weight).abs() <= tol
                            && fa.entries.len() == fb.entries.len()
                            && fa.entries.iter().zip(&fb.entries).all(|(x, y)| {
                                x.left == y.left
                                    && x.right == y.right
                                    && (x.weight - y.weight).abs() <= tol
                                    && x.child.approx_eq(&y.child, tol)
                            })
                    })
            }
            _ => false,
        }
    }

    fn map_pairs(&self, f: &mut impl FnMut(&TangentPair) -> Vec<f64>) -> PlanNode {
        match self {
            CouplingNode::Leaf(p) => PlanNode::Leaf(Tangent::new(p.base.clone(), f(p))),
            CouplingNode::Fibers(fibers) => PlanNode::Fibers(
                fibers
                    .iter()
                    .map(|fb| Fiber {
                        weight: fb.weight,
                        entries: fb.entries.iter().map(|e| (e.weight, e.child.map_pairs(f))).collect(),
                    })
                    .collect(),
            ),
        }
    }
}

/// `α ∈ Γ_μ(γ₁, γ₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    manifold: Manifold,
    node: CouplingNode,
}

impl Coupling {
    pub(crate) fn from_parts(manifold: Manifold, node: CouplingNode) -> Self {
        Coupling { manifold, node }
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn node(&self) -> &CouplingNode {
        &self.node
    }

    pub fn pair_tree(&self) -> Tree<TangentPair> {
        self.node.pair_tree()
    }

    /// `E^(n)_α[f(x, v₁, v₂)]`.
    pub fn expectation(&self, f: impl FnMut(&TangentPair) -> f64) -> f64 {
        self.pair_tree().expectation(f)
    }

    /// `E_α[‖v₁ − v₂‖²]`.
    pub fn energy(&self) -> f64 {
        self.expectation(|p| dist_sq(&p.v1, &p.v2))
    }

    /// `E_α[⟨v₁, v₂⟩]`.
    pub fn inner(&self) -> f64 {
        self.expectation(|p| dot(&p.v1, &p.v2))
    }

    /// Velocity plan obtained from a leaf map on pairs, with the coupling's
    /// fiber structure.
    pub fn push_pairs(&self, mut f: impl FnMut(&TangentPair) -> Vec<f64>) -> VelocityPlan {
        VelocityPlan::from_parts(self.manifold, self.node.map_pairs(&mut f))
    }

    pub fn approx_eq(&self, other: &Coupling, tol: f64) -> bool {
        self.manifold == other.manifold && self.node.approx_eq(&other.node, tol)
    }

    /// Verifies `[π₁]α = γ₁` and `[π₂]α = γ₂` fiber by fiber.
    pub fn check_marginals(&self, g1: &VelocityPlan, g2: &VelocityPlan) -> Result<()> {
        check_marginals(&self.node, g1.node(), g2.node(), "coupling")
    }
}

fn check_marginals(c: &CouplingNode, a: &PlanNode, b: &PlanNode, path: &str) -> Result<()> {
    let mismatch = |what: String| Err(Error::CouplingMismatch(format!("{what} at {path}")));
    match (c, a, b) {
        (CouplingNode::Leaf(p), PlanNode::Leaf(x), PlanNode::Leaf(y)) => {
            let tol = FIBER_TOL;
            if max_abs_diff(&p.base.0, &x.base.0) > tol || max_abs_diff(&p.base.0, &y.base.0) > tol {
                return mismatch("base points differ".into());
            }
            if p.v1.len() != x.vec.len() || max_abs_diff(&p.v1, &x.vec) > tol * (1.0 + norm_sq(&x.vec).sqrt()) {
                return mismatch("first vector differs".into());
            }
            if p.v2.len() != y.vec.len() || max_abs_diff(&p.v2, &y.vec) > tol * (1.0 + norm_sq(&y.vec).sqrt()) {
                return mismatch("second vector differs".into());
            }
            Ok(())
        }
        (CouplingNode::Fibers(cf), PlanNode::Fibers(fa), PlanNode::Fibers(fb)) => {
            if cf.len() != fa.len() || cf.len() != fb.len() {
                return mismatch("fiber counts differ".into());
            }
            for (i, ((f, x), y)) in cf.iter().zip(fa).zip(fb).enumerate() {
                let mut left = vec![0.0; x.entries.len()];
                let mut right = vec![0.0; y.entries.len()];
                for (k, e) in f.entries.iter().enumerate() {
                    if e.left >= left.len() || e.right >= right.len() {
                        return mismatch(format!("entry index out of range in fiber {i}"));
                    }
                    if !(e.weight > 0.0) {
                        return mismatch(format!("non-positive weight in fiber {i}"));
                    }
                    left[e.left] += e.weight;
                    right[e.right] += e.weight;
                    check_marginals(
                        &e.child,
                        &x.entries[e.left].1,
                        &y.entries[e.right].1,
                        &format!("{path}.fibers[{i}].entries[{k}]"),
                    )?;
                }
                let bad_left = left.iter().zip(&x.entries).any(|(s, (w, _))| (s - w).abs() > FIBER_TOL);
                let bad_right = right.iter().zip(&y.entries).any(|(s, (w, _))| (s - w).abs() > FIBER_TOL);
                if bad_left || bad_right {
                    return mismatch(format!("marginal weights differ in fiber {i}"));
                }
            }
            Ok(())
        }
        _ => mismatch("levels differ".into()),
    }
}

fn check_pair(g1: &VelocityPlan, g2: &VelocityPlan) -> Result<()> {
    if g1.manifold() != g2.manifold() {
        return Err(Error::BaseMismatch("plans live on different manifolds".into()));
    }
    check_same_base(g1.node(), g2.node(), "plan")
}

fn leaf_pair(x: &Tangent, y: &Tangent) -> CouplingNode {
    CouplingNode::Leaf(TangentPair { base: x.base.clone(), v1: x.vec.clone(), v2: y.vec.clone() })
}

/// The coupling forced when one fiber is a single entry: the other side's
/// weights are used verbatim.
fn forced_entries(
    x: &Fiber,
    y: &Fiber,
    child: &mut impl FnMut(&PlanNode, &PlanNode) -> Result<CouplingNode>,
) -> Result<Option<Vec<CouplingEntry>>> {
    if x.entries.len() == 1 {
        let a = &x.entries[0].1;
        return y
            .entries
            .iter()
            .enumerate()
            .map(|(l, (w, b))| Ok(CouplingEntry { weight: *w, left: 0, right: l, child: child(a, b)? }))
            .collect::<Result<Vec<_>>>()
            .map(Some);
    }
    if y.entries.len() == 1 {
        let b = &y.entries[0].1;
        return x
            .entries
            .iter()
            .enumerate()
            .map(|(k, (w, a))| Ok(CouplingEntry { weight: *w, left: k, right: 0, child: child(a, b)? }))
            .collect::<Result<Vec<_>>>()
            .map(Some);
    }
    Ok(None)
}

fn relative_weights(f: &Fiber) -> Vec<f64> {
    let total = kahan_sum(f.entries.iter().map(|(w, _)| *w));
    f.entries.iter().map(|(w, _)| w / total).collect()
}

/// Independent product of the fibers (forced coupling where a fiber is a
/// singleton).
pub fn generic_coupling(g1: &VelocityPlan, g2: &VelocityPlan) -> Result<Coupling> {
    check_pair(g1, g2)?;
    fn go(a: &PlanNode, b: &PlanNode) -> Result<CouplingNode> {
        match (a, b) {
            (PlanNode::Leaf(x), PlanNode::Leaf(y)) => Ok(leaf_pair(x, y)),
            (PlanNode::Fibers(fa), PlanNode::Fibers(fb)) => {
                let mut fibers = Vec::with_capacity(fa.len());
                for (x, y) in fa.iter().zip(fb) {
                    let entries = match forced_entries(x, y, &mut |a, b| go(a, b))? {
                        Some(e) => e,
                        None => {
                            let rb = relative_weights(y);
                            let mut out = Vec::with_capacity(x.entries.len() * y.entries.len());
                            for (k, (wa, a)) in x.entries.iter().enumerate() {
                                for (l, (_, b)) in y.entries.iter().enumerate() {
                                    out.push(CouplingEntry { weight: wa * rb[l], left: k, right: l, child: go(a, b)? });
                                }
                            }
                            out
                        }
                    };
                    fibers.push(CouplingFiber { weight: x.weight, entries });
                }
                Ok(CouplingNode::Fibers(fibers))
            }
            _ => Err(Error::BaseMismatch("levels differ".into())),
        }
    }
    Ok(Coupling::from_parts(g1.manifold(), go(g1.node(), g2.node())?))
}

/// Returns the optimal coupling node (when `build`) and `W_μ²`.
fn optimal_node(a: &PlanNode, b: &PlanNode, build: bool) -> Result<(Option<CouplingNode>, f64)> {
    match (a, b) {
        (PlanNode::Leaf(x), PlanNode::Leaf(y)) => {
            Ok((build.then(|| leaf_pair(x, y)), dist_sq(&x.vec, &y.vec)))
        }
        (PlanNode::Fibers(fa), PlanNode::Fibers(fb)) => {
            let mut fibers = Vec::with_capacity(if build { fa.len() } else { 0 });
            let mut total = crate::numeric::KahanSum::new();
            for (x, y) in fa.iter().zip(fb) {
                let mut values = Vec::new();
                let entries = match forced_entries(x, y, &mut |a, b| {
                    let (node, v) = optimal_node(a, b, build)?;
                    values.push(v);
                    Ok(node.unwrap_or(CouplingNode::Fibers(Vec::new())))
                })? {
                    Some(e) => e,
                    None => {
                        let c = CostMatrix::from_fn(x.entries.len(), y.entries.len(), |k, l| {
                            optimal_node(&x.entries[k].1, &y.entries[l].1, false).map_or(f64::NAN, |r| r.1)
                        })?;
                        let sol = solve_ot(&c, &relative_weights(x), &relative_weights(y))?;
                        let mut out = Vec::new();
                        for (k, l, p) in sol.plan.support() {
                            let (node, v) = if build {
                                optimal_node(&x.entries[k].1, &y.entries[l].1, true)?
                            } else {
                                (None, c.get(k, l))
                            };
                            values.push(v);
                            out.push(CouplingEntry {
                                weight: p * x.weight,
                                left: k,
                                right: l,
                                child: node.unwrap_or(CouplingNode::Fibers(Vec::new())),
                            });
                        }
                        out
                    }
                };
                for (e, v) in entries.iter().zip(&values) {
                    total.add(e.weight * v);
                }
                if build {
                    fibers.push(CouplingFiber { weight: x.weight, entries });
                }
            }
            Ok((build.then_some(CouplingNode::Fibers(fibers)), total.value()))
        }
        _ => Err(Error::BaseMismatch("levels differ".into())),
    }
}

/// An optimal coupling together with `W_μ(γ₁, γ₂) = E_α[‖v₁ − v₂‖²]^½`.
pub fn optimal_coupling(g1: &VelocityPlan, g2: &VelocityPlan) -> Result<(Coupling, f64)> {
    check_pair(g1, g2)?;
    let (node, _) = optimal_node(g1.node(), g2.node(), true)?;
    let alpha = Coupling::from_parts(g1.manifold(), node.expect("built"));
    let wmu = alpha.energy().max(0.0).sqrt();
    Ok((alpha, wmu))
}

pub fn w_mu(g1: &VelocityPlan, g2: &VelocityPlan) -> Result<f64> {
    check_pair(g1, g2)?;
    Ok(optimal_node(g1.node(), g2.node(), false)?.1.max(0.0).sqrt())
}

/// `⟨γ₁, γ₂⟩_μ` by polarization: `(‖γ₁‖² + ‖γ₂‖² − W_μ²) / 2`.
pub fn inner_mu(g1: &VelocityPlan, g2: &VelocityPlan) -> Result<f64> {
    let w = w_mu(g1, g2)?;
    Ok(0.5 * (g1.norm_sq() + g2.norm_sq() - w * w))
}

/// `⟨γ₁, γ₂⟩_μ` computed directly as the maximal expected inner product.
/// Used to cross-check [`inner_mu`].
pub fn inner_mu_direct(g1: &VelocityPlan, g2: &VelocityPlan) -> Result<f64> {
    check_pair(g1, g2)?;
    fn go(a: &PlanNode, b: &PlanNode) -> Result<f64> {
        match (a, b) {
            (PlanNode::Leaf(x), PlanNode::Leaf(y)) => Ok(dot(&x.vec, &y.vec)),
            (PlanNode::Fibers(fa), PlanNode::Fibers(fb)) => {
                let mut total = crate::numeric::KahanSum::new();
                for (x, y) in fa.iter().zip(fb) {
                    let mut gain = Vec::with_capacity(x.entries.len() * y.entries.len());
                    for (_, ca) in &x.entries {
                        for (_, cb) in &y.entries {
                            gain.push(go(ca, cb)?);
                        }
                    }
                    // Maximize by minimizing the shifted negated gain.
                    let top = gain.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let c = CostMatrix::new(x.entries.len(), y.entries.len(), gain.iter().map(|g| top - g).collect())?;
                    let sol = solve_ot(&c, &relative_weights(x), &relative_weights(y))?;
                    total.add(x.weight * (top - sol.value));
                }
                Ok(total.value())
            }
            _ => Err(Error::BaseMismatch("levels differ".into())),
        }
    }
    go(g1.node(), g2.node())
}

/// `γ₁ +_α γ₂`.
pub fn add(g1: &VelocityPlan, g2: &VelocityPlan, alpha: &Coupling) -> Result<VelocityPlan> {
    combine(g1, g2, alpha, 1.0)
}

/// `γ₁ −_α γ₂`.
pub fn sub(g1: &VelocityPlan, g2: &VelocityPlan, alpha: &Coupling) -> Result<VelocityPlan> {
    combine(g1, g2, alpha, -1.0)
}

fn combine(g1: &VelocityPlan, g2: &VelocityPlan, alpha: &Coupling, s: f64) -> Result<VelocityPlan> {
    if alpha.manifold() != g1.manifold() || g1.manifold() != g2.manifold() {
        return Err(Error::CouplingMismatch("manifolds differ".into()));
    }
    alpha.check_marginals(g1, g2)?;
    Ok(alpha.push_pairs(|p| lincomb(1.0, &p.v1, s, &p.v2)))
}

/// A random element of `Γ_μ(γ₁, γ₂)`: per fiber, a random mixture of the
/// product coupling and a north-west-corner coupling in a shuffled order.
pub fn random_coupling<R: Rng + ?Sized>(g1: &VelocityPlan, g2: &VelocityPlan, rng: &mut R) -> Result<Coupling> {
    check_pair(g1, g2)?;
    fn go<R: Rng + ?Sized>(a: &PlanNode, b: &PlanNode, rng: &mut R) -> Result<CouplingNode> {
        match (a, b) {
            (PlanNode::Leaf(x), PlanNode::Leaf(y)) => Ok(leaf_pair(x, y)),
            (PlanNode::Fibers(fa), PlanNode::Fibers(fb)) => {
                let mut fibers = Vec::with_capacity(fa.len());
                for (x, y) in fa.iter().zip(fb) {
                    let (m, k) = (x.entries.len(), y.entries.len());
                    let entries = if m == 1 || k == 1 {
                        forced_entries(x, y, &mut |a, b| go(a, b, rng))?.expect("singleton side")
                    } else {
                        let ra = relative_weights(x);
                        let rb = relative_weights(y);
                        let corner = shuffled_corner(&ra, &rb, rng);
                        let lambda: f64 = rng.random();
                        let mut out = Vec::new();
                        for kk in 0..m {
                            for ll in 0..k {
                                let p = lambda * corner[kk * k + ll] + (1.0 - lambda) * ra[kk] * rb[ll];
                                if p > 0.0 {
                                    let child = go(&x.entries[kk].1, &y.entries[ll].1, rng)?;
                                    out.push(CouplingEntry { weight: p * x.weight, left: kk, right: ll, child });
                                }
                            }
                        }
                        out
                    };
                    fibers.push(CouplingFiber { weight: x.weight, entries });
                }
                Ok(CouplingNode::Fibers(fibers))
            }
            _ => Err(Error::BaseMismatch("levels differ".into())),
        }
    }
    Ok(Coupling::from_parts(g1.manifold(), go(g1.node(), g2.node(), rng)?))
}

fn shuffled_corner<R: Rng + ?Sized>(a: &[f64], b: &[f64], rng: &mut R) -> Vec<f64> {
    let mut rows: Vec<usize> = (0..a.len()).collect();
    let mut cols: Vec<usize> = (0..b.len()).collect();
    rows.shuffle(rng);
    cols.shuffle(rng);
    let mut ra: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let mut rb: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
    let mut out = vec![0.0; a.len() * b.len()];
    let (mut i, mut j) = (0, 0);
    while i < ra.len() && j < rb.len() {
        let x = ra[i].min(rb[j]);
        out[rows[i] * b.len() + cols[j]] += x;
        ra[i] -= x;
        rb[j] -= x;
        if ra[i] <= rb[j] && i + 1 < ra.len() {
            i += 1;
        } else if j + 1 < rb.len() {
            j += 1;
        } else {
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Point;
    use crate::measure::HierMeasure;
    use rand::SeedableRng;

    fn line() -> Manifold {
        Manifold::euclidean(1).unwrap()
    }

    fn leaf(x: f64, v: f64) -> PlanNode {
        PlanNode::Leaf(Tangent::new(Point(vec![x]), vec![v]))
    }

    /// Level-1 plan over δ_0 with fiber {w_k: v_k}.
    fn fiber_plan(entries: &[(f64, f64)]) -> VelocityPlan {
        let node = PlanNode::Fibers(vec![Fiber {
            weight: 1.0,
            entries: entries.iter().map(|&(w, v)| (w, leaf(0.0, v))).collect(),
        }]);
        VelocityPlan::new(line(), node).unwrap()
    }

    #[test]
    fn optimal_coupling_sorts_on_the_line() {
        let g1 = fiber_plan(&[(0.5, 0.0), (0.5, 1.0)]);
        let g2 = fiber_plan(&[(0.5, 3.0), (0.5, 2.0)]);
        let (alpha, wmu) = optimal_coupling(&g1, &g2).unwrap();
        assert!((wmu * wmu - 4.0).abs() < 1e-12);
        alpha.check_marginals(&g1, &g2).unwrap();
        let ip = inner_mu(&g1, &g2).unwrap();
        assert!((ip - inner_mu_direct(&g1, &g2).unwrap()).abs() < 1e-12);
        assert!((ip - 1.5).abs() < 1e-12);
    }

    #[test]
    fn deterministic_side_forces_the_coupling() {
        let g1 = fiber_plan(&[(1.0, 0.5)]);
        let g2 = fiber_plan(&[(0.25, 3.0), (0.75, -2.0)]);
        let generic = generic_coupling(&g1, &g2).unwrap();
        let (opt, _) = optimal_coupling(&g1, &g2).unwrap();
        assert_eq!(generic, opt);
    }

    #[test]
    fn add_and_sub_along_couplings() {
        let m = line();
        let mu = HierMeasure::empirical(m, vec![Point(vec![0.0]), Point(vec![1.0])]).unwrap();
        let g = VelocityPlan::fd_from_field(&mu, |x| vec![2.0 * x.0[0] + 1.0]).unwrap();
        let z = VelocityPlan::zero(&mu);
        let alpha = generic_coupling(&g, &z).unwrap();
        assert!(add(&g, &z, &alpha).unwrap().approx_eq(&g, 0.0));
        let self_alpha = generic_coupling(&g, &g).unwrap();
        assert!(sub(&g, &g, &self_alpha).unwrap().approx_eq(&z, 0.0));
        assert!(matches!(add(&g, &g, &alpha), Err(Error::CouplingMismatch(_))));
    }

    #[test]
    fn random_couplings_have_the_right_marginals() {
        let g1 = fiber_plan(&[(0.2, 0.0), (0.3, 1.0), (0.5, -1.0)]);
        let g2 = fiber_plan(&[(0.6, 3.0), (0.4, 2.0)]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_coupling(&g1, &g2, &mut rng).unwrap();
            a.check_marginals(&g1, &g2).unwrap();
            let e = a.expectation(|p| norm_sq(&p.v1) + norm_sq(&p.v2));
            assert!((e - g1.norm_sq() - g2.norm_sq()).abs() < 1e-12);
        }
    }

    #[test]
    fn base_mismatch() {
        let g1 = fiber_plan(&[(1.0, 0.5)]);
        let node = PlanNode::Fibers(vec![Fiber::singleton(1.0, leaf(1.0, 0.0))]);
        let g2 = VelocityPlan::new(line(), node).unwrap();
        assert!(matches!(generic_coupling(&g1, &g2), Err(Error::BaseMismatch(_))));
    }
}
