//! Velocity plans: hierarchical measures of tangent vectors stored fiberwise
//! over a base measure.
//!
//! At level `n ≥ 1` a plan holds, for every atom `μ_i` of its base, a fiber of
//! weighted plans over `μ_i` whose weights add up to the weight of `μ_i`. The
//! base-point projection of the plan is therefore the base by construction.

use crate::error::{Error, Result};
use crate::manifold::{Manifold, Point, Tangent};
use crate::measure::HierMeasure;
use crate::numeric::{kahan_sum, lincomb, max_abs_diff, norm_sq, scale};
use crate::tree::Tree;

/// Tolerance on fiber-weight sums and on base alignment.
pub const FIBER_TOL: f64 = 1e-10;
/// Fiber entries lighter than this are dropped when plans are assembled.
pub const DROP_ENTRY: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub enum PlanNode {
    Leaf(Tangent),
    Fibers(Vec<Fiber>),
}

/// The part of a plan sitting over one base atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Fiber {
    /// Weight of the base atom.
    pub weight: f64,
    /// `(weight, plan over the base atom)`; weights sum to `self.weight`.
    pub entries: Vec<(f64, PlanNode)>,
}

impl Fiber {
    pub fn singleton(weight: f64, node: PlanNode) -> Self {
        Fiber { weight, entries: vec![(weight, node)] }
    }

    /// Drops negligible entries and rescales the rest onto the fiber weight.
    pub(crate) fn from_entries(weight: f64, entries: Vec<(f64, PlanNode)>) -> Self {
        let mut kept: Vec<(f64, PlanNode)> = entries.into_iter().filter(|(w, _)| *w >= DROP_ENTRY).collect();
        let total = kahan_sum(kept.iter().map(|(w, _)| *w));
        if total > 0.0 && total != weight {
            for (w, _) in kept.iter_mut() {
                *w *= weight / total;
            }
        }
        if kept.len() == 1 {
            kept[0].0 = weight;
        }
        Fiber { weight, entries: kept }
    }
}

impl PlanNode {
    pub fn level(&self) -> usize {
        match self {
            PlanNode::Leaf(_) => 0,
            PlanNode::Fibers(f) => 1 + f.first().and_then(|f| f.entries.first()).map_or(0, |(_, c)| c.level()),
        }
    }

    pub fn fibers(&self) -> &[Fiber] {
        match self {
            PlanNode::Leaf(_) => &[],
            PlanNode::Fibers(f) => f,
        }
    }

    pub fn as_leaf(&self) -> Option<&Tangent> {
        match self {
            PlanNode::Leaf(t) => Some(t),
            PlanNode::Fibers(_) => None,
        }
    }

    pub fn base_tree(&self) -> Tree<Point> {
        match self {
            PlanNode::Leaf(t) => Tree::Leaf(t.base.clone()),
            PlanNode::Fibers(fibers) => Tree::Mix(
                fibers
                    .iter()
                    .map(|f| (f.weight, f.entries[0].1.base_tree()))
                    .collect(),
            ),
        }
    }

    /// The plan as a plain hierarchical measure on TM, fibers flattened in
    /// `(atom, entry)` order.
    pub fn tangent_tree(&self) -> Tree<Tangent> {
        match self {
            PlanNode::Leaf(t) => Tree::Leaf(t.clone()),
            PlanNode::Fibers(fibers) => Tree::Mix(
                fibers
                    .iter()
                    .flat_map(|f| f.entries.iter().map(|(w, c)| (*w, c.tangent_tree())))
                    .collect(),
            ),
        }
    }

    /// Pushforward by a leaf map `(x, v) -> y`, with the flattened shape.
    pub fn push_tree(&self, f: &mut impl FnMut(&Tangent) -> Point) -> Tree<Point> {
        match self {
            PlanNode::Leaf(t) => Tree::Leaf(f(t)),
            PlanNode::Fibers(fibers) => Tree::Mix(
                fibers
                    .iter()
                    .flat_map(|fb| fb.entries.iter())
                    .map(|(w, c)| (*w, c.push_tree(f)))
                    .collect(),
            ),
        }
    }

    /// Applies `f` at every leaf, keeping the fiber structure. `f` must not move
    /// base points.
    pub fn map_vectors(&self, f: &mut impl FnMut(&Tangent) -> Vec<f64>) -> PlanNode {
        match self {
            PlanNode::Leaf(t) => PlanNode::Leaf(Tangent::new(t.base.clone(), f(t))),
            PlanNode::Fibers(fibers) => PlanNode::Fibers(
                fibers
                    .iter()
                    .map(|fb| Fiber {
                        weight: fb.weight,
                        entries: fb.entries.iter().map(|(w, c)| (*w, c.map_vectors(f))).collect(),
                    })
                    .collect(),
            ),
        }
    }

    pub fn is_fully_deterministic(&self) -> bool {
        match self {
            PlanNode::Leaf(_) => true,
            PlanNode::Fibers(fibers) => fibers
                .iter()
                .all(|f| f.entries.len() == 1 && f.entries[0].1.is_fully_deterministic()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            PlanNode::Leaf(_) => 1,
            PlanNode::Fibers(fibers) => fibers
                .iter()
                .flat_map(|f| f.entries.iter())
                .map(|(_, c)| c.leaf_count())
                .sum(),
        }
    }

    fn approx_eq(&self, other: &PlanNode, tol: f64) -> bool {
        match (self, other) {
            (PlanNode::Leaf(a), PlanNode::Leaf(b)) => {
                max_abs_diff(&a.base.0, &b.base.0) <= tol && max_abs_diff(&a.vec, &b.vec) <= tol
            }
            (PlanNode::Fibers(a), PlanNode::Fibers(b)) => {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(fa, fb)| {
                        (fa.weight - fb.weight).abs() <= tol
                            && fa.entries.len() == fb.entries.len()
                            && fa
                                .entries
                                .iter()
                                .zip(&fb.entries)
                                .all(|((wa, ca), (wb, cb))| (wa - wb).abs() <= tol && ca.approx_eq(cb, tol))
                    })
            }
            _ => false,
        }
    }
}

/// Checks that two plan nodes sit over the same base.
pub(crate) fn check_same_base(a: &PlanNode, b: &PlanNode, path: &str) -> Result<()> {
    match (a, b) {
        (PlanNode::Leaf(x), PlanNode::Leaf(y)) => {
            if x.base.0.len() != y.base.0.len() || max_abs_diff(&x.base.0, &y.base.0) > FIBER_TOL {
                return Err(Error::BaseMismatch(format!("base points differ at {path}")));
            }
            Ok(())
        }
        (PlanNode::Fibers(fa), PlanNode::Fibers(fb)) => {
            if fa.len() != fb.len() {
                return Err(Error::BaseMismatch(format!(
                    "{} vs {} base atoms at {path}",
                    fa.len(),
                    fb.len()
                )));
            }
            for (i, (x, y)) in fa.iter().zip(fb).enumerate() {
                if (x.weight - y.weight).abs() > FIBER_TOL {
                    return Err(Error::BaseMismatch(format!(
                        "base weights {} vs {} at {path}.atoms[{i}]",
                        x.weight, y.weight
                    )));
                }
                check_same_base(&x.entries[0].1, &y.entries[0].1, &format!("{path}.atoms[{i}]"))?;
            }
            Ok(())
        }
        _ => Err(Error::BaseMismatch(format!("levels differ at {path}"))),
    }
}

fn validate_node(m: &Manifold, node: &PlanNode, level: usize, path: &str) -> Result<()> {
    match node {
        PlanNode::Leaf(t) => {
            if level != 0 {
                return Err(Error::LevelMismatch {
                    path: path.into(),
                    detail: format!("found a tangent where a level-{level} plan was expected"),
                });
            }
            m.check_tangent(t).map_err(|e| Error::InvalidPoint { path: path.into(), detail: e.to_string() })
        }
        PlanNode::Fibers(fibers) => {
            if level == 0 {
                return Err(Error::LevelMismatch {
                    path: path.into(),
                    detail: "found fibers where a tangent was expected".into(),
                });
            }
            if fibers.is_empty() {
                return Err(Error::NonUnitMass { path: path.into(), sum: 0.0 });
            }
            let total = kahan_sum(fibers.iter().map(|f| f.weight));
            if (total - 1.0).abs() > FIBER_TOL {
                return Err(Error::NonUnitMass { path: path.into(), sum: total });
            }
            for (i, f) in fibers.iter().enumerate() {
                let fpath = format!("{path}.fibers[{i}]");
                if f.entries.is_empty() || !(f.weight > 0.0) {
                    return Err(Error::invalid(format!("empty or weightless fiber at {fpath}")));
                }
                if let Some((w, _)) = f.entries.iter().find(|(w, _)| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::invalid(format!("non-positive weight {w} at {fpath}")));
                }
                let s = kahan_sum(f.entries.iter().map(|(w, _)| *w));
                if (s - f.weight).abs() > FIBER_TOL {
                    return Err(Error::NonUnitMass { path: fpath, sum: s / f.weight });
                }
                for (k, (_, c)) in f.entries.iter().enumerate() {
                    let epath = format!("{fpath}.entries[{k}]");
                    validate_node(m, c, level - 1, &epath)?;
                    check_same_base(&f.entries[0].1, c, &epath)?;
                }
            }
            Ok(())
        }
    }
}

/// A level-n velocity plan over its (implicit) base measure.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityPlan {
    manifold: Manifold,
    node: PlanNode,
}

impl VelocityPlan {
    pub fn new(manifold: Manifold, node: PlanNode) -> Result<Self> {
        let plan = VelocityPlan { manifold, node };
        plan.validate()?;
        Ok(plan)
    }

    pub(crate) fn from_parts(manifold: Manifold, node: PlanNode) -> Self {
        VelocityPlan { manifold, node }
    }

    pub fn validate(&self) -> Result<()> {
        validate_node(&self.manifold, &self.node, self.node.level(), "plan")
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn node(&self) -> &PlanNode {
        &self.node
    }

    pub fn into_node(self) -> PlanNode {
        self.node
    }

    pub fn level(&self) -> usize {
        self.node.level()
    }

    /// `[π]^(n)(γ)`.
    pub fn base(&self) -> HierMeasure {
        HierMeasure::from_parts(self.manifold, self.node.base_tree())
    }

    pub fn tangent_tree(&self) -> Tree<Tangent> {
        self.node.tangent_tree()
    }

    /// `E^(n)_γ[f(x, v)]`.
    pub fn expectation(&self, f: impl FnMut(&Tangent) -> f64) -> f64 {
        self.tangent_tree().expectation(f)
    }

    pub fn norm_sq(&self) -> f64 {
        self.expectation(|t| norm_sq(&t.vec))
    }

    /// `‖γ‖ = E^(n)_γ[‖v‖²]^½`.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `0_μ`: zero vectors in singleton fibers.
    pub fn zero(mu: &HierMeasure) -> VelocityPlan {
        let d = mu.manifold().ambient_dim;
        Self::fd_from_field_unchecked(mu, &mut |_, _| vec![0.0; d])
    }

    /// `τ·γ`.
    pub fn scale(&self, tau: f64) -> VelocityPlan {
        Self::from_parts(self.manifold, self.node.map_vectors(&mut |t| scale(tau, &t.vec)))
    }

    /// `[exp]^(n)(γ)`.
    pub fn exp_push(&self) -> HierMeasure {
        let m = self.manifold;
        HierMeasure::from_parts(m, self.node.push_tree(&mut |t| m.exp_tangent(t)))
    }

    pub fn is_fully_deterministic(&self) -> bool {
        self.node.is_fully_deterministic()
    }

    pub fn approx_eq(&self, other: &VelocityPlan, tol: f64) -> bool {
        self.manifold == other.manifold && self.node.approx_eq(&other.node, tol)
    }

    pub fn same_base(&self, other: &VelocityPlan) -> Result<()> {
        if self.manifold != other.manifold {
            return Err(Error::BaseMismatch("plans live on different manifolds".into()));
        }
        check_same_base(&self.node, &other.node, "plan")
    }

    /// Fully deterministic plan `[x -> (x, f(x))]^(n)(μ)`.
    pub fn fd_from_field(mu: &HierMeasure, mut f: impl FnMut(&Point) -> Vec<f64>) -> Result<VelocityPlan> {
        Self::fd_from_path_field(mu, |_, x| f(x))
    }

    /// Fully deterministic plan from a field that may also depend on the index
    /// path of the leaf through the base tree.
    pub fn fd_from_path_field(mu: &HierMeasure, mut f: impl FnMut(&[usize], &Point) -> Vec<f64>) -> Result<VelocityPlan> {
        let plan = Self::fd_from_field_unchecked(mu, &mut f);
        plan.validate()?;
        Ok(plan)
    }

    fn fd_from_field_unchecked(mu: &HierMeasure, f: &mut impl FnMut(&[usize], &Point) -> Vec<f64>) -> VelocityPlan {
        fn build(t: &Tree<Point>, path: &mut Vec<usize>, f: &mut impl FnMut(&[usize], &Point) -> Vec<f64>) -> PlanNode {
            match t {
                Tree::Leaf(x) => PlanNode::Leaf(Tangent::new(x.clone(), f(path, x))),
                Tree::Mix(atoms) => PlanNode::Fibers(
                    atoms
                        .iter()
                        .enumerate()
                        .map(|(i, (w, a))| {
                            path.push(i);
                            let child = build(a, path, f);
                            path.pop();
                            Fiber::singleton(*w, child)
                        })
                        .collect(),
                ),
            }
        }
        Self::from_parts(mu.manifold(), build(mu.tree(), &mut Vec::new(), f))
    }

    /// Sum of two fully deterministic plans over the same base.
    pub fn fd_add(&self, other: &VelocityPlan) -> Result<VelocityPlan> {
        self.fd_combine(other, 1.0)
    }

    pub fn fd_scale(&self, tau: f64) -> VelocityPlan {
        self.scale(tau)
    }

    /// `self + s·other` on fully deterministic plans.
    pub fn fd_combine(&self, other: &VelocityPlan, s: f64) -> Result<VelocityPlan> {
        if !self.is_fully_deterministic() || !other.is_fully_deterministic() {
            return Err(Error::invalid("fd_add needs fully deterministic plans"));
        }
        self.same_base(other)?;
        fn go(a: &PlanNode, b: &PlanNode, s: f64) -> PlanNode {
            match (a, b) {
                (PlanNode::Leaf(x), PlanNode::Leaf(y)) => {
                    PlanNode::Leaf(Tangent::new(x.base.clone(), lincomb(1.0, &x.vec, s, &y.vec)))
                }
                (PlanNode::Fibers(fa), PlanNode::Fibers(fb)) => PlanNode::Fibers(
                    fa.iter()
                        .zip(fb)
                        .map(|(x, y)| Fiber::singleton(x.weight, go(&x.entries[0].1, &y.entries[0].1, s)))
                        .collect(),
                ),
                _ => unreachable!("bases were checked"),
            }
        }
        Ok(Self::from_parts(self.manifold, go(&self.node, &other.node, s)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pole_plan(speed: f64) -> VelocityPlan {
        let m = Manifold::sphere(3).unwrap();
        let n = Point(vec![0.0, 0.0, 1.0]);
        VelocityPlan::new(m, PlanNode::Leaf(Tangent::new(n, vec![speed, 0.0, 0.0]))).unwrap()
    }

    #[test]
    fn pole_plans_reach_the_south_pole() {
        for speed in [PI, 3.0 * PI] {
            let g = pole_plan(speed);
            assert!((g.norm() - speed).abs() < 1e-15);
            let s = g.exp_push();
            let z = s.as_point().unwrap();
            assert!((z.0[2] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_and_scale() {
        let m = Manifold::euclidean(2).unwrap();
        let mu = HierMeasure::empirical(m, vec![Point(vec![0.0, 1.0]), Point(vec![2.0, 0.0])]).unwrap();
        let z = VelocityPlan::zero(&mu);
        assert_eq!(z.norm(), 0.0);
        assert_eq!(z.exp_push(), mu);
        let g = VelocityPlan::fd_from_field(&mu, |x| vec![x.0[0] - 1.0, -x.0[1]]).unwrap();
        assert!((g.scale(-2.5).norm() - 2.5 * g.norm()).abs() < 1e-14);
        assert!(g.scale(0.0).approx_eq(&z, 0.0));
        let back = g.fd_add(&g.fd_scale(-1.0)).unwrap();
        assert!(back.approx_eq(&z, 0.0));
    }

    #[test]
    fn fiber_weights_are_validated() {
        let m = Manifold::euclidean(1).unwrap();
        let leaf = |x: f64| PlanNode::Leaf(Tangent::new(Point(vec![x]), vec![1.0]));
        let bad = PlanNode::Fibers(vec![Fiber { weight: 1.0, entries: vec![(0.5, leaf(0.0)), (0.4, leaf(0.0))] }]);
        assert!(matches!(VelocityPlan::new(m, bad), Err(Error::NonUnitMass { .. })));
        let misaligned = PlanNode::Fibers(vec![Fiber { weight: 1.0, entries: vec![(0.5, leaf(0.0)), (0.5, leaf(1.0))] }]);
        assert!(matches!(VelocityPlan::new(m, misaligned), Err(Error::BaseMismatch(_))));
    }

    #[test]
    fn from_entries_drops_dust() {
        let leaf = PlanNode::Leaf(Tangent::zero(Point(vec![0.0])));
        let f = Fiber::from_entries(0.5, vec![(0.5 - 1e-16, leaf.clone()), (1e-16, leaf)]);
        assert_eq!(f.entries.len(), 1);
        assert_eq!(f.entries[0].0, 0.5);
    }
}
