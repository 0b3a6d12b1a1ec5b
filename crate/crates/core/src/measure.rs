//! Hierarchical discrete measures: level 0 is a point of the manifold, level `n`
//! a finitely supported probability measure over level-`n - 1` measures.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::manifold::{Manifold, Point};
use crate::numeric::{kahan_sum, max_abs_diff};
use crate::tree::Tree;

/// Weights of every internal node must sum to one within this tolerance.
pub const MASS_TOL: f64 = 1e-12;
/// Looser normalization tolerance accepted for documents read from disk.
pub const INGEST_MASS_TOL: f64 = 1e-9;
/// Points closer than this are identified in base supports.
pub const SUPPORT_DEDUP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct HierMeasure {
    manifold: Manifold,
    level: usize,
    tree: Tree<Point>,
}

impl HierMeasure {
    /// Builds and validates a measure; the level is read from the tree.
    pub fn new(manifold: Manifold, tree: Tree<Point>) -> Result<Self> {
        let mu = HierMeasure { manifold, level: tree.depth(), tree };
        mu.validate()?;
        Ok(mu)
    }

    pub fn with_tolerance(manifold: Manifold, tree: Tree<Point>, mass_tol: f64) -> Result<Self> {
        let mu = HierMeasure { manifold, level: tree.depth(), tree };
        mu.validate_with(mass_tol)?;
        Ok(mu)
    }

    /// Wraps a tree produced by an operation that preserves validity.
    pub(crate) fn from_parts(manifold: Manifold, tree: Tree<Point>) -> Self {
        HierMeasure { manifold, level: tree.depth(), tree }
    }

    pub fn point(manifold: Manifold, x: Point) -> Result<Self> {
        Self::new(manifold, Tree::Leaf(x))
    }

    /// `δ^(n)_x`: `n` nested single-atom measures over `x`.
    pub fn dirac_lift(manifold: Manifold, x: Point, n: usize) -> Result<Self> {
        manifold.check_point(&x)?;
        let mut tree = Tree::Leaf(x);
        for _ in 0..n {
            tree = Tree::Mix(vec![(1.0, tree)]);
        }
        Ok(Self::from_parts(manifold, tree))
    }

    /// Weighted mixture of measures of equal level, one level up.
    pub fn mixture(manifold: Manifold, atoms: Vec<(f64, HierMeasure)>) -> Result<Self> {
        let tree = Tree::Mix(atoms.into_iter().map(|(w, a)| (w, a.tree)).collect());
        Self::new(manifold, tree)
    }

    /// Uniform mixture of Diracs at the given points (level 1).
    pub fn empirical(manifold: Manifold, points: Vec<Point>) -> Result<Self> {
        let n = points.len();
        let w = 1.0 / n as f64;
        Self::new(manifold, Tree::Mix(points.into_iter().map(|p| (w, Tree::Leaf(p))).collect()))
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn tree(&self) -> &Tree<Point> {
        &self.tree
    }

    pub fn into_tree(self) -> Tree<Point> {
        self.tree
    }

    pub fn atoms(&self) -> &[(f64, Tree<Point>)] {
        self.tree.atoms()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.atoms().iter().map(|(w, _)| *w).collect()
    }

    pub fn atom(&self, i: usize) -> HierMeasure {
        Self::from_parts(self.manifold, self.atoms()[i].1.clone())
    }

    pub fn as_point(&self) -> Option<&Point> {
        self.tree.as_leaf()
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(MASS_TOL)
    }

    /// Recursive invariant check; reports the first violation with its path.
    pub fn validate_with(&self, mass_tol: f64) -> Result<()> {
        validate_node(&self.manifold, &self.tree, self.level, "measure", mass_tol)
    }

    /// `[f]^(n)(μ)`: applies `f` at every leaf, keeping weights and shape.
    pub fn push_leaf<M>(&self, mut f: impl FnMut(&Point) -> M) -> Tree<M> {
        self.tree.map(&mut f)
    }

    /// Pushforward by a map of the manifold into itself.
    pub fn push_points(&self, mut f: impl FnMut(&Point) -> Point) -> Result<HierMeasure> {
        let tree = self.tree.map(&mut f);
        let mu = Self::from_parts(self.manifold, tree);
        mu.validate_with(INGEST_MASS_TOL)?;
        Ok(mu)
    }

    /// The flat level-1 measure with one row per root-to-leaf path. Coincident
    /// leaves are kept as separate rows.
    pub fn collapse(&self) -> Result<HierMeasure> {
        if self.level == 0 {
            return Err(Error::invalid("collapse needs a measure of level >= 1"));
        }
        let rows = self
            .tree
            .rows()
            .into_iter()
            .map(|(w, p)| (w, Tree::Leaf(p.clone())))
            .collect();
        Ok(Self::from_parts(self.manifold, Tree::Mix(rows)))
    }

    /// `E^(n)_μ[f]`, summed over the collapsed rows in depth-first order.
    pub fn n_expectancy(&self, f: impl FnMut(&Point) -> f64) -> f64 {
        self.tree.expectation(f)
    }

    pub fn base_support(&self) -> BaseSupport {
        let mut points: Vec<Point> = Vec::new();
        self.tree.for_each_leaf(&mut |_, p| {
            if !points
                .iter()
                .any(|q| self.manifold.dist(p, q) <= SUPPORT_DEDUP_TOL)
            {
                points.push(p.clone());
            }
        });
        BaseSupport { points }
    }

    pub fn unroll(&self) -> Result<UnrolledMeasure> {
        if self.level == 0 {
            return Err(Error::invalid("unroll needs a measure of level >= 1"));
        }
        let mut rows = Vec::new();
        let mut path_trees: Vec<&Tree<Point>> = Vec::new();
        let mut indices = Vec::new();
        unroll_node(&self.tree, 1.0, &mut indices, &mut path_trees, &mut rows, self.manifold);
        Ok(UnrolledMeasure { rows })
    }

    /// `W₂(μ, δ^(n)_o)`, computed as `sqrt(E^(n)_μ[d²(·, o)])`.
    pub fn w2_to_dirac(&self, o: &Point) -> f64 {
        self.n_expectancy(|x| self.manifold.dist_sq(x, o)).sqrt()
    }

    /// Canonical representative: atoms recursively sorted and exact duplicates
    /// (within 1e-12) merged. Only used to compare representations.
    pub fn canonicalize(&self) -> HierMeasure {
        Self::from_parts(self.manifold, canonical_tree(&self.tree))
    }

    /// Same shape, all weights and coordinates within `tol`.
    pub fn approx_eq_structural(&self, other: &HierMeasure, tol: f64) -> bool {
        self.manifold == other.manifold && trees_close(&self.tree, &other.tree, tol)
    }
}

fn validate_node(m: &Manifold, node: &Tree<Point>, level: usize, path: &str, tol: f64) -> Result<()> {
    match node {
        Tree::Leaf(p) => {
            if level != 0 {
                return Err(Error::LevelMismatch {
                    path: path.to_string(),
                    detail: format!("found a point where a level-{level} measure was expected"),
                });
            }
            m.check_point(p).map_err(|e| Error::InvalidPoint {
                path: path.to_string(),
                detail: e.to_string(),
            })
        }
        Tree::Mix(atoms) => {
            if level == 0 {
                return Err(Error::LevelMismatch {
                    path: path.to_string(),
                    detail: "found a measure where a point was expected".into(),
                });
            }
            if atoms.is_empty() {
                return Err(Error::NonUnitMass { path: path.to_string(), sum: 0.0 });
            }
            if let Some((w, _)) = atoms.iter().find(|(w, _)| !(w.is_finite() && *w > 0.0)) {
                return Err(Error::invalid(format!("non-positive weight {w} at {path}")));
            }
            let sum = kahan_sum(atoms.iter().map(|(w, _)| *w));
            if (sum - 1.0).abs() > tol {
                return Err(Error::NonUnitMass { path: path.to_string(), sum });
            }
            for (i, (_, a)) in atoms.iter().enumerate() {
                validate_node(m, a, level - 1, &format!("{path}.atoms[{i}]"), tol)?;
            }
            Ok(())
        }
    }
}

fn unroll_node<'a>(
    node: &'a Tree<Point>,
    acc: f64,
    indices: &mut Vec<usize>,
    path: &mut Vec<&'a Tree<Point>>,
    out: &mut Vec<UnrolledRow>,
    m: Manifold,
) {
    match node {
        Tree::Leaf(p) => out.push(UnrolledRow {
            weight: acc,
            indices: indices.clone(),
            // The root itself is not part of the path; the leaf is stored apart.
            path: path
                .iter()
                .skip(1)
                .map(|t| HierMeasure::from_parts(m, (*t).clone()))
                .collect(),
            leaf: p.clone(),
        }),
        Tree::Mix(atoms) => {
            path.push(node);
            for (i, (w, a)) in atoms.iter().enumerate() {
                indices.push(i);
                unroll_node(a, acc * w, indices, path, out, m);
                indices.pop();
            }
            path.pop();
        }
    }
}

fn cmp_tree(a: &Tree<Point>, b: &Tree<Point>) -> Ordering {
    match (a, b) {
        (Tree::Leaf(x), Tree::Leaf(y)) => {
            for (u, v) in x.0.iter().zip(&y.0) {
                match u.total_cmp(v) {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            x.0.len().cmp(&y.0.len())
        }
        (Tree::Leaf(_), Tree::Mix(_)) => Ordering::Less,
        (Tree::Mix(_), Tree::Leaf(_)) => Ordering::Greater,
        (Tree::Mix(xs), Tree::Mix(ys)) => {
            for ((wx, tx), (wy, ty)) in xs.iter().zip(ys) {
                match cmp_tree(tx, ty).then(wx.total_cmp(wy)) {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            xs.len().cmp(&ys.len())
        }
    }
}

fn canonical_tree(t: &Tree<Point>) -> Tree<Point> {
    match t {
        Tree::Leaf(p) => Tree::Leaf(p.clone()),
        Tree::Mix(atoms) => {
            let mut atoms: Vec<(f64, Tree<Point>)> =
                atoms.iter().map(|(w, a)| (*w, canonical_tree(a))).collect();
            atoms.sort_by(|(_, a), (_, b)| cmp_tree(a, b));
            let mut merged: Vec<(f64, Tree<Point>)> = Vec::with_capacity(atoms.len());
            for (w, a) in atoms {
                match merged.last_mut() {
                    Some((wl, last)) if trees_close(last, &a, 1e-12) => *wl += w,
                    _ => merged.push((w, a)),
                }
            }
            Tree::Mix(merged)
        }
    }
}

fn trees_close(a: &Tree<Point>, b: &Tree<Point>, tol: f64) -> bool {
    match (a, b) {
        (Tree::Leaf(x), Tree::Leaf(y)) => x.0.len() == y.0.len() && max_abs_diff(&x.0, &y.0) <= tol,
        (Tree::Mix(xs), Tree::Mix(ys)) => {
            xs.len() == ys.len()
                && xs
                    .iter()
                    .zip(ys)
                    .all(|((wx, tx), (wy, ty))| (wx - wy).abs() <= tol && trees_close(tx, ty, tol))
        }
        _ => false,
    }
}

/// The deduplicated set of manifold points charged by a measure.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseSupport {
    pub points: Vec<Point>,
}

impl BaseSupport {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, m: &Manifold, x: &Point) -> bool {
        self.points.iter().any(|p| m.dist(p, x) <= SUPPORT_DEDUP_TOL)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledRow {
    pub weight: f64,
    /// Atom index chosen at each level, from the root down.
    pub indices: Vec<usize>,
    /// Measures visited below the root, levels `n - 1` down to `1`.
    pub path: Vec<HierMeasure>,
    pub leaf: Point,
}

/// Joint law of the whole root-to-leaf path of a hierarchical measure.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledMeasure {
    pub rows: Vec<UnrolledRow>,
}

impl UnrolledMeasure {
    pub fn total_mass(&self) -> f64 {
        kahan_sum(self.rows.iter().map(|r| r.weight))
    }

    /// Marginal on the first `depth` path coordinates, grouped by index prefix
    /// in order of first appearance.
    pub fn prefix_marginal(&self, depth: usize) -> Vec<(f64, Vec<usize>)> {
        let mut out: Vec<(f64, Vec<usize>)> = Vec::new();
        for r in &self.rows {
            let key = &r.indices[..depth.min(r.indices.len())];
            match out.iter_mut().find(|(_, k)| k.as_slice() == key) {
                Some((w, _)) => *w += r.weight,
                None => out.push((r.weight, key.to_vec())),
            }
        }
        out
    }

    /// Law of the leaf coordinate: the collapsed measure.
    pub fn leaf_marginal(&self) -> Vec<(f64, Point)> {
        self.rows.iter().map(|r| (r.weight, r.leaf.clone())).collect()
    }
}
