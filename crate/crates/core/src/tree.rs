//! Finitely supported nested measures over an arbitrary leaf type.
//!
//! A `Tree<L>` of depth `n` is a level-`n` measure: depth 0 is a single leaf,
//! depth `n` is a weighted list of depth-`n - 1` trees. The same container holds
//! measures over points, over tangent vectors and over tangent pairs.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::manifold::{Point, Tangent, TangentPair};
use crate::numeric::KahanSum;

#[derive(Debug, Clone, PartialEq)]
pub enum Tree<L> {
    Leaf(L),
    Mix(Vec<(f64, Tree<L>)>),
}

impl<L> Tree<L> {
    pub fn leaf(l: L) -> Self {
        Tree::Leaf(l)
    }

    /// Depth along the first branch. Uniformity is checked by validation.
    pub fn depth(&self) -> usize {
        match self {
            Tree::Leaf(_) => 0,
            Tree::Mix(atoms) => 1 + atoms.first().map_or(0, |(_, a)| a.depth()),
        }
    }

    pub fn atoms(&self) -> &[(f64, Tree<L>)] {
        match self {
            Tree::Leaf(_) => &[],
            Tree::Mix(atoms) => atoms,
        }
    }

    pub fn as_leaf(&self) -> Option<&L> {
        match self {
            Tree::Leaf(l) => Some(l),
            Tree::Mix(_) => None,
        }
    }

    pub fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> Tree<M> {
        match self {
            Tree::Leaf(l) => Tree::Leaf(f(l)),
            Tree::Mix(atoms) => Tree::Mix(atoms.iter().map(|(w, a)| (*w, a.map(f))).collect()),
        }
    }

    pub fn try_map<M, E>(&self, f: &mut impl FnMut(&L) -> Result<M, E>) -> Result<Tree<M>, E> {
        Ok(match self {
            Tree::Leaf(l) => Tree::Leaf(f(l)?),
            Tree::Mix(atoms) => Tree::Mix(
                atoms
                    .iter()
                    .map(|(w, a)| Ok((*w, a.try_map(f)?)))
                    .collect::<Result<_, E>>()?,
            ),
        })
    }

    /// Visits leaves depth-first, passing the product of branch weights along the
    /// path. Products are accumulated top-down, so every traversal of the same
    /// tree sees bit-identical row weights.
    pub fn for_each_leaf(&self, f: &mut impl FnMut(f64, &L)) {
        self.visit(1.0, f)
    }

    fn visit(&self, acc: f64, f: &mut impl FnMut(f64, &L)) {
        match self {
            Tree::Leaf(l) => f(acc, l),
            Tree::Mix(atoms) => {
                for (w, a) in atoms {
                    a.visit(acc * w, f);
                }
            }
        }
    }

    /// Visits leaves with their index path from the root.
    pub fn for_each_leaf_path(&self, f: &mut impl FnMut(f64, &[usize], &L)) {
        let mut path = Vec::new();
        self.visit_path(1.0, &mut path, f)
    }

    fn visit_path(&self, acc: f64, path: &mut Vec<usize>, f: &mut impl FnMut(f64, &[usize], &L)) {
        match self {
            Tree::Leaf(l) => f(acc, path, l),
            Tree::Mix(atoms) => {
                for (i, (w, a)) in atoms.iter().enumerate() {
                    path.push(i);
                    a.visit_path(acc * w, path, f);
                    path.pop();
                }
            }
        }
    }

    /// Collapsed rows `(product weight, leaf)` in depth-first order.
    pub fn rows(&self) -> Vec<(f64, &L)> {
        let mut out = Vec::new();
        self.collect_rows(1.0, &mut out);
        out
    }

    fn collect_rows<'a>(&'a self, acc: f64, out: &mut Vec<(f64, &'a L)>) {
        match self {
            Tree::Leaf(l) => out.push((acc, l)),
            Tree::Mix(atoms) => {
                for (w, a) in atoms {
                    a.collect_rows(acc * w, out);
                }
            }
        }
    }

    /// Multi-level expectation of a leaf function, summed in row order with
    /// compensation.
    pub fn expectation(&self, mut f: impl FnMut(&L) -> f64) -> f64 {
        let mut acc = KahanSum::new();
        self.for_each_leaf(&mut |w, l| acc.add(w * f(l)));
        acc.value()
    }

    /// Expectation computed level by level as `Σ w_i E[atom_i]`.
    pub fn expectation_recursive(&self, f: &mut impl FnMut(&L) -> f64) -> f64 {
        match self {
            Tree::Leaf(l) => f(l),
            Tree::Mix(atoms) => {
                let mut acc = KahanSum::new();
                for (w, a) in atoms {
                    acc.add(w * a.expectation_recursive(f));
                }
                acc.value()
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Mix(atoms) => atoms.iter().map(|(_, a)| a.leaf_count()).sum(),
        }
    }

    pub fn max_atoms(&self) -> usize {
        match self {
            Tree::Leaf(_) => 0,
            Tree::Mix(atoms) => atoms
                .iter()
                .map(|(_, a)| a.max_atoms())
                .fold(atoms.len(), usize::max),
        }
    }
}

/// Bitwise structural hashing of leaves, used for memoization keys.
pub trait StructuralKey {
    fn hash_into<H: Hasher>(&self, h: &mut H);
}

fn hash_f64s<H: Hasher>(v: &[f64], h: &mut H) {
    v.len().hash(h);
    for x in v {
        // Normalize -0.0 so that equal values share a key.
        let x = if *x == 0.0 { 0.0 } else { *x };
        x.to_bits().hash(h);
    }
}

impl StructuralKey for Point {
    fn hash_into<H: Hasher>(&self, h: &mut H) {
        hash_f64s(&self.0, h)
    }
}

impl StructuralKey for Tangent {
    fn hash_into<H: Hasher>(&self, h: &mut H) {
        hash_f64s(&self.base.0, h);
        hash_f64s(&self.vec, h);
    }
}

impl StructuralKey for TangentPair {
    fn hash_into<H: Hasher>(&self, h: &mut H) {
        hash_f64s(&self.base.0, h);
        hash_f64s(&self.v1, h);
        hash_f64s(&self.v2, h);
    }
}

impl<L: StructuralKey> StructuralKey for Tree<L> {
    fn hash_into<H: Hasher>(&self, h: &mut H) {
        match self {
            Tree::Leaf(l) => {
                0u8.hash(h);
                l.hash_into(h);
            }
            Tree::Mix(atoms) => {
                1u8.hash(h);
                atoms.len().hash(h);
                for (w, a) in atoms {
                    w.to_bits().hash(h);
                    a.hash_into(h);
                }
            }
        }
    }
}

/// 128-bit structural key from two independently salted SipHash passes.
pub fn structural_key<T: StructuralKey>(x: &T) -> u128 {
    let mut h1 = DefaultHasher::new();
    0x5a5a_u16.hash(&mut h1);
    x.hash_into(&mut h1);
    let mut h2 = DefaultHasher::new();
    0xc3c3_u16.hash(&mut h2);
    x.hash_into(&mut h2);
    ((h1.finish() as u128) << 64) | h2.finish() as u128
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tree<f64> {
        Tree::Mix(vec![
            (0.5, Tree::Mix(vec![(0.25, Tree::Leaf(1.0)), (0.75, Tree::Leaf(2.0))])),
            (0.5, Tree::Mix(vec![(1.0, Tree::Leaf(3.0))])),
        ])
    }

    #[test]
    fn rows_are_products_in_dfs_order() {
        let t = sample();
        let rows: Vec<(f64, f64)> = t.rows().into_iter().map(|(w, l)| (w, *l)).collect();
        assert_eq!(rows, vec![(0.125, 1.0), (0.375, 2.0), (0.5, 3.0)]);
        assert_eq!(t.depth(), 2);
        assert_eq!(t.leaf_count(), 3);
        assert_eq!(t.max_atoms(), 2);
    }

    #[test]
    fn expectation_agrees_with_recursion() {
        let t = sample();
        let direct = t.expectation(|x| x * x);
        let rec = t.expectation_recursive(&mut |x| x * x);
        assert!((direct - rec).abs() < 1e-15);
        assert_eq!(direct, 0.125 + 0.375 * 4.0 + 0.5 * 9.0);
    }

    #[test]
    fn paths_index_atoms() {
        let mut paths = Vec::new();
        sample().for_each_leaf_path(&mut |_, p, _| paths.push(p.to_vec()));
        assert_eq!(paths, vec![vec![0, 0], vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn structural_key_separates_weights() {
        let a = Tree::Mix(vec![(0.5, Tree::Leaf(Point(vec![0.0]))), (0.5, Tree::Leaf(Point(vec![1.0])))]);
        let b = Tree::Mix(vec![(0.4, Tree::Leaf(Point(vec![0.0]))), (0.6, Tree::Leaf(Point(vec![1.0])))]);
        assert_ne!(structural_key(&a), structural_key(&b));
        assert_eq!(structural_key(&a), structural_key(&a.clone()));
    }
}
