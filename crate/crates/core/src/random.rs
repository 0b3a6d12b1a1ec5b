//! Seeded random measures and plans for property checks.
//!
//! Weights come from a stick-breaking construction (each atom takes a uniform
//! fraction in `[0.15, 0.85]` of the remaining mass, the last atom takes the
//! rest). Euclidean leaves are standard normal; sphere leaves are normalized
//! standard normal vectors. All draws go through a caller-supplied RNG, so a
//! fixed seed reproduces every instance.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::manifold::{Manifold, Point, Tangent};
use crate::measure::HierMeasure;
use crate::numeric::{norm, scale};
use crate::plan::{Fiber, PlanNode, VelocityPlan};
use crate::tree::Tree;

pub fn stick_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut rest = 1.0;
    let mut out = Vec::with_capacity(n);
    for _ in 1..n {
        let w = rest * rng.random_range(0.15..0.85);
        out.push(w);
        rest -= w;
    }
    out.push(1.0 - out.iter().sum::<f64>());
    out
}

pub fn normal_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn random_point<R: Rng + ?Sized>(m: &Manifold, rng: &mut R) -> Point {
    loop {
        let v = normal_vec(m.ambient_dim, rng);
        if !m.is_sphere() {
            return Point(v);
        }
        let n = norm(&v);
        if n > 1e-6 {
            return Point(scale(1.0 / n, &v));
        }
    }
}

/// Random tangent vector at `x` with standard normal ambient coordinates
/// (projected on the sphere), scaled by `size`.
pub fn random_tangent<R: Rng + ?Sized>(m: &Manifold, x: &Point, size: f64, rng: &mut R) -> Vec<f64> {
    let v = normal_vec(m.ambient_dim, rng);
    scale(size, &m.project_tangent(x, &v))
}

/// Random level-`level` measure with between 1 and `atoms_max` atoms per node.
pub fn random_measure<R: Rng + ?Sized>(m: &Manifold, level: usize, atoms_max: usize, rng: &mut R) -> HierMeasure {
    HierMeasure::from_parts(*m, random_tree(m, level, atoms_max, rng))
}

fn random_tree<R: Rng + ?Sized>(m: &Manifold, level: usize, atoms_max: usize, rng: &mut R) -> Tree<Point> {
    if level == 0 {
        return Tree::Leaf(random_point(m, rng));
    }
    let n = rng.random_range(1..=atoms_max.max(1));
    let w = stick_weights(n, rng);
    Tree::Mix(w.into_iter().map(|w| (w, random_tree(m, level - 1, atoms_max, rng))).collect())
}

/// Random level-`level` measure with exactly `atoms` equally weighted atoms
/// per node.
pub fn uniform_measure<R: Rng + ?Sized>(m: &Manifold, level: usize, atoms: usize, rng: &mut R) -> HierMeasure {
    fn go<R: Rng + ?Sized>(m: &Manifold, level: usize, k: usize, rng: &mut R) -> Tree<Point> {
        if level == 0 {
            return Tree::Leaf(random_point(m, rng));
        }
        Tree::Mix((0..k).map(|_| (1.0 / k as f64, go(m, level - 1, k, rng))).collect())
    }
    HierMeasure::from_parts(*m, go(m, level, atoms.max(1), rng))
}

/// Random velocity plan over `mu` with up to `entries_max` entries per fiber
/// and leaf vectors of typical size `size`.
pub fn random_plan<R: Rng + ?Sized>(mu: &HierMeasure, entries_max: usize, size: f64, rng: &mut R) -> VelocityPlan {
    let m = mu.manifold();
    VelocityPlan::from_parts(m, random_plan_node(&m, mu.tree(), entries_max, size, rng))
}

fn random_plan_node<R: Rng + ?Sized>(
    m: &Manifold,
    t: &Tree<Point>,
    entries_max: usize,
    size: f64,
    rng: &mut R,
) -> PlanNode {
    match t {
        Tree::Leaf(x) => PlanNode::Leaf(Tangent::new(x.clone(), random_tangent(m, x, size, rng))),
        Tree::Mix(atoms) => PlanNode::Fibers(
            atoms
                .iter()
                .map(|(w, a)| {
                    let k = rng.random_range(1..=entries_max.max(1));
                    let entries = stick_weights(k, rng)
                        .into_iter()
                        .map(|f| (w * f, random_plan_node(m, a, entries_max, size, rng)))
                        .collect();
                    Fiber::from_entries(*w, entries)
                })
                .collect(),
        ),
    }
}

/// Random fully deterministic plan over `mu`.
pub fn random_fd_plan<R: Rng + ?Sized>(mu: &HierMeasure, size: f64, rng: &mut R) -> VelocityPlan {
    random_plan(mu, 1, size, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_objects_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in [Manifold::euclidean(2).unwrap(), Manifold::sphere(3).unwrap()] {
            for level in 0..4 {
                let mu = random_measure(&m, level, 4, &mut rng);
                mu.validate().unwrap();
                let g = random_plan(&mu, 3, 1.0, &mut rng);
                g.validate().unwrap();
                assert!(g.base().approx_eq_structural(&mu, 0.0));
                assert!(random_fd_plan(&mu, 1.0, &mut rng).is_fully_deterministic());
            }
        }
    }

    #[test]
    fn seeds_reproduce() {
        let m = Manifold::sphere(3).unwrap();
        let a = random_measure(&m, 2, 4, &mut ChaCha8Rng::seed_from_u64(5));
        let b = random_measure(&m, 2, 4, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }
}
