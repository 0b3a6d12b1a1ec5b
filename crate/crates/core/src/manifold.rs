//! Riemannian primitives on Euclidean space ℝ^d and the unit sphere S^{d-1} ⊂ ℝ^d.
//!
//! Points and tangent vectors are stored in ambient coordinates. On the sphere a
//! tangent vector at `x` is any ambient vector orthogonal to `x`, and the metric
//! is the restriction of the ambient inner product.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dist_sq, dot, lincomb, norm, norm_sq, scale, sub};

/// Sphere points must have unit norm to this tolerance.
pub const POINT_TOL: f64 = 1e-12;
/// Sphere tangent vectors must be orthogonal to their base to this tolerance.
pub const TANGENT_TOL: f64 = 1e-10;
/// Ingested sphere points within this distance of the unit sphere are projected
/// onto it instead of being rejected.
pub const RENORMALIZE_BAND: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    Euclidean,
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Manifold {
    pub kind: ManifoldKind,
    pub ambient_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub base: Point,
    pub vec: Vec<f64>,
}

impl Tangent {
    pub fn new(base: Point, vec: Vec<f64>) -> Self {
        Tangent { base, vec }
    }

    pub fn zero(base: Point) -> Self {
        let d = base.dim();
        Tangent { base, vec: vec![0.0; d] }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.vec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentPair {
    pub base: Point,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
}

impl Manifold {
    pub fn euclidean(ambient_dim: usize) -> Result<Self> {
        Self::new(ManifoldKind::Euclidean, ambient_dim)
    }

    pub fn sphere(ambient_dim: usize) -> Result<Self> {
        Self::new(ManifoldKind::Sphere, ambient_dim)
    }

    pub fn new(kind: ManifoldKind, ambient_dim: usize) -> Result<Self> {
        let min = match kind {
            ManifoldKind::Euclidean => 1,
            ManifoldKind::Sphere => 2,
        };
        if ambient_dim < min {
            return Err(Error::invalid(format!(
                "{kind:?} needs ambient_dim >= {min}, got {ambient_dim}"
            )));
        }
        Ok(Manifold { kind, ambient_dim })
    }

    pub fn is_sphere(&self) -> bool {
        self.kind == ManifoldKind::Sphere
    }

    /// Sectional curvature is nonnegative for every supported manifold.
    pub fn has_nonnegative_curvature(&self) -> bool {
        true
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.ambient_dim {
            return Err(Error::invalid(format!(
                "expected {} coordinates, got {}",
                self.ambient_dim,
                v.len()
            )));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        Ok(())
    }

    pub fn check_point(&self, x: &Point) -> Result<()> {
        self.check_dim(&x.0)?;
        if self.is_sphere() {
            let n = norm(&x.0);
            if (n - 1.0).abs() > POINT_TOL {
                return Err(Error::invalid(format!("sphere point has norm {n}")));
            }
        }
        Ok(())
    }

    pub fn check_tangent(&self, t: &Tangent) -> Result<()> {
        self.check_point(&t.base)?;
        self.check_dim(&t.vec)?;
        if self.is_sphere() {
            let ip = dot(&t.vec, &t.base.0);
            if ip.abs() > TANGENT_TOL * (1.0 + t.norm()) {
                return Err(Error::invalid(format!(
                    "vector is not tangent: <v, x> = {ip}"
                )));
            }
        }
        Ok(())
    }

    /// Projects a nearly-valid point onto the manifold. Returns the projected
    /// point and whether it moved.
    pub fn project_point(&self, coords: Vec<f64>) -> Result<(Point, bool)> {
        self.check_dim(&coords)?;
        if !self.is_sphere() {
            return Ok((Point(coords), false));
        }
        let n = norm(&coords);
        if (n - 1.0).abs() <= POINT_TOL {
            return Ok((Point(coords), false));
        }
        if (n - 1.0).abs() > RENORMALIZE_BAND {
            return Err(Error::invalid(format!(
                "sphere point has norm {n}, outside the renormalization band"
            )));
        }
        Ok((Point(scale(1.0 / n, &coords)), true))
    }

    /// Orthogonal projection of an ambient vector onto the tangent space at `x`.
    pub fn project_tangent(&self, x: &Point, v: &[f64]) -> Vec<f64> {
        match self.kind {
            ManifoldKind::Euclidean => v.to_vec(),
            ManifoldKind::Sphere => {
                let ip = dot(v, &x.0);
                lincomb(1.0, v, -ip, &x.0)
            }
        }
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        dot(u, v)
    }

    pub fn dist(&self, x: &Point, y: &Point) -> f64 {
        match self.kind {
            ManifoldKind::Euclidean => dist_sq(&x.0, &y.0).sqrt(),
            ManifoldKind::Sphere => half_angle(x, y),
        }
    }

    pub fn dist_sq(&self, x: &Point, y: &Point) -> f64 {
        match self.kind {
            ManifoldKind::Euclidean => dist_sq(&x.0, &y.0),
            ManifoldKind::Sphere => {
                let d = self.dist(x, y);
                d * d
            }
        }
    }

    pub fn exp(&self, x: &Point, v: &[f64]) -> Point {
        match self.kind {
            ManifoldKind::Euclidean => Point(x.0.iter().zip(v).map(|(a, b)| a + b).collect()),
            ManifoldKind::Sphere => {
                let n = norm(v);
                if n == 0.0 {
                    return x.clone();
                }
                let y = lincomb(n.cos(), &x.0, n.sin() / n, v);
                let ny = norm(&y);
                Point(scale(1.0 / ny, &y))
            }
        }
    }

    pub fn exp_tangent(&self, t: &Tangent) -> Point {
        self.exp(&t.base, &t.vec)
    }

    /// Minimizing logarithm. At sphere antipodes the direction is
    /// `normalize(e_k - <e_k, x> x)` for the smallest `k` with `e_k` not
    /// parallel to `x`.
    pub fn log(&self, x: &Point, y: &Point) -> Vec<f64> {
        match self.kind {
            ManifoldKind::Euclidean => sub(&y.0, &x.0),
            ManifoldKind::Sphere => {
                let c = dot(&x.0, &y.0);
                let u = lincomb(1.0, &y.0, -c, &x.0);
                let s = norm(&u);
                let theta = half_angle(x, y);
                if theta == 0.0 {
                    return vec![0.0; self.ambient_dim];
                }
                if s <= 1e-15 {
                    if c > 0.0 {
                        return vec![0.0; self.ambient_dim];
                    }
                    return scale(PI, &self.antipodal_direction(x));
                }
                // Re-project to absorb rounding in the tangency condition.
                let v = scale(theta / s, &u);
                self.project_tangent(x, &v)
            }
        }
    }

    /// Unit tangent direction used to break the tie at the antipode of `x`.
    pub fn antipodal_direction(&self, x: &Point) -> Vec<f64> {
        for k in 0..self.ambient_dim {
            let mut e = vec![0.0; self.ambient_dim];
            e[k] = 1.0;
            let u = self.project_tangent(x, &e);
            let n = norm(&u);
            if n > 1e-8 {
                return scale(1.0 / n, &u);
            }
        }
        unreachable!("a sphere of ambient dimension >= 2 has a non-parallel basis vector")
    }

    /// Parallel transport of `w` from `x` to `exp_x(t v)` along `s -> exp_x(s v)`.
    /// Returns the transported vector together with its new base point.
    pub fn parallel_transport(&self, x: &Point, v: &[f64], w: &[f64], t: f64) -> Tangent {
        let out = match self.kind {
            ManifoldKind::Euclidean => {
                Tangent::new(self.exp(x, &scale(t, v)), w.to_vec())
            }
            ManifoldKind::Sphere => {
                let n = norm(v);
                if n == 0.0 || t == 0.0 {
                    Tangent::new(x.clone(), w.to_vec())
                } else {
                    let u = scale(1.0 / n, v);
                    let theta = t * n;
                    let (s, c) = theta.sin_cos();
                    // Same formula as `exp`, so transported plans sit exactly on interpolants.
                    let y = self.exp(x, &scale(t, v));
                    // Rotation in span{x, u}; the orthogonal complement is fixed.
                    let b = dot(w, &u);
                    let rotated = lincomb(-s, &x.0, c, &u);
                    let moved = lincomb(1.0, w, -b, &u);
                    let wt = lincomb(1.0, &moved, b, &rotated);
                    let wt = self.project_tangent(&y, &wt);
                    Tangent::new(y, wt)
                }
            }
        };
        if cfg!(feature = "fault-pt-sign") {
            return Tangent::new(out.base, scale(-1.0, &out.vec));
        }
        out
    }

    /// Sasaki distance between the zero vector at `o` and the tangent `t`:
    /// `sqrt(d²(o, x) + |v|²_x)`.
    pub fn sasaki_dist_to_zero(&self, o: &Point, t: &Tangent) -> f64 {
        (self.dist_sq(o, &t.base) + norm_sq(&t.vec)).sqrt()
    }

    /// Squared length of the one-geodesic path in TM from `(x, u)` to `(y, v)`:
    /// move the base along the minimizing geodesic while interpolating the
    /// parallel-transported vector linearly. Exact on Euclidean space and an
    /// upper bound for the Sasaki distance squared on the sphere.
    pub fn sasaki_sq_upper(&self, a: &Tangent, b: &Tangent) -> f64 {
        match self.kind {
            ManifoldKind::Euclidean => dist_sq(&a.base.0, &b.base.0) + dist_sq(&a.vec, &b.vec),
            ManifoldKind::Sphere => {
                let dir = self.log(&a.base, &b.base);
                let moved = self.parallel_transport(&a.base, &dir, &a.vec, 1.0);
                let d = self.dist(&a.base, &b.base);
                d * d + dist_sq(&moved.vec, &b.vec)
            }
        }
    }
}

/// Great-circle angle `2·atan2(|x − y|, |x + y|)`: exactly zero for equal
/// points and well conditioned near both coincident and antipodal pairs.
fn half_angle(x: &Point, y: &Point) -> f64 {
    2.0 * norm(&sub(&x.0, &y.0)).atan2(norm(&lincomb(1.0, &x.0, 1.0, &y.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn s2() -> Manifold {
        Manifold::sphere(3).unwrap()
    }

    fn north() -> Point {
        Point(vec![0.0, 0.0, 1.0])
    }

    fn south() -> Point {
        Point(vec![0.0, 0.0, -1.0])
    }

    #[test]
    fn rejects_degenerate_dimensions() {
        assert!(Manifold::sphere(1).is_err());
        assert!(Manifold::euclidean(0).is_err());
        assert!(Manifold::euclidean(1).is_ok());
    }

    #[test]
    fn distance_examples() {
        let r2 = Manifold::euclidean(2).unwrap();
        assert_eq!(r2.dist(&Point(vec![0.0, 0.0]), &Point(vec![3.0, 4.0])), 5.0);
        assert_abs_diff_eq!(s2().dist(&north(), &south()), PI, epsilon = 1e-15);
        assert_eq!(s2().dist(&north(), &north()), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_invalid() {
        let r2 = Manifold::euclidean(2).unwrap();
        assert!(matches!(
            r2.check_point(&Point(vec![1.0])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn exp_examples() {
        let r2 = Manifold::euclidean(2).unwrap();
        assert_eq!(r2.exp(&Point(vec![1.0, 1.0]), &[2.0, 0.0]), Point(vec![3.0, 1.0]));
        for r in [1.0, 3.0] {
            for dir in [[1.0, 0.0, 0.0], [0.6, 0.8, 0.0]] {
                let v = scale(r * PI, &dir);
                let y = s2().exp(&north(), &v);
                assert!(s2().dist(&y, &south()) < 1e-7, "r = {r}");
            }
        }
        assert_eq!(s2().exp(&north(), &[0.0; 3]), north());
    }

    #[test]
    fn log_examples() {
        let r2 = Manifold::euclidean(2).unwrap();
        assert_eq!(r2.log(&Point(vec![0.0, 0.0]), &Point(vec![3.0, 4.0])), vec![3.0, 4.0]);
        let v = s2().log(&north(), &south());
        assert_abs_diff_eq!(norm(&v), PI, epsilon = 1e-15);
        // e_1 is not parallel to N, so the tie-break picks it.
        assert_abs_diff_eq!(v[0], PI, epsilon = 1e-15);
        assert!(s2().dist(&s2().exp(&north(), &v), &south()) < 1e-12);
        assert_eq!(s2().log(&north(), &north()), vec![0.0; 3]);
        // For x = e_1 the tie-break skips e_1 and uses e_2.
        let e1 = Point(vec![1.0, 0.0, 0.0]);
        let v = s2().log(&e1, &Point(vec![-1.0, 0.0, 0.0]));
        assert_abs_diff_eq!(v[1], PI, epsilon = 1e-15);
    }

    #[test]
    fn parallel_transport_quarter_circle() {
        let x = Point(vec![1.0, 0.0, 0.0]);
        let v = [0.0, PI / 2.0, 0.0];
        let pt = s2().parallel_transport(&x, &v, &[0.0, 0.0, 1.0], 1.0);
        assert!(crate::numeric::max_abs_diff(&pt.base.0, &[0.0, 1.0, 0.0]) < 1e-15);
        assert!(crate::numeric::max_abs_diff(&pt.vec, &[0.0, 0.0, 1.0]) < 1e-15);
        let pt = s2().parallel_transport(&x, &v, &v, 1.0);
        assert!(crate::numeric::max_abs_diff(&pt.vec, &[-PI / 2.0, 0.0, 0.0]) < 1e-15);
    }

    #[test]
    fn euclidean_transport_is_flat() {
        let r2 = Manifold::euclidean(2).unwrap();
        let pt = r2.parallel_transport(&Point(vec![1.0, 2.0]), &[1.0, 0.0], &[0.3, 0.4], 2.0);
        assert_eq!(pt.base, Point(vec![3.0, 2.0]));
        assert_eq!(pt.vec, vec![0.3, 0.4]);
    }

    #[test]
    fn sasaki_zero_section_examples() {
        let r2 = Manifold::euclidean(2).unwrap();
        let t = Tangent::new(Point(vec![3.0, 0.0]), vec![0.0, 4.0]);
        assert_eq!(r2.sasaki_dist_to_zero(&Point(vec![0.0, 0.0]), &t), 5.0);
        let o = Point(vec![1.0, 2.0]);
        assert_eq!(r2.sasaki_dist_to_zero(&o, &Tangent::zero(o.clone())), 0.0);
        let t = Tangent::new(south(), vec![PI, 0.0, 0.0]);
        assert_abs_diff_eq!(
            s2().sasaki_dist_to_zero(&north(), &t),
            2f64.sqrt() * PI,
            epsilon = 1e-14
        );
    }

    #[test]
    fn renormalization_band() {
        let (p, moved) = s2().project_point(vec![0.0, 0.0, 1.0 + 1e-9]).unwrap();
        assert!(moved);
        assert!(s2().check_point(&p).is_ok());
        assert!(s2().project_point(vec![0.0, 0.0, 2.0]).is_err());
    }
}
