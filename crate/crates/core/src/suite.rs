//! Seeded property suites. Every invariant of the library is evaluated on
//! random instances and summarized as a worst residual against a tolerance;
//! a property passes when every case has residual `≤ tolerance`.
//!
//! Each property draws from its own ChaCha8 stream, keyed by the seed and the
//! property name, so a report for one suite is identical whether or not the
//! others run.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coupling::{add, generic_coupling, inner_mu, inner_mu_direct, optimal_coupling, w_mu};
use crate::error::{Error, Result};
use crate::functional::{
    convexity_check, directional_residuals, gradient_descent, supergradient_inequality_check,
    supergradient_inequality_check_random, taylor_remainder_check, Curve, FunctionalSpec, GeneralizedGeodesic,
    Potential, Term,
};
use crate::geodesic::{
    equispaced_grid, optimal_velocity_plan, pt_n, restriction_plan, verify_constant_speed, interpolate,
    DEFAULT_GRID_POINTS,
};
use crate::manifold::{Manifold, Point, Tangent};
use crate::measure::HierMeasure;
use crate::numeric::{dot, max_abs_diff, norm};
use crate::ot::{certificate, permutation_oracle, solve_ot, CostMatrix};
use crate::plan::{Fiber, PlanNode, VelocityPlan};
use crate::random::{random_fd_plan, random_measure, random_plan, random_point, random_tangent, stick_weights, uniform_measure};
use crate::wasserstein::W2Solver;

pub const SUITES: [&str; 4] = ["metric", "coupling", "geodesic", "calculus"];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSuiteConfig {
    pub seed: u64,
    pub levels: Vec<usize>,
    pub atoms_max: usize,
    /// Base number of random cases per property (per level where relevant).
    /// Geodesic sampling and generalized geodesics use half as many, the OT
    /// oracle twice as many.
    pub samples: usize,
    /// Per-property tolerance overrides, keyed by property name.
    pub tolerances: BTreeMap<String, f64>,
}

impl Default for CheckSuiteConfig {
    fn default() -> Self {
        CheckSuiteConfig { seed: 0, levels: vec![1, 2, 3], atoms_max: 3, samples: 100, tolerances: BTreeMap::new() }
    }
}

impl CheckSuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("samples must be at least 1"));
        }
        if self.levels.is_empty() || self.levels.iter().any(|&l| l > 4) {
            return Err(Error::invalid("levels must be a non-empty subset of {0, 1, 2, 3, 4}"));
        }
        if self.atoms_max == 0 {
            return Err(Error::invalid("atoms_max must be at least 1"));
        }
        Ok(())
    }

    fn half_samples(&self) -> usize {
        self.samples.div_ceil(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub suite: String,
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest residual over all cases (`null` in JSON if a case errored).
    pub worst_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub seed: u64,
    pub suites: Vec<String>,
    pub levels: Vec<usize>,
    pub atoms_max: usize,
    pub samples: usize,
    pub properties: Vec<PropertyReport>,
    pub pass: bool,
}

impl CheckReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn property(&self, name: &str) -> Option<&PropertyReport> {
        self.properties.iter().find(|p| p.name == name)
    }
}

/// FNV-1a, to key random streams by property name.
fn stream_key(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

struct Runner<'a> {
    cfg: &'a CheckSuiteConfig,
    suite: &'static str,
    solver: W2Solver,
    out: Vec<PropertyReport>,
}

struct Acc {
    report: PropertyReport,
}

impl Acc {
    fn record(&mut self, r: Result<f64>) {
        let rep = &mut self.report;
        rep.cases += 1;
        let value = match r {
            Ok(v) if !v.is_nan() => v,
            Ok(_) => f64::INFINITY,
            Err(e) => {
                rep.first_error.get_or_insert_with(|| e.to_string());
                f64::INFINITY
            }
        };
        if !(value <= rep.tolerance) {
            rep.failures += 1;
        }
        rep.worst_residual = rep.worst_residual.max(value);
    }
}

impl Runner<'_> {
    /// Runs `cases` instances of a property; `f` returns the residual of one case.
    fn prop(&mut self, name: &str, tol: f64, cases: usize, mut f: impl FnMut(&W2Solver, &mut ChaCha8Rng, usize) -> Result<f64>) {
        let tolerance = self.cfg.tolerances.get(name).copied().unwrap_or(tol);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ stream_key(name));
        let mut acc = Acc {
            report: PropertyReport {
                suite: self.suite.to_string(),
                name: name.to_string(),
                cases: 0,
                failures: 0,
                worst_residual: 0.0,
                tolerance,
                pass: false,
                first_error: None,
            },
        };
        for i in 0..cases {
            acc.record(f(&self.solver, &mut rng, i));
        }
        acc.report.pass = acc.report.failures == 0;
        self.out.push(acc.report);
    }

    fn per_level(&self, n: usize) -> usize {
        n * self.cfg.levels.len()
    }
}

fn euclid() -> Manifold {
    Manifold::euclidean(2).expect("valid")
}

fn sphere() -> Manifold {
    Manifold::sphere(3).expect("valid")
}

/// Alternates Euclidean plane and 2-sphere by case index.
fn manifold_for(i: usize) -> Manifold {
    if i % 2 == 0 {
        euclid()
    } else {
        sphere()
    }
}

fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / (1.0 + x.abs().max(y.abs()))
}

/// Runs the named suites (`"all"` or any of [`SUITES`]) in a fixed order.
pub fn run_suites(cfg: &CheckSuiteConfig, which: &[&str]) -> Result<CheckReport> {
    cfg.validate()?;
    let all = which.contains(&"all");
    for w in which {
        if *w != "all" && !SUITES.contains(w) {
            return Err(Error::invalid(format!("unknown suite {w:?}")));
        }
    }
    let selected: Vec<&'static str> = SUITES.iter().copied().filter(|s| all || which.contains(s)).collect();
    let mut properties = Vec::new();
    for suite in &selected {
        let mut r = Runner { cfg, suite, solver: W2Solver::default(), out: Vec::new() };
        match *suite {
            "metric" => metric_suite(&mut r),
            "coupling" => coupling_suite(&mut r),
            "geodesic" => geodesic_suite(&mut r),
            _ => calculus_suite(&mut r),
        }
        properties.extend(r.out);
    }
    let pass = properties.iter().all(|p| p.pass);
    Ok(CheckReport {
        seed: cfg.seed,
        suites: selected.iter().map(|s| s.to_string()).collect(),
        levels: cfg.levels.clone(),
        atoms_max: cfg.atoms_max,
        samples: cfg.samples,
        properties,
        pass,
    })
}

pub fn run_suite(cfg: &CheckSuiteConfig, suite: &str) -> Result<CheckReport> {
    run_suites(cfg, &[suite])
}

/// Level for case `i` when cycling through the configured levels.
fn level_of(levels: &[usize], i: usize) -> usize {
    levels[i % levels.len()]
}

fn random_potential<R: Rng + ?Sized>(m: &Manifold, rng: &mut R) -> Potential {
    let v = |rng: &mut R| crate::random::normal_vec(m.ambient_dim, rng);
    match rng.random_range(0..3) {
        0 => Potential::quadratic(v(rng)),
        1 => Potential::linear_ambient(v(rng)),
        _ => Potential::Sum(vec![
            Potential::quadratic(v(rng)).scaled(rng.random_range(0.1..2.0)),
            Potential::linear_ambient(v(rng)).scaled(rng.random_range(-1.0..1.0)),
        ]),
    }
}

fn metric_suite(r: &mut Runner) {
    let n = r.cfg.samples;
    let atoms = r.cfg.atoms_max;
    let levels = r.cfg.levels.clone();
    let per_level = r.per_level(n);

    r.prop("ot_permutation_oracle", 1e-9, 2 * n, |_, rng, _| {
        let k = rng.random_range(1..=6);
        let c = CostMatrix::from_fn(k, k, |_, _| rng.random::<f64>())?;
        let u = vec![1.0 / k as f64; k];
        Ok((solve_ot(&c, &u, &u)?.value - permutation_oracle(&c)?).abs())
    });
    r.prop("ot_duality_gap", 1e-8, 2 * n, |_, rng, _| {
        let (k, l) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let c = CostMatrix::from_fn(k, l, |_, _| rng.random::<f64>())?;
        let a = stick_weights(k, rng);
        let b = stick_weights(l, rng);
        let sol = solve_ot(&c, &a, &b)?;
        let cert = certificate(&sol.plan, &sol.duals, &c)?;
        if !cert.is_optimal() {
            return Ok(f64::INFINITY);
        }
        Ok(cert.gap() / (1.0 + cert.primal.abs()))
    });
    // One triple per case feeds both symmetry and the triangle inequality.
    let triples: Vec<(HierMeasure, HierMeasure, HierMeasure)> = {
        let mut rng = ChaCha8Rng::seed_from_u64(r.cfg.seed ^ stream_key("w2_triples"));
        (0..per_level)
            .map(|i| {
                let m = manifold_for(i / levels.len());
                let l = level_of(&levels, i);
                (
                    random_measure(&m, l, atoms, &mut rng),
                    random_measure(&m, l, atoms, &mut rng),
                    random_measure(&m, l, atoms, &mut rng),
                )
            })
            .collect()
    };
    r.prop("w2_symmetry", 1e-8, per_level, |s, _, i| {
        let (a, b, _) = &triples[i];
        Ok((s.w2(a, b)? - s.w2(b, a)?).abs())
    });
    r.prop("w2_triangle", 1e-8, per_level, |s, _, i| {
        let (a, b, c) = &triples[i];
        Ok(s.w2(a, c)? - s.w2(a, b)? - s.w2(b, c)?)
    });
    r.prop("w2_identity", 1e-10, per_level, |s, _, i| {
        let (a, _, _) = &triples[i];
        s.w2(a, a)
    });
    r.prop("dirac_lift_isometry", 1e-10, per_level, |s, rng, i| {
        let m = manifold_for(i / levels.len());
        let l = level_of(&levels, i);
        let (x, y) = (random_point(&m, rng), random_point(&m, rng));
        let a = HierMeasure::dirac_lift(m, x.clone(), l)?;
        let b = HierMeasure::dirac_lift(m, y.clone(), l)?;
        Ok((s.w2(&a, &b)? - m.dist(&x, &y)).abs())
    });
    r.prop("w2_to_dirac", 1e-9, per_level, |s, rng, i| {
        let m = manifold_for(i / levels.len());
        let l = level_of(&levels, i);
        let mu = random_measure(&m, l, atoms, rng);
        let o = random_point(&m, rng);
        Ok(rel(mu.w2_to_dirac(&o), s.w2(&mu, &HierMeasure::dirac_lift(m, o, l)?)?))
    });
}

/// A plan over `mu` with `k` equally weighted leaf entries per fiber of a
/// level-1 measure.
fn uniform_fiber_plan(m: &Manifold, mu: &HierMeasure, vecs: &[Vec<Vec<f64>>]) -> Result<VelocityPlan> {
    let fibers = mu
        .atoms()
        .iter()
        .zip(vecs)
        .map(|((w, atom), vs)| {
            let x = atom.as_leaf().expect("level-1 measure");
            let k = vs.len() as f64;
            Fiber {
                weight: *w,
                entries: vs.iter().map(|v| (w / k, PlanNode::Leaf(Tangent::new(x.clone(), v.clone())))).collect(),
            }
        })
        .collect();
    VelocityPlan::new(*m, PlanNode::Fibers(fibers))
}

fn coupling_suite(r: &mut Runner) {
    let n = r.cfg.samples;
    let atoms = r.cfg.atoms_max;
    let levels = r.cfg.levels.clone();

    // Three random plans over a shared random base.
    let plans: Vec<[VelocityPlan; 3]> = {
        let mut rng = ChaCha8Rng::seed_from_u64(r.cfg.seed ^ stream_key("plan_triples"));
        (0..n)
            .map(|i| {
                let m = manifold_for(i);
                let mu = random_measure(&m, level_of(&levels, i), atoms, &mut rng);
                [
                    random_plan(&mu, atoms, 1.0, &mut rng),
                    random_plan(&mu, atoms, 1.0, &mut rng),
                    random_plan(&mu, atoms, 1.0, &mut rng),
                ]
            })
            .collect()
    };
    r.prop("w_mu_symmetry", 1e-10, n, |_, _, i| {
        let [a, b, _] = &plans[i];
        Ok((w_mu(a, b)? - w_mu(b, a)?).abs())
    });
    r.prop("w_mu_identity", 1e-10, n, |_, _, i| w_mu(&plans[i][0], &plans[i][0]));
    r.prop("w_mu_triangle", 1e-9, n, |_, _, i| {
        let [a, b, c] = &plans[i];
        Ok(w_mu(a, c)? - w_mu(a, b)? - w_mu(b, c)?)
    });
    r.prop("cauchy_schwarz", 1e-10, n, |_, _, i| {
        let [a, b, _] = &plans[i];
        Ok(inner_mu(a, b)?.abs() - a.norm() * b.norm())
    });
    r.prop("inner_self_is_norm_sq", 1e-10, n, |_, _, i| {
        let a = &plans[i][0];
        Ok((inner_mu(a, a)? - a.norm_sq()).abs())
    });
    r.prop("polarization_vs_direct", 1e-9, n, |_, _, i| {
        let [a, b, _] = &plans[i];
        Ok(rel(inner_mu(a, b)?, inner_mu_direct(a, b)?))
    });
    r.prop("optimal_coupling_energy", 1e-10, n, |_, _, i| {
        let [a, b, _] = &plans[i];
        let (alpha, wmu) = optimal_coupling(a, b)?;
        alpha.check_marginals(a, b)?;
        Ok(rel(alpha.energy(), wmu * wmu))
    });
    r.prop("second_moment_additivity", 1e-12, n, |_, rng, i| {
        let [a, b, _] = &plans[i];
        let alpha = crate::coupling::random_coupling(a, b, rng)?;
        let sum = add(a, b, &alpha)?;
        let expected = a.norm_sq() + b.norm_sq() + 2.0 * alpha.inner();
        Ok(rel(sum.norm_sq(), expected))
    });
    r.prop("fiber_coupling_oracle", 1e-9, n, |_, rng, i| {
        let m = manifold_for(i);
        let mu = random_measure(&m, 1, 5, rng);
        let mut vecs = [Vec::new(), Vec::new()];
        for side in &mut vecs {
            for (_, atom) in mu.atoms() {
                let x = atom.as_leaf().expect("level 1");
                side.push(Vec::new());
                let k = rng.random_range(1..=5);
                for _ in 0..k {
                    side.last_mut().unwrap().push(random_tangent(&m, x, 1.0, rng));
                }
            }
        }
        // Equal entry counts per fiber so each fiber problem is an assignment.
        for f in 0..vecs[0].len() {
            let k = vecs[0][f].len();
            let x = mu.atoms()[f].1.as_leaf().unwrap().clone();
            vecs[1][f].resize_with(k, || random_tangent(&m, &x, 1.0, rng));
            vecs[1][f].truncate(k);
        }
        let a = uniform_fiber_plan(&m, &mu, &vecs[0])?;
        let b = uniform_fiber_plan(&m, &mu, &vecs[1])?;
        let mut oracle = 0.0;
        for (f, (w, _)) in mu.atoms().iter().enumerate() {
            let (va, vb) = (&vecs[0][f], &vecs[1][f]);
            let c = CostMatrix::from_fn(va.len(), vb.len(), |p, q| crate::numeric::dist_sq(&va[p], &vb[q]))?;
            oracle += w * permutation_oracle(&c)?;
        }
        let w = w_mu(&a, &b)?;
        Ok(rel(w * w, oracle))
    });

    // Fully deterministic structure.
    let fd: Vec<[VelocityPlan; 3]> = {
        let mut rng = ChaCha8Rng::seed_from_u64(r.cfg.seed ^ stream_key("fd_triples"));
        (0..n)
            .map(|i| {
                let m = manifold_for(i);
                let mu = random_measure(&m, level_of(&levels, i), atoms, &mut rng);
                [
                    random_fd_plan(&mu, 1.0, &mut rng),
                    random_fd_plan(&mu, 1.0, &mut rng),
                    random_fd_plan(&mu, 1.0, &mut rng),
                ]
            })
            .collect()
    };
    let leaf_diff = |x: &VelocityPlan, y: &VelocityPlan| -> f64 {
        let (tx, ty) = (x.tangent_tree(), y.tangent_tree());
        let (tx, ty) = (tx.rows(), ty.rows());
        if tx.len() != ty.len() {
            return f64::INFINITY;
        }
        tx.iter()
            .zip(&ty)
            .map(|((wa, a), (wb, b))| {
                (wa - wb).abs().max(max_abs_diff(&a.base.0, &b.base.0)).max(max_abs_diff(&a.vec, &b.vec))
            })
            .fold(0.0, f64::max)
    };
    r.prop("fd_vector_space_axioms", 1e-12, n, |_, rng, i| {
        let [a, b, c] = &fd[i];
        let (s, t) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let comm = leaf_diff(&a.fd_add(b)?, &b.fd_add(a)?);
        let assoc = leaf_diff(&a.fd_add(b)?.fd_add(c)?, &a.fd_add(&b.fd_add(c)?)?);
        let dist = leaf_diff(&a.fd_add(b)?.fd_scale(s), &a.fd_scale(s).fd_add(&b.fd_scale(s))?);
        let mixed = leaf_diff(&a.fd_scale(s + t), &a.fd_scale(s).fd_add(&a.fd_scale(t))?);
        let zero = leaf_diff(&a.fd_add(&VelocityPlan::zero(&a.base()))?, a);
        let neg = a.fd_add(&a.fd_scale(-1.0))?.norm();
        Ok(comm.max(assoc).max(dist).max(mixed).max(zero).max(neg))
    });
    r.prop("fd_l2_isometry", 1e-12, n, |_, _, i| {
        let [a, b, _] = &fd[i];
        let w = w_mu(a, b)?;
        let l2 = a.fd_combine(b, -1.0)?.norm_sq();
        Ok(rel(w * w, l2))
    });
    r.prop("fd_coupling_uniqueness", 0.0, n, |_, rng, i| {
        let [a, _, _] = &fd[i];
        let g = random_plan(&a.base(), atoms, 1.0, rng);
        let generic = generic_coupling(&g, a)?;
        let (opt, _) = optimal_coupling(&g, a)?;
        let generic_t = generic_coupling(a, &g)?;
        let (opt_t, _) = optimal_coupling(a, &g)?;
        Ok(if generic == opt && generic_t == opt_t { 0.0 } else { 1.0 })
    });
}

fn geodesic_suite(r: &mut Runner) {
    let n = r.cfg.samples;
    let atoms = r.cfg.atoms_max;
    let levels = r.cfg.levels.clone();
    let per_level = r.per_level(n);

    r.prop("exp_log_identity", 1e-9, n, |_, rng, i| {
        let m = manifold_for(i);
        let (x, y) = (random_point(&m, rng), random_point(&m, rng));
        let v = m.log(&x, &y);
        Ok(m.dist(&m.exp(&x, &v), &y).max((norm(&v) - m.dist(&x, &y)).abs()))
    });
    r.prop("pt_isometry", 1e-9, n, |_, rng, i| {
        let m = manifold_for(i);
        let x = random_point(&m, rng);
        let v = random_tangent(&m, &x, 1.5, rng);
        let (w1, w2) = (random_tangent(&m, &x, 1.0, rng), random_tangent(&m, &x, 1.0, rng));
        let t = rng.random_range(0.0..1.0);
        let (p1, p2) = (m.parallel_transport(&x, &v, &w1, t), m.parallel_transport(&x, &v, &w2, t));
        Ok((norm(&p1.vec) - norm(&w1)).abs().max((dot(&p1.vec, &p2.vec) - dot(&w1, &w2)).abs()))
    });
    r.prop("pt_group_law", 1e-8, n, |_, rng, i| {
        let m = manifold_for(i);
        let x = random_point(&m, rng);
        let v = random_tangent(&m, &x, 1.5, rng);
        let w = random_tangent(&m, &x, 1.0, rng);
        let (t, s) = (rng.random_range(0.0..0.6), rng.random_range(0.0..0.6));
        let vel = m.parallel_transport(&x, &v, &v, t);
        let mid = m.parallel_transport(&x, &v, &w, t);
        let composed = m.parallel_transport(&vel.base, &vel.vec, &mid.vec, s);
        let direct = m.parallel_transport(&x, &v, &w, t + s);
        Ok(max_abs_diff(&composed.base.0, &direct.base.0).max(max_abs_diff(&composed.vec, &direct.vec)))
    });
    r.prop("exp_contraction", 1e-9, n, |_, rng, i| {
        let m = manifold_for(i);
        let x = random_point(&m, rng);
        let (u, v) = (random_tangent(&m, &x, 1.5, rng), random_tangent(&m, &x, 1.5, rng));
        let d = m.dist(&m.exp(&x, &u), &m.exp(&x, &v));
        let bound = crate::numeric::dist_sq(&u, &v).sqrt();
        // Equality on flat space, inequality on the sphere.
        Ok(if m.is_sphere() { d - bound } else { (d - bound).abs() })
    });

    let pairs: Vec<(HierMeasure, HierMeasure)> = {
        let mut rng = ChaCha8Rng::seed_from_u64(r.cfg.seed ^ stream_key("geodesic_pairs"));
        (0..per_level)
            .map(|i| {
                let m = manifold_for(i / levels.len());
                let l = level_of(&levels, i);
                (random_measure(&m, l, atoms, &mut rng), random_measure(&m, l, atoms, &mut rng))
            })
            .collect()
    };
    r.prop("plan_norm_identity", 1e-8, per_level, |s, _, i| {
        let (a, b) = &pairs[i];
        let g = optimal_velocity_plan(s, a, b)?;
        Ok((g.norm() - s.w2(a, b)?).abs())
    });
    r.prop("plan_pushforward", 1e-9, per_level, |s, _, i| {
        let (a, b) = &pairs[i];
        let g = optimal_velocity_plan(s, a, b)?;
        Ok(s.w2(&g.exp_push(), b)?.max(s.w2(&g.base(), a)?))
    });
    let half = r.per_level(r.cfg.half_samples());
    let grid = equispaced_grid(DEFAULT_GRID_POINTS);
    r.prop("constant_speed", 1e-8, half, |s, _, i| {
        let (a, b) = &pairs[i];
        let g = optimal_velocity_plan(s, a, b)?;
        let rep = verify_constant_speed(s, &g, &grid)?;
        Ok(if rep.speed_is_optimal { rep.max_deviation } else { f64::INFINITY })
    });
    r.prop("pt_n_norm_and_group_law", 1e-8, half, |s, rng, i| {
        let (a, b) = &pairs[i];
        let g = optimal_velocity_plan(s, a, b)?;
        let (t, u) = (rng.random_range(0.0..0.5), rng.random_range(0.0..0.5));
        let once = pt_n(&g, t);
        let twice = pt_n(&once, u);
        let direct = pt_n(&g, t + u);
        let (x, y) = (twice.tangent_tree(), direct.tangent_tree());
        let (x, y) = (x.rows(), y.rows());
        if x.len() != y.len() {
            return Ok(f64::INFINITY);
        }
        let leaf = x
            .iter()
            .zip(&y)
            .map(|((_, p), (_, q))| max_abs_diff(&p.base.0, &q.base.0).max(max_abs_diff(&p.vec, &q.vec)))
            .fold(0.0, f64::max);
        Ok(leaf.max((once.norm() - g.norm()).abs()))
    });
    r.prop("restriction_optimality", 1e-8, half, |s, rng, i| {
        let (a, b) = &pairs[i];
        let g = optimal_velocity_plan(s, a, b)?;
        let total = s.w2(a, b)?;
        let t = rng.random_range(0.0..1.0);
        let u = rng.random_range(0.0..1.0);
        let rho = restriction_plan(s, &g, t, u)?;
        let norm_gap = (rho.norm() - (u - t).abs() * total).abs();
        // The restricted plan must carry μ_t to μ_s and be optimal between them.
        let landing = s.w2(&rho.exp_push(), &interpolate(&g, u))?;
        let optimal = (rho.norm() - s.w2(&interpolate(&g, t), &interpolate(&g, u))?).abs();
        Ok(norm_gap.max(landing).max(optimal))
    });
}

fn calculus_suite(r: &mut Runner) {
    let n = r.cfg.samples;
    let atoms = r.cfg.atoms_max;
    let levels = r.cfg.levels.clone();

    for (name, m) in [("taylor_remainder_euclidean", euclid()), ("taylor_remainder_sphere", sphere())] {
        r.prop(name, 1e-9, n, |_, rng, i| {
            let v = random_potential(&m, rng);
            let mu = random_measure(&m, level_of(&levels, i), atoms, rng);
            let g = random_plan(&mu, atoms, rng.random_range(0.1..2.0), rng);
            let c = taylor_remainder_check(&v, &mu, &g)?;
            Ok(c.lhs - c.rhs)
        });
    }
    r.prop("gradient_uniqueness", 0.5, n, |_, rng, i| {
        // A perturbed gradient must violate the two-sided Taylor bound along
        // the perturbation; residual is bound / remainder.
        let m = manifold_for(i);
        let v = random_potential(&m, rng);
        let mu = random_measure(&m, level_of(&levels, i), atoms, rng);
        let grad = crate::functional::grad_potential(&v, &mu)?;
        let u = random_fd_plan(&mu, 1.0, rng);
        if u.norm() < 1e-3 {
            return Ok(0.0);
        }
        let wrong = grad.fd_add(&u)?;
        let xi = u.scale(1e-3);
        let moved = v.functional(&xi.exp_push());
        let lhs = (moved - v.functional(&mu) - generic_coupling(&xi, &wrong)?.inner()).abs();
        let bound = 0.5 * v.hessian_bound(&m) * xi.norm_sq();
        Ok(bound / lhs)
    });
    for (name, m) in [("supergradient_euclidean", euclid()), ("supergradient_sphere", sphere())] {
        r.prop(name, 1e-9, n, |s, rng, i| {
            let l = level_of(&levels, i);
            let (a, b, c) = (
                random_measure(&m, l, atoms, rng),
                random_measure(&m, l, atoms, rng),
                random_measure(&m, l, atoms, rng),
            );
            let chk = supergradient_inequality_check(s, &a, &b, &c)?;
            Ok(chk.lhs - chk.rhs)
        });
    }
    r.prop("supergradient_random_coupling", 1e-9, n, |s, rng, i| {
        let m = manifold_for(i);
        let l = level_of(&levels, i);
        let (a, b, c) = (
            random_measure(&m, l, atoms, rng),
            random_measure(&m, l, atoms, rng),
            random_measure(&m, l, atoms, rng),
        );
        let chk = supergradient_inequality_check_random(s, &a, &b, &c, rng)?;
        Ok(chk.lhs - chk.rhs)
    });
    r.prop("supergradient_equality_case", 1e-12, 1, |s, _, _| {
        let m = Manifold::euclidean(1)?;
        let p = |x: f64| HierMeasure::point(m, Point(vec![x]));
        let chk = supergradient_inequality_check(s, &p(0.0)?, &p(1.0)?, &p(3.0)?)?;
        Ok((chk.lhs - 2.0).abs().max((chk.rhs - 2.0).abs()))
    });
    let grid = equispaced_grid(DEFAULT_GRID_POINTS);
    r.prop("generalized_geodesic_convexity", 1e-9, r.cfg.half_samples(), |s, rng, i| {
        let m = manifold_for(i);
        let l = level_of(&levels, i);
        let base = random_measure(&m, l, atoms, rng);
        let (a, b) = (random_measure(&m, l, atoms, rng), random_measure(&m, l, atoms, rng));
        let gg = GeneralizedGeodesic::new(s, &base, &a, &b)?;
        let spec = FunctionalSpec::new(vec![Term::HalfW2Sq { reference: base, weight: 1.0 }])?;
        Ok(convexity_check(s, &spec, Curve::Generalized(&gg), 1.0, &grid)?.max_violation)
    });
    r.prop("convexity_lifting", 1e-9, n, |s, rng, i| {
        // ½‖x − c‖² is 1-convex on flat space; so is its lift at every level.
        let m = euclid();
        let v = Potential::quadratic(crate::random::normal_vec(2, rng));
        let spec = FunctionalSpec::new(vec![Term::Potential { potential: v, weight: 1.0 }])?;
        let l = 1 + i % 2;
        let (a, b) = (random_measure(&m, l, atoms, rng), random_measure(&m, l, atoms, rng));
        let g = optimal_velocity_plan(s, &a, &b)?;
        Ok(convexity_check(s, &spec, Curve::Geodesic(&g), 1.0, &grid)?.max_violation)
    });
    r.prop("fd_halving_ratio", 0.6, n, |_, rng, i| {
        let m = manifold_for(i);
        let v = random_potential(&m, rng);
        let mu = random_measure(&m, level_of(&levels, i), atoms, rng);
        let xi = random_plan(&mu, atoms, 1.0, rng);
        let eps0 = 1e-3 / xi.norm().max(1e-300);
        let res = directional_residuals(&v, &mu, &xi, eps0, 3, |s| s + s * s * s / 3.0, |s| 1.0 + s * s)?;
        let mut worst: f64 = 0.0;
        for w in res.windows(2) {
            // Exactly affine directions leave only rounding noise.
            if w[0] > 1e-13 {
                worst = worst.max(w[1] / w[0]);
            }
        }
        Ok(worst)
    });
    r.prop("descent_monotone", 1e-9, r.cfg.half_samples(), |s, rng, i| {
        let m = manifold_for(i);
        let l = level_of(&levels, i).max(1);
        let k = rng.random_range(1..=atoms);
        let mu = uniform_measure(&m, l, k, rng);
        let reference = uniform_measure(&m, l, k, rng);
        let spec = FunctionalSpec::new(vec![
            Term::Potential { potential: random_potential(&m, rng), weight: 1.0 },
            Term::HalfW2Sq { reference, weight: 0.5 },
        ])?;
        let big = spec.smoothness_bound(&m).max(1e-3);
        let trace = gradient_descent(s, &spec, &mu, 1.0 / big, 4)?;
        let vals = trace.values();
        Ok(vals.windows(2).map(|w| (w[1] - w[0]) / (1.0 + w[0].abs())).fold(f64::NEG_INFINITY, f64::max))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CheckSuiteConfig {
        CheckSuiteConfig { samples: 4, levels: vec![1, 2], ..Default::default() }
    }

    #[test]
    fn small_suites_pass_and_are_deterministic() {
        let a = run_suites(&small(), &["all"]).unwrap();
        for p in &a.properties {
            assert!(p.pass, "{p:?}");
        }
        let b = run_suites(&small(), &["all"]).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn subset_reports_match_the_full_run() {
        let full = run_suites(&small(), &["all"]).unwrap();
        let metric = run_suite(&small(), "metric").unwrap();
        assert_eq!(metric.suites, vec!["metric"]);
        for p in &metric.properties {
            assert_eq!(Some(p), full.property(&p.name));
        }
        assert!(run_suite(&small(), "nope").is_err());
    }
}
