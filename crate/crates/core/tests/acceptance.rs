//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hierot::geodesic::{optimal_velocity_plan, restriction_plan, verify_constant_speed};
use hierot::ot::{certificate, permutation_oracle, solve_ot, CostMatrix};
use hierot::suite::{run_suites, CheckReport, CheckSuiteConfig};
use hierot::{Error, HierMeasure, Manifold, PlanNode, Point, Tangent, VelocityPlan, W2Solver};

struct Outcome {
    pass: bool,
    detail: String,
}

fn from_report(report: &CheckReport, names: &[&str]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in names {
        match report.property(name) {
            Some(p) => {
                pass &= p.pass;
                parts.push(format!(
                    "{name}: {} cases, worst {:.3e} (tol {:.0e}){}",
                    p.cases,
                    p.worst_residual,
                    p.tolerance,
                    if p.pass { "" } else { " FAILED" }
                ));
            }
            None => {
                pass = false;
                parts.push(format!("{name}: missing"));
            }
        }
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn merge(a: Outcome, b: Outcome) -> Outcome {
    Outcome { pass: a.pass && b.pass, detail: format!("{}; {}", a.detail, b.detail) }
}

/// 200 uniform square instances with n ≤ 6: value against the permutation
/// oracle and the duality gap of the same solve.
fn ot_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_value, mut worst_gap) = (0.0f64, 0.0f64);
    let mut pass = true;
    for _ in 0..200 {
        let n = rng.random_range(1..=6);
        let c = CostMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..10.0)).unwrap();
        let u = vec![1.0 / n as f64; n];
        let sol = solve_ot(&c, &u, &u).unwrap();
        let cert = certificate(&sol.plan, &sol.duals, &c).unwrap();
        let dv = (sol.value - permutation_oracle(&c).unwrap()).abs();
        let gap = cert.gap() / (1.0 + sol.value.abs());
        worst_value = worst_value.max(dv);
        worst_gap = worst_gap.max(gap);
        pass &= dv <= 1e-9 && gap <= 1e-8 && cert.is_optimal();
    }
    Outcome {
        pass,
        detail: format!("200 instances, worst |value − oracle| {worst_value:.3e} (tol 1e-9), worst relative gap {worst_gap:.3e} (tol 1e-8)"),
    }
}

fn pole_cases() -> Outcome {
    let m = Manifold::sphere(3).unwrap();
    let solver = W2Solver::default();
    let north = HierMeasure::point(m, Point(vec![0.0, 0.0, 1.0])).unwrap();
    let south = HierMeasure::point(m, Point(vec![0.0, 0.0, -1.0])).unwrap();
    let g = optimal_velocity_plan(&solver, &north, &south).unwrap();
    let bad = VelocityPlan::new(m, PlanNode::Leaf(Tangent::new(Point(vec![0.0, 0.0, 1.0]), vec![3.0 * PI, 0.0, 0.0])))
        .unwrap();
    let rep = verify_constant_speed(&solver, &bad, &[0.0, 0.5, 1.0]).unwrap();
    let refused = matches!(restriction_plan(&solver, &bad, 0.0, 0.5), Err(Error::NotOptimalInput { .. }));
    let pass = (g.norm() - PI).abs() <= 1e-10
        && (bad.norm() - 3.0 * PI).abs() <= 1e-10
        && !rep.speed_is_optimal
        && refused;
    Outcome {
        pass,
        detail: format!(
            "pole plan norm {:.12} (π), 3π plan norm {:.12} flagged non-optimal: {}",
            g.norm(),
            bad.norm(),
            !rep.speed_is_optimal && refused
        ),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let cfg = CheckSuiteConfig { seed: 2024, levels: vec![1, 2, 3], atoms_max: 3, samples: 100, ..Default::default() };
    let report = run_suites(&cfg, &["all"]).expect("suites run");

    let criteria: Vec<(&str, Outcome)> = vec![
        ("OT oracle equivalence", ot_oracle()),
        (
            "metric suite",
            from_report(&report, &["w2_symmetry", "w2_triangle", "dirac_lift_isometry"]),
        ),
        (
            "optimal velocity plan norm identity",
            merge(from_report(&report, &["plan_norm_identity"]), pole_cases()),
        ),
        ("geodesic constant speed", from_report(&report, &["constant_speed"])),
        (
            "parallel transport",
            from_report(&report, &["pt_group_law", "pt_isometry", "pt_n_norm_and_group_law", "restriction_optimality"]),
        ),
        (
            "W_mu and inner product",
            from_report(
                &report,
                &[
                    "w_mu_symmetry",
                    "w_mu_identity",
                    "w_mu_triangle",
                    "cauchy_schwarz",
                    "polarization_vs_direct",
                    "inner_self_is_norm_sq",
                    "second_moment_additivity",
                    "fiber_coupling_oracle",
                ],
            ),
        ),
        (
            "fully deterministic structure",
            from_report(&report, &["fd_vector_space_axioms", "fd_l2_isometry", "fd_coupling_uniqueness"]),
        ),
        (
            "calculus suite",
            from_report(
                &report,
                &[
                    "taylor_remainder_euclidean",
                    "taylor_remainder_sphere",
                    "supergradient_euclidean",
                    "supergradient_sphere",
                    "supergradient_equality_case",
                    "generalized_geodesic_convexity",
                    "convexity_lifting",
                ],
            ),
        ),
        ("finite-difference gradient checks", from_report(&report, &["fd_halving_ratio"])),
        ("determinism", {
            let again = run_suites(&cfg, &["all"]).expect("suites run");
            let (a, b) = (report.to_json(), again.to_json());
            Outcome { pass: a == b, detail: format!("two reports of {} bytes, identical: {}", a.len(), a == b) }
        }),
    ];

    let mut all = true;
    for (i, (name, o)) in criteria.iter().enumerate() {
        all &= o.pass;
        println!("{} criterion {}: {name} — {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance finished in {:.1}s", start.elapsed().as_secs_f64());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
