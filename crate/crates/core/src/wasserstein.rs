//! Recursive hierarchical W₂ distances and level-n optimal plans.
//!
//! `W₂²(P, Q)` is the value of the transport problem between the atom lists of
//! `P` and `Q` with ground cost `W₂²` one level down. Every inner distance is
//! memoized on a 128-bit structural hash of the (unordered) pair of subtrees,
//! so shared atoms and repeated sub-measures are solved once per solver.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::manifold::{Manifold, Point, Tangent};
use crate::measure::HierMeasure;
use crate::ot::{solve_ot, verify_optimality, CostMatrix, OtSolution, TransportPlan};
use crate::tree::{structural_key, StructuralKey, Tree};

pub const DEFAULT_MAX_LEVEL: usize = 4;
pub const DEFAULT_MAX_ATOMS: usize = 32;
/// Environment variable overriding [`Limits::max_atoms`] in the CLI.
pub const MAX_ATOMS_ENV: &str = "HIEROT_MAX_ATOMS";

/// Desk-scale guard: problems beyond these sizes fail with `BudgetExceeded`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_level: usize,
    pub max_atoms: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_level: DEFAULT_MAX_LEVEL, max_atoms: DEFAULT_MAX_ATOMS }
    }
}

impl Limits {
    /// Defaults, with `max_atoms` taken from `HIEROT_MAX_ATOMS` when set.
    pub fn from_env() -> Result<Self> {
        let mut limits = Limits::default();
        if let Ok(raw) = std::env::var(MAX_ATOMS_ENV) {
            limits.max_atoms = raw
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{MAX_ATOMS_ENV}={raw:?} is not a positive integer")))?;
        }
        Ok(limits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum GroundCost {
    Distance,
    Sasaki,
}

type MemoKey = (Manifold, GroundCost, u128, u128);

/// Hierarchical W₂ solver with a shared memo table.
///
/// The memo is behind a mutex; concurrent inserts of the same key write the
/// same value, so the table stays consistent.
#[derive(Debug, Default)]
pub struct W2Solver {
    limits: Limits,
    memo: Mutex<HashMap<MemoKey, f64>>,
}

impl W2Solver {
    pub fn new(limits: Limits) -> Self {
        W2Solver { limits, memo: Mutex::new(HashMap::new()) }
    }

    pub fn limits(&self) -> Limits {
        self.limits
    }

    pub fn cache_len(&self) -> usize {
        self.memo.lock().expect("memo lock").len()
    }

    fn check_pair(&self, mu: &HierMeasure, nu: &HierMeasure) -> Result<()> {
        if mu.manifold() != nu.manifold() {
            return Err(Error::invalid(format!(
                "measures live on different manifolds: {:?} vs {:?}",
                mu.manifold(),
                nu.manifold()
            )));
        }
        if mu.level() != nu.level() {
            return Err(Error::LevelMismatch {
                path: "measure".into(),
                detail: format!("levels {} and {} differ", mu.level(), nu.level()),
            });
        }
        if mu.level() > self.limits.max_level {
            return Err(Error::BudgetExceeded(format!(
                "level {} exceeds the limit {}",
                mu.level(),
                self.limits.max_level
            )));
        }
        Ok(())
    }

    fn check_atoms(&self, n: usize) -> Result<()> {
        if n > self.limits.max_atoms {
            return Err(Error::BudgetExceeded(format!(
                "{n} atoms in one node exceed the limit {} (set {MAX_ATOMS_ENV} to raise it)",
                self.limits.max_atoms
            )));
        }
        Ok(())
    }

    pub fn w2(&self, mu: &HierMeasure, nu: &HierMeasure) -> Result<f64> {
        Ok(self.w2_sq(mu, nu)?.sqrt())
    }

    pub fn w2_sq(&self, mu: &HierMeasure, nu: &HierMeasure) -> Result<f64> {
        self.check_pair(mu, nu)?;
        let m = mu.manifold();
        self.tree_cost(&m, GroundCost::Distance, mu.tree(), nu.tree(), &|x: &Point, y: &Point| {
            m.dist_sq(x, y)
        })
    }

    /// Squared hierarchical W₂ between measures on TM with the one-geodesic
    /// Sasaki surrogate as leaf cost (exact on Euclidean space, an upper bound
    /// on the sphere).
    pub fn tangent_w2_sq(&self, m: &Manifold, a: &Tree<Tangent>, b: &Tree<Tangent>) -> Result<f64> {
        if a.depth() != b.depth() {
            return Err(Error::LevelMismatch {
                path: "measure".into(),
                detail: format!("levels {} and {} differ", a.depth(), b.depth()),
            });
        }
        self.tree_cost(m, GroundCost::Sasaki, a, b, &|x: &Tangent, y: &Tangent| m.sasaki_sq_upper(x, y))
    }

    fn tree_cost<L: StructuralKey + PartialEq>(
        &self,
        m: &Manifold,
        kind: GroundCost,
        a: &Tree<L>,
        b: &Tree<L>,
        leaf: &dyn Fn(&L, &L) -> f64,
    ) -> Result<f64> {
        match (a, b) {
            (Tree::Leaf(x), Tree::Leaf(y)) => Ok(leaf(x, y)),
            (Tree::Mix(xs), Tree::Mix(ys)) => {
                self.check_atoms(xs.len().max(ys.len()))?;
                let (ka, kb) = (structural_key(a), structural_key(b));
                if ka == kb && a == b {
                    return Ok(0.0);
                }
                // Solve in a canonical orientation so that results are exactly symmetric.
                let (first, second, key) = if ka <= kb {
                    (a, b, (*m, kind, ka, kb))
                } else {
                    (b, a, (*m, kind, kb, ka))
                };
                if let Some(v) = self.memo.lock().expect("memo lock").get(&key) {
                    return Ok(*v);
                }
                let c = self.tree_cost_matrix(m, kind, first.atoms(), second.atoms(), leaf)?;
                let wa: Vec<f64> = first.atoms().iter().map(|(w, _)| *w).collect();
                let wb: Vec<f64> = second.atoms().iter().map(|(w, _)| *w).collect();
                let v = solve_ot(&c, &wa, &wb)?.value.max(0.0);
                self.memo.lock().expect("memo lock").insert(key, v);
                Ok(v)
            }
            _ => Err(Error::LevelMismatch {
                path: "measure".into(),
                detail: "a point was compared with a measure".into(),
            }),
        }
    }

    fn tree_cost_matrix<L: StructuralKey + PartialEq>(
        &self,
        m: &Manifold,
        kind: GroundCost,
        xs: &[(f64, Tree<L>)],
        ys: &[(f64, Tree<L>)],
        leaf: &dyn Fn(&L, &L) -> f64,
    ) -> Result<CostMatrix> {
        let mut data = Vec::with_capacity(xs.len() * ys.len());
        for (_, x) in xs {
            for (_, y) in ys {
                data.push(self.tree_cost(m, kind, x, y, leaf)?);
            }
        }
        CostMatrix::new(xs.len(), ys.len(), data)
    }

    /// `c_ij = W₂²(μ_i, ν_j)` between the atoms of two measures of level ≥ 1.
    pub fn cost_matrix(&self, mu: &HierMeasure, nu: &HierMeasure) -> Result<CostMatrix> {
        self.check_pair(mu, nu)?;
        if mu.level() == 0 {
            return Err(Error::invalid("cost matrices need measures of level >= 1"));
        }
        self.check_atoms(mu.atoms().len().max(nu.atoms().len()))?;
        let m = mu.manifold();
        self.tree_cost_matrix(&m, GroundCost::Distance, mu.atoms(), nu.atoms(), &|x: &Point, y: &Point| {
            m.dist_sq(x, y)
        })
    }

    /// Optimal plan between the atom lists of `mu` and `nu` for the recursive cost.
    pub fn top_plan(&self, mu: &HierMeasure, nu: &HierMeasure) -> Result<TransportPlan> {
        let cost = self.cost_matrix(mu, nu)?;
        Ok(solve_ot(&cost, &mu.weights(), &nu.weights())?.plan)
    }

    /// Top-level optimal plan plus, for each support entry, the optimal plan
    /// between the matched atoms.
    pub fn opt_hier_plan(&self, mu: &HierMeasure, nu: &HierMeasure) -> Result<HierPlan> {
        self.check_pair(mu, nu)?;
        if mu.level() == 0 {
            return Err(Error::invalid("transport plans need measures of level >= 1"));
        }
        let cost = self.cost_matrix(mu, nu)?;
        let solution = solve_ot(&cost, &mu.weights(), &nu.weights())?;
        let mut children = Vec::new();
        if mu.level() >= 2 {
            for (i, j, _) in solution.plan.support() {
                children.push(PlanChild { i, j, plan: self.opt_hier_plan(&mu.atom(i), &nu.atom(j))? });
            }
        }
        Ok(HierPlan { level: mu.level(), cost, solution, children })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanChild {
    pub i: usize,
    pub j: usize,
    pub plan: HierPlan,
}

/// An optimal plan for the recursive cost at every level of the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct HierPlan {
    pub level: usize,
    pub cost: CostMatrix,
    pub solution: OtSolution,
    /// Empty at level 1, where the ground cost is `d²`.
    pub children: Vec<PlanChild>,
}

impl HierPlan {
    pub fn value(&self) -> f64 {
        self.solution.value
    }

    pub fn support(&self) -> Vec<(usize, usize, f64)> {
        self.solution.plan.support()
    }

    /// Every level carries a primal-dual certificate.
    pub fn is_certified(&self) -> bool {
        verify_optimality(&self.solution.plan, &self.solution.duals, &self.cost)
            && self.children.iter().all(|c| c.plan.is_certified())
    }

    /// Each child plan's value reproduces the corresponding cost entry.
    pub fn is_consistent(&self, tol: f64) -> bool {
        self.children.iter().all(|c| {
            (c.plan.value() - self.cost.get(c.i, c.j)).abs() <= tol && c.plan.is_consistent(tol)
        })
    }
}

pub fn w2(mu: &HierMeasure, nu: &HierMeasure) -> Result<f64> {
    W2Solver::default().w2(mu, nu)
}

pub fn opt_hier_plan(mu: &HierMeasure, nu: &HierMeasure) -> Result<HierPlan> {
    W2Solver::default().opt_hier_plan(mu, nu)
}
