//! Exact solver for the discrete transportation problem.
//!
//! Transportation simplex (MODI): north-west-corner start, Bland's rule for the
//! entering and leaving cells, and an ε-perturbation of the supplies so that
//! every basic flow stays strictly positive while pivoting. Once the optimal
//! basis is found the flows are recomputed on the basis tree from the
//! unperturbed marginals, so the returned plan is an exact basic solution with
//! at most `m + k - 1` positive entries.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{kahan_sum, KahanSum};

/// Marginals must each sum to one within this tolerance.
pub const MARGINAL_SUM_TOL: f64 = 1e-9;
/// Marginal weights below this are removed before solving.
pub const DROP_WEIGHT: f64 = 1e-14;
/// Largest size accepted by [`permutation_oracle`].
pub const ORACLE_MAX: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("cost matrix needs at least one row and one column"));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "cost matrix has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(c) = data.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::invalid(format!("cost entries must be finite and nonnegative, got {c}")));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged cost matrix"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().cloned().fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> CostMatrix {
        CostMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i)).expect("same entries")
    }

    pub fn scaled(&self, s: f64) -> Result<CostMatrix> {
        CostMatrix::new(self.rows, self.cols, self.data.iter().map(|c| c * s).collect())
    }

    /// `out[i][j] = self[row_perm[i]][col_perm[j]]`
    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> CostMatrix {
        CostMatrix::from_fn(self.rows, self.cols, |i, j| self.get(row_perm[i], col_perm[j]))
            .expect("same entries")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols` coupling matrix.
    pub matrix: Vec<f64>,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.cols + j]
    }

    /// Strictly positive entries `(i, j, mass)` in row-major order.
    pub fn support(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows)
            .cartesian_product(0..self.cols)
            .map(|(i, j)| (i, j, self.get(i, j)))
            .filter(|(_, _, x)| *x > 0.0)
            .collect()
    }

    pub fn cost(&self, c: &CostMatrix) -> f64 {
        kahan_sum(self.matrix.iter().zip(c.data()).map(|(x, c)| x * c))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| kahan_sum((0..self.cols).map(|j| self.get(i, j))))
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|j| kahan_sum((0..self.rows).map(|i| self.get(i, j))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPotentials {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl DualPotentials {
    pub fn value(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = KahanSum::new();
        for (w, p) in a.iter().zip(&self.phi) {
            acc.add(w * p);
        }
        for (w, p) in b.iter().zip(&self.psi) {
            acc.add(w * p);
        }
        acc.value()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtSolution {
    pub plan: TransportPlan,
    pub duals: DualPotentials,
    pub value: f64,
    /// Row and column indices whose weight was below [`DROP_WEIGHT`].
    pub dropped_rows: Vec<usize>,
    pub dropped_cols: Vec<usize>,
    pub iterations: usize,
}

fn check_weights(name: &str, w: &[f64]) -> Result<f64> {
    if let Some(x) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::invalid(format!("{name} weight {x} is not a finite nonnegative number")));
    }
    Ok(kahan_sum(w.iter().copied()))
}

/// Solves `min_{P ∈ Π(a, b)} <C, P>` exactly.
pub fn solve_ot(c: &CostMatrix, a: &[f64], b: &[f64]) -> Result<OtSolution> {
    if a.len() != c.rows() || b.len() != c.cols() {
        return Err(Error::invalid(format!(
            "marginals of length {}x{} do not match a {}x{} cost matrix",
            a.len(),
            b.len(),
            c.rows(),
            c.cols()
        )));
    }
    let sa = check_weights("row", a)?;
    let sb = check_weights("column", b)?;
    if (sa - 1.0).abs() > MARGINAL_SUM_TOL || (sb - 1.0).abs() > MARGINAL_SUM_TOL {
        return Err(Error::UnbalancedMarginals { row_sum: sa, col_sum: sb });
    }

    let keep_rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] >= DROP_WEIGHT).collect();
    let keep_cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] >= DROP_WEIGHT).collect();
    let dropped_rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] < DROP_WEIGHT).collect();
    let dropped_cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] < DROP_WEIGHT).collect();
    let ka = kahan_sum(keep_rows.iter().map(|&i| a[i]));
    let kb = kahan_sum(keep_cols.iter().map(|&j| b[j]));
    let ra: Vec<f64> = keep_rows.iter().map(|&i| a[i] / ka).collect();
    let rb: Vec<f64> = keep_cols.iter().map(|&j| b[j] / kb).collect();
    let (m, k) = (ra.len(), rb.len());
    let rc: Vec<f64> = keep_rows
        .iter()
        .flat_map(|&i| keep_cols.iter().map(move |&j| (i, j)))
        .map(|(i, j)| c.get(i, j))
        .collect();

    let core = transport_simplex(&rc, m, k, &ra, &rb)?;

    let mut matrix = vec![0.0; c.rows() * c.cols()];
    for (ri, &i) in keep_rows.iter().enumerate() {
        for (cj, &j) in keep_cols.iter().enumerate() {
            matrix[i * c.cols() + j] = core.flows[ri * k + cj];
        }
    }
    let mut phi = vec![0.0; c.rows()];
    let mut psi = vec![0.0; c.cols()];
    for (ri, &i) in keep_rows.iter().enumerate() {
        phi[i] = core.u[ri];
    }
    for (cj, &j) in keep_cols.iter().enumerate() {
        psi[j] = core.v[cj];
    }
    // Extend the potentials to dropped indices keeping dual feasibility.
    for &i in &dropped_rows {
        phi[i] = keep_cols
            .iter()
            .map(|&j| c.get(i, j) - psi[j])
            .fold(f64::INFINITY, f64::min);
    }
    for &j in &dropped_cols {
        psi[j] = (0..c.rows())
            .map(|i| c.get(i, j) - phi[i])
            .fold(f64::INFINITY, f64::min);
    }

    let plan = TransportPlan {
        rows: c.rows(),
        cols: c.cols(),
        matrix,
        row_marginal: a.to_vec(),
        col_marginal: b.to_vec(),
    };
    let value = plan.cost(c);
    Ok(OtSolution {
        plan,
        duals: DualPotentials { phi, psi },
        value,
        dropped_rows,
        dropped_cols,
        iterations: core.iterations,
    })
}

struct SimplexResult {
    flows: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    iterations: usize,
}

fn transport_simplex(c: &[f64], m: usize, k: usize, a: &[f64], b: &[f64]) -> Result<SimplexResult> {
    let cmax = c.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-12 * (1.0 + cmax);
    let min_w = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let eps = 1e-13 * min_w;

    let mut sa: Vec<f64> = a.iter().map(|x| x + eps).collect();
    let mut sb = b.to_vec();
    sb[k - 1] += m as f64 * eps;

    let mut flow = vec![0.0; m * k];
    let mut basic = vec![false; m * k];
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(m + k - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let x = sa[i].min(sb[j]);
        flow[i * k + j] = x;
        basic[i * k + j] = true;
        basis.push((i, j));
        if i == m - 1 && j == k - 1 {
            break;
        }
        let advance_row = if i == m - 1 {
            false
        } else if j == k - 1 {
            true
        } else {
            sa[i] < sb[j]
        };
        if advance_row {
            sb[j] -= x;
            sa[i] = 0.0;
            i += 1;
        } else {
            sa[i] -= x;
            sb[j] = 0.0;
            j += 1;
        }
    }
    debug_assert_eq!(basis.len(), m + k - 1);

    let max_iter = 10_000 + 50 * m * k;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; k];
    let mut iterations = 0;
    loop {
        let adj = adjacency(&basis, m, k);
        potentials(&adj, c, m, k, &mut u, &mut v)?;

        // Bland: the lowest-index improving cell enters.
        let entering = (0..m * k).find(|&idx| {
            !basic[idx] && c[idx] - u[idx / k] - v[idx % k] < -tol
        });
        let Some(enter) = entering else { break };
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::NumericalFailure(format!(
                "transportation simplex exceeded {max_iter} pivots"
            )));
        }
        let (ei, ej) = (enter / k, enter % k);
        let path = tree_path(&adj, ei, m + ej, m + k)
            .ok_or_else(|| Error::NumericalFailure("basis is not a spanning tree".into()))?;
        // Cells on the path alternate -, +, -, ... starting next to column ej.
        let minus: Vec<usize> = path.iter().step_by(2).copied().collect();
        let plus: Vec<usize> = path.iter().skip(1).step_by(2).copied().collect();
        let theta = minus.iter().map(|&e| flow[e]).fold(f64::INFINITY, f64::min);
        let leave = *minus
            .iter()
            .filter(|&&e| flow[e] == theta)
            .min()
            .expect("cycle has a decreasing cell");
        for &e in &plus {
            flow[e] += theta;
        }
        for &e in &minus {
            flow[e] -= theta;
        }
        flow[leave] = 0.0;
        basic[leave] = false;
        flow[enter] = theta;
        basic[enter] = true;
        let pos = basis
            .iter()
            .position(|&(bi, bj)| bi * k + bj == leave)
            .expect("leaving cell is basic");
        basis[pos] = (ei, ej);
    }

    let flows = tree_flows(&basis, m, k, a, b)?;
    Ok(SimplexResult { flows, u, v, iterations })
}

type Adjacency = Vec<Vec<(usize, usize)>>;

/// Bipartite basis graph: rows are nodes `0..m`, columns `m..m + k`; each edge
/// carries its flat cell index.
fn adjacency(basis: &[(usize, usize)], m: usize, k: usize) -> Adjacency {
    let mut adj = vec![Vec::new(); m + k];
    for &(i, j) in basis {
        adj[i].push((m + j, i * k + j));
        adj[m + j].push((i, i * k + j));
    }
    adj
}

fn potentials(adj: &Adjacency, c: &[f64], m: usize, k: usize, u: &mut [f64], v: &mut [f64]) -> Result<()> {
    let mut seen = vec![false; m + k];
    let mut stack = vec![0usize];
    seen[0] = true;
    u[0] = 0.0;
    let mut count = 1;
    while let Some(node) = stack.pop() {
        for &(next, cell) in &adj[node] {
            if seen[next] {
                continue;
            }
            seen[next] = true;
            count += 1;
            if node < m {
                v[next - m] = c[cell] - u[node];
            } else {
                u[next] = c[cell] - v[node - m];
            }
            stack.push(next);
        }
    }
    if count != m + k {
        return Err(Error::NumericalFailure("basis does not span all rows and columns".into()));
    }
    Ok(())
}

/// Cells on the tree path from `target` back to `source`, listed from the
/// `target` end.
fn tree_path(adj: &Adjacency, source: usize, target: usize, nodes: usize) -> Option<Vec<usize>> {
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes];
    let mut seen = vec![false; nodes];
    let mut queue = std::collections::VecDeque::from([source]);
    seen[source] = true;
    while let Some(node) = queue.pop_front() {
        if node == target {
            break;
        }
        for &(next, cell) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some((node, cell));
                queue.push_back(next);
            }
        }
    }
    if !seen[target] {
        return None;
    }
    let mut path = Vec::new();
    let mut node = target;
    while node != source {
        let (p, cell) = parent[node]?;
        path.push(cell);
        node = p;
    }
    Some(path)
}

/// Solves the basis tree for the flows matching the exact marginals.
fn tree_flows(basis: &[(usize, usize)], m: usize, k: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = m + k;
    let mut rem: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut alive = vec![true; basis.len()];
    for (e, &(i, j)) in basis.iter().enumerate() {
        edges[i].push((m + j, e));
        edges[m + j].push((i, e));
    }
    let mut degree: Vec<usize> = edges.iter().map(Vec::len).collect();
    let mut leaves: Vec<usize> = (0..n).filter(|&x| degree[x] == 1).collect();
    let mut flows = vec![0.0; m * k];
    let mut remaining = basis.len();
    while remaining > 0 {
        let node = leaves
            .pop()
            .ok_or_else(|| Error::NumericalFailure("basis tree has a cycle".into()))?;
        if degree[node] != 1 {
            continue;
        }
        let &(other, e) = edges[node]
            .iter()
            .find(|(_, e)| alive[*e])
            .expect("leaf has one live edge");
        let x = rem[node];
        let (i, j) = basis[e];
        flows[i * k + j] = x;
        rem[node] = 0.0;
        rem[other] -= x;
        alive[e] = false;
        remaining -= 1;
        degree[node] -= 1;
        degree[other] -= 1;
        if degree[other] == 1 {
            leaves.push(other);
        }
    }
    for f in flows.iter_mut() {
        if *f < -1e-9 {
            return Err(Error::NumericalFailure(format!("negative basic flow {f}")));
        }
        // Marginals that agree only up to rounding leave dust on the tree; it
        // would otherwise dominate square roots of near-zero values.
        if *f < DROP_WEIGHT {
            *f = 0.0;
        }
    }
    Ok(flows)
}

/// Exact minimum over all `n!` assignments of a square problem with uniform
/// weights `1/n`. Test oracle for [`solve_ot`].
pub fn permutation_oracle(c: &CostMatrix) -> Result<f64> {
    let n = c.rows();
    if c.cols() != n {
        return Err(Error::invalid("permutation oracle needs a square cost matrix"));
    }
    if n > ORACLE_MAX {
        return Err(Error::TooLarge { n, max: ORACLE_MAX });
    }
    let best = (0..n)
        .permutations(n)
        .map(|perm| perm.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    Ok(best / n as f64)
}

/// Residuals of the optimality conditions of a primal-dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub primal: f64,
    pub dual: f64,
    pub max_marginal_error: f64,
    pub min_entry: f64,
    pub max_dual_violation: f64,
    pub max_slack_violation: f64,
}

impl Certificate {
    pub fn gap(&self) -> f64 {
        (self.primal - self.dual).abs()
    }

    pub fn is_optimal(&self) -> bool {
        let scale = 1.0 + self.primal.abs();
        self.max_marginal_error <= 1e-10
            && self.min_entry >= -1e-15
            && self.max_dual_violation <= 1e-9 * scale
            && self.gap() <= 1e-8 * scale
            && self.max_slack_violation <= 1e-9 * scale
    }
}

pub fn certificate(plan: &TransportPlan, duals: &DualPotentials, c: &CostMatrix) -> Result<Certificate> {
    if plan.rows != c.rows()
        || plan.cols != c.cols()
        || duals.phi.len() != c.rows()
        || duals.psi.len() != c.cols()
    {
        return Err(Error::invalid("plan, potentials and costs have inconsistent shapes"));
    }
    let row_err = plan
        .row_sums()
        .iter()
        .zip(&plan.row_marginal)
        .map(|(s, a)| (s - a).abs())
        .fold(0.0, f64::max);
    let col_err = plan
        .col_sums()
        .iter()
        .zip(&plan.col_marginal)
        .map(|(s, b)| (s - b).abs())
        .fold(0.0, f64::max);
    let mut dual_violation: f64 = 0.0;
    let mut slack: f64 = 0.0;
    for i in 0..c.rows() {
        for j in 0..c.cols() {
            let reduced = c.get(i, j) - duals.phi[i] - duals.psi[j];
            dual_violation = dual_violation.max(-reduced);
            if plan.get(i, j) > 1e-12 {
                slack = slack.max(reduced.abs());
            }
        }
    }
    Ok(Certificate {
        primal: plan.cost(c),
        dual: duals.value(&plan.row_marginal, &plan.col_marginal),
        max_marginal_error: row_err.max(col_err),
        min_entry: plan.matrix.iter().cloned().fold(f64::INFINITY, f64::min),
        max_dual_violation: dual_violation,
        max_slack_violation: slack,
    })
}

/// True iff the plan is feasible, the potentials are dual feasible, the gap is
/// below `1e-8 (1 + value)` and complementary slackness holds.
pub fn verify_optimality(plan: &TransportPlan, duals: &DualPotentials, c: &CostMatrix) -> bool {
    certificate(plan, duals, c).is_ok_and(|cert| cert.is_optimal())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// μ = {½: 0, ½: 1}, ν = {½: 2, ½: 3} on the line, squared distance cost.
    fn line_instance() -> CostMatrix {
        CostMatrix::from_rows(&[vec![4.0, 9.0], vec![1.0, 4.0]]).unwrap()
    }

    #[test]
    fn monotone_matching_on_the_line() {
        let sol = solve_ot(&line_instance(), &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(sol.value, 4.0);
        assert_eq!(sol.plan.matrix, vec![0.5, 0.0, 0.0, 0.5]);
        assert!(verify_optimality(&sol.plan, &sol.duals, &line_instance()));
        assert_eq!(permutation_oracle(&line_instance()).unwrap(), 4.0);
    }

    #[test]
    fn swapped_plan_is_rejected() {
        let c = line_instance();
        let sol = solve_ot(&c, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        let mut swapped = sol.plan.clone();
        swapped.matrix = vec![0.0, 0.5, 0.5, 0.0];
        let cert = certificate(&swapped, &sol.duals, &c).unwrap();
        assert_eq!(cert.primal, 5.0);
        assert!((cert.gap() - 1.0).abs() < 1e-12);
        assert!(!verify_optimality(&swapped, &sol.duals, &c));
    }

    #[test]
    fn identical_marginals_zero_diagonal() {
        let c = CostMatrix::from_rows(&[vec![0.0, 1.0, 4.0], vec![1.0, 0.0, 1.0], vec![4.0, 1.0, 0.0]]).unwrap();
        let w = [0.2, 0.3, 0.5];
        let sol = solve_ot(&c, &w, &w).unwrap();
        assert_eq!(sol.value, 0.0);
        for i in 0..3 {
            assert!((sol.plan.get(i, i) - w[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn single_row_has_unique_plan() {
        let c = CostMatrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let b = [0.5, 0.25, 0.25];
        let sol = solve_ot(&c, &[1.0], &b).unwrap();
        assert!((sol.value - (0.5 + 0.5 + 0.75)).abs() < 1e-15);
        assert!(verify_optimality(&sol.plan, &sol.duals, &c));
    }

    #[test]
    fn zero_cost_accepts_any_feasible_plan() {
        let c = CostMatrix::new(2, 2, vec![0.0; 4]).unwrap();
        let sol = solve_ot(&c, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        let mut other = sol.plan.clone();
        other.matrix = vec![0.25; 4];
        assert!(verify_optimality(&other, &sol.duals, &c));
        assert_eq!(permutation_oracle(&c).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let c = line_instance();
        assert!(matches!(
            solve_ot(&c, &[0.5, 0.6], &[0.5, 0.5]),
            Err(Error::UnbalancedMarginals { .. })
        ));
        assert!(matches!(solve_ot(&c, &[1.0], &[0.5, 0.5]), Err(Error::InvalidInput(_))));
        let big = CostMatrix::new(8, 8, vec![0.0; 64]).unwrap();
        assert!(matches!(permutation_oracle(&big), Err(Error::TooLarge { n: 8, max: 7 })));
        assert!(CostMatrix::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn tiny_weights_are_dropped() {
        let c = CostMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![5.0, 5.0]]).unwrap();
        let sol = solve_ot(&c, &[0.5, 0.5 - 1e-16, 1e-16], &[0.5, 0.5]).unwrap();
        assert_eq!(sol.dropped_rows, vec![2]);
        assert!(sol.value.abs() < 1e-14);
        assert!(verify_optimality(&sol.plan, &sol.duals, &c));
    }

    #[test]
    fn basic_solution_is_sparse() {
        let c = CostMatrix::from_fn(4, 5, |i, j| ((i * 7 + j * 3) % 5) as f64).unwrap();
        let a = [0.1, 0.2, 0.3, 0.4];
        let b = [0.2; 5];
        let sol = solve_ot(&c, &a, &b).unwrap();
        assert!(sol.plan.support().len() <= 4 + 5 - 1);
        assert!(verify_optimality(&sol.plan, &sol.duals, &c));
    }
}
