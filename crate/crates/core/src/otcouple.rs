//! Exact mini-batch optimal transport between two equal-size batches of
//! fields: squared-distance cost matrix, optimal permutation, empirical W2.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensorgrid::{dist_sq, Field};

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    b: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    /// Row-major `b x b` entries.
    pub fn from_entries(b: usize, entries: Vec<f64>) -> Result<Self> {
        if b == 0 || entries.len() != b * b {
            return Err(Error::InvalidArgument(format!(
                "cost matrix needs {}x{} entries, got {}",
                b,
                b,
                entries.len()
            )));
        }
        Ok(Self { b, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let b = rows.len();
        if rows.iter().any(|r| r.len() != b) {
            return Err(Error::InvalidArgument("cost matrix must be square".into()));
        }
        Self::from_entries(b, rows.concat())
    }

    pub fn size(&self) -> usize {
        self.b
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.b + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn transpose(&self) -> CostMatrix {
        let b = self.b;
        let mut t = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                t[j * b + i] = self.entries[i * b + j];
            }
        }
        CostMatrix { b, entries: t }
    }

    /// `sum_i M(i, sigma(i))`, accumulated in row order.
    pub fn permutation_cost(&self, sigma: &[usize]) -> f64 {
        sigma.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }

    pub fn identity_cost(&self) -> f64 {
        (0..self.b).map(|i| self.get(i, i)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    /// `sigma[i]` is the target paired with source `i`.
    pub sigma: Vec<usize>,
    pub total_cost: f64,
}

/// Squared Hilbert-norm distances between every source and target field.
pub fn cost_matrix(batch0: &[Field], batch1: &[Field]) -> Result<CostMatrix> {
    if batch0.is_empty() || batch0.len() != batch1.len() {
        return Err(Error::InvalidArgument(format!(
            "batches must be non-empty and equal in size ({} vs {})",
            batch0.len(),
            batch1.len()
        )));
    }
    let grid = *batch0[0].grid();
    for f in batch0.iter().chain(batch1) {
        grid.ensure_same(f.grid())?;
    }
    let b = batch0.len();
    let rows: Vec<Vec<f64>> = batch0
        .par_iter()
        .map(|f0| {
            batch1
                .iter()
                .map(|f1| dist_sq(f0, f1).expect("grids checked above"))
                .collect()
        })
        .collect();
    CostMatrix::from_entries(b, rows.concat())
}

/// Exact linear assignment (shortest augmenting paths with potentials,
/// O(b^3)), followed by a pass that picks the lexicographically smallest
/// permutation among all optimal ones.
pub fn solve_assignment(m: &CostMatrix) -> Result<Coupling> {
    if let Some(index) = m.entries.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let n = m.b;
    let (sigma, u, v) = hungarian(m);
    let jv_cost = m.permutation_cost(&sigma);

    let scale = m
        .entries
        .iter()
        .fold(0.0f64, |a, x| a.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    let tol = 1e-10 * scale;
    let tight = |i: usize, j: usize| m.get(i, j) - u[i] - v[j] <= tol;
    let lex = lexicographic_min(n, &sigma, tight);
    let lex_cost = m.permutation_cost(&lex);

    // A tolerance-tight edge that is not truly optimal could only sneak in
    // through float noise; never trade optimality for ordering.
    if lex_cost <= jv_cost + 1e-12 * scale * n as f64 {
        Ok(Coupling {
            sigma: lex,
            total_cost: lex_cost,
        })
    } else {
        Ok(Coupling {
            sigma,
            total_cost: jv_cost,
        })
    }
}

/// Returns the assignment and the row/column potentials of an optimal dual.
fn hungarian(m: &CostMatrix) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = m.b;
    let inf = f64::INFINITY;
    // 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = m.get(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut sigma = vec![0usize; n];
    for j in 1..=n {
        sigma[row_of[j] - 1] = j - 1;
    }
    (sigma, u[1..].to_vec(), v[1..].to_vec())
}

/// Every optimal permutation is a perfect matching on the tight edges of an
/// optimal dual. Walk rows in order and give each the smallest column that
/// still admits a perfect matching, repairing the current matching along an
/// alternating path of tight edges.
fn lexicographic_min(n: usize, start: &[usize], tight: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let mut col_of = start.to_vec();
    let mut row_of = vec![0usize; n];
    for (i, &j) in col_of.iter().enumerate() {
        row_of[j] = i;
    }
    let mut col_fixed = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if col_fixed[j] || !tight(i, j) {
                continue;
            }
            if col_of[i] == j {
                break;
            }
            // Free col_of[i] for the row currently holding j to move into,
            // via rows that are not yet fixed.
            let target = col_of[i];
            let r0 = row_of[j];
            let mut parent_col: Vec<Option<usize>> = vec![None; n];
            let mut seen_col = vec![false; n];
            seen_col[j] = true;
            let mut queue = std::collections::VecDeque::from([r0]);
            let mut reached = None;
            let mut via_row = vec![usize::MAX; n];
            'search: while let Some(r) = queue.pop_front() {
                for c in 0..n {
                    if seen_col[c] || col_fixed[c] || !tight(r, c) {
                        continue;
                    }
                    seen_col[c] = true;
                    via_row[c] = r;
                    if c == target {
                        reached = Some(c);
                        break 'search;
                    }
                    let next = row_of[c];
                    parent_col[next] = Some(c);
                    queue.push_back(next);
                }
            }
            if let Some(mut c) = reached {
                // shift each row on the path into the column it reached
                loop {
                    let r = via_row[c];
                    let prev = col_of[r];
                    col_of[r] = c;
                    row_of[c] = r;
                    if r == r0 {
                        break;
                    }
                    c = prev;
                }
                col_of[i] = j;
                row_of[j] = i;
                break;
            }
        }
        col_fixed[col_of[i]] = true;
    }
    col_of
}

/// W2 distance between the two equal-weight empirical measures.
pub fn empirical_w2(batch0: &[Field], batch1: &[Field]) -> Result<f64> {
    let m = cost_matrix(batch0, batch1)?;
    let c = solve_assignment(&m)?;
    Ok((c.total_cost / m.size() as f64).max(0.0).sqrt())
}
