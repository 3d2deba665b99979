//! NMI and ACC against ground-truth labels.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Co-occurrence counts, rows = predicted clusters, columns = true classes.
/// Ids are compacted in ascending order of their original values.
#[derive(Clone, Debug, PartialEq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<usize>>,
    pub row_sums: Vec<usize>,
    pub col_sums: Vec<usize>,
    pub total: usize,
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    // Re-number in ascending label order so the table does not depend on
    // first-appearance order.
    for (rank, v) in ids.values_mut().enumerate() {
        *v = rank;
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

impl ContingencyTable {
    pub fn new(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::dim(
                "predicted labels vs truth",
                truth.len(),
                predicted.len(),
            ));
        }
        if truth.is_empty() {
            return Err(Error::Input("cannot evaluate an empty labeling".into()));
        }
        let (t, classes) = compact(truth);
        let (p, clusters) = compact(predicted);
        let mut counts = vec![vec![0usize; classes]; clusters];
        for (&ti, &pi) in t.iter().zip(&p) {
            counts[pi][ti] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..classes)
            .map(|c| counts.iter().map(|r| r[c]).sum())
            .collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            total: truth.len(),
        })
    }

    pub fn clusters(&self) -> usize {
        self.counts.len()
    }

    pub fn classes(&self) -> usize {
        self.col_sums.len()
    }
}

fn entropy(marginals: &[usize], n: f64) -> f64 {
    marginals
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(c; c') / max(H(c), H(c'))` with natural logs; 1 when both sides are a
/// single cluster.
pub fn nmi(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(truth, predicted)?;
    let n = table.total as f64;
    let h_pred = entropy(&table.row_sums, n);
    let h_true = entropy(&table.col_sums, n);
    let denom = h_pred.max(h_true);
    if denom == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (r, row) in table.counts.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let joint = count as f64 / n;
            let indep = table.row_sums[r] as f64 * table.col_sums[c] as f64 / (n * n);
            mi += joint * (joint / indep).ln();
        }
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Best one-to-one cluster-to-class matching, as a fraction of points.
pub fn acc(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(truth, predicted)?;
    let size = table.clusters().max(table.classes());
    let mut weights = vec![vec![0.0; size]; size];
    for (r, row) in table.counts.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            weights[r][c] = count as f64;
        }
    }
    let assignment = max_weight_assignment(&weights);
    let matched: f64 = assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| weights[r][c])
        .sum();
    Ok(matched / table.total as f64)
}

/// Hungarian algorithm on a square matrix; returns the column assigned to
/// each row so that the total weight is maximal.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let top = weights
        .iter()
        .flat_map(|r| r.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    // Minimize cost = top - weight with 1-based potentials.
    let cost = |i: usize, j: usize| top - weights[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    row_to_col
}
