//! External clustering metrics: NMI, ARI, ACC and pairwise F1.
//!
//! Partitions are slices of cluster indices, one per sample; labels need not
//! be contiguous. All metrics are computed from the contingency table.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OrientationMetrics {
    pub nmi: f64,
    pub ari: f64,
    pub acc: f64,
    pub f: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub orientations: BTreeMap<String, OrientationMetrics>,
    /// Which F-measure `f` holds.
    pub f_variant: String,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self {
            orientations: BTreeMap::new(),
            f_variant: "pairwise-f1".into(),
        }
    }

    pub fn get(&self, orientation: &str) -> Option<&OrientationMetrics> {
        self.orientations.get(orientation)
    }

    pub fn insert(&mut self, orientation: impl Into<String>, pred: &[usize], truth: &[usize]) -> Result<()> {
        self.orientations.insert(orientation.into(), evaluate(pred, truth)?);
        Ok(())
    }
}

pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<OrientationMetrics> {
    let table = Contingency::new(pred, truth)?;
    Ok(OrientationMetrics {
        nmi: table.nmi(),
        ari: table.ari(),
        acc: table.acc(),
        f: table.pairwise_f(),
    })
}

/// Counts `n_uv` of samples in predicted cluster `u` and true class `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Contingency {
    pub counts: Vec<Vec<usize>>,
    pub n: usize,
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<usize, usize> = HashMap::new();
    let mut sorted: Vec<usize> = labels.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for (k, l) in sorted.iter().enumerate() {
        ids.insert(*l, k);
    }
    (labels.iter().map(|l| ids[l]).collect(), sorted.len())
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

fn entropy(sizes: &[usize], n: f64) -> f64 {
    sizes
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

impl Contingency {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                context: "metrics",
                expected: format!("{} assignments", truth.len()),
                got: format!("{}", pred.len()),
            });
        }
        if pred.is_empty() {
            return Err(Error::Empty("metrics"));
        }
        let (p, kp) = compact(pred);
        let (t, kt) = compact(truth);
        let mut counts = vec![vec![0; kt]; kp];
        for (&a, &b) in p.iter().zip(&t) {
            counts[a][b] += 1;
        }
        Ok(Self { counts, n: pred.len() })
    }

    fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<usize> {
        let cols = self.counts.first().map_or(0, Vec::len);
        (0..cols).map(|c| self.counts.iter().map(|r| r[c]).sum()).collect()
    }

    /// Mutual information normalized by the arithmetic mean of the two
    /// entropies; 1 when both partitions have a single cluster.
    pub fn nmi(&self) -> f64 {
        let n = self.n as f64;
        let (a, b) = (self.row_sums(), self.col_sums());
        let (ha, hb) = (entropy(&a, n), entropy(&b, n));
        if ha == 0.0 && hb == 0.0 {
            return 1.0;
        }
        let mut mi = 0.0;
        for (u, row) in self.counts.iter().enumerate() {
            for (v, &c) in row.iter().enumerate() {
                if c > 0 {
                    let c = c as f64;
                    mi += c / n * (c * n / (a[u] as f64 * b[v] as f64)).ln();
                }
            }
        }
        (mi / (0.5 * (ha + hb))).clamp(0.0, 1.0)
    }

    pub fn ari(&self) -> f64 {
        let index: f64 = self.counts.iter().flatten().map(|&c| comb2(c)).sum();
        let sa: f64 = self.row_sums().into_iter().map(comb2).sum();
        let sb: f64 = self.col_sums().into_iter().map(comb2).sum();
        let expected = sa * sb / comb2(self.n).max(f64::MIN_POSITIVE);
        let max = 0.5 * (sa + sb);
        if max == expected {
            return 1.0;
        }
        (index - expected) / (max - expected)
    }

    /// Best one-to-one matching of clusters to classes.
    pub fn acc(&self) -> f64 {
        let rows = self.counts.len();
        let cols = self.counts.first().map_or(0, Vec::len);
        let size = rows.max(cols);
        let max_count = self.n as f64;
        let cost: Vec<Vec<f64>> = (0..size)
            .map(|u| {
                (0..size)
                    .map(|v| {
                        let c = if u < rows && v < cols { self.counts[u][v] } else { 0 };
                        max_count - c as f64
                    })
                    .collect()
            })
            .collect();
        let assignment = hungarian(&cost);
        let matched: usize = assignment
            .iter()
            .enumerate()
            .filter(|&(u, &v)| u < rows && v < cols)
            .map(|(u, &v)| self.counts[u][v])
            .sum();
        matched as f64 / self.n as f64
    }

    /// F1 of co-clustering decisions; 1 when neither side has a positive pair.
    pub fn pairwise_f(&self) -> f64 {
        let tp: f64 = self.counts.iter().flatten().map(|&c| comb2(c)).sum();
        let pred_pairs: f64 = self.row_sums().into_iter().map(comb2).sum();
        let true_pairs: f64 = self.col_sums().into_iter().map(comb2).sum();
        if pred_pairs == 0.0 && true_pairs == 0.0 {
            return 1.0;
        }
        if tp == 0.0 {
            return 0.0;
        }
        let precision = tp / pred_pairs;
        let recall = tp / true_pairs;
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    Ok(Contingency::new(pred, truth)?.nmi())
}

pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    Ok(Contingency::new(pred, truth)?.ari())
}

pub fn acc(pred: &[usize], truth: &[usize]) -> Result<f64> {
    Ok(Contingency::new(pred, truth)?.acc())
}

pub fn pairwise_f(pred: &[usize], truth: &[usize]) -> Result<f64> {
    Ok(Contingency::new(pred, truth)?.pairwise_f())
}

/// Minimum-cost perfect matching on a square cost matrix. Returns the column
/// assigned to each row. Shortest augmenting paths with potentials, O(n^3).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; index 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    assignment
}
