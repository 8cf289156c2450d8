//! Constrained contrastive objective.
//!
//! For a similarity matrix `S` over the rows of `R` the pair loss is
//!
//! ```text
//! l(i, j) = -S_ij / tau + log mu_i + log D_i
//! D_i     = sum_{k != i} (1 + I-_ik) exp(S_ik / tau)
//! mu_i    = N / (N + sum_j I-_ij)
//! ```
//!
//! Sample losses are the `W`-weighted, row-normalized averages of pair
//! losses in feature space and assignment space; the cluster term contrasts
//! the columns of `P` between the two views.

use serde::{Deserialize, Serialize};

use crate::constraints::IndicatorViews;
use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, Graph, Matrix, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Temperature of the feature and assignment terms.
    pub tau: f64,
    /// Temperature of the cluster term.
    pub cluster_tau: f64,
    /// Must-link weight factor; must-link pairs weigh `lambda * N`.
    pub lambda: f64,
    pub entropy_weight: f64,
    /// Keep `k = i` in the pair-loss denominator.
    #[serde(default)]
    pub include_self_in_denominator: bool,
    /// Add `+H(Y)` as printed instead of the collapse-penalizing `-H(Y)`.
    #[serde(default)]
    pub literal_entropy_sign: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            cluster_tau: 1.0,
            lambda: 4.0,
            entropy_weight: 1.0,
            include_self_in_denominator: false,
            literal_entropy_sign: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) || !(self.cluster_tau > 0.0 && self.cluster_tau.is_finite()) {
            return Err(Error::InvalidConfig("temperatures must be positive".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !self.entropy_weight.is_finite() {
            return Err(Error::InvalidConfig("entropy_weight must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub instance_term: f64,
    pub cluster_term: f64,
    pub entropy_term: f64,
    pub total: f64,
}

/// Pair loss between rows `i` and `j` of `r` with cannot-link indicators
/// over the same rows. `mu_i` is supplied by the caller.
pub fn pair_contrastive_loss(
    i: usize,
    j: usize,
    r: &Matrix,
    i_minus: &Matrix,
    mu_i: f64,
    tau: f64,
    include_self: bool,
) -> Result<f64> {
    if i == j {
        return Err(Error::SelfPair(i));
    }
    let n = r.rows();
    if i_minus.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "pair_contrastive_loss",
            expected: format!("{n}x{n} indicators"),
            got: format!("{}x{}", i_minus.rows(), i_minus.cols()),
        });
    }
    let sim = |a: usize, b: usize| {
        cosine_similarity(r.row(a), r.row(b)).map_err(|_| Error::DegenerateVector {
            row: if crate::numerics::norm(r.row(a)) == 0.0 { a } else { b },
        })
    };
    let mut denom = 0.0;
    for k in 0..n {
        if k == i && !include_self {
            continue;
        }
        denom += (1.0 + i_minus[(i, k)]) * (sim(i, k)? / tau).exp();
    }
    Ok(-sim(i, j)? / tau + mu_i.ln() + denom.ln())
}

/// `mu_i = N / (N + sum_j I-_ij)` for every view row.
pub fn mu_vector(views: &IndicatorViews) -> Vec<f64> {
    let n = views.batch as f64;
    (0..views.rows())
        .map(|i| n / (n + views.minus.row_count(i) as f64))
        .collect()
}

/// Weight matrix over the `2N` view rows: augmentation pairs weigh `N+`
/// (1 while `N+` is zero), must-link pairs weigh `lambda * N`.
pub fn build_weight_matrix(views: &IndicatorViews, lambda: f64, batch: usize, n_plus: usize) -> Matrix {
    let aug_weight = if n_plus == 0 { 1.0 } else { n_plus as f64 };
    let must_weight = lambda * batch as f64;
    let rows = views.rows();
    Matrix::from_fn(rows, rows, |i, j| {
        if views.aug.get(i, j) {
            aug_weight
        } else if views.plus.get(i, j) {
            must_weight
        } else {
            0.0
        }
    })
}

/// Dense inputs of the contrastive sum for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveInputs {
    /// Weights after dividing each row by its sum.
    pub weights: Matrix,
    /// Sum of each normalized row (1, or 0 for an unweighted row).
    pub row_weight: Vec<f64>,
    /// Denominator multipliers `1 + I-_ik`, zero on the diagonal unless the
    /// self term is kept.
    pub negatives: Matrix,
    pub log_mu: Vec<f64>,
    pub tau: f64,
}

impl ContrastiveInputs {
    /// Row-normalized weights with the given `mu` and cannot-link matrix.
    pub fn new(w: &Matrix, i_minus: &Matrix, mu: &[f64], tau: f64, include_self: bool) -> Result<Self> {
        let n = w.rows();
        w.same_shape(i_minus, "ContrastiveInputs")?;
        if mu.len() != n {
            return Err(Error::DimensionMismatch {
                context: "ContrastiveInputs",
                expected: format!("{n} mu values"),
                got: format!("{}", mu.len()),
            });
        }
        let mut weights = w.clone();
        for i in 0..n {
            let s: f64 = w.row(i).iter().sum();
            if s <= 0.0 {
                return Err(Error::UnweightedSample(i));
            }
            weights.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
        Ok(Self {
            weights,
            row_weight: vec![1.0; n],
            negatives: negatives_matrix(i_minus, include_self),
            log_mu: mu.iter().map(|m| m.ln()).collect(),
            tau,
        })
    }

    /// Inputs for the standard instance term of a batch.
    pub fn for_batch(views: &IndicatorViews, w: &Matrix, tau: f64, include_self: bool) -> Result<Self> {
        Self::new(w, &views.minus.to_matrix(), &mu_vector(views), tau, include_self)
    }

    /// Plain contrastive inputs for the cluster term over `2K` rows: each row
    /// is paired with the row `K` away, weight 1, `mu = 1`, no indicators.
    pub fn for_clusters(k: usize, tau: f64, include_self: bool) -> Self {
        let rows = 2 * k;
        let weights = Matrix::from_fn(rows, rows, |i, j| f64::from(u8::from(j == (i + k) % rows)));
        Self {
            weights,
            row_weight: vec![1.0; rows],
            negatives: negatives_matrix(&Matrix::zeros(rows, rows), include_self),
            log_mu: vec![0.0; rows],
            tau,
        }
    }

    pub fn rows(&self) -> usize {
        self.weights.rows()
    }
}

fn negatives_matrix(i_minus: &Matrix, include_self: bool) -> Matrix {
    let n = i_minus.rows();
    Matrix::from_fn(n, n, |i, k| {
        if i == k && !include_self {
            0.0
        } else {
            1.0 + i_minus[(i, k)]
        }
    })
}

/// `sum_i sum_j wn_ij l(r_i, r_j)` on the graph.
pub fn contrastive_sum(g: &mut Graph, r: Var, inputs: &ContrastiveInputs) -> Result<Var> {
    let rows = g.value(r).rows();
    if rows != inputs.rows() {
        return Err(Error::DimensionMismatch {
            context: "contrastive_sum",
            expected: format!("{} rows", inputs.rows()),
            got: format!("{rows} rows"),
        });
    }
    let s = g.cosine_matrix(r, r)?;
    let scaled = g.scale(s, 1.0 / inputs.tau)?;
    let e = g.exp(scaled)?;
    let masked = g.mul_const(e, inputs.negatives.clone())?;
    let denom = g.row_sum(masked)?;
    let log_denom = g.log(denom)?;
    let weighted_log = g.mul_const(log_denom, Matrix::from_vec(rows, 1, inputs.row_weight.clone())?)?;
    let log_part = g.sum(weighted_log)?;

    let positives = g.mul_const(s, inputs.weights.clone())?;
    let positive_sum = g.sum(positives)?;
    let positive_part = g.scale(positive_sum, -1.0 / inputs.tau)?;

    let mu_part: f64 = inputs.row_weight.iter().zip(&inputs.log_mu).map(|(w, m)| w * m).sum();
    let out = g.add(positive_part, log_part)?;
    g.add_scalar(out, mu_part)
}

/// Graph nodes of the loss parts.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub instance: Var,
    pub cluster: Var,
    pub entropy: Var,
    pub total: Var,
}

/// Builds the full objective on the graph from `Z` (`2N x M`) and
/// `P` (`2N x K`).
pub fn total_loss_graph(
    g: &mut Graph,
    z: Var,
    p: Var,
    inputs: &ContrastiveInputs,
    config: &LossConfig,
) -> Result<LossVars> {
    let rows = g.value(p).rows();
    let k = g.value(p).cols();
    if !rows.is_multiple_of(2) || g.value(z).rows() != rows {
        return Err(Error::DimensionMismatch {
            context: "total_loss",
            expected: "matching even row counts for Z and P".into(),
            got: format!("{} and {}", g.value(z).rows(), rows),
        });
    }
    let half = rows / 2;

    let zc = contrastive_sum(g, z, inputs)?;
    let pc = contrastive_sum(g, p, inputs)?;
    let both = g.add(zc, pc)?;
    let instance = g.scale(both, 1.0 / rows as f64)?;

    let pa = g.slice_rows(p, 0, half)?;
    let pb = g.slice_rows(p, half, rows)?;
    for view in [pa, pb] {
        let v = g.value(view);
        if let Some(c) = (0..k).find(|&c| (0..v.rows()).all(|r| v[(r, c)] == 0.0)) {
            return Err(Error::DegenerateCluster { cluster: c });
        }
    }
    let ca = g.transpose(pa)?;
    let cb = g.transpose(pb)?;
    let c = g.concat_rows(ca, cb)?;
    let cluster_inputs = ContrastiveInputs::for_clusters(k, config.cluster_tau, config.include_self_in_denominator);
    let cc = contrastive_sum(g, c, &cluster_inputs)?;
    let cluster = g.scale(cc, 1.0 / (2 * k) as f64)?;

    // sum_k p_k log p_k = -H
    let freq = g.col_mean(p)?;
    let log_freq = g.log(freq)?;
    let plogp = g.mul(freq, log_freq)?;
    let neg_entropy = g.sum(plogp)?;
    let entropy = if config.literal_entropy_sign {
        g.scale(neg_entropy, -1.0)?
    } else {
        neg_entropy
    };

    let weighted_entropy = g.scale(entropy, config.entropy_weight)?;
    let partial = g.add(instance, cluster)?;
    let total = g.add(partial, weighted_entropy)?;
    Ok(LossVars {
        instance,
        cluster,
        entropy,
        total,
    })
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            instance_term: g.scalar(self.instance),
            cluster_term: g.scalar(self.cluster),
            entropy_term: g.scalar(self.entropy),
            total: g.scalar(self.total),
        }
    }
}

/// Evaluates the objective on fixed `Z` and `P`.
pub fn total_loss(
    z: &Matrix,
    p: &Matrix,
    w: &Matrix,
    views: &IndicatorViews,
    config: &LossConfig,
) -> Result<LossBreakdown> {
    config.validate()?;
    let inputs = ContrastiveInputs::for_batch(views, w, config.tau, config.include_self_in_denominator)?;
    let mut g = Graph::new();
    let zv = g.leaf(z.clone());
    let pv = g.leaf(p.clone());
    Ok(total_loss_graph(&mut g, zv, pv, &inputs, config)?.breakdown(&g))
}

/// Loss of one view row: the normalized `W`-weighted pair losses in
/// feature and assignment space.
pub fn sample_loss(
    i: usize,
    w: &Matrix,
    z: &Matrix,
    p: &Matrix,
    views: &IndicatorViews,
    config: &LossConfig,
) -> Result<f64> {
    let row_sum: f64 = w.row(i).iter().sum();
    if row_sum <= 0.0 {
        return Err(Error::UnweightedSample(i));
    }
    let minus = views.minus.to_matrix();
    let mu = mu_vector(views);
    let mut acc = 0.0;
    for j in 0..w.cols() {
        let wij = w[(i, j)];
        if wij == 0.0 {
            continue;
        }
        let lz = pair_contrastive_loss(i, j, z, &minus, mu[i], config.tau, config.include_self_in_denominator)?;
        let lp = pair_contrastive_loss(i, j, p, &minus, mu[i], config.tau, config.include_self_in_denominator)?;
        acc += wij * (lz + lp);
    }
    Ok(acc / row_sum)
}

/// Cluster term: columns of the two view blocks of `P` contrasted against
/// each other, averaged over the `2K` cluster rows.
pub fn cluster_loss(p: &Matrix, tau: f64) -> Result<f64> {
    let rows = p.rows();
    let k = p.cols();
    if !rows.is_multiple_of(2) || k < 2 {
        return Err(Error::InvalidConfig(format!(
            "cluster loss needs an even row count and K >= 2, got {rows}x{k}"
        )));
    }
    let half = rows / 2;
    let c = p
        .slice_rows(0, half)
        .transpose()
        .vstack(&p.slice_rows(half, rows).transpose())?;
    for r in 0..2 * k {
        if c.row(r).iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateCluster { cluster: r % k });
        }
    }
    let zeros = Matrix::zeros(2 * k, 2 * k);
    let mut acc = 0.0;
    for i in 0..k {
        acc += pair_contrastive_loss(i, i + k, &c, &zeros, 1.0, tau, false)?;
        acc += pair_contrastive_loss(i + k, i, &c, &zeros, 1.0, tau, false)?;
    }
    Ok(acc / (2 * k) as f64)
}

/// Feature-space unsupervised loss over one batch together with the number
/// of constrained sample pairs it reflects.
pub fn unsupervised_loss_q(
    z: &Matrix,
    w: &Matrix,
    views: &IndicatorViews,
    config: &LossConfig,
) -> Result<(f64, usize)> {
    let inputs = ContrastiveInputs::for_batch(views, w, config.tau, config.include_self_in_denominator)?;
    Ok((unsupervised_loss_with(z, &inputs)?, views.constrained_sample_pairs()))
}

/// `(1 / 2N) sum_ij wn_ij l(z_i, z_j)` for prepared inputs.
pub fn unsupervised_loss_with(z: &Matrix, inputs: &ContrastiveInputs) -> Result<f64> {
    let mut g = Graph::new();
    let zv = g.leaf(z.clone());
    let sum = contrastive_sum(&mut g, zv, inputs)?;
    Ok(g.scalar(sum) / z.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{ConstraintSource, ConstraintStore, Link};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn softmax_rows(m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for i in 0..m.rows() {
            let row = out.row_mut(i);
            let mx = row.iter().cloned().fold(f64::MIN, f64::max);
            let s: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            row.iter_mut().for_each(|v| *v = (*v - mx).exp() / s);
        }
        out
    }

    #[test]
    fn identity_pair_is_zero() {
        let r = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let l = pair_contrastive_loss(0, 1, &r, &Matrix::zeros(2, 2), 1.0, 1.0, false).unwrap();
        close(l, 0.0, 1e-15);
    }

    #[test]
    fn orthonormal_rows_and_cannot_link() {
        let r = Matrix::identity(4);
        let mut minus = Matrix::zeros(4, 4);
        let base = pair_contrastive_loss(0, 1, &r, &minus, 1.0, 1.0, false).unwrap();
        close(base, 3f64.ln(), 1e-14);
        minus[(0, 2)] = 1.0;
        minus[(2, 0)] = 1.0;
        let with_cannot = pair_contrastive_loss(0, 1, &r, &minus, 1.0, 1.0, false).unwrap();
        close(with_cannot, 4f64.ln(), 1e-14);
        assert!(with_cannot > base);
    }

    #[test]
    fn self_inclusion_variant_adds_self_term() {
        let r = Matrix::identity(4);
        let l = pair_contrastive_loss(0, 1, &r, &Matrix::zeros(4, 4), 1.0, 1.0, true).unwrap();
        close(l, (3.0 + 1f64.exp()).ln(), 1e-14);
    }

    #[test]
    fn weight_matrix_cases() {
        let mut store = ConstraintStore::new(256);
        store
            .record_answer(0, 1, Link::MustLink, 0, ConstraintSource::Queried)
            .unwrap();
        let ids: Vec<usize> = (0..128).collect();
        let views = store.indicator_views(&ids).unwrap();
        let w = build_weight_matrix(&views, 4.0, 128, views.n_plus);
        close(w[(0, 1)], 512.0, 0.0);
        close(w[(0, 128)], 4.0, 0.0);
        assert_eq!(w, w.transpose());

        let empty = IndicatorViews::unconstrained(3);
        let w = build_weight_matrix(&empty, 4.0, 3, 0);
        assert_eq!(w.sum(), 6.0);
        close(w[(0, 3)], 1.0, 0.0);
        let w = build_weight_matrix(&empty, 4.0, 3, 6);
        close(w[(1, 4)], 6.0, 0.0);
    }

    #[test]
    fn sample_loss_single_partner_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random_matrix(&mut rng, 6, 4);
        let p = softmax_rows(&random_matrix(&mut rng, 6, 3));
        let cfg = LossConfig::default();
        let views = IndicatorViews::unconstrained(3);
        let w = build_weight_matrix(&views, cfg.lambda, 3, 0);
        let zero = Matrix::zeros(6, 6);
        let expected = pair_contrastive_loss(0, 3, &z, &zero, 1.0, cfg.tau, false).unwrap()
            + pair_contrastive_loss(0, 3, &p, &zero, 1.0, cfg.tau, false).unwrap();
        close(sample_loss(0, &w, &z, &p, &views, &cfg).unwrap(), expected, 1e-12);

        let mut w2 = w.clone();
        w2[(0, 1)] = 1.0;
        let other = pair_contrastive_loss(0, 1, &z, &zero, 1.0, cfg.tau, false).unwrap()
            + pair_contrastive_loss(0, 1, &p, &zero, 1.0, cfg.tau, false).unwrap();
        close(
            sample_loss(0, &w2, &z, &p, &views, &cfg).unwrap(),
            0.5 * (expected + other),
            1e-12,
        );

        let mut w3 = w.clone();
        w3.row_mut(0).iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(
            sample_loss(0, &w3, &z, &p, &views, &cfg),
            Err(Error::UnweightedSample(0))
        );
    }

    #[test]
    fn cluster_loss_examples() {
        let p = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let e = 1f64.exp();
        close(cluster_loss(&p, 1.0).unwrap(), -(e / (e + 2.0)).ln(), 1e-14);

        let uniform = Matrix::filled(4, 2, 0.5);
        close(cluster_loss(&uniform, 1.0).unwrap(), 3f64.ln(), 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = softmax_rows(&random_matrix(&mut rng, 8, 3));
        let swapped = p.slice_rows(4, 8).vstack(&p.slice_rows(0, 4)).unwrap();
        close(
            cluster_loss(&p, 1.0).unwrap(),
            cluster_loss(&swapped, 1.0).unwrap(),
            1e-12,
        );

        let dead = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(cluster_loss(&dead, 1.0), Err(Error::DegenerateCluster { .. })));
    }

    #[test]
    fn entropy_sign_extremes() {
        let views = IndicatorViews::unconstrained(2);
        let w = build_weight_matrix(&views, 4.0, 2, 0);
        let z = Matrix::from_rows(&[[1.0, 0.2], [0.1, 1.0], [0.9, 0.3], [0.2, 0.8]]).unwrap();
        let uniform = Matrix::filled(4, 2, 0.5);
        let cfg = LossConfig::default();
        let b = total_loss(&z, &uniform, &w, &views, &cfg).unwrap();
        close(b.entropy_term, -(2f64.ln()), 1e-12);

        let collapsed = Matrix::from_rows(&[[1.0 - 1e-9, 1e-9]; 4]).unwrap();
        let c = total_loss(&z, &collapsed, &w, &views, &cfg).unwrap();
        assert!(c.entropy_term > b.entropy_term);
        close(c.entropy_term, 0.0, 1e-6);

        let literal = LossConfig {
            literal_entropy_sign: true,
            ..cfg.clone()
        };
        close(
            total_loss(&z, &uniform, &w, &views, &literal).unwrap().entropy_term,
            2f64.ln(),
            1e-12,
        );
    }

    #[test]
    fn total_is_sum_of_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ConstraintStore::new(4);
        store
            .record_answer(0, 2, Link::MustLink, 0, ConstraintSource::Queried)
            .unwrap();
        store
            .record_answer(1, 3, Link::CannotLink, 0, ConstraintSource::Queried)
            .unwrap();
        let views = store.indicator_views(&[0, 1, 2, 3]).unwrap();
        let cfg = LossConfig {
            entropy_weight: 0.7,
            ..LossConfig::default()
        };
        let w = build_weight_matrix(&views, cfg.lambda, 4, views.n_plus);
        let z = random_matrix(&mut rng, 8, 5);
        let p = softmax_rows(&random_matrix(&mut rng, 8, 3));
        let b = total_loss(&z, &p, &w, &views, &cfg).unwrap();

        let instance: f64 = (0..8)
            .map(|i| sample_loss(i, &w, &z, &p, &views, &cfg).unwrap())
            .sum::<f64>()
            / 8.0;
        let cluster = cluster_loss(&p, cfg.cluster_tau).unwrap();
        let freq: Vec<f64> = (0..3).map(|c| (0..8).map(|r| p[(r, c)]).sum::<f64>() / 8.0).collect();
        let entropy: f64 = freq.iter().map(|f| f * f.ln()).sum();
        close(b.instance_term, instance, 1e-10);
        close(b.cluster_term, cluster, 1e-10);
        close(b.entropy_term, entropy, 1e-12);
        close(b.total, instance + cluster + 0.7 * entropy, 1e-10);
    }

    #[test]
    fn unsupervised_loss_reduces_to_feature_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let views = IndicatorViews::unconstrained(3);
        let cfg = LossConfig::default();
        let w = build_weight_matrix(&views, cfg.lambda, 3, 0);
        let z = random_matrix(&mut rng, 6, 4);
        let zero = Matrix::zeros(6, 6);
        let expected: f64 = (0..6)
            .map(|i| pair_contrastive_loss(i, (i + 3) % 6, &z, &zero, 1.0, cfg.tau, false).unwrap())
            .sum::<f64>()
            / 6.0;
        let (v, q) = unsupervised_loss_q(&z, &w, &views, &cfg).unwrap();
        close(v, expected, 1e-12);
        assert_eq!(q, 0);

        let mut store = ConstraintStore::new(6);
        store
            .record_answer(0, 1, Link::MustLink, 0, ConstraintSource::Queried)
            .unwrap();
        store
            .record_answer(2, 3, Link::CannotLink, 0, ConstraintSource::Queried)
            .unwrap();
        store
            .record_answer(4, 5, Link::MustLink, 0, ConstraintSource::Queried)
            .unwrap();
        let views = store.indicator_views(&[0, 1, 2, 3, 4, 5]).unwrap();
        let w = build_weight_matrix(&views, cfg.lambda, 6, views.n_plus);
        let z = random_matrix(&mut rng, 12, 4);
        assert_eq!(unsupervised_loss_q(&z, &w, &views, &cfg).unwrap().1, 3);
    }

    #[test]
    fn zero_feature_rows_are_degenerate() {
        let views = IndicatorViews::unconstrained(2);
        let w = build_weight_matrix(&views, 4.0, 2, 0);
        let z = Matrix::zeros(4, 3);
        let p = Matrix::filled(4, 2, 0.5);
        assert!(matches!(
            total_loss(&z, &p, &w, &views, &LossConfig::default()),
            Err(Error::DegenerateVector { .. })
        ));
    }
}
