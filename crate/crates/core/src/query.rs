//! Pair scoring and query selection.
//!
//! Scores live on `N x N` matrices over the batch samples. Only unordered
//! pairs `a < b` of non-degenerate rows are candidates; every other entry is 0.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintStore, IndicatorViews};
use crate::error::{Error, Result};
use crate::numerics::{minmax_normalize, norm, Matrix};

/// Clamp applied to both probability estimates before the log ratio.
pub const PROB_CLAMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    /// Uncertainty score only.
    Up,
    /// Hard-negative score only; falls back to uncertainty before any answer exists.
    Hp,
    #[default]
    Joint,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "up" => Ok(Strategy::Up),
            "hp" => Ok(Strategy::Hp),
            "joint" => Ok(Strategy::Joint),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Up => "up",
            Strategy::Hp => "hp",
            Strategy::Joint => "joint",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    pub epsilon: f64,
    /// Total budget `Q`.
    pub total_budget: usize,
    /// Random queries `Q1` issued before pre-training.
    pub initial_random: usize,
    pub strategy: Strategy,
}

/// No budget. A deserialized config that omits `initial_random` asks no
/// random queries.
impl Default for QueryConfig {
    fn default() -> Self {
        Self::new(0, Strategy::Joint)
    }
}

impl QueryConfig {
    /// `Q1` defaults to a fifth of the budget.
    pub fn new(total_budget: usize, strategy: Strategy) -> Self {
        Self {
            epsilon: 0.2,
            total_budget,
            initial_random: total_budget / 5,
            strategy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_random > self.total_budget {
            return Err(Error::InvalidConfig(format!(
                "initial_random {} exceeds budget {}",
                self.initial_random, self.total_budget
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBudget {
    pub total: usize,
    pub spent: usize,
}

impl QueryBudget {
    pub fn new(total: usize) -> Self {
        Self { total, spent: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.total - self.spent
    }

    pub fn exhausted(&self) -> bool {
        self.spent >= self.total
    }

    /// Remaining fraction; 0 for an empty budget.
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            (self.total - self.spent) as f64 / self.total as f64
        }
    }

    pub fn spend(&mut self) -> Result<()> {
        if self.exhausted() {
            return Err(Error::InvalidConfig("query budget exhausted".into()));
        }
        self.spent += 1;
        Ok(())
    }
}

/// One issued query, as logged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryDecision {
    pub step: u64,
    pub i: usize,
    pub j: usize,
    #[serde(rename = "S")]
    pub score: Option<f64>,
    #[serde(rename = "S_up")]
    pub s_up: f64,
    #[serde(rename = "S_hp")]
    pub s_hp: Option<f64>,
    pub r: f64,
}

/// Two-view averaged cosine similarities of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSimilarity {
    /// `N x N`; diagonal 1, zero on rows flagged invalid.
    pub mean: Matrix,
    /// False for samples with a zero feature row in either view.
    pub valid: Vec<bool>,
}

impl BatchSimilarity {
    pub fn new(za: &Matrix, zb: &Matrix) -> Result<Self> {
        za.same_shape(zb, "BatchSimilarity")?;
        let n = za.rows();
        let valid: Vec<bool> = (0..n).map(|i| norm(za.row(i)) > 0.0 && norm(zb.row(i)) > 0.0).collect();
        let unit = |m: &Matrix| {
            let mut u = m.clone();
            for (i, &ok) in valid.iter().enumerate() {
                let nr = norm(m.row(i));
                u.row_mut(i)
                    .iter_mut()
                    .for_each(|v| *v = if ok { *v / nr } else { 0.0 });
            }
            u
        };
        let (ua, ub) = (unit(za), unit(zb));
        let sa = ua.matmul_nt(&ua)?;
        let sb = ub.matmul_nt(&ub)?;
        let mean = Matrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else if valid[i] && valid[j] {
                (0.5 * (sa[(i, j)] + sb[(i, j)])).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        });
        Ok(Self { mean, valid })
    }

    /// Similarities from a single view, for callers without augmentation.
    pub fn single(z: &Matrix) -> Result<Self> {
        Self::new(z, z)
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    /// Unordered candidate pairs `(a, b)`, `a < b`, of valid samples.
    pub fn candidates(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for a in 0..n {
            for b in (a + 1)..n {
                if self.valid[a] && self.valid[b] {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Ordered off-diagonal pairs of valid samples.
    fn ordered_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a != b && self.valid[a] && self.valid[b] {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

fn scatter_symmetric(n: usize, pairs: &[(usize, usize)], values: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for (&(a, b), &v) in pairs.iter().zip(values) {
        m[(a, b)] = v;
        m[(b, a)] = v;
    }
    m
}

/// Uncertainty score: min-max of `-|s - epsilon|` over candidate pairs.
pub fn uncertainty_scores(sim: &BatchSimilarity, epsilon: f64) -> Result<Matrix> {
    let pairs = sim.candidates();
    if pairs.is_empty() {
        return Err(Error::InsufficientCandidates { needed: 1, have: 0 });
    }
    let raw: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| -(sim.mean[(a, b)] - epsilon).abs())
        .collect();
    Ok(scatter_symmetric(sim.len(), &pairs, &minmax_normalize(&raw)?))
}

/// Hard-negative score: min-max of `P log(P / Q)` where `P` is the normalized
/// similarity and `Q` the normalized constraint-implied similarity
/// `sum_k (I+_bk - I-_bk) s_ak`, symmetrized over `(a, b)` and `(b, a)`.
pub fn hard_negative_scores(sim: &BatchSimilarity, views: &IndicatorViews, store: &ConstraintStore) -> Result<Matrix> {
    if store.is_empty() {
        return Err(Error::NoConstraints);
    }
    let n = sim.len();
    if views.batch != n {
        return Err(Error::DimensionMismatch {
            context: "hard_negative_scores",
            expected: format!("batch of {n}"),
            got: format!("batch of {}", views.batch),
        });
    }
    let ordered = sim.ordered_pairs();
    if ordered.is_empty() {
        return Err(Error::InsufficientCandidates { needed: 1, have: 0 });
    }
    // relation[b][k] = +1 must, -1 cannot, 0 unknown (sample level)
    let relation = Matrix::from_fn(n, n, |b, k| {
        if views.plus.get(b, k) {
            1.0
        } else if views.minus.get(b, k) {
            -1.0
        } else {
            0.0
        }
    });
    let implied = sim.mean.matmul_nt(&relation)?;

    let p_raw: Vec<f64> = ordered.iter().map(|&(a, b)| sim.mean[(a, b)]).collect();
    let q_raw: Vec<f64> = ordered.iter().map(|&(a, b)| implied[(a, b)]).collect();
    let p_hat = minmax_normalize(&p_raw)?;
    let q_hat = minmax_normalize(&q_raw)?;
    let divergence: Vec<f64> = p_hat
        .iter()
        .zip(&q_hat)
        .map(|(&p, &q)| {
            let (p, q) = (p.clamp(PROB_CLAMP, 1.0), q.clamp(PROB_CLAMP, 1.0));
            p * (p / q).ln()
        })
        .collect();
    let scaled = minmax_normalize(&divergence)?;

    let mut directed = Matrix::zeros(n, n);
    for (&(a, b), &v) in ordered.iter().zip(&scaled) {
        directed[(a, b)] = v;
    }
    let pairs = sim.candidates();
    let symmetric: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| 0.5 * (directed[(a, b)] + directed[(b, a)]))
        .collect();
    Ok(scatter_symmetric(n, &pairs, &symmetric))
}

/// `r * up + (1 - r) * hp`; a missing `hp` counts as zero.
pub fn joint_scores(up: &Matrix, hp: Option<&Matrix>, budget: &QueryBudget) -> Result<Matrix> {
    let r = budget.ratio();
    match hp {
        Some(hp) => up.zip_map(hp, |u, h| r * u + (1.0 - r) * h),
        None => Ok(up.scale(r)),
    }
}

type Pair = (usize, usize);

/// Highest-scoring batch pair whose samples are not yet related by the
/// store's closure. Ties go to the lexicographically smallest sample-id pair.
/// Returns batch positions `(a, b)`.
pub fn select_query_pair(
    scores: &Matrix,
    batch_ids: &[usize],
    sim: &BatchSimilarity,
    store: &ConstraintStore,
    budget: &QueryBudget,
) -> Option<(usize, usize)> {
    if budget.exhausted() {
        return None;
    }
    // (score, sample-id key, batch positions)
    let mut best: Option<(f64, Pair, Pair)> = None;
    for (a, b) in sim.candidates() {
        let (ia, ib) = (batch_ids[a], batch_ids[b]);
        if ia == ib || store.is_constrained(ia, ib) {
            continue;
        }
        let key = (ia.min(ib), ia.max(ib));
        let s = scores[(a, b)];
        let better = match best {
            None => true,
            Some((bs, bk, _)) => s > bs || (s == bs && key < bk),
        };
        if better {
            best = Some((s, key, (a, b)));
        }
    }
    best.map(|(_, _, pos)| pos)
}

/// Uniformly random unconstrained candidate pair.
pub fn random_pair<R: Rng>(
    batch_ids: &[usize],
    sim: &BatchSimilarity,
    store: &ConstraintStore,
    rng: &mut R,
) -> Option<(usize, usize)> {
    let open: Vec<(usize, usize)> = sim
        .candidates()
        .into_iter()
        .filter(|&(a, b)| !store.is_constrained(batch_ids[a], batch_ids[b]))
        .collect();
    if open.is_empty() {
        None
    } else {
        Some(open[rng.random_range(0..open.len())])
    }
}

/// Scores the batch with `strategy` and picks the next pair, if the budget
/// allows one. `za`/`zb` are the feature rows of the two views.
#[allow(clippy::too_many_arguments)]
pub fn choose_query<R: Rng>(
    config: &QueryConfig,
    budget: &QueryBudget,
    za: &Matrix,
    zb: &Matrix,
    batch_ids: &[usize],
    views: &IndicatorViews,
    store: &ConstraintStore,
    step: u64,
    rng: &mut R,
) -> Result<Option<QueryDecision>> {
    if budget.exhausted() {
        return Ok(None);
    }
    let sim = BatchSimilarity::new(za, zb)?;
    if sim.candidates().is_empty() {
        return Ok(None);
    }
    let up = uncertainty_scores(&sim, config.epsilon)?;
    let hp = if store.is_empty() {
        None
    } else {
        Some(hard_negative_scores(&sim, views, store)?)
    };
    let r = budget.ratio();
    let (pos, combined) = match config.strategy {
        Strategy::Random => (random_pair(batch_ids, &sim, store, rng), None),
        Strategy::Up => (select_query_pair(&up, batch_ids, &sim, store, budget), Some(up.clone())),
        Strategy::Hp => {
            let s = hp.clone().unwrap_or_else(|| up.clone());
            (select_query_pair(&s, batch_ids, &sim, store, budget), Some(s))
        }
        Strategy::Joint => {
            let s = joint_scores(&up, hp.as_ref(), budget)?;
            (select_query_pair(&s, batch_ids, &sim, store, budget), Some(s))
        }
    };
    Ok(pos.map(|(a, b)| QueryDecision {
        step,
        i: batch_ids[a],
        j: batch_ids[b],
        score: combined.map(|s| s[(a, b)]),
        s_up: up[(a, b)],
        s_hp: hp.map(|h| h[(a, b)]),
        r,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{ConstraintSource, Link};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sim_from(mean: Matrix) -> BatchSimilarity {
        let n = mean.rows();
        BatchSimilarity {
            mean,
            valid: vec![true; n],
        }
    }

    #[test]
    fn uncertainty_peaks_at_epsilon() {
        let mean = Matrix::from_rows(&[[1.0, 0.2, 1.0], [0.2, 1.0, -1.0], [1.0, -1.0, 1.0]]).unwrap();
        let up = uncertainty_scores(&sim_from(mean), 0.2).unwrap();
        assert_eq!(up[(0, 1)], 1.0);
        assert_eq!(up[(1, 2)], 0.0);
        // raw -0.8 between raw 0 and raw -1.2
        assert!((up[(0, 2)] - (0.4 / 1.2)).abs() < 1e-12);
        assert_eq!(up, up.transpose());
    }

    #[test]
    fn similarity_averages_views_and_flags_zero_rows() {
        let za = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 0.0]]).unwrap();
        let zb = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let sim = BatchSimilarity::new(&za, &zb).unwrap();
        assert!((sim.mean[(0, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(sim.valid, vec![true, true, false]);
        assert_eq!(sim.candidates(), vec![(0, 1)]);
    }

    #[test]
    fn hard_negative_requires_constraints() {
        let store = ConstraintStore::new(3);
        let views = IndicatorViews::unconstrained(3);
        let sim = sim_from(Matrix::identity(3));
        assert_eq!(hard_negative_scores(&sim, &views, &store), Err(Error::NoConstraints));
    }

    #[test]
    fn joint_boundaries() {
        let up = Matrix::from_rows(&[[0.0, 0.2], [0.2, 0.0]]).unwrap();
        let hp = Matrix::from_rows(&[[0.0, 0.8], [0.8, 0.0]]).unwrap();
        let mut budget = QueryBudget::new(10);
        assert_eq!(joint_scores(&up, Some(&hp), &budget).unwrap(), up);
        budget.spent = 5;
        assert!((joint_scores(&up, Some(&hp), &budget).unwrap()[(0, 1)] - 0.5).abs() < 1e-15);
        budget.spent = 10;
        assert_eq!(joint_scores(&up, Some(&hp), &budget).unwrap(), hp);
        assert_eq!(QueryBudget::new(0).ratio(), 0.0);
    }

    #[test]
    fn selection_skips_constrained_and_respects_budget() {
        let scores = Matrix::from_rows(&[[0.0, 0.9, 0.5], [0.9, 0.0, 0.7], [0.5, 0.7, 0.0]]).unwrap();
        let sim = sim_from(Matrix::identity(3));
        let mut store = ConstraintStore::new(10);
        let ids = [4, 7, 2];
        let budget = QueryBudget::new(3);
        assert_eq!(select_query_pair(&scores, &ids, &sim, &store, &budget), Some((0, 1)));
        store
            .record_answer(4, 7, Link::MustLink, 0, ConstraintSource::Queried)
            .unwrap();
        assert_eq!(select_query_pair(&scores, &ids, &sim, &store, &budget), Some((1, 2)));
        let spent = QueryBudget { total: 3, spent: 3 };
        assert_eq!(select_query_pair(&scores, &ids, &sim, &store, &spent), None);
    }

    #[test]
    fn ties_break_on_sample_ids() {
        let scores = Matrix::filled(3, 3, 0.5);
        let sim = sim_from(Matrix::identity(3));
        let store = ConstraintStore::new(10);
        // pairs by sample id: (9,5) (2,9) (2,5); smallest is (2,5)
        let pos = select_query_pair(&scores, &[9, 5, 2], &sim, &store, &QueryBudget::new(1)).unwrap();
        assert_eq!(pos, (1, 2));
    }

    #[test]
    fn random_strategy_is_seeded() {
        let za = Matrix::from_fn(6, 3, |i, j| ((i * 3 + j) as f64).sin() + 0.1);
        let store = ConstraintStore::new(6);
        let views = IndicatorViews::unconstrained(6);
        let cfg = QueryConfig::new(5, Strategy::Random);
        let ids: Vec<usize> = (0..6).collect();
        let pick = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            choose_query(&cfg, &QueryBudget::new(5), &za, &za, &ids, &views, &store, 0, &mut rng)
                .unwrap()
                .unwrap()
        };
        assert_eq!(pick(1), pick(1));
        assert!(pick(1).score.is_none());
    }
}
