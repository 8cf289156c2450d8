//! Empirical checks of the query guarantees on tiny, fully optimizable
//! instances.
//!
//! Two regimes are available. [`Regime::Frozen`] holds `mu = 1`, the
//! augmentation weight at 1 and the row normalizer at its unconstrained
//! value, so one answer changes the loss only through the new must-link
//! weight or the new cannot-link denominator entries. [`Regime::Literal`] is
//! the training objective itself, with live row normalization and `mu`.
//! Monotonicity is a theorem only in the frozen regime; the literal one is
//! measured and reported.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSource, ConstraintStore, IndicatorViews, Link};
use crate::error::{Error, Result};
use crate::loss::{build_weight_matrix, contrastive_sum, ContrastiveInputs, LossConfig};
use crate::numerics::{Graph, Matrix, ParamSet, Var};
use crate::query::{uncertainty_scores, BatchSimilarity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Frozen,
    Literal,
}

/// The feature map being optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceEncoder {
    Identity,
    /// `f(x) = A x` with `A` of shape `dim x input_dim`.
    Linear {
        dim: usize,
    },
}

/// One answered pair of a query sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TinyQuery {
    pub i: usize,
    pub j: usize,
    pub link: Link,
}

/// `2N` view rows (row `i` and `i + N` are the views of sample `i`) with
/// ground-truth labels for the `N` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyInstance {
    pub points: Matrix,
    pub labels: Vec<usize>,
    pub encoder: InstanceEncoder,
    pub config: LossConfig,
}

pub const MAX_TINY_BATCH: usize = 8;

impl TinyInstance {
    pub fn new(points: Matrix, labels: Vec<usize>, encoder: InstanceEncoder, config: LossConfig) -> Result<Self> {
        config.validate()?;
        let n = labels.len();
        if !(2..=MAX_TINY_BATCH).contains(&n) {
            return Err(Error::InvalidConfig(format!(
                "tiny instances hold 2 to {MAX_TINY_BATCH} samples, got {n}"
            )));
        }
        if points.rows() != 2 * n {
            return Err(Error::DimensionMismatch {
                context: "TinyInstance",
                expected: format!("{} view rows", 2 * n),
                got: format!("{}", points.rows()),
            });
        }
        if let InstanceEncoder::Linear { dim: 0 } = encoder {
            return Err(Error::InvalidConfig(
                "linear map needs a positive output dimension".into(),
            ));
        }
        Ok(Self {
            points,
            labels,
            encoder,
            config,
        })
    }

    /// `n` samples from `classes` Gaussian clusters in `dim` dimensions; the
    /// second view is the first plus small jitter.
    pub fn random(n: usize, dim: usize, classes: usize, encoder: InstanceEncoder, seed: u64) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::InvalidConfig("need at least one class and one dimension".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = Matrix::from_fn(classes, dim, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let base = Matrix::from_fn(n, dim, |i, k| {
            centers[(labels[i], k)] + rng.sample::<f64, _>(StandardNormal)
        });
        let jitter = Matrix::from_fn(n, dim, |i, k| base[(i, k)] + 0.1 * rng.sample::<f64, _>(StandardNormal));
        Self::new(base.vstack(&jitter)?, labels, encoder, LossConfig::default())
    }

    pub fn batch(&self) -> usize {
        self.labels.len()
    }

    pub fn input_dim(&self) -> usize {
        self.points.cols()
    }

    /// Answer the ground truth gives for a pair.
    pub fn answer(&self, i: usize, j: usize) -> Link {
        if self.labels[i] == self.labels[j] {
            Link::MustLink
        } else {
            Link::CannotLink
        }
    }

    /// `len` label-consistent queries on pairs not yet implied by the
    /// earlier ones.
    pub fn query_sequence(&self, len: usize, seed: u64) -> Result<Vec<TinyQuery>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ConstraintStore::new(self.batch());
        let mut out = Vec::with_capacity(len);
        while out.len() < len {
            let open: Vec<(usize, usize)> = (0..self.batch())
                .flat_map(|i| ((i + 1)..self.batch()).map(move |j| (i, j)))
                .filter(|&(i, j)| !store.is_constrained(i, j))
                .collect();
            if open.is_empty() {
                return Err(Error::InsufficientCandidates {
                    needed: len,
                    have: out.len(),
                });
            }
            let (i, j) = open[rng.random_range(0..open.len())];
            let link = self.answer(i, j);
            store.record_answer(i, j, link, out.len() as u64, ConstraintSource::Queried)?;
            out.push(TinyQuery { i, j, link });
        }
        Ok(out)
    }

    pub fn store_for(&self, queries: &[TinyQuery]) -> Result<ConstraintStore> {
        let mut store = ConstraintStore::new(self.batch());
        for (step, q) in queries.iter().enumerate() {
            store.record_answer(q.i, q.j, q.link, step as u64, ConstraintSource::Queried)?;
        }
        Ok(store)
    }

    /// Loss inputs after the given answers.
    pub fn inputs(&self, queries: &[TinyQuery], regime: Regime) -> Result<ContrastiveInputs> {
        let n = self.batch();
        let ids: Vec<usize> = (0..n).collect();
        let views = self.store_for(queries)?.indicator_views(&ids)?;
        match regime {
            Regime::Literal => {
                let w = build_weight_matrix(&views, self.config.lambda, n, views.n_plus);
                ContrastiveInputs::for_batch(&views, &w, self.config.tau, self.config.include_self_in_denominator)
            }
            Regime::Frozen => Ok(frozen_inputs(&views, &self.config)),
        }
    }

    /// Initial parameters for the feature map, empty for the identity.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> ParamSet {
        let mut params = ParamSet::new();
        if let InstanceEncoder::Linear { dim } = self.encoder {
            let scale = 1.0 / (self.input_dim() as f64).sqrt();
            params.push(
                "map",
                Matrix::from_fn(dim, self.input_dim(), |_, _| {
                    scale * rng.sample::<f64, _>(StandardNormal)
                }),
            );
        }
        params
    }

    fn features(&self, g: &mut Graph, vars: &[Var]) -> Result<Var> {
        let x = g.leaf(self.points.clone());
        match (self.encoder, vars.first()) {
            (InstanceEncoder::Identity, _) => Ok(x),
            (InstanceEncoder::Linear { .. }, Some(&a)) => g.matmul_nt(x, a),
            (InstanceEncoder::Linear { .. }, None) => Err(Error::InvalidConfig("linear map parameters missing".into())),
        }
    }

    /// Feature rows `f(x)` for the given parameters.
    pub fn embed(&self, params: &ParamSet) -> Result<Matrix> {
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let z = self.features(&mut g, &vars)?;
        Ok(g.value(z).clone())
    }

    /// `L_q(f)` for prepared inputs.
    pub fn loss(&self, params: &ParamSet, inputs: &ContrastiveInputs) -> Result<f64> {
        crate::numerics::evaluate(params, |g, vars| self.loss_node(g, vars, inputs))
    }

    fn loss_node(&self, g: &mut Graph, vars: &[Var], inputs: &ContrastiveInputs) -> Result<Var> {
        let z = self.features(g, vars)?;
        let sum = contrastive_sum(g, z, inputs)?;
        g.scale(sum, 1.0 / self.points.rows() as f64)
    }
}

/// Inputs with `mu = 1`, augmentation weight 1 and the row normalizer held
/// at its unconstrained value of 1.
fn frozen_inputs(views: &IndicatorViews, config: &LossConfig) -> ContrastiveInputs {
    let rows = views.rows();
    let must = config.lambda * views.batch as f64;
    let weights = Matrix::from_fn(rows, rows, |i, j| {
        if views.aug.get(i, j) {
            1.0
        } else if views.plus.get(i, j) {
            must
        } else {
            0.0
        }
    });
    let negatives = Matrix::from_fn(rows, rows, |i, k| {
        if i == k && !config.include_self_in_denominator {
            0.0
        } else {
            1.0 + f64::from(u8::from(views.minus.get(i, k)))
        }
    });
    let row_weight = (0..rows).map(|i| weights.row(i).iter().sum()).collect();
    ContrastiveInputs {
        weights,
        row_weight,
        negatives,
        log_mu: vec![0.0; rows],
        tau: config.tau,
    }
}

/// Loss before and after one added answer at a fixed feature map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedStep {
    pub q: usize,
    pub query: TinyQuery,
    pub before: f64,
    pub after: f64,
}

impl FixedStep {
    pub fn holds(&self) -> bool {
        self.after >= self.before
    }
}

/// `L_q(f)` against `L_{q+1}(f)` for every prefix of `queries`.
pub fn fixed_f_steps(
    instance: &TinyInstance,
    queries: &[TinyQuery],
    params: &ParamSet,
    regime: Regime,
) -> Result<Vec<FixedStep>> {
    let mut values = Vec::with_capacity(queries.len() + 1);
    for q in 0..=queries.len() {
        values.push(instance.loss(params, &instance.inputs(&queries[..q], regime)?)?);
    }
    Ok(queries
        .iter()
        .enumerate()
        .map(|(q, &query)| FixedStep {
            q,
            query,
            before: values[q],
            after: values[q + 1],
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub restarts: usize,
    pub steps: usize,
    pub polish_steps: usize,
    pub learning_rate: f64,
    /// Scale-free stationarity under which a minimum counts as converged.
    pub grad_tolerance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            steps: 400,
            polish_steps: 1500,
            learning_rate: 0.05,
            grad_tolerance: 1e-3,
        }
    }
}

/// Minimized losses along a query sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapChain {
    /// `L_q(f_q)` for `q = 0..=len`.
    pub values: Vec<f64>,
    /// `|L_q(f_q) - L_Q(f_Q)|`.
    pub gaps: Vec<f64>,
    /// Scale-free gradient size at each reported minimum.
    pub grad_norms: Vec<f64>,
    pub converged: bool,
    /// Steps where `L_q(f_q) > L_{q+1}(f_{q+1}) + tolerance`.
    pub violations: Vec<usize>,
    pub tolerance: f64,
}

fn adam_minimize(
    instance: &TinyInstance,
    inputs: &ContrastiveInputs,
    params: &mut ParamSet,
    steps: usize,
    learning_rate: f64,
) -> Result<f64> {
    let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
    let mut m: Vec<Matrix> = params
        .iter()
        .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
        .collect();
    let mut v = m.clone();
    let mut best = f64::INFINITY;
    let mut best_params = params.clone();
    for t in 1..=steps {
        let value = crate::numerics::evaluate_with_gradients(params, |g, vars| instance.loss_node(g, vars, inputs))?;
        if value < best {
            best = value;
            best_params = params.clone();
        }
        let (c1, c2) = (1.0 - b1.powi(t as i32), 1.0 - b2.powi(t as i32));
        for (k, p) in params.iter_mut().enumerate() {
            let Some(grad) = p.grad.take() else { continue };
            for ((w, g), (mk, vk)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m[k].data_mut().iter_mut().zip(v[k].data_mut().iter_mut()))
            {
                *mk = b1 * *mk + (1.0 - b1) * g;
                *vk = b2 * *vk + (1.0 - b2) * g * g;
                *w -= learning_rate * (*mk / c1) / ((*vk / c2).sqrt() + eps);
            }
        }
    }
    let last = instance.loss(params, inputs)?;
    if last < best {
        best = last;
    } else {
        *params = best_params;
    }
    Ok(best)
}

/// Gradient norm times parameter norm over loss magnitude. The loss only
/// sees feature directions, so the raw gradient shrinks as the map grows;
/// this product does not.
fn stationarity(instance: &TinyInstance, inputs: &ContrastiveInputs, params: &ParamSet) -> Result<f64> {
    let mut probe = params.clone();
    let value = crate::numerics::evaluate_with_gradients(&mut probe, |g, vars| instance.loss_node(g, vars, inputs))?;
    let scale: f64 = probe
        .iter()
        .map(|p| p.value.frobenius_norm().powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(probe.grad_norm() * scale / value.abs().max(1.0))
}

/// Minimizes the frozen-regime loss for every prefix of `queries`.
///
/// Every minimizer found at any `q` joins a shared pool and is polished
/// against every prefix, so each reported `L_q(f_q)` is the best value known
/// for that prefix.
pub fn gap_chain(instance: &TinyInstance, queries: &[TinyQuery], opt: &OptimizerConfig, seed: u64) -> Result<GapChain> {
    gap_chain_in(instance, queries, opt, seed, Regime::Frozen)
}

pub fn gap_chain_in(
    instance: &TinyInstance,
    queries: &[TinyQuery],
    opt: &OptimizerConfig,
    seed: u64,
    regime: Regime,
) -> Result<GapChain> {
    const TOLERANCE: f64 = 1e-6;
    const POLISH_ROUNDS: usize = 6;
    const STALL: f64 = 1e-6;
    let inputs: Vec<ContrastiveInputs> = (0..=queries.len())
        .map(|q| instance.inputs(&queries[..q], regime))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<ParamSet> = Vec::new();
    let trainable = instance.encoder != InstanceEncoder::Identity;
    if trainable {
        for input in &inputs {
            for _ in 0..opt.restarts.max(1) {
                let mut params = instance.init_params(&mut rng);
                adam_minimize(instance, input, &mut params, opt.steps, opt.learning_rate)?;
                pool.push(params);
            }
        }
    } else {
        pool.push(ParamSet::new());
    }

    let best_of = |pool: &[ParamSet], input: &ContrastiveInputs| -> Result<(usize, f64)> {
        let mut best = (0, f64::INFINITY);
        for (k, p) in pool.iter().enumerate() {
            let v = instance.loss(p, input)?;
            if v < best.1 {
                best = (k, v);
            }
        }
        Ok(best)
    };

    let mut stalled = vec![false; inputs.len()];
    if trainable {
        // polish the incumbent of every prefix until it is stationary or
        // further polishing stops paying
        for _ in 0..POLISH_ROUNDS {
            let mut settled = true;
            for (q, input) in inputs.iter().enumerate() {
                let (k, before) = best_of(&pool, input)?;
                if stalled[q] || stationarity(instance, input, &pool[k])? <= opt.grad_tolerance {
                    continue;
                }
                settled = false;
                let mut params = pool[k].clone();
                let after = adam_minimize(instance, input, &mut params, opt.polish_steps, 0.2 * opt.learning_rate)?;
                stalled[q] = before - after <= STALL * before.abs().max(1.0);
                pool.push(params);
            }
            if settled {
                break;
            }
        }
    }

    let mut values = Vec::with_capacity(inputs.len());
    let mut grad_norms = Vec::with_capacity(inputs.len());
    let mut converged = true;
    for (q, input) in inputs.iter().enumerate() {
        let (k, v) = best_of(&pool, input)?;
        values.push(v);
        let g = if trainable {
            stationarity(instance, input, &pool[k])?
        } else {
            0.0
        };
        converged &= g <= opt.grad_tolerance || stalled[q];
        grad_norms.push(g);
    }
    let last = *values.last().expect("at least one prefix");
    let gaps = values.iter().map(|v| (v - last).abs()).collect();
    let violations = values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] > w[1] + TOLERANCE)
        .map(|(q, _)| q)
        .collect();
    if !converged {
        return Err(Error::NonConvergence(format!(
            "stationarity {grad_norms:?} exceeds {}",
            opt.grad_tolerance
        )));
    }
    Ok(GapChain {
        values,
        gaps,
        grad_norms,
        converged,
        violations,
        tolerance: TOLERANCE,
    })
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "spearman",
            expected: format!("{} values", x.len()),
            got: format!("{}", y.len()),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientCandidates {
            needed: 2,
            have: x.len(),
        });
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        // 1-based average rank of the tie block
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            out[k] = rank;
        }
        start = end;
    }
    out
}

/// Loss change of one hypothesized answer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateEffect {
    pub i: usize,
    pub j: usize,
    /// Two-view mean cosine similarity of the pair under `f`.
    pub similarity: f64,
    pub delta: f64,
    pub s_up: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyEffect {
    pub link: Link,
    pub regime: Regime,
    pub candidates: Vec<CandidateEffect>,
    /// Spearman of `|delta|` against `exp(s / tau)` for cannot-links and
    /// against `s` for must-links.
    pub rho: f64,
    pub rho_s_up: f64,
}

pub const MIN_CANDIDATES: usize = 5;

/// Hypothesizes `link` on every unconstrained pair at the fixed map
/// `params` and ranks the loss changes.
pub fn strategy_effect(
    instance: &TinyInstance,
    prior: &[TinyQuery],
    params: &ParamSet,
    link: Link,
    regime: Regime,
) -> Result<StrategyEffect> {
    if prior.len() > 2 {
        return Err(Error::InvalidConfig(format!(
            "at most 2 prior queries keep q small, got {}",
            prior.len()
        )));
    }
    let n = instance.batch();
    let store = instance.store_for(prior)?;
    let z = instance.embed(params)?;
    let sim = BatchSimilarity::new(&z.slice_rows(0, n), &z.slice_rows(n, 2 * n))?;
    let up = uncertainty_scores(&sim, 0.2)?;
    let base = instance.loss(params, &instance.inputs(prior, regime)?)?;
    let mut candidates = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if store.is_constrained(i, j) {
                continue;
            }
            let mut extended = prior.to_vec();
            extended.push(TinyQuery { i, j, link });
            let after = instance.loss(params, &instance.inputs(&extended, regime)?)?;
            candidates.push(CandidateEffect {
                i,
                j,
                similarity: sim.mean[(i, j)],
                delta: after - base,
                s_up: up[(i, j)],
            });
        }
    }
    if candidates.len() < MIN_CANDIDATES {
        return Err(Error::InsufficientCandidates {
            needed: MIN_CANDIDATES,
            have: candidates.len(),
        });
    }
    let magnitude: Vec<f64> = candidates.iter().map(|c| c.delta.abs()).collect();
    let reference: Vec<f64> = candidates
        .iter()
        .map(|c| match link {
            Link::CannotLink => (c.similarity / instance.config.tau).exp(),
            Link::MustLink => c.similarity,
        })
        .collect();
    let s_up: Vec<f64> = candidates.iter().map(|c| c.s_up).collect();
    Ok(StrategyEffect {
        link,
        regime,
        rho: spearman(&magnitude, &reference)?,
        rho_s_up: spearman(&magnitude, &s_up)?,
        candidates,
    })
}

/// One pass/fail line of the theory report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremRecord {
    pub check: String,
    pub instance: usize,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub records: Vec<TheoremRecord>,
    /// Informational records that carry no pass/fail meaning.
    pub observations: Vec<TheoremRecord>,
}

impl TheoryReport {
    pub fn passed(&self, check: &str) -> bool {
        let mut any = false;
        for r in self.records.iter().filter(|r| r.check == check) {
            any = true;
            if !r.passed {
                return false;
            }
        }
        any
    }

    pub fn all_passed(&self) -> bool {
        self.records.iter().all(|r| r.passed)
    }

    /// Plain-text summary, one line per record.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "{} {} #{}: value {:.6} threshold {:.6} {}\n",
                if r.passed { "PASS" } else { "FAIL" },
                r.check,
                r.instance,
                r.value,
                r.threshold,
                r.detail
            ));
        }
        for r in &self.observations {
            out.push_str(&format!(
                "NOTE {} #{}: value {:.6} {}\n",
                r.check, r.instance, r.value, r.detail
            ));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheorySuiteConfig {
    pub instances: usize,
    pub batch: usize,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub queries: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for TheorySuiteConfig {
    fn default() -> Self {
        Self {
            instances: 10,
            batch: 6,
            input_dim: 3,
            feature_dim: 2,
            queries: 4,
            seed: 0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Chain, fixed-map and rank-correlation checks over random instances.
pub fn run_suite(cfg: &TheorySuiteConfig) -> Result<TheoryReport> {
    let mut report = TheoryReport::default();
    let encoder = InstanceEncoder::Linear { dim: cfg.feature_dim };
    let mut accepted = 0;
    let mut attempt = 0;
    // non-converged instances are rejected and replaced by fresh draws
    while accepted < cfg.instances && attempt < 3 * cfg.instances {
        let seed = cfg.seed.wrapping_add(attempt as u64);
        attempt += 1;
        let instance = TinyInstance::random(cfg.batch, cfg.input_dim, 2, encoder, seed)?;
        let queries = instance.query_sequence(cfg.queries, seed)?;
        let chain = match gap_chain(&instance, &queries, &cfg.optimizer, seed) {
            Ok(chain) => chain,
            Err(e) => {
                report.observations.push(TheoremRecord {
                    check: "gap_chain_rejected".into(),
                    instance: attempt - 1,
                    passed: true,
                    value: f64::NAN,
                    threshold: f64::NAN,
                    detail: e.to_string(),
                });
                continue;
            }
        };
        let k = accepted;
        accepted += 1;
        report.records.push(TheoremRecord {
            check: "gap_chain".into(),
            instance: k,
            passed: chain.violations.is_empty(),
            value: chain.violations.len() as f64,
            threshold: 0.0,
            detail: format!("chain {:?}", chain.values),
        });

        let params = instance.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
        let steps = fixed_f_steps(&instance, &queries, &params, Regime::Frozen)?;
        let broken = steps.iter().filter(|s| !s.holds()).count();
        report.records.push(TheoremRecord {
            check: "fixed_map_inequality".into(),
            instance: k,
            passed: broken == 0,
            value: broken as f64,
            threshold: 0.0,
            detail: format!("{} single-answer steps", steps.len()),
        });

        let literal = fixed_f_steps(&instance, &queries, &params, Regime::Literal)?;
        let literal_broken = literal.iter().filter(|s| !s.holds()).count();
        report.observations.push(TheoremRecord {
            check: "literal_fixed_map_decreases".into(),
            instance: k,
            passed: true,
            value: literal_broken as f64,
            threshold: 0.0,
            detail: "steps where the training objective fell after an answer".into(),
        });
    }
    if accepted < cfg.instances {
        report.records.push(TheoremRecord {
            check: "gap_chain".into(),
            instance: accepted,
            passed: false,
            value: accepted as f64,
            threshold: cfg.instances as f64,
            detail: format!("only {accepted} of {attempt} instances converged"),
        });
    }

    for (k, link) in [(0, Link::CannotLink), (1, Link::MustLink)] {
        let seed = cfg.seed.wrapping_add(1000 + k);
        let instance = TinyInstance::random(MAX_TINY_BATCH, cfg.input_dim, 2, InstanceEncoder::Identity, seed)?;
        let prior = instance.query_sequence(1, seed)?;
        let params = ParamSet::new();
        let effect = strategy_effect(&instance, &prior, &params, link, Regime::Frozen)?;
        let name = match link {
            Link::CannotLink => "strategy_effect_cannot_link",
            Link::MustLink => "strategy_effect_must_link",
        };
        report.records.push(TheoremRecord {
            check: name.into(),
            instance: k as usize,
            passed: effect.rho >= 0.9,
            value: effect.rho,
            threshold: 0.9,
            detail: format!("{} candidates", effect.candidates.len()),
        });
        report.observations.push(TheoremRecord {
            check: format!("{name}_s_up"),
            instance: k as usize,
            passed: true,
            value: effect.rho_s_up,
            threshold: f64::NAN,
            detail: "rank correlation against the uncertainty score".into(),
        });
    }
    Ok(report)
}
