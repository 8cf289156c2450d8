//! Training loop: seed constraints, pre-train, then per batch augment,
//! forward, query, weight and step.
//!
//! A [`Session`] owns everything a run mutates. All randomness comes from a
//! single seeded stream consumed in a fixed order, so `(seed, config, data,
//! oracle)` fixes the whole trajectory.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintInbox, ConstraintSource, ConstraintStore};
use crate::data::{train_test_split, Dataset};
use crate::error::{Error, Result};
use crate::loss::{build_weight_matrix, total_loss_graph, ContrastiveInputs, LossBreakdown, LossConfig};
use crate::metrics::MetricsReport;
use crate::model::{Activation, Encoder, EncoderConfig};
use crate::numerics::{Graph, Matrix, ParamSet};
use crate::oracle::{Oracle, OracleReply, QueryRequest, SimulatedOracle};
use crate::query::{choose_query, QueryBudget, QueryConfig, QueryDecision, Strategy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Jitter standard deviation as a multiple of each dimension's std.
    pub jitter_sigma: f64,
    pub feature_dropout_prob: f64,
    pub scale_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.05,
            feature_dropout_prob: 0.1,
            scale_range: (0.9, 1.1),
        }
    }
}

impl AugmentConfig {
    /// No-op transforms.
    pub fn identity() -> Self {
        Self {
            jitter_sigma: 0.0,
            feature_dropout_prob: 0.0,
            scale_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::InvalidConfig("jitter_sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.feature_dropout_prob) {
            return Err(Error::InvalidConfig(format!(
                "feature_dropout_prob must lie in [0, 1), got {}",
                self.feature_dropout_prob
            )));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "scale_range must be positive and ordered, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

fn transform<R: Rng>(batch: &Matrix, dim_std: &[f64], config: &AugmentConfig, rng: &mut R) -> Matrix {
    let (lo, hi) = config.scale_range;
    let mut out = batch.clone();
    for i in 0..out.rows() {
        let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        for (d, v) in out.row_mut(i).iter_mut().enumerate() {
            if config.jitter_sigma > 0.0 {
                let noise: f64 = rng.sample(StandardNormal);
                *v += config.jitter_sigma * dim_std[d] * noise;
            }
            if config.feature_dropout_prob > 0.0 && rng.random::<f64>() < config.feature_dropout_prob {
                *v = 0.0;
            }
            *v *= scale;
        }
    }
    out
}

/// Two independent stochastic views of `batch`. `dim_std` holds the
/// per-dimension standard deviation that scales the jitter.
pub fn augment<R: Rng>(
    batch: &Matrix,
    dim_std: &[f64],
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<(Matrix, Matrix)> {
    config.validate()?;
    if batch.rows() == 0 {
        return Err(Error::Empty("augment"));
    }
    if dim_std.len() != batch.cols() {
        return Err(Error::DimensionMismatch {
            context: "augment",
            expected: format!("{} stds", batch.cols()),
            got: format!("{}", dim_std.len()),
        });
    }
    let a = transform(batch, dim_std, config, rng);
    let b = transform(batch, dim_std, config, rng);
    Ok((a, b))
}

/// Population standard deviation of each column.
pub fn column_std(x: &Matrix) -> Vec<f64> {
    let n = x.rows().max(1) as f64;
    (0..x.cols())
        .map(|c| {
            let mean = (0..x.rows()).map(|r| x[(r, c)]).sum::<f64>() / n;
            ((0..x.rows()).map(|r| (x[(r, c)] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Matrix> = params
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update from the gradients stored in `params`.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, learning_rate: f64, config: &AdamConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "adam_step",
            expected: format!("{} moment slots", params.len()),
            got: format!("{}", state.m.len()),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (idx, p) in params.iter_mut().enumerate() {
        let Some(g) = p.grad.as_ref() else { continue };
        let (m, v) = (&mut state.m[idx], &mut state.v[idx]);
        for k in 0..g.data().len() {
            let gk = g.data()[k];
            let mk = config.beta1 * m.data()[k] + (1.0 - config.beta1) * gk;
            let vk = config.beta2 * v.data()[k] + (1.0 - config.beta2) * gk * gk;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            let update = learning_rate * (mk / c1) / ((vk / c2).sqrt() + config.eps);
            p.value.data_mut()[k] -= update;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseudoLinkConfig {
    pub threshold: f64,
    pub max_new: usize,
    pub every_epochs: usize,
}

impl Default for PseudoLinkConfig {
    fn default() -> Self {
        Self {
            threshold: 0.99,
            max_new: 4,
            every_epochs: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub attention_enabled: bool,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![32],
            feature_dim: 16,
            attention_enabled: true,
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub pretrain_epochs: usize,
    pub augmentation: AugmentConfig,
    pub seed: u64,
    pub loss: LossConfig,
    pub query: QueryConfig,
    pub model: ModelConfig,
    /// Orientation the simulated oracle answers for.
    pub orientation: String,
    /// Clusters `K`; taken from the orientation's label count when absent.
    pub cluster_count: Option<usize>,
    /// Fraction of samples held out from training and constraints.
    pub holdout_fraction: Option<f64>,
    pub pseudo_links: Option<PseudoLinkConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            pretrain_epochs: 20,
            augmentation: AugmentConfig::default(),
            seed: 0,
            loss: LossConfig::default(),
            query: QueryConfig::new(0, Strategy::Joint),
            model: ModelConfig::default(),
            orientation: crate::data::PERSONALIZED_ORIENTATION.to_string(),
            cluster_count: None,
            holdout_fraction: None,
            pseudo_links: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if let Some(f) = self.holdout_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "holdout_fraction must lie in (0, 1), got {f}"
                )));
            }
        }
        if let Some(p) = &self.pseudo_links {
            if !(p.threshold > 0.0 && p.threshold <= 1.0) || p.every_epochs == 0 {
                return Err(Error::InvalidConfig(
                    "pseudo-link threshold must lie in (0, 1] and cadence be positive".into(),
                ));
            }
        }
        self.augmentation.validate()?;
        self.loss.validate()?;
        self.query.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Train,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub epoch: usize,
    pub phase: Phase,
    pub loss: LossBreakdown,
    pub query: Option<QueryDecision>,
    /// Ticket left open by a human oracle.
    pub pending_ticket: Option<String>,
    pub grad_norm: f64,
    /// Answers taken from the inbox at the start of the step.
    pub applied: usize,
    /// Inbox answers the store refused, with the reason.
    pub rejected: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_loss: LossBreakdown,
    pub spent: usize,
    pub answers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Observer of a running session. Hooks run on the training thread between
/// steps and may block (to pause) or return [`Control::Stop`].
pub trait TrainHooks {
    fn on_phase(&mut self, _session: &Session, _phase: Phase) {}

    fn on_step(&mut self, _session: &Session, _report: &StepReport) -> Control {
        Control::Continue
    }

    fn on_epoch(&mut self, _session: &Session, _summary: &EpochSummary) -> Control {
        Control::Continue
    }
}

/// Hooks that observe nothing.
pub struct NoHooks;

impl TrainHooks for NoHooks {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Metrics on the training split (the whole dataset without a hold-out).
    pub metrics: MetricsReport,
    pub holdout_metrics: Option<MetricsReport>,
    /// Hard assignment of every sample, in dataset order.
    pub assignments: Vec<usize>,
    pub spent: usize,
    pub answers: usize,
    pub steps: u64,
    pub stopped_early: bool,
}

pub struct Session {
    config: TrainConfig,
    features: Matrix,
    labels: BTreeMap<String, Vec<usize>>,
    train_idx: Vec<usize>,
    holdout_idx: Vec<usize>,
    dim_std: Vec<f64>,
    encoder: Encoder,
    adam: AdamState,
    store: ConstraintStore,
    budget: QueryBudget,
    oracle: Box<dyn Oracle>,
    inbox: ConstraintInbox,
    rng: ChaCha8Rng,
    step: u64,
    epoch: usize,
    trace: Vec<StepReport>,
    queries: Vec<QueryDecision>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("samples", &self.features.rows())
            .field("step", &self.step)
            .field("epoch", &self.epoch)
            .field("budget", &self.budget)
            .finish_non_exhaustive()
    }
}

impl Session {
    /// `labels` maps orientation names to one label per sample; they feed
    /// metrics only. The oracle decides what constraints say.
    pub fn new(
        features: Matrix,
        labels: BTreeMap<String, Vec<usize>>,
        config: TrainConfig,
        oracle: Box<dyn Oracle>,
        inbox: ConstraintInbox,
    ) -> Result<Self> {
        config.validate()?;
        let n = features.rows();
        for (name, l) in &labels {
            if l.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "Session labels",
                    expected: format!("{n} labels for {name}"),
                    got: format!("{}", l.len()),
                });
            }
        }
        let (train_idx, holdout_idx) = match config.holdout_fraction {
            Some(f) => train_test_split(n, 1.0 - f, config.seed)?,
            None => ((0..n).collect(), Vec::new()),
        };
        if train_idx.len() < config.batch_size {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} exceeds the {} training samples",
                config.batch_size,
                train_idx.len()
            )));
        }
        let k = match config.cluster_count {
            Some(k) => k,
            None => labels
                .get(&config.orientation)
                .map(|l| {
                    let mut u = l.clone();
                    u.sort_unstable();
                    u.dedup();
                    u.len()
                })
                .unwrap_or(2),
        };
        let encoder_config = EncoderConfig {
            input_dim: features.cols(),
            hidden_dims: config.model.hidden_dims.clone(),
            feature_dim: config.model.feature_dim,
            cluster_count: k,
            attention_enabled: config.model.attention_enabled,
            activation: config.model.activation,
        };
        let encoder = Encoder::new(encoder_config, config.seed)?;
        let adam = AdamState::new(encoder.params());
        let dim_std = column_std(&features.select_rows(&train_idx));
        let budget = QueryBudget::new(config.query.total_budget);
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        Ok(Self {
            store: ConstraintStore::new(n),
            config,
            features,
            labels,
            train_idx,
            holdout_idx,
            dim_std,
            encoder,
            adam,
            budget,
            oracle,
            inbox,
            rng,
            step: 0,
            epoch: 0,
            trace: Vec::new(),
            queries: Vec::new(),
        })
    }

    /// Session answered by ground truth under `config.orientation`.
    pub fn simulated(dataset: &Dataset, config: TrainConfig) -> Result<Self> {
        let labels = dataset_labels(dataset)?;
        let truth = labels
            .get(&config.orientation)
            .ok_or_else(|| Error::InvalidConfig(format!("dataset has no orientation {:?}", config.orientation)))?;
        let oracle = SimulatedOracle::from_labels(config.orientation.clone(), truth);
        Self::new(
            dataset.features(),
            labels,
            config,
            Box::new(oracle),
            ConstraintInbox::new(),
        )
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut Encoder {
        &mut self.encoder
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.labels
    }

    pub fn store(&self) -> &ConstraintStore {
        &self.store
    }

    pub fn budget(&self) -> QueryBudget {
        self.budget
    }

    pub fn inbox(&self) -> &ConstraintInbox {
        &self.inbox
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn trace(&self) -> &[StepReport] {
        &self.trace
    }

    pub fn queries(&self) -> &[QueryDecision] {
        &self.queries
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train_idx
    }

    pub fn holdout_indices(&self) -> &[usize] {
        &self.holdout_idx
    }

    fn ask(
        &mut self,
        i: usize,
        j: usize,
        source: ConstraintSource,
        decision: Option<QueryDecision>,
    ) -> Result<Option<String>> {
        self.budget.spend()?;
        let request = QueryRequest {
            i,
            j,
            step: self.step,
            source,
            decision,
        };
        match self.oracle.ask(&request)? {
            OracleReply::Answered(link) => {
                self.store.record_answer(i, j, link, self.step, source)?;
                Ok(None)
            }
            OracleReply::Pending(ticket) => Ok(Some(ticket)),
        }
    }

    /// Issues up to `Q1` uniformly random queries over unconstrained
    /// training pairs. Returns how many were asked.
    pub fn seed_constraints(&mut self) -> Result<usize> {
        let target = self.config.query.initial_random.min(self.budget.remaining());
        let n = self.train_idx.len();
        let mut asked = 0;
        let mut attempts = 0;
        while asked < target && attempts < 100 * target.max(1) + 1000 {
            attempts += 1;
            if self.oracle.busy() {
                break;
            }
            let a = self.train_idx[self.rng.random_range(0..n)];
            let b = self.train_idx[self.rng.random_range(0..n)];
            if a == b || self.store.is_constrained(a, b) {
                continue;
            }
            let (i, j) = (a.min(b), a.max(b));
            self.ask(i, j, ConstraintSource::Seed, None)?;
            asked += 1;
        }
        Ok(asked)
    }

    /// Applies inbox answers; refusals are reported, not fatal.
    fn drain_inbox(&mut self) -> (usize, Vec<String>) {
        let mut applied = 0;
        let mut rejected = Vec::new();
        for r in self.inbox.drain() {
            match self.store.record_answer(r.i, r.j, r.link, r.step, r.source) {
                Ok(()) => applied += 1,
                Err(e) => rejected.push(format!("({}, {}): {e}", r.i, r.j)),
            }
        }
        (applied, rejected)
    }

    /// One optimisation step on the given training samples.
    pub fn train_step(&mut self, batch_ids: &[usize], allow_query: bool, phase: Phase) -> Result<StepReport> {
        let n = batch_ids.len();
        if n < 2 {
            return Err(Error::InvalidConfig("a batch needs at least two samples".into()));
        }
        let (applied, rejected) = self.drain_inbox();

        let raw = self.features.select_rows(batch_ids);
        let (xa, xb) = augment(&raw, &self.dim_std, &self.config.augmentation, &mut self.rng)?;
        let input = xa.vstack(&xb)?;

        let mut g = Graph::new();
        let vars = self.encoder.params().bind(&mut g);
        let x = g.leaf(input);
        let fwd = self.encoder.forward(&mut g, &vars, x)?;

        let mut decision = None;
        let mut pending_ticket = None;
        if allow_query && !self.budget.exhausted() && !self.oracle.busy() {
            let z = g.value(fwd.z);
            let (za, zb) = (z.slice_rows(0, n), z.slice_rows(n, 2 * n));
            let views = self.store.indicator_views(batch_ids)?;
            let chosen = choose_query(
                &self.config.query,
                &self.budget,
                &za,
                &zb,
                batch_ids,
                &views,
                &self.store,
                self.step,
                &mut self.rng,
            )?;
            if let Some(d) = chosen {
                pending_ticket = self.ask(d.i, d.j, ConstraintSource::Queried, Some(d.clone()))?;
                self.queries.push(d.clone());
                decision = Some(d);
            }
        }

        if let Some(p) = &self.config.pseudo_links {
            if phase == Phase::Train && self.epoch > 0 && self.epoch.is_multiple_of(p.every_epochs) {
                let z = g.value(fwd.z).clone();
                self.store
                    .high_confidence_extend(batch_ids, &z, p.threshold, p.max_new, self.step)?;
            }
        }

        let views = self.store.indicator_views(batch_ids)?;
        let w = build_weight_matrix(&views, self.config.loss.lambda, n, views.n_plus);
        let inputs = ContrastiveInputs::for_batch(
            &views,
            &w,
            self.config.loss.tau,
            self.config.loss.include_self_in_denominator,
        )?;
        let loss = total_loss_graph(&mut g, fwd.z, fwd.p, &inputs, &self.config.loss)?;
        let breakdown = loss.breakdown(&g);
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite { primitive: "loss" });
        }
        let mut grads = g.backward(loss.total)?;
        let mut staged = self.encoder.params().clone();
        for (p, v) in staged.iter_mut().zip(&vars) {
            p.grad = grads[v.index()].take();
        }
        if staged.iter().any(|p| p.grad.as_ref().is_some_and(|m| !m.is_finite())) {
            return Err(Error::NonFinite { primitive: "gradient" });
        }
        let grad_norm = staged.grad_norm();
        let mut adam = self.adam.clone();
        adam_step(&mut staged, &mut adam, self.config.learning_rate, &self.config.adam)?;
        if !staged.all_finite() {
            return Err(Error::NonFinite {
                primitive: "adam update",
            });
        }
        staged.zero_grad();
        *self.encoder.params_mut() = staged;
        self.adam = adam;

        let report = StepReport {
            step: self.step,
            epoch: self.epoch,
            phase,
            loss: breakdown,
            query: decision,
            pending_ticket,
            grad_norm,
            applied,
            rejected,
        };
        self.step += 1;
        self.trace.push(report.clone());
        Ok(report)
    }

    /// Shuffled fixed-size batches over the training split; the remainder
    /// is dropped.
    fn epoch_batches(&mut self) -> Vec<Vec<usize>> {
        let mut order = self.train_idx.clone();
        order.shuffle(&mut self.rng);
        order
            .chunks_exact(self.config.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    fn run_epoch(&mut self, phase: Phase, hooks: &mut dyn TrainHooks) -> Result<Control> {
        let batches = self.epoch_batches();
        let mut sum = LossBreakdown::default();
        for batch in &batches {
            let report = self.train_step(batch, phase == Phase::Train, phase)?;
            sum.instance_term += report.loss.instance_term;
            sum.cluster_term += report.loss.cluster_term;
            sum.entropy_term += report.loss.entropy_term;
            sum.total += report.loss.total;
            if hooks.on_step(self, &report) == Control::Stop {
                return Ok(Control::Stop);
            }
        }
        let k = batches.len().max(1) as f64;
        let summary = EpochSummary {
            epoch: self.epoch,
            phase,
            mean_loss: LossBreakdown {
                instance_term: sum.instance_term / k,
                cluster_term: sum.cluster_term / k,
                entropy_term: sum.entropy_term / k,
                total: sum.total / k,
            },
            spent: self.budget.spent,
            answers: self.store.answer_count(),
        };
        self.epoch += 1;
        Ok(hooks.on_epoch(self, &summary))
    }

    /// Pre-training epochs without active selection.
    pub fn pretrain(&mut self, hooks: &mut dyn TrainHooks) -> Result<Control> {
        hooks.on_phase(self, Phase::Pretrain);
        for _ in 0..self.config.pretrain_epochs {
            if self.run_epoch(Phase::Pretrain, hooks)? == Control::Stop {
                return Ok(Control::Stop);
            }
        }
        Ok(Control::Continue)
    }

    /// Seeds, pre-trains, trains for `epochs` and evaluates.
    pub fn run(&mut self, hooks: &mut dyn TrainHooks) -> Result<RunSummary> {
        self.seed_constraints()?;
        let mut stopped = self.pretrain(hooks)? == Control::Stop;
        if !stopped {
            hooks.on_phase(self, Phase::Train);
            for _ in 0..self.config.epochs {
                if self.run_epoch(Phase::Train, hooks)? == Control::Stop {
                    stopped = true;
                    break;
                }
            }
        }
        // answers that arrived after the last batch still belong to the run
        self.drain_inbox();
        let mut summary = self.summarize()?;
        summary.stopped_early = stopped;
        Ok(summary)
    }

    /// Hard assignments for every sample, computed in chunks of `2N` rows.
    pub fn assignments(&self) -> Result<Vec<usize>> {
        Ok(self.encoder.assign(&self.features, 2 * self.config.batch_size)?.0)
    }

    /// Feature rows `Z` for every sample.
    pub fn embeddings(&self) -> Result<Matrix> {
        Ok(self.encoder.assign(&self.features, 2 * self.config.batch_size)?.1)
    }

    pub fn summarize(&self) -> Result<RunSummary> {
        let assignments = self.assignments()?;
        let report_for = |idx: &[usize]| -> Result<MetricsReport> {
            let mut report = MetricsReport::new();
            let pred: Vec<usize> = idx.iter().map(|&i| assignments[i]).collect();
            for (name, labels) in &self.labels {
                let truth: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                report.insert(name.clone(), &pred, &truth)?;
            }
            Ok(report)
        };
        let metrics = report_for(&self.train_idx)?;
        let holdout_metrics = if self.holdout_idx.is_empty() {
            None
        } else {
            Some(report_for(&self.holdout_idx)?)
        };
        Ok(RunSummary {
            metrics,
            holdout_metrics,
            assignments,
            spent: self.budget.spent,
            answers: self.store.answer_count(),
            steps: self.step,
            stopped_early: false,
        })
    }
}

pub fn dataset_labels(dataset: &Dataset) -> Result<BTreeMap<String, Vec<usize>>> {
    dataset
        .orientations()
        .into_iter()
        .map(|o| Ok((o.clone(), dataset.labels(&o)?)))
        .collect()
}
