//! Training flags shared by `train` and `budget-sweep`.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use orient_core::query::Strategy;
use orient_core::trainer::PseudoLinkConfig;
use orient_core::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Library defaults.
    #[default]
    Default,
    /// Settings that steer the synthetic benchmarks: 60 epochs after 20 of
    /// pre-training, batch 64, high-confidence must-link propagation.
    Calibrated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn enabled(self) -> bool {
        self == Switch::On
    }
}

/// Parses a strategy name for clap.
pub fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: orient_core::Error| e.to_string())
}

/// The calibrated configuration behind [`Preset::Calibrated`].
pub fn calibrated() -> TrainConfig {
    let mut c = TrainConfig {
        epochs: 60,
        pretrain_epochs: 20,
        batch_size: 64,
        learning_rate: 1e-3,
        pseudo_links: Some(PseudoLinkConfig {
            threshold: 0.9,
            max_new: 10,
            every_epochs: 1,
        }),
        ..TrainConfig::default()
    };
    c.loss.tau = 0.5;
    c.loss.lambda = 4.0;
    c.model.attention_enabled = true;
    c
}

#[derive(Args, Clone, Debug, Default, PartialEq)]
pub struct TrainOpts {
    /// Starting point before the flags below are applied.
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    /// JSON training config used instead of the preset.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Label set the oracle answers from and metrics focus on.
    #[arg(long)]
    pub orientation: Option<String>,
    /// Total query budget Q.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Random queries Q1 asked before pre-training (default Q/5).
    #[arg(long)]
    pub initial_random: Option<usize>,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Must-link weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Similarity the uncertainty score centres on.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Instance-level temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub attention: Option<Switch>,
    /// Fraction of samples held out from training and queries.
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long, value_enum)]
    pub pseudo_links: Option<Switch>,
    /// Cosine similarity above which a pair becomes a pseudo must-link.
    #[arg(long)]
    pub pseudo_threshold: Option<f64>,
    #[arg(long)]
    pub pseudo_max: Option<usize>,
    #[arg(long)]
    pub pseudo_every: Option<usize>,
}

impl TrainOpts {
    /// Resolves preset, config file and flags into one validated config.
    pub fn resolve(&self) -> CliResult<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
            }
            None => match self.preset {
                Preset::Default => TrainConfig::default(),
                Preset::Calibrated => calibrated(),
            },
        };
        if let Some(o) = &self.orientation {
            c.orientation = o.clone();
        }
        if let Some(q) = self.budget {
            c.query.total_budget = q;
            c.query.initial_random = q / 5;
        }
        if let Some(q1) = self.initial_random {
            c.query.initial_random = q1;
        }
        if let Some(s) = self.strategy {
            c.query.strategy = s;
        }
        if let Some(e) = self.epsilon {
            c.query.epsilon = e;
        }
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        if let Some(e) = self.pretrain_epochs {
            c.pretrain_epochs = e;
        }
        if let Some(b) = self.batch {
            c.batch_size = b;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(l) = self.lambda {
            c.loss.lambda = l;
        }
        if let Some(t) = self.tau {
            c.loss.tau = t;
        }
        if let Some(lr) = self.lr {
            c.learning_rate = lr;
        }
        if let Some(a) = self.attention {
            c.model.attention_enabled = a.enabled();
        }
        if let Some(h) = self.holdout {
            c.holdout_fraction = (h > 0.0).then_some(h);
        }
        match self.pseudo_links {
            Some(Switch::Off) => c.pseudo_links = None,
            Some(Switch::On) if c.pseudo_links.is_none() => c.pseudo_links = Some(PseudoLinkConfig::default()),
            _ => {}
        }
        let tweaks = self.pseudo_threshold.is_some() || self.pseudo_max.is_some() || self.pseudo_every.is_some();
        if tweaks {
            let p = c
                .pseudo_links
                .as_mut()
                .ok_or_else(|| CliError::Validation("pseudo-link settings given but pseudo links are off".into()))?;
            if let Some(t) = self.pseudo_threshold {
                p.threshold = t;
            }
            if let Some(m) = self.pseudo_max {
                p.max_new = m;
            }
            if let Some(e) = self.pseudo_every {
                p.every_epochs = e;
            }
        }
        c.validate()?;
        Ok(c)
    }
}
