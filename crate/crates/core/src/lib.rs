//! Active constrained contrastive clustering.
//!
//! A small encoder maps vectors to a feature matrix `Z` and a soft
//! assignment matrix `P`. Training minimizes a contrastive loss whose
//! positives and negatives are reshaped by must-link and cannot-link answers
//! from an oracle, and the trainer picks which pair to ask about next. The
//! result is a clustering that follows the oracle's notion of similarity
//! rather than whatever split the data favours on its own.
//!
//! The crate is organised bottom-up: [`numerics`] (matrices and reverse-mode
//! gradients), [`model`], [`constraints`], [`loss`], [`query`], [`oracle`],
//! [`trainer`], plus [`metrics`], [`data`] generators and the [`theory`]
//! harness.

pub mod constraints;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod query;
pub mod theory;
pub mod trainer;

pub use constraints::{AnswerRecord, ConstraintInbox, ConstraintSource, ConstraintStore, IndicatorViews, Link};
pub use data::{Dataset, DatasetRecord, GeneratorConfig};
pub use error::{Error, Result};
pub use loss::{LossBreakdown, LossConfig};
pub use metrics::{MetricsReport, OrientationMetrics};
pub use model::{Checkpoint, Encoder, EncoderConfig};
pub use numerics::Matrix;
pub use oracle::{Oracle, OracleReply};
pub use query::{QueryBudget, QueryConfig, QueryDecision, Strategy};
pub use trainer::{Session, StepReport, TrainConfig};
