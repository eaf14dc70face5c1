//! Utility learning from pairwise preferences and response-time strength
//! signals, with anchored Plackett–Luce ranking targets built per stratum.
//!
//! The crate covers synthetic data generation, ranking construction, a small
//! MLP utility model with AdamW, the loss family, evaluation metrics and an
//! experiment harness.

pub mod error;
pub mod harness;
pub mod learners;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod ranking;
pub mod synth;

pub use error::{Error, Result};
pub use learners::{fit, FitConfig, Fitted, LearnerKind};
pub use net::{AdamW, AdamWConfig, TrainConfig, UtilityNet};
pub use synth::{build_dataset, Comparison, Dataset, DatasetConfig, LabelerKind, Preference};
