//! Surprise adequacy over precomputed activation traces.
//!
//! * [`trace`]: the trace-set data model, loading and class partitions.
//! * [`kde`]: Gaussian KDE used by likelihood-based surprise.
//! * [`surprise`]: LSA and DSA scoring with a prepare/calculate lifecycle.
//! * [`sampling`]: training-set reduction (uniform, unsurprising-first,
//!   epsilon-neighbor-free).
//! * [`eval`]: AUC-ROC, replica statistics, synthetic datasets and sweeps.
//! * [`bench`]: timing harness for the scoring paths.

pub mod bench;
pub mod cache;
pub mod distance;
pub mod error;
pub mod eval;
pub mod io;
pub mod kde;
pub mod sampling;
pub mod surprise;
pub mod trace;

pub use error::{Result, SaError};
pub use kde::{fit_kde, BandwidthRule, KdeConfig, KdeModel};
pub use surprise::{
    dsa_scores, dsa_scores_naive, lsa_scores, Method, SaConfig, SurpriseAdequacy, SurpriseScores,
};
pub use trace::{Fingerprint, SampleSelection, Strategy, TraceSet};
