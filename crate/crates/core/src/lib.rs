//! Risk prediction over longitudinal medical event streams.
//!
//! The crate covers the whole modelling path:
//!
//! * [`data`]: patients, events, vocabularies and their JSON-lines / text formats
//! * [`synth`]: a seeded generator of synthetic event corpora with planted structure
//! * [`embedding`]: CBOW event embeddings trained with negative sampling
//! * [`cohort`]: case/control extraction, matching, hold-off and splitting
//! * [`representations`]: fixed-length bag-of-words and aggregated-embedding features
//! * [`nn`]: the one-layer temporal CNN, AdaDelta and gradient checking
//! * [`baselines`]: L2 logistic regression, linear SVM and a random forest
//! * [`metrics`]: accuracy, AUROC, AUPRC and max F1
//!
//! Everything that draws random numbers takes an explicit seed and uses
//! [`rng::SeededRng`], so identical seeds reproduce identical outputs.

pub mod baselines;
pub mod cohort;
pub mod data;
pub mod embedding;
mod error;
pub mod metrics;
pub mod nn;
pub mod representations;
pub mod rng;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
