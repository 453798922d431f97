//! Multi-condition joint PLDA.
//!
//! The model explains an embedding as a speaker factor plus one tied latent
//! factor per nuisance condition plus Gaussian noise. Trials are scored with
//! a closed-form log-likelihood ratio that marginalizes over every
//! same/different assignment of the nuisance conditions.
//!
//! Modules:
//! - [`model`]: parameters, validation, stacked factor matrix, PLDA collapse.
//! - [`hypothesis`]: hypothesis enumeration, priors, tied/untied partitions.
//! - [`scoring`]: per-hypothesis factorizations and LLR computation.
//! - [`oracle`]: brute-force Gaussian reference implementations.
//! - [`synth`]: sampling from the generative model.
//! - [`eval`]: EER and the calibration identity.
//! - [`io`]: model, embedding, trial, prior and score file formats.

pub mod error;
pub mod eval;
pub mod hypothesis;
pub mod io;
pub mod model;
pub mod oracle;
pub mod scoring;
pub mod synth;

pub use error::{Error, Result};
pub use hypothesis::{HypothesisVector, Partition, PriorConfig};
pub use model::{ModelParams, StackedModel};
pub use scoring::{PosteriorMoments, ScoringSession};
