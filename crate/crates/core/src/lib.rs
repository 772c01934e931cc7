//! Variational Bayesian hidden Markov models with multivariate Gaussian
//! emissions, plus a maximum-likelihood Baum-Welch baseline.

pub mod baseline_em;
pub mod cli;
pub mod datagen;
pub mod elbo;
pub mod error;
pub mod forward_backward;
pub mod io;
pub mod linalg;
pub mod model;
pub mod posteriors;
pub mod sequence;
pub mod special;
pub mod trainer;
pub mod vb_updates;

pub use error::{Result, VbError};
pub use model::{GroundTruthHmm, HmmParams, MlHmm};
pub use posteriors::{DirichletRow, GaussWishart, HmmPosterior, HmmPriors};
pub use sequence::ObservationSequence;
pub use trainer::{fit, InitMethod, TrainConfig, TrainReport};
pub use vb_updates::InitialUpdateMode;
