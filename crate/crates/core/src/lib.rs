//! Log-linear models of user behavior with latent user groups.
//!
//! A [`ModelParams`] holds one log-linear weight vector per latent group and a
//! softmax prior over groups. Models are trained by MAP expectation
//! maximization ([`training::em_fit`]) with a truncated L-BFGS inner loop
//! ([`optimizer::minimize`]). At inference time an unseen user's group
//! membership is inferred online from their observed behavior
//! ([`PosteriorState`]), and predictions are mixed by that posterior.
//!
//! The evaluation protocol in [`eval`] replays each test user's history in
//! order, predicting each observation before revealing it to the posterior.

pub mod data;
pub mod error;
pub mod eval;
pub mod loglinear;
pub mod mixture;
pub mod optimizer;
pub mod training;

pub use data::{Dataset, SyntheticConfig, TaskKind, UserRecord};
pub use error::{Error, Result};
pub use eval::{EvalReport, PredictionRecord};
pub use loglinear::{Candidate, Stimulus, WeightVector};
pub use mixture::{ModelParams, Observation, PosteriorState};
pub use optimizer::OptimizerConfig;
pub use training::{Hyperparams, Responsibilities, TrainOutcome};
