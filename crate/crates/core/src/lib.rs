//! Q(sigma, lambda) temporal-difference learning.
//!
//! `mdp` holds tabular models and exact solvers, `operators` the mixed-sampling
//! operators and their iterations, `td` the on-line tabular learner, `linear`
//! tile coding with the linear learner, `envs` the benchmark environments and
//! `experiments` the seeded experiment drivers and randomized checks.

pub mod envs;
pub mod error;
pub mod experiments;
pub mod linear;
pub mod mdp;
pub mod operators;
pub mod td;

pub use envs::{EnvId, EpisodicEnv};
pub use error::{Error, Result};
pub use linear::{LinearConfig, LinearLearner, TileCoder};
pub use mdp::{QTable, StochasticPolicy, TabularMdp};
pub use operators::MixedOpParams;
pub use td::{LearnerConfig, StepSize, TabularLearner, TraceKind};
