//! Desk-scale ensemble-critic training: point-mass environment, replay,
//! squashed-Gaussian policy, critic ensembles with in-target minimization,
//! critic-selection strategies, and the tabular update rule.

pub mod config;
pub mod ensemble;
pub mod env;
pub mod metrics;
pub mod policy;
pub mod replay;
pub mod select;
pub mod tabular;
pub mod train;

pub use config::{RedqConfig, TrainConfig};
pub use ensemble::{
    bootstrap_target, compute_target, critic_update, policy_loss_and_grad, policy_update,
    target_polyak, CriticEnsemble,
};
pub use env::{toy_env_step, EnvConfig, PointMassEnv, PointState};
pub use policy::SquashedGaussianPolicy;
pub use replay::{Batch, ReplayBuffer, Transition};
pub use select::{select_critics, Selection, SelectionOutcome};
pub use tabular::TabularEnsemble;
pub use train::{train, BackwardCosts, RunLedger, RunResult};
