//! Online learning in stochastic shortest-path problems.
//!
//! - [`model`]: finite SSP models, validation, sampling and generators.
//! - [`oracle`]: exact planning for ground-truth values and regret.
//! - [`visgo`]: optimistic value iteration on skewed empirical models.
//! - [`learner`]: the episodic learner driven by doubling triggers.
//! - [`param_free`]: the same learner with a doubling estimate of the bound.
//! - [`harness`]: seeded experiments, sweeps and their output files.

mod error;
pub mod harness;
pub mod learner;
pub mod model;
pub mod oracle;
pub mod param_free;
pub mod tables;
pub mod visgo;

pub use error::{HarnessError, LearnerError, ModelError, OracleError, VisgoError};
pub use learner::{EpisodeRecord, Learner, LearnerConfig, RunLog, RunStatus};
pub use model::{
    make_loop_chain, make_loop_chain_with_decoys, make_random_ssp, step, validate_mdp, Action,
    CostDistribution, CostPerturbation, MdpDocument, SspMdp, State, Violation,
};
pub use oracle::{optimal_values, policy_stats, OptimalSolution, PolicyStats};
pub use param_free::{run_parameter_free, ParamFreeConfig};
pub use tables::{QTable, ValueTable};
pub use visgo::{BonusMode, Counters, SkewedModel, VisgoOutcome, VisgoStatus};
