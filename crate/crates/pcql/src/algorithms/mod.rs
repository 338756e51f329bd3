//! Learning machinery: the actor-critic backbone with a conservative critic
//! penalty, the constraint networks and their auxiliary losses, the joint
//! training loop, and checkpointing.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod losses;
pub mod train;

pub use agent::{ConstraintHandle, ConstraintNet, OptimStates, PcqlAgent};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{PhiVariant, TrainConfig};
pub use losses::{
    actor_loss, compute_backup, constraint_cycle_loss, constraint_entropy_loss,
    cql_conservative_term, critic_td_loss, draw_cql_action_samples, phi_euclidean, phi_penalty,
    ActorLossParts, Batch, CqlActionSamples,
};
pub use train::{train_pcql, EpochRecord, StepRecord, TrainingLog};
