//! Synthetic patient simulator and simulated-clinician behavior policy.
//!
//! A three-compartment pharmacokinetic model with an effect-site compartment
//! feeds a sigmoid pharmacodynamic response that depresses mean arterial
//! pressure. A PI controller with a coarse adjustment period plays the role
//! of the clinician whose dosing the offline datasets record.

mod behavior;
mod generate;
mod patient;
mod pk;
mod rollout;

pub use behavior::{behavior_policy_step, BehaviorPolicyParams, BehaviorState};
pub use generate::{generate_dataset, GenerateConfig};
pub use patient::{PatientParams, PdParams, PkRates, PopulationConfig};
pub use pk::{pd_map, pk_step, PkState, MAP_FLOOR_MMHG};
pub use rollout::{rollout_policy, RolloutOutcome};
