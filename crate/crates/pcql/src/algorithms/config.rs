//! Training hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the latent constraint penalty is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiVariant {
    /// Temperature-scaled softmax cross entropy between latent projections.
    Latent,
    /// Euclidean distance between the reconstructed and proposed action.
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Discount factor, in (0, 1).
    pub gamma: f64,
    /// Conservative-penalty weight, >= 0.
    pub alpha_cql: f64,
    /// Softmax temperature for the latent penalty, > 0.
    pub tau_temp: f64,
    /// Weight of the constraint penalty in the actor objective, >= 0.
    pub phi_weight: f64,
    pub phi_variant: PhiVariant,
    /// Whether the actor's constraint penalty also updates h and g.
    pub phi_updates_constraint_nets: bool,
    /// Random actions per state (each for uniform and policy-noise draws)
    /// in the conservative term's log-sum-exp estimate.
    pub n_action_samples: usize,
    /// Std of the Gaussian noise around actor actions in that estimate.
    pub cql_action_noise_std: f64,
    /// Soft target-update rate, in (0, 1].
    pub target_update_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Learning rate of the environment-transition model h.
    pub lr_h: f64,
    /// Learning rate of the action-prediction model g.
    pub lr_g: f64,
    /// Hidden widths of actor and critics.
    pub hidden_actor_critic: Vec<usize>,
    /// Hidden widths of the h/g encoders (also the encoder output width).
    pub hidden_constraint: Vec<usize>,
    /// Latent projection dimension.
    pub d_proj: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha_cql: 5.0,
            tau_temp: 0.5,
            phi_weight: 1.0,
            phi_variant: PhiVariant::Latent,
            phi_updates_constraint_nets: false,
            n_action_samples: 10,
            cql_action_noise_std: 0.1,
            target_update_rate: 0.005,
            epochs: 200,
            batch_size: 256,
            lr_actor: 1e-4,
            lr_critic: 3e-4,
            lr_h: 1e-4,
            lr_g: 3e-4,
            hidden_actor_critic: vec![256, 256],
            hidden_constraint: vec![128, 128],
            d_proj: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1), got {}", self.gamma)));
        }
        if self.alpha_cql < 0.0 {
            return Err(Error::Config(format!("alpha_cql must be >= 0, got {}", self.alpha_cql)));
        }
        if !(self.tau_temp > 0.0) {
            return Err(Error::Config(format!("tau_temp must be > 0, got {}", self.tau_temp)));
        }
        if self.phi_weight < 0.0 {
            return Err(Error::Config(format!("phi_weight must be >= 0, got {}", self.phi_weight)));
        }
        if self.n_action_samples == 0 {
            return Err(Error::Config("n_action_samples must be >= 1".into()));
        }
        if self.cql_action_noise_std < 0.0 {
            return Err(Error::Config("cql_action_noise_std must be >= 0".into()));
        }
        if !(self.target_update_rate > 0.0 && self.target_update_rate <= 1.0) {
            return Err(Error::Config(format!(
                "target_update_rate must be in (0, 1], got {}",
                self.target_update_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        for (name, lr) in [
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("lr_h", self.lr_h),
            ("lr_g", self.lr_g),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {lr}")));
            }
        }
        if self.hidden_actor_critic.is_empty() || self.hidden_constraint.is_empty() {
            return Err(Error::Config("hidden widths must be nonempty".into()));
        }
        if self.hidden_actor_critic.contains(&0) || self.hidden_constraint.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.d_proj == 0 {
            return Err(Error::Config("d_proj must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn out_of_range_fields_are_rejected() {
        let base = TrainConfig::default();
        assert!(TrainConfig { gamma: 1.0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { gamma: 0.0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { alpha_cql: -0.1, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { tau_temp: 0.0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { n_action_samples: 0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { target_update_rate: 0.0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { target_update_rate: 1.5, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { lr_actor: 0.0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { hidden_constraint: vec![], ..base.clone() }.validate().is_err());
        assert!(TrainConfig { d_proj: 0, ..base }.validate().is_err());
    }
}
