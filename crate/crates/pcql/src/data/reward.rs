//! The piecewise reward on MAP deviation plus a dose penalty.
//!
//! Band boundaries at 15% and 30% of the target are inclusive; at exactly
//! 15% deviation the higher reward wins.

use serde::{Deserialize, Serialize};

use crate::domain::Action;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParts {
    pub r_error: f64,
    pub r_dosage: f64,
    pub r_total: f64,
}

/// Evaluates the reward for an observed MAP against the per-surgery target
/// under the given (normalized) dose.
pub fn compute_reward(map: f64, map_star: f64, action: Action) -> Result<RewardParts> {
    if !(map_star > 0.0) {
        return Err(Error::Domain(format!("MAP target must be positive, got {map_star}")));
    }
    if !map.is_finite() {
        return Err(Error::Numeric(format!("nonfinite MAP {map}")));
    }
    let deviation = (map - map_star).abs();
    let r_error = if deviation <= 0.15 * map_star {
        1.0
    } else if deviation <= 0.30 * map_star {
        0.5
    } else {
        -1.0
    };
    let r_dosage = -(deviation / map_star) * action.normalized();
    Ok(RewardParts { r_error, r_dosage, r_total: r_error + r_dosage })
}
