//! Simulated-clinician dosing: a PI controller that only adjusts every few
//! minutes, with an induction phase at the dose cap and multiplicative noise.
//!
//! Propofol lowers MAP, so MAP above target raises the dose.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorPolicyParams {
    /// Proportional gain, mg/kg/h per mmHg of error.
    pub kp: f64,
    /// Integral gain, mg/kg/h per mmHg·min.
    pub ki: f64,
    /// Multiplicative dose-noise fraction.
    pub dose_noise_std: f64,
    /// Steps between dose changes; the dose is held in between.
    pub adjustment_period: u64,
    /// MAP setpoint the simulated clinician steers toward, mmHg.
    pub target_map: f64,
    /// Steady infusion at zero error, mg/kg/h.
    pub maintenance_dose: f64,
    /// Maximum infusion, mg/kg/h.
    pub dose_cap: f64,
    /// Initial steps held at the dose cap (induction bolus analog).
    pub induction_steps: u64,
}

impl Default for BehaviorPolicyParams {
    fn default() -> Self {
        Self {
            kp: 0.10,
            ki: 0.004,
            dose_noise_std: 0.05,
            adjustment_period: 5,
            target_map: 78.0,
            maintenance_dose: 3.8,
            dose_cap: 10.0,
            induction_steps: 4,
        }
    }
}

/// Controller memory carried between steps.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BehaviorState {
    /// Accumulated MAP error, mmHg·min.
    pub integral_err: f64,
    /// Dose held from the last adjustment, mg/kg/h.
    pub held_dose: f64,
    pub step_index: u64,
}

/// One controller step: returns the commanded dose and the updated state.
pub fn behavior_policy_step<R: Rng>(
    map_now: f64,
    state: BehaviorState,
    params: &BehaviorPolicyParams,
    rng: &mut R,
) -> (f64, BehaviorState) {
    debug_assert!(map_now.is_finite());
    let error = map_now - params.target_map;
    let mut next = BehaviorState {
        integral_err: state.integral_err + error,
        held_dose: state.held_dose,
        step_index: state.step_index + 1,
    };

    let dose = if state.step_index < params.induction_steps {
        params.dose_cap
    } else if state.step_index % params.adjustment_period == 0 {
        let mut d = params.maintenance_dose + params.kp * error + params.ki * next.integral_err;
        if params.dose_noise_std > 0.0 {
            let factor = 1.0 + Normal::new(0.0, params.dose_noise_std).unwrap().sample(rng);
            d *= factor.max(0.0);
        }
        d.clamp(0.0, params.dose_cap)
    } else {
        state.held_dose
    };
    next.held_dose = dose;
    (dose, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn quiet() -> BehaviorPolicyParams {
        BehaviorPolicyParams { dose_noise_std: 0.0, induction_steps: 0, adjustment_period: 1, ..Default::default() }
    }

    #[test]
    fn zero_error_keeps_the_maintenance_dose() {
        let p = quiet();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let (dose, _) = behavior_policy_step(p.target_map, BehaviorState::default(), &p, &mut rng);
        assert!((dose - p.maintenance_dose).abs() < 1e-12);
    }

    #[test]
    fn map_above_target_does_not_decrease_the_dose() {
        let p = quiet();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let (base, _) = behavior_policy_step(p.target_map, BehaviorState::default(), &p, &mut rng);
        let (high, _) = behavior_policy_step(p.target_map + 20.0, BehaviorState::default(), &p, &mut rng);
        assert!(high >= base);
    }

    #[test]
    fn noiseless_steps_are_deterministic() {
        let p = quiet();
        let mut rng1 = ChaCha20Rng::seed_from_u64(1);
        let mut rng2 = ChaCha20Rng::seed_from_u64(2);
        let s = BehaviorState { integral_err: 3.0, held_dose: 4.0, step_index: 7 };
        let a = behavior_policy_step(85.0, s, &p, &mut rng1);
        let b = behavior_policy_step(85.0, s, &p, &mut rng2);
        assert_eq!(a, b);
    }

    #[test]
    fn dose_is_held_between_adjustment_periods() {
        let p = BehaviorPolicyParams { adjustment_period: 5, induction_steps: 0, dose_noise_std: 0.0, ..Default::default() };
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut state = BehaviorState::default();
        let mut doses = Vec::new();
        for _ in 0..10 {
            let (d, next) = behavior_policy_step(90.0, state, &p, &mut rng);
            doses.push(d);
            state = next;
        }
        // steps 1..4 hold the step-0 dose
        for t in 1..5 {
            assert_eq!(doses[t], doses[0]);
        }
        // the integral keeps accumulating, so the step-5 adjustment moves
        assert_ne!(doses[5], doses[0]);
    }

    #[test]
    fn induction_runs_at_the_cap_and_output_respects_bounds() {
        let p = BehaviorPolicyParams { induction_steps: 3, ..Default::default() };
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut state = BehaviorState::default();
        for t in 0..20 {
            let (d, next) = behavior_policy_step(60.0, state, &p, &mut rng);
            if t < 3 {
                assert_eq!(d, p.dose_cap);
            }
            assert!((0.0..=p.dose_cap).contains(&d));
            state = next;
        }
    }
}
