//! Synthetic raw-dataset generation: closed-loop simulation of the patient
//! model under the simulated-clinician controller, emitted in the raw CSV
//! schema (including injected missingness and non-retainable surgeries so the
//! ingestion filters have realistic work to do).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AnestheticType, ClinicalRecord, RawRow, RawSurgery};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::simenv::behavior::{behavior_policy_step, BehaviorPolicyParams, BehaviorState};
use crate::simenv::patient::PopulationConfig;
use crate::simenv::pk::{pd_map, pk_step, PkState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub n_surgeries: usize,
    /// Minimum/maximum number of dosing steps per surgery (uniform).
    pub duration_min_steps: u64,
    pub duration_max_steps: u64,
    pub seed: u64,
    pub population: PopulationConfig,
    pub behavior: BehaviorPolicyParams,
    /// Per-cell probability of blanking a vitals value.
    pub missing_cell_prob: f64,
    /// Fraction of surgeries labeled as inhaled anesthesia.
    pub inhaled_fraction: f64,
    /// Fraction of surgeries with a propofol cell blanked mid-surgery.
    pub missing_dose_fraction: f64,
    /// Steps between remifentanil rate changes (piecewise constant).
    pub remi_hold_steps: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n_surgeries: 40,
            duration_min_steps: 45,
            duration_max_steps: 180,
            seed: 0,
            population: PopulationConfig::default(),
            behavior: BehaviorPolicyParams::default(),
            missing_cell_prob: 0.01,
            inhaled_fraction: 0.05,
            missing_dose_fraction: 0.03,
            remi_hold_steps: 20,
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_surgeries == 0 {
            return Err(Error::Config("n_surgeries must be positive".into()));
        }
        if self.duration_min_steps < 2 || self.duration_min_steps > self.duration_max_steps {
            return Err(Error::Config(format!(
                "duration range [{}, {}] is invalid",
                self.duration_min_steps, self.duration_max_steps
            )));
        }
        for (name, v) in [
            ("missing_cell_prob", self.missing_cell_prob),
            ("inhaled_fraction", self.inhaled_fraction),
            ("missing_dose_fraction", self.missing_dose_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.remi_hold_steps == 0 {
            return Err(Error::Config("remi_hold_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Derives systolic/diastolic readings around a MAP value so the three
/// pressures keep their ordering.
fn pressures_around<R: Rng>(map: f64, rng: &mut R) -> (f64, f64) {
    let pulse_up: f64 = 25.0 + rng.gen_range(-4.0..4.0);
    let pulse_down: f64 = 13.0 + rng.gen_range(-3.0..3.0);
    (map + pulse_up.max(1.0), (map - pulse_down.max(1.0)).max(1.0))
}

fn simulate_surgery(index: usize, config: &GenerateConfig) -> RawSurgery {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(config.seed, &format!("surgery-{index}")));
    let patient = config.population.sample(&mut rng);
    let steps = rng.gen_range(config.duration_min_steps..=config.duration_max_steps);
    let inhaled = rng.gen_bool(config.inhaled_fraction);
    let drop_dose = rng.gen_bool(config.missing_dose_fraction);
    let drop_dose_at = if drop_dose && steps > 2 { Some(rng.gen_range(1..steps)) } else { None };

    let mut pk = PkState::default();
    let mut ctl = BehaviorState::default();
    let mut remi = 0.0;
    let mut rows = Vec::with_capacity(steps as usize + 1);
    for t in 0..=steps {
        if t % config.remi_hold_steps == 0 {
            remi = rng.gen_range(0.0..0.3);
        }
        let map = pd_map(pk.ce, remi, &patient, &mut rng);
        let (ap_sys, ap_dia) = pressures_around(map, &mut rng);

        let dose = if t < steps {
            let (dose, next_ctl) = behavior_policy_step(map, ctl, &config.behavior, &mut rng);
            ctl = next_ctl;
            // mg/kg/h -> mg/min for the kinetics step
            let infusion = dose * patient.clinical.weight / 60.0;
            pk = pk_step(pk, infusion, &patient, 1.0).expect("finite simulation step").0;
            Some(dose)
        } else {
            None
        };

        let blank = |rng: &mut ChaCha20Rng| rng.gen_bool(config.missing_cell_prob);
        rows.push(RawRow {
            t,
            ap_sys: (!blank(&mut rng)).then_some(ap_sys),
            ap_dia: (!blank(&mut rng)).then_some(ap_dia),
            map: (!blank(&mut rng)).then_some(map),
            propofol: if Some(t) == drop_dose_at { None } else { dose },
            remifentanil: (!blank(&mut rng)).then_some(remi),
        });
    }

    let c = patient.clinical;
    RawSurgery {
        surgery_id: format!("s{index:04}"),
        rows,
        clinical: ClinicalRecord {
            age: Some(c.age),
            sex: Some(c.sex),
            height: Some(c.height),
            weight: Some(c.weight),
            // bmi occasionally absent; ingestion recomputes it
            bmi: (!rng.gen_bool(0.1)).then_some(c.bmi),
            asa: Some(c.asa_grade),
        },
        anesthetic_type: if inhaled { AnestheticType::Inhaled } else { AnestheticType::Propofol },
    }
}

/// Simulates `n_surgeries` independent surgeries. Fully determined by the
/// config (each surgery has its own derived seed).
pub fn generate_dataset(config: &GenerateConfig) -> Result<Vec<RawSurgery>> {
    config.validate()?;
    Ok((0..config.n_surgeries).map(|i| simulate_surgery(i, config)).collect())
}
