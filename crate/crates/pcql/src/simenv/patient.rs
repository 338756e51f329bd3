//! Per-patient parameters and the population distribution they are sampled
//! from. Defaults are desk-scale tuning knobs, not validated clinical
//! parameter sets.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::ClinicalInfo;
use crate::error::{Error, Result};

/// First-order transfer rates of the mammillary model, 1/min.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkRates {
    pub k10: f64,
    pub k12: f64,
    pub k21: f64,
    pub k13: f64,
    pub k31: f64,
    pub ke0: f64,
}

/// Sigmoid concentration-to-effect parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdParams {
    /// Maximum MAP depression, mmHg.
    pub emax: f64,
    /// Half-effect concentration, µg/mL.
    pub ec50: f64,
    /// Steepness exponent, >= 1.
    pub hill: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientParams {
    pub clinical: ClinicalInfo,
    pub baseline_map: f64,
    pub pk_rates: PkRates,
    /// Central compartment volume used to convert mass to concentration, L.
    pub v1_liters: f64,
    pub pd: PdParams,
    /// MAP observation noise, mmHg.
    pub noise_std: f64,
    /// Linear MAP depression per µg/kg/min of remifentanil.
    pub remi_sensitivity: f64,
}

impl PatientParams {
    pub fn validate(&self) -> Result<()> {
        self.clinical.validate()?;
        let r = &self.pk_rates;
        for (name, v) in [
            ("k10", r.k10),
            ("k12", r.k12),
            ("k21", r.k21),
            ("k13", r.k13),
            ("k31", r.k31),
            ("ke0", r.ke0),
        ] {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("rate {name} must be positive, got {v}")));
            }
        }
        if !(self.v1_liters > 0.0) {
            return Err(Error::Domain("v1 must be positive".into()));
        }
        if !(self.pd.emax > 0.0 && self.pd.emax < self.baseline_map) {
            return Err(Error::Domain(format!(
                "emax must be in (0, baseline_map), got {} vs {}",
                self.pd.emax, self.baseline_map
            )));
        }
        if self.pd.hill < 1.0 {
            return Err(Error::Domain(format!("hill must be >= 1, got {}", self.pd.hill)));
        }
        Ok(())
    }
}

/// Mean and spread per sampled patient field; the heterogeneity across
/// synthetic patients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub age_mean: f64,
    pub age_spread: f64,
    pub height_mean: f64,
    pub height_spread: f64,
    pub weight_mean: f64,
    pub weight_spread: f64,
    pub baseline_map_mean: f64,
    pub baseline_map_spread: f64,
    pub emax_mean: f64,
    pub emax_spread: f64,
    pub ec50_mean: f64,
    pub ec50_spread: f64,
    pub hill_mean: f64,
    pub hill_spread: f64,
    pub ke0_mean: f64,
    pub ke0_spread: f64,
    pub k10_mean: f64,
    pub k10_spread: f64,
    pub v1_mean: f64,
    pub v1_spread: f64,
    pub noise_std: f64,
    pub remi_sensitivity_mean: f64,
    pub remi_sensitivity_spread: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            age_mean: 50.0,
            age_spread: 15.0,
            height_mean: 167.0,
            height_spread: 9.0,
            weight_mean: 66.0,
            weight_spread: 11.0,
            baseline_map_mean: 95.0,
            baseline_map_spread: 8.0,
            emax_mean: 40.0,
            emax_spread: 6.0,
            ec50_mean: 2.5,
            ec50_spread: 0.4,
            hill_mean: 2.0,
            hill_spread: 0.25,
            ke0_mean: 0.46,
            ke0_spread: 0.08,
            k10_mean: 0.12,
            k10_spread: 0.02,
            v1_mean: 14.0,
            v1_spread: 2.0,
            noise_std: 2.0,
            remi_sensitivity_mean: 10.0,
            remi_sensitivity_spread: 3.0,
        }
    }
}

fn sample_clamped<R: Rng>(rng: &mut R, mean: f64, spread: f64, lo: f64, hi: f64) -> f64 {
    if spread <= 0.0 {
        return mean.clamp(lo, hi);
    }
    let v = Normal::new(mean, spread).unwrap().sample(rng);
    v.clamp(lo, hi)
}

impl PopulationConfig {
    /// Draws one heterogeneous patient from the population distribution.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> PatientParams {
        let age = sample_clamped(rng, self.age_mean, self.age_spread, 18.0, 90.0);
        let sex: u8 = if rng.gen_bool(0.5) { 1 } else { 0 };
        let height = sample_clamped(rng, self.height_mean, self.height_spread, 140.0, 200.0);
        let weight = sample_clamped(rng, self.weight_mean, self.weight_spread, 40.0, 120.0);
        let bmi = weight / (height / 100.0).powi(2);
        let asa_grade = *[1u8, 2, 2, 3].get(rng.gen_range(0..4)).unwrap();

        let baseline_map =
            sample_clamped(rng, self.baseline_map_mean, self.baseline_map_spread, 75.0, 120.0);
        let emax = sample_clamped(rng, self.emax_mean, self.emax_spread, 15.0, baseline_map - 30.0);
        let k10 = sample_clamped(rng, self.k10_mean, self.k10_spread, 0.05, 0.3);
        let params = PatientParams {
            clinical: ClinicalInfo { age, sex, height, weight, bmi, asa_grade },
            baseline_map,
            pk_rates: PkRates {
                k10,
                k12: 0.11,
                k21: 0.055,
                k13: 0.042,
                k31: 0.0033,
                ke0: sample_clamped(rng, self.ke0_mean, self.ke0_spread, 0.1, 1.0),
            },
            v1_liters: sample_clamped(rng, self.v1_mean, self.v1_spread, 6.0, 25.0),
            pd: PdParams {
                emax,
                ec50: sample_clamped(rng, self.ec50_mean, self.ec50_spread, 1.0, 5.0),
                hill: sample_clamped(rng, self.hill_mean, self.hill_spread, 1.0, 4.0),
            },
            noise_std: self.noise_std,
            remi_sensitivity: sample_clamped(
                rng,
                self.remi_sensitivity_mean,
                self.remi_sensitivity_spread,
                0.0,
                30.0,
            ),
        };
        debug_assert!(params.validate().is_ok());
        params
    }
}
