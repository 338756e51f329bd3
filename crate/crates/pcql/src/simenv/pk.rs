//! Three-compartment pharmacokinetics (explicit Euler) and the sigmoid
//! pharmacodynamic map from effect-site concentration to MAP depression.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::simenv::patient::PatientParams;

/// Lowest MAP the pharmacodynamic response will report.
pub const MAP_FLOOR_MMHG: f64 = 20.0;

/// Drug amounts in the central/fast/slow compartments (mg) and the
/// effect-site concentration (µg/mL).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PkState {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub ce: f64,
}

impl PkState {
    pub fn is_finite(&self) -> bool {
        self.c1.is_finite() && self.c2.is_finite() && self.c3.is_finite() && self.ce.is_finite()
    }
}

/// One explicit Euler step of the mammillary model. Outputs are clamped at
/// zero; the number of clamped components is returned as a stiffness guard.
pub fn pk_step(
    state: PkState,
    infusion_mg_per_min: f64,
    params: &PatientParams,
    dt_min: f64,
) -> Result<(PkState, u32)> {
    if !state.is_finite() || !infusion_mg_per_min.is_finite() {
        return Err(Error::Numeric("nonfinite pharmacokinetic input".into()));
    }
    if !(dt_min > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt_min}")));
    }
    if infusion_mg_per_min < 0.0 {
        return Err(Error::Domain(format!("infusion must be nonnegative, got {infusion_mg_per_min}")));
    }
    let r = &params.pk_rates;
    let c1 = state.c1
        + dt_min
            * (infusion_mg_per_min - (r.k10 + r.k12 + r.k13) * state.c1
                + r.k21 * state.c2
                + r.k31 * state.c3);
    let c2 = state.c2 + dt_min * (r.k12 * state.c1 - r.k21 * state.c2);
    let c3 = state.c3 + dt_min * (r.k13 * state.c1 - r.k31 * state.c3);
    let ce = state.ce + dt_min * r.ke0 * (state.c1 / params.v1_liters - state.ce);

    let mut clamped = 0;
    let mut clamp = |v: f64| {
        if v < 0.0 {
            clamped += 1;
            0.0
        } else {
            v
        }
    };
    let next = PkState { c1: clamp(c1), c2: clamp(c2), c3: clamp(c3), ce: clamp(ce) };
    Ok((next, clamped))
}

/// Sigmoid (Hill) concentration-to-effect map producing MAP, with a linear
/// remifentanil term and Gaussian observation noise, floored at
/// [`MAP_FLOOR_MMHG`].
pub fn pd_map<R: Rng>(
    ce: f64,
    remi_ug_kg_min: f64,
    params: &PatientParams,
    rng: &mut R,
) -> f64 {
    debug_assert!(ce >= 0.0);
    let pd = &params.pd;
    let effect = if ce > 0.0 {
        let cn = ce.powf(pd.hill);
        pd.emax * cn / (pd.ec50.powf(pd.hill) + cn)
    } else {
        0.0
    };
    let noise = if params.noise_std > 0.0 {
        Normal::new(0.0, params.noise_std).unwrap().sample(rng)
    } else {
        0.0
    };
    let map = params.baseline_map - effect - params.remi_sensitivity * remi_ug_kg_min + noise;
    map.max(MAP_FLOOR_MMHG)
}
