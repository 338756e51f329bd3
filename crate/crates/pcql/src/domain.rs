//! Shared domain types: observations, actions, transitions, episodes,
//! datasets, and normalization metadata.
//!
//! The flattened 19-feature ordering defined by [`FEATURE_NAMES`] is a
//! versioned contract: checkpoints, processed episode files, and attribution
//! indices all depend on it, and any change must bump [`SCHEMA_VERSION`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version of the flattened-observation and file schemas.
pub const SCHEMA_VERSION: u32 = 1;

/// Number of variables in the flattened observation.
pub const OBS_DIM: usize = 19;

/// Canonical feature ordering for the flattened observation.
pub const FEATURE_NAMES: [&str; OBS_DIM] = [
    "age",
    "sex",
    "height",
    "weight",
    "bmi",
    "asa",
    "map",
    "ap_sys",
    "ap_dia",
    "map_prev1",
    "ap_sys_prev1",
    "ap_dia_prev1",
    "map_prev2",
    "ap_sys_prev2",
    "ap_dia_prev2",
    "remifentanil",
    "map_target",
    "map_target_error",
    "map_change",
];

/// Static patient descriptors observed once per surgery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClinicalInfo {
    /// Age in years.
    pub age: f64,
    /// Binary sex code, 0 or 1.
    pub sex: u8,
    /// Height in cm.
    pub height: f64,
    /// Weight in kg.
    pub weight: f64,
    /// Body mass index in kg/m².
    pub bmi: f64,
    /// ASA physical-status grade, 1..=6.
    pub asa_grade: u8,
}

impl ClinicalInfo {
    pub fn validate(&self) -> Result<()> {
        if !(self.age > 0.0) {
            return Err(Error::Domain(format!("age must be positive, got {}", self.age)));
        }
        if self.sex > 1 {
            return Err(Error::Domain(format!("sex must be 0 or 1, got {}", self.sex)));
        }
        if !(self.height > 0.0) {
            return Err(Error::Domain(format!("height must be positive, got {}", self.height)));
        }
        if !(self.weight > 0.0) {
            return Err(Error::Domain(format!("weight must be positive, got {}", self.weight)));
        }
        let expected_bmi = self.weight / (self.height / 100.0).powi(2);
        if (self.bmi - expected_bmi).abs() > 0.5 {
            return Err(Error::Domain(format!(
                "bmi {} inconsistent with height/weight (expected {expected_bmi:.2})",
                self.bmi
            )));
        }
        if !(1..=6).contains(&self.asa_grade) {
            return Err(Error::Domain(format!("asa grade must be 1..=6, got {}", self.asa_grade)));
        }
        Ok(())
    }
}

/// One time-stamped arterial-pressure reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VitalsFrame {
    /// Systolic arterial pressure, mmHg.
    pub ap_sys: f64,
    /// Diastolic arterial pressure, mmHg.
    pub ap_dia: f64,
    /// Mean arterial pressure, mmHg.
    pub map: f64,
    /// Step index within the surgery (one step per sampling interval).
    pub timestamp_index: u64,
}

impl VitalsFrame {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("ap_sys", self.ap_sys), ("ap_dia", self.ap_dia), ("map", self.map)] {
            if !(v > 0.0 && v < 300.0) {
                return Err(Error::Domain(format!("{name} must be in (0, 300), got {v}")));
            }
        }
        if !(self.ap_dia <= self.map && self.map <= self.ap_sys) {
            return Err(Error::Domain(format!(
                "pressure ordering violated: dia {} <= map {} <= sys {}",
                self.ap_dia, self.map, self.ap_sys
            )));
        }
        Ok(())
    }

    pub fn pressures(&self) -> PressureTriple {
        PressureTriple { map: self.map, ap_sys: self.ap_sys, ap_dia: self.ap_dia }
    }
}

/// The three pressures carried inside an observation (no timestamp).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureTriple {
    pub map: f64,
    pub ap_sys: f64,
    pub ap_dia: f64,
}

/// The 19-variable agent observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationState {
    pub clinical: ClinicalInfo,
    pub vitals_now: PressureTriple,
    pub vitals_prev1: PressureTriple,
    pub vitals_prev2: PressureTriple,
    /// Remifentanil infusion rate, µg/kg/min.
    pub remifentanil: f64,
    /// Per-surgery MAP setpoint, mmHg.
    pub map_target: f64,
    /// Current MAP minus the target, mmHg (signed).
    pub map_target_error: f64,
    /// Current MAP minus the previous MAP, mmHg (signed).
    pub map_change: f64,
}

impl ObservationState {
    /// Builds an observation with the derived error/change features filled in
    /// from their definitions.
    pub fn new(
        clinical: ClinicalInfo,
        vitals_now: PressureTriple,
        vitals_prev1: PressureTriple,
        vitals_prev2: PressureTriple,
        remifentanil: f64,
        map_target: f64,
    ) -> Self {
        Self {
            clinical,
            vitals_now,
            vitals_prev1,
            vitals_prev2,
            remifentanil,
            map_target,
            map_target_error: vitals_now.map - map_target,
            map_change: vitals_now.map - vitals_prev1.map,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.clinical.validate()?;
        if self.remifentanil < 0.0 {
            return Err(Error::Domain(format!(
                "remifentanil must be nonnegative, got {}",
                self.remifentanil
            )));
        }
        let err = self.vitals_now.map - self.map_target;
        if (self.map_target_error - err).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "map_target_error {} does not equal map - map_target = {err}",
                self.map_target_error
            )));
        }
        let change = self.vitals_now.map - self.vitals_prev1.map;
        if (self.map_change - change).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "map_change {} does not equal map - prev map = {change}",
                self.map_change
            )));
        }
        Ok(())
    }
}

/// Flattens an observation into the canonical 19-feature vector.
pub fn flatten_observation(obs: &ObservationState) -> [f64; OBS_DIM] {
    [
        obs.clinical.age,
        obs.clinical.sex as f64,
        obs.clinical.height,
        obs.clinical.weight,
        obs.clinical.bmi,
        obs.clinical.asa_grade as f64,
        obs.vitals_now.map,
        obs.vitals_now.ap_sys,
        obs.vitals_now.ap_dia,
        obs.vitals_prev1.map,
        obs.vitals_prev1.ap_sys,
        obs.vitals_prev1.ap_dia,
        obs.vitals_prev2.map,
        obs.vitals_prev2.ap_sys,
        obs.vitals_prev2.ap_dia,
        obs.remifentanil,
        obs.map_target,
        obs.map_target_error,
        obs.map_change,
    ]
}

/// Inverse of [`flatten_observation`].
pub fn unflatten_observation(vec: &[f64]) -> Result<ObservationState> {
    if vec.len() != OBS_DIM {
        return Err(Error::Schema(format!(
            "expected {OBS_DIM} features, got {}",
            vec.len()
        )));
    }
    let sex = vec[1];
    let asa = vec[5];
    if sex != 0.0 && sex != 1.0 {
        return Err(Error::Schema(format!("sex slot must be 0 or 1, got {sex}")));
    }
    if asa.fract() != 0.0 || !(1.0..=6.0).contains(&asa) {
        return Err(Error::Schema(format!("asa slot must be an integer in 1..=6, got {asa}")));
    }
    Ok(ObservationState {
        clinical: ClinicalInfo {
            age: vec[0],
            sex: sex as u8,
            height: vec[2],
            weight: vec[3],
            bmi: vec[4],
            asa_grade: asa as u8,
        },
        vitals_now: PressureTriple { map: vec[6], ap_sys: vec[7], ap_dia: vec[8] },
        vitals_prev1: PressureTriple { map: vec[9], ap_sys: vec[10], ap_dia: vec[11] },
        vitals_prev2: PressureTriple { map: vec[12], ap_sys: vec[13], ap_dia: vec[14] },
        remifentanil: vec[15],
        map_target: vec[16],
        map_target_error: vec[17],
        map_change: vec[18],
    })
}

/// Maximum-normalized propofol dose.
///
/// Construction rejects out-of-range values; clamping is never applied
/// silently here. The explicit clamp lives with the actor's sampling code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    normalized_dose: f64,
}

impl Action {
    pub fn new(normalized_dose: f64) -> Result<Self> {
        if !normalized_dose.is_finite() || !(0.0..=1.0).contains(&normalized_dose) {
            return Err(Error::Domain(format!(
                "normalized dose must be in [0, 1], got {normalized_dose}"
            )));
        }
        Ok(Self { normalized_dose })
    }

    pub fn normalized(&self) -> f64 {
        self.normalized_dose
    }

    /// Physical infusion rate in mg/kg/h given the dataset's dose ceiling.
    pub fn physical_dose(&self, p_max: f64) -> f64 {
        self.normalized_dose * p_max
    }
}

/// One reward-labeled MDP sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: ObservationState,
    pub action: Action,
    pub reward: f64,
    pub next_state: ObservationState,
    pub terminal: bool,
}

/// All transitions of one surgery, in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub transitions: Vec<Transition>,
    /// Retrospective per-surgery MAP setpoint, mmHg.
    pub map_target: f64,
}

impl Episode {
    pub fn validate(&self) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::Domain(format!("episode {} has no transitions", self.episode_id)));
        }
        for tr in &self.transitions {
            if (tr.state.map_target - self.map_target).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "episode {}: transition map_target {} differs from episode target {}",
                    self.episode_id, tr.state.map_target, self.map_target
                )));
            }
        }
        let terminal_count = self.transitions.iter().filter(|t| t.terminal).count();
        if terminal_count != 1 || !self.transitions.last().unwrap().terminal {
            return Err(Error::Domain(format!(
                "episode {}: exactly the final transition must be terminal",
                self.episode_id
            )));
        }
        Ok(())
    }
}

/// Which split a processed dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitTag::Train => write!(f, "train"),
            SplitTag::Valid => write!(f, "valid"),
            SplitTag::Test => write!(f, "test"),
        }
    }
}

/// Dataset-level normalization metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Maximum physical propofol dose in the (training) dataset, mg/kg/h.
    pub p_max: f64,
    pub feature_means: Vec<f64>,
    /// Per-feature standard deviations; zero-variance features carry 1.0.
    pub feature_stds: Vec<f64>,
    pub split_tag: SplitTag,
    pub schema_version: u32,
}

impl DatasetMeta {
    pub fn validate(&self) -> Result<()> {
        if self.feature_means.len() != OBS_DIM || self.feature_stds.len() != OBS_DIM {
            return Err(Error::Schema(format!(
                "meta vectors must have length {OBS_DIM}, got {}/{}",
                self.feature_means.len(),
                self.feature_stds.len()
            )));
        }
        if !(self.p_max > 0.0) {
            return Err(Error::Domain(format!("p_max must be positive, got {}", self.p_max)));
        }
        if self.feature_stds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Domain("feature_stds must be strictly positive".into()));
        }
        Ok(())
    }
}

/// Standardizes a flattened observation with the dataset statistics.
pub fn standardize(vec: &[f64], meta: &DatasetMeta) -> Result<Vec<f64>> {
    if vec.len() != OBS_DIM {
        return Err(Error::Schema(format!("expected {OBS_DIM} features, got {}", vec.len())));
    }
    Ok(vec
        .iter()
        .zip(meta.feature_means.iter().zip(&meta.feature_stds))
        .map(|(v, (m, s))| (v - m) / s)
        .collect())
}

/// Inverse of [`standardize`].
pub fn destandardize(vec: &[f64], meta: &DatasetMeta) -> Result<Vec<f64>> {
    if vec.len() != OBS_DIM {
        return Err(Error::Schema(format!("expected {OBS_DIM} features, got {}", vec.len())));
    }
    Ok(vec
        .iter()
        .zip(meta.feature_means.iter().zip(&meta.feature_stds))
        .map(|(v, (m, s))| v * s + m)
        .collect())
}

/// A collection of episodes with shared normalization metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineDataset {
    pub episodes: Vec<Episode>,
    pub meta: DatasetMeta,
}

impl OfflineDataset {
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for ep in &self.episodes {
            ep.validate()?;
            if !seen.insert(ep.episode_id.as_str()) {
                return Err(Error::Data(format!("duplicate episode id {}", ep.episode_id)));
            }
            for tr in &ep.transitions {
                if tr.action.physical_dose(self.meta.p_max) > self.meta.p_max + 1e-9 {
                    return Err(Error::Data(format!(
                        "episode {}: dose exceeds p_max",
                        ep.episode_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.transitions.len()).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flat_map(|e| e.transitions.iter())
    }
}
