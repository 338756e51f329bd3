//! Surgery admission rules applied before imputation.
//!
//! A surgery is rejected if it matches any of, checked in order:
//! i) no dosing information at all; ii) too short; iii) severe missing
//! vital-sign records; iv) inhaled anesthesia instead of propofol.

use serde::{Deserialize, Serialize};

use crate::data::raw::{AnestheticType, RawSurgery};
use crate::error::{Error, Result};

/// Per-rule rejection counts for one filtering pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub missing_dosing: usize,
    pub too_short: usize,
    pub severe_missing_vitals: usize,
    pub inhaled: usize,
    pub retained: usize,
}

impl FilterReport {
    pub fn rejected(&self) -> usize {
        self.missing_dosing + self.too_short + self.severe_missing_vitals + self.inhaled
    }
}

fn missing_vitals_fraction(surgery: &RawSurgery) -> f64 {
    let total = surgery.rows.len() * 3;
    if total == 0 {
        return 1.0;
    }
    let missing: usize = surgery
        .rows
        .iter()
        .map(|r| {
            [r.ap_sys, r.ap_dia, r.map].iter().filter(|v| v.is_none()).count()
        })
        .sum();
    missing as f64 / total as f64
}

fn has_dosing_info(surgery: &RawSurgery) -> bool {
    let steps = surgery.duration_steps();
    surgery.rows[..steps].iter().any(|r| r.propofol.is_some())
}

/// Applies the four admission rules, returning the retained surgeries and a
/// per-rule rejection report.
pub fn filter_surgeries(
    raw: Vec<RawSurgery>,
    min_duration_steps: usize,
    max_missing_fraction: f64,
) -> Result<(Vec<RawSurgery>, FilterReport)> {
    if min_duration_steps < 1 {
        return Err(Error::Config("min_duration_steps must be >= 1".into()));
    }
    if !(max_missing_fraction > 0.0 && max_missing_fraction < 1.0) {
        return Err(Error::Config(format!(
            "max_missing_fraction must be in (0, 1), got {max_missing_fraction}"
        )));
    }
    let mut report = FilterReport::default();
    let mut retained = Vec::new();
    for surgery in raw {
        if surgery.rows.is_empty() || !has_dosing_info(&surgery) {
            report.missing_dosing += 1;
        } else if surgery.duration_steps() < min_duration_steps {
            report.too_short += 1;
        } else if missing_vitals_fraction(&surgery) > max_missing_fraction {
            report.severe_missing_vitals += 1;
        } else if surgery.anesthetic_type == AnestheticType::Inhaled {
            report.inhaled += 1;
        } else {
            retained.push(surgery);
        }
    }
    report.retained = retained.len();
    Ok((retained, report))
}
