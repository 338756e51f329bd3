//! Per-surgery k-NN imputation of missing vitals and dose cells.
//!
//! Distances are Euclidean over the standardized features the two rows share
//! (timestamp included as a feature); the imputed value is the mean of the k
//! nearest rows where the target column is present. The final row's propofol
//! cell is left empty by design: there is no action at the terminal frame.

use crate::data::raw::{RawRow, RawSurgery};
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Column {
    ApSys,
    ApDia,
    Map,
    Propofol,
    Remifentanil,
}

impl Column {
    const ALL: [Column; 5] =
        [Column::ApSys, Column::ApDia, Column::Map, Column::Propofol, Column::Remifentanil];

    fn name(self) -> &'static str {
        match self {
            Column::ApSys => "ap_sys",
            Column::ApDia => "ap_dia",
            Column::Map => "map",
            Column::Propofol => "propofol",
            Column::Remifentanil => "remifentanil",
        }
    }

    fn get(self, row: &RawRow) -> Option<f64> {
        match self {
            Column::ApSys => row.ap_sys,
            Column::ApDia => row.ap_dia,
            Column::Map => row.map,
            Column::Propofol => row.propofol,
            Column::Remifentanil => row.remifentanil,
        }
    }

    fn set(self, row: &mut RawRow, value: f64) {
        match self {
            Column::ApSys => row.ap_sys = Some(value),
            Column::ApDia => row.ap_dia = Some(value),
            Column::Map => row.map = Some(value),
            Column::Propofol => row.propofol = Some(value),
            Column::Remifentanil => row.remifentanil = Some(value),
        }
    }
}

/// Per-column mean/std over the observed cells; std 0 becomes 1.
fn column_stats(rows: &[RawRow]) -> Vec<(f64, f64)> {
    let mut stats = vec![(0.0, 1.0); Column::ALL.len() + 1];
    // slot 0: timestamp
    let ts: Vec<f64> = rows.iter().map(|r| r.t as f64).collect();
    stats[0] = mean_std(&ts);
    for (i, col) in Column::ALL.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().filter_map(|r| col.get(r)).collect();
        if !vals.is_empty() {
            stats[i + 1] = mean_std(&vals);
        }
    }
    stats
}

fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

/// Distance between rows over standardized features observed in both,
/// normalized by the number of shared features.
fn row_distance(a: &RawRow, b: &RawRow, stats: &[(f64, f64)]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    let z = |v: f64, s: (f64, f64)| (v - s.0) / s.1;
    sum += (z(a.t as f64, stats[0]) - z(b.t as f64, stats[0])).powi(2);
    count += 1;
    for (i, col) in Column::ALL.iter().enumerate() {
        if let (Some(va), Some(vb)) = (col.get(a), col.get(b)) {
            sum += (z(va, stats[i + 1]) - z(vb, stats[i + 1])).powi(2);
            count += 1;
        }
    }
    (sum / count as f64).sqrt()
}

/// Fills every missing vitals/dose cell with the mean of its k nearest
/// neighbors. Fully observed surgeries are returned unchanged.
pub fn impute_knn(surgery: RawSurgery, k: usize) -> Result<RawSurgery> {
    if k < 1 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let last_idx = surgery.rows.len().saturating_sub(1);
    let stats = column_stats(&surgery.rows);
    let mut out = surgery.clone();

    for (idx, row) in surgery.rows.iter().enumerate() {
        for col in Column::ALL {
            if col.get(row).is_some() {
                continue;
            }
            // terminal frame carries no action
            if col == Column::Propofol && idx == last_idx {
                continue;
            }
            let mut candidates: Vec<(f64, u64, f64)> = surgery
                .rows
                .iter()
                .enumerate()
                .filter(|(j, r)| *j != idx && col.get(r).is_some())
                .map(|(_, r)| (row_distance(row, r, &stats), r.t, col.get(r).unwrap()))
                .collect();
            if candidates.is_empty() {
                return Err(Error::Unimputable {
                    surgery: surgery.surgery_id.clone(),
                    column: col.name().to_string(),
                });
            }
            candidates.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
            let take = k.min(candidates.len());
            let mean = candidates[..take].iter().map(|c| c.2).sum::<f64>() / take as f64;
            col.set(&mut out.rows[idx], mean);
        }
    }
    Ok(out)
}
