//! Raw surgery records and their CSV wire format.
//!
//! One CSV file per surgery with header `t,ap_sys,ap_dia,map,propofol,
//! remifentanil` (empty cell = missing), plus one `clinical.csv` with header
//! `surgery_id,age,sex,height,weight,bmi,asa,anesthetic_type`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnestheticType {
    Propofol,
    Inhaled,
}

impl std::str::FromStr for AnestheticType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "propofol" => Ok(Self::Propofol),
            "inhaled" => Ok(Self::Inhaled),
            other => Err(Error::Data(format!("unknown anesthetic type `{other}`"))),
        }
    }
}

impl std::fmt::Display for AnestheticType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Propofol => write!(f, "propofol"),
            Self::Inhaled => write!(f, "inhaled"),
        }
    }
}

/// One time row of a raw surgery; `None` marks a missing cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RawRow {
    pub t: u64,
    pub ap_sys: Option<f64>,
    pub ap_dia: Option<f64>,
    pub map: Option<f64>,
    /// Propofol infusion rate, mg/kg/h. Absent by design on the final row.
    pub propofol: Option<f64>,
    /// Remifentanil infusion rate, µg/kg/min.
    pub remifentanil: Option<f64>,
}

/// Clinical descriptors with possibly-missing fields, as read from
/// `clinical.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClinicalRecord {
    pub age: Option<f64>,
    pub sex: Option<u8>,
    pub height: Option<f64>,
    pub weight: Option<f64>,
    pub bmi: Option<f64>,
    pub asa: Option<u8>,
}

/// One surgery as ingested, before filtering and imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSurgery {
    pub surgery_id: String,
    pub rows: Vec<RawRow>,
    pub clinical: ClinicalRecord,
    pub anesthetic_type: AnestheticType,
}

impl RawSurgery {
    /// Number of action steps (one fewer than vitals rows).
    pub fn duration_steps(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }
}

fn parse_opt_f64(field: &str, file: &str, line: usize) -> Result<Option<f64>> {
    let trimmed = field.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    trimmed
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Data(format!("{file}: line {line}: bad number `{trimmed}`")))
        .and_then(|v| match v {
            Some(x) if !x.is_finite() => {
                Err(Error::Data(format!("{file}: line {line}: nonfinite value")))
            }
            other => Ok(other),
        })
}

const SURGERY_HEADER: [&str; 6] = ["t", "ap_sys", "ap_dia", "map", "propofol", "remifentanil"];

/// Parses the time-series CSV of one surgery. Timestamps must be strictly
/// increasing.
pub fn parse_surgery_csv(surgery_id: &str, text: &str) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != SURGERY_HEADER {
        return Err(Error::Data(format!(
            "{surgery_id}: unexpected surgery header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    let mut prev_t: Option<u64> = None;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let t: u64 = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("{surgery_id}: line {line}: bad timestamp `{}`", &record[0])))?;
        if let Some(p) = prev_t {
            if t <= p {
                return Err(Error::Data(format!(
                    "{surgery_id}: line {line}: timestamps must be strictly increasing ({p} then {t})"
                )));
            }
        }
        prev_t = Some(t);
        rows.push(RawRow {
            t,
            ap_sys: parse_opt_f64(&record[1], surgery_id, line)?,
            ap_dia: parse_opt_f64(&record[2], surgery_id, line)?,
            map: parse_opt_f64(&record[3], surgery_id, line)?,
            propofol: parse_opt_f64(&record[4], surgery_id, line)?,
            remifentanil: parse_opt_f64(&record[5], surgery_id, line)?,
        });
    }
    Ok(rows)
}

const CLINICAL_HEADER: [&str; 8] =
    ["surgery_id", "age", "sex", "height", "weight", "bmi", "asa", "anesthetic_type"];

/// Parses `clinical.csv`, returning one entry per surgery id.
pub fn parse_clinical_csv(
    text: &str,
) -> Result<BTreeMap<String, (ClinicalRecord, AnestheticType)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != CLINICAL_HEADER {
        return Err(Error::Data(format!(
            "clinical.csv: unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let id = record[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::Data(format!("clinical.csv: line {line}: empty surgery id")));
        }
        let parse_u8 = |field: &str| -> Result<Option<u8>> {
            let trimmed = field.trim();
            if trimmed.is_empty() {
                return Ok(None);
            }
            trimmed
                .parse::<u8>()
                .map(Some)
                .map_err(|_| Error::Data(format!("clinical.csv: line {line}: bad integer `{trimmed}`")))
        };
        let clinical = ClinicalRecord {
            age: parse_opt_f64(&record[1], "clinical.csv", line)?,
            sex: parse_u8(&record[2])?,
            height: parse_opt_f64(&record[3], "clinical.csv", line)?,
            weight: parse_opt_f64(&record[4], "clinical.csv", line)?,
            bmi: parse_opt_f64(&record[5], "clinical.csv", line)?,
            asa: parse_u8(&record[6])?,
        };
        let anesthetic: AnestheticType = record[7].trim().parse()?;
        if out.insert(id.clone(), (clinical, anesthetic)).is_some() {
            return Err(Error::Data(format!("clinical.csv: duplicate surgery id `{id}`")));
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => String::new(),
    }
}

/// Serializes one surgery's time series to CSV text.
pub fn surgery_to_csv(rows: &[RawRow]) -> String {
    let mut out = String::from("t,ap_sys,ap_dia,map,propofol,remifentanil\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.t,
            fmt_opt(r.ap_sys),
            fmt_opt(r.ap_dia),
            fmt_opt(r.map),
            fmt_opt(r.propofol),
            fmt_opt(r.remifentanil)
        ));
    }
    out
}

/// Writes a raw dataset directory: one `<surgery_id>.csv` per surgery plus
/// `clinical.csv`.
pub fn write_raw_dir(dir: &Path, surgeries: &[RawSurgery]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut clinical = String::from("surgery_id,age,sex,height,weight,bmi,asa,anesthetic_type\n");
    for s in surgeries {
        std::fs::write(dir.join(format!("{}.csv", s.surgery_id)), surgery_to_csv(&s.rows))?;
        let c = &s.clinical;
        clinical.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.surgery_id,
            fmt_opt(c.age),
            c.sex.map(|v| v.to_string()).unwrap_or_default(),
            fmt_opt(c.height),
            fmt_opt(c.weight),
            fmt_opt(c.bmi),
            c.asa.map(|v| v.to_string()).unwrap_or_default(),
            s.anesthetic_type,
        ));
    }
    std::fs::write(dir.join("clinical.csv"), clinical)?;
    Ok(())
}

/// Reads a raw dataset directory written by [`write_raw_dir`] (or any
/// producer of the same schema). Surgeries are returned sorted by id.
pub fn read_raw_dir(dir: &Path) -> Result<Vec<RawSurgery>> {
    let clinical_text = std::fs::read_to_string(dir.join("clinical.csv"))
        .map_err(|e| Error::Data(format!("cannot read {}/clinical.csv: {e}", dir.display())))?;
    let clinical = parse_clinical_csv(&clinical_text)?;
    let mut out = Vec::new();
    for (id, (record, anesthetic)) in clinical {
        let path = dir.join(format!("{id}.csv"));
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        out.push(RawSurgery {
            rows: parse_surgery_csv(&id, &text)?,
            surgery_id: id,
            clinical: record,
            anesthetic_type: anesthetic,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surgery_csv_round_trip() {
        let rows = vec![
            RawRow { t: 0, ap_sys: Some(120.0), ap_dia: Some(80.0), map: Some(93.0), propofol: Some(4.0), remifentanil: Some(0.2) },
            RawRow { t: 1, ap_sys: None, ap_dia: Some(78.0), map: Some(90.0), propofol: None, remifentanil: Some(0.2) },
        ];
        let text = surgery_to_csv(&rows);
        let parsed = parse_surgery_csv("s1", &text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[1].ap_sys, None);
        assert_eq!(parsed[1].propofol, None);
        assert_eq!(parsed[0].map, Some(93.0));
    }

    #[test]
    fn rejects_non_increasing_timestamps() {
        let text = "t,ap_sys,ap_dia,map,propofol,remifentanil\n1,120,80,93,4,0.2\n1,120,80,93,4,0.2\n";
        assert!(parse_surgery_csv("s1", text).is_err());
    }

    #[test]
    fn rejects_bad_header_and_bad_numbers() {
        assert!(parse_surgery_csv("s1", "a,b,c\n1,2,3\n").is_err());
        let text = "t,ap_sys,ap_dia,map,propofol,remifentanil\n0,abc,80,93,4,0.2\n";
        assert!(parse_surgery_csv("s1", text).is_err());
    }

    #[test]
    fn clinical_csv_parses_missing_fields_and_rejects_duplicates() {
        let text = "surgery_id,age,sex,height,weight,bmi,asa,anesthetic_type\n\
                    s1,50.0,1,170.0,70.0,,2,propofol\n\
                    s2,,0,160.0,55.0,21.48,3,inhaled\n";
        let parsed = parse_clinical_csv(text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed["s1"].0.bmi, None);
        assert_eq!(parsed["s2"].0.age, None);
        assert_eq!(parsed["s2"].1, AnestheticType::Inhaled);

        let dup = "surgery_id,age,sex,height,weight,bmi,asa,anesthetic_type\n\
                   s1,50,1,170,70,24.2,2,propofol\ns1,50,1,170,70,24.2,2,propofol\n";
        assert!(parse_clinical_csv(dup).is_err());
    }
}
