//! Processed dataset directory format.
//!
//! A processed split is a directory holding `meta.json` plus one
//! `episodes/<id>.csv` per episode. Episode files carry the flattened 19
//! features per row followed by `action,reward,terminal`; the final row is
//! the terminal state and leaves those three columns empty. Floats use
//! Rust's shortest round-trip formatting, so a write/read cycle is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{
    flatten_observation, unflatten_observation, Action, DatasetMeta, Episode, OfflineDataset,
    SplitTag, Transition, FEATURE_NAMES, OBS_DIM, SCHEMA_VERSION,
};
use crate::error::{Error, Result};

/// On-disk form of [`DatasetMeta`] plus the split seed used to produce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFile {
    pub p_max: f64,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub schema_version: u32,
    pub split_tag: SplitTag,
    pub split_seed: Option<u64>,
}

impl MetaFile {
    pub fn from_meta(meta: &DatasetMeta, split_seed: Option<u64>) -> Self {
        Self {
            p_max: meta.p_max,
            feature_means: meta.feature_means.clone(),
            feature_stds: meta.feature_stds.clone(),
            schema_version: meta.schema_version,
            split_tag: meta.split_tag,
            split_seed,
        }
    }

    pub fn into_meta(self) -> Result<DatasetMeta> {
        let meta = DatasetMeta {
            p_max: self.p_max,
            feature_means: self.feature_means,
            feature_stds: self.feature_stds,
            split_tag: self.split_tag,
            schema_version: self.schema_version,
        };
        if meta.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported dataset schema version {} (expected {SCHEMA_VERSION})",
                meta.schema_version
            )));
        }
        meta.validate()?;
        Ok(meta)
    }
}

pub fn parse_meta_json(text: &str) -> Result<MetaFile> {
    let file: MetaFile = serde_json::from_str(text)?;
    // validate eagerly so malformed files fail at the parse boundary
    file.clone().into_meta()?;
    Ok(file)
}

fn episode_header() -> String {
    let mut cols: Vec<&str> = FEATURE_NAMES.to_vec();
    cols.extend(["action", "reward", "terminal"]);
    cols.join(",")
}

/// Serializes one episode to CSV text.
pub fn episode_to_csv(episode: &Episode) -> String {
    let mut out = episode_header();
    out.push('\n');
    for tr in &episode.transitions {
        let feats = flatten_observation(&tr.state);
        for f in feats {
            out.push_str(&format!("{f},"));
        }
        out.push_str(&format!(
            "{},{},{}\n",
            tr.action.normalized(),
            tr.reward,
            if tr.terminal { 1 } else { 0 }
        ));
    }
    // trailing terminal state row
    if let Some(last) = episode.transitions.last() {
        let feats = flatten_observation(&last.next_state);
        for f in feats {
            out.push_str(&format!("{f},"));
        }
        out.push_str(",,\n");
    }
    out
}

/// Parses one episode file back into transitions.
pub fn parse_episode_csv(episode_id: &str, text: &str) -> Result<Episode> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let expected = episode_header();
    if header.iter().collect::<Vec<_>>().join(",") != expected {
        return Err(Error::Data(format!("{episode_id}: unexpected episode header")));
    }

    struct Row {
        state: [f64; OBS_DIM],
        action: Option<f64>,
        reward: Option<f64>,
        terminal: Option<bool>,
    }
    let mut rows: Vec<Row> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let mut state = [0.0; OBS_DIM];
        for (j, slot) in state.iter_mut().enumerate() {
            *slot = record[j].trim().parse().map_err(|_| {
                Error::Data(format!("{episode_id}: line {line}: bad feature `{}`", &record[j]))
            })?;
        }
        let opt = |field: &str| -> Result<Option<f64>> {
            let t = field.trim();
            if t.is_empty() {
                return Ok(None);
            }
            t.parse()
                .map(Some)
                .map_err(|_| Error::Data(format!("{episode_id}: line {line}: bad number `{t}`")))
        };
        let terminal = match record[OBS_DIM + 2].trim() {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => {
                return Err(Error::Data(format!(
                    "{episode_id}: line {line}: bad terminal flag `{other}`"
                )))
            }
        };
        rows.push(Row {
            state,
            action: opt(&record[OBS_DIM])?,
            reward: opt(&record[OBS_DIM + 1])?,
            terminal,
        });
    }
    if rows.len() < 2 {
        return Err(Error::Data(format!("{episode_id}: an episode needs at least two rows")));
    }

    let mut transitions = Vec::with_capacity(rows.len() - 1);
    for t in 0..rows.len() - 1 {
        let row = &rows[t];
        let (Some(action), Some(reward), Some(terminal)) = (row.action, row.reward, row.terminal)
        else {
            return Err(Error::Data(format!(
                "{episode_id}: row {t} is missing action/reward/terminal"
            )));
        };
        transitions.push(Transition {
            state: unflatten_observation(&row.state)?,
            action: Action::new(action)
                .map_err(|e| Error::Data(format!("{episode_id}: row {t}: {e}")))?,
            reward,
            next_state: unflatten_observation(&rows[t + 1].state)?,
            terminal,
        });
    }
    let last = rows.last().unwrap();
    if last.action.is_some() || last.reward.is_some() || last.terminal.is_some() {
        return Err(Error::Data(format!(
            "{episode_id}: final row must be a bare terminal state"
        )));
    }
    let map_target = transitions[0].state.map_target;
    let episode = Episode { episode_id: episode_id.to_string(), transitions, map_target };
    episode.validate()?;
    Ok(episode)
}

/// Writes a processed split directory.
pub fn write_processed(dir: &Path, ds: &OfflineDataset, split_seed: Option<u64>) -> Result<()> {
    let episodes_dir = dir.join("episodes");
    std::fs::create_dir_all(&episodes_dir)?;
    let meta = MetaFile::from_meta(&ds.meta, split_seed);
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    for ep in &ds.episodes {
        std::fs::write(episodes_dir.join(format!("{}.csv", ep.episode_id)), episode_to_csv(ep))?;
    }
    Ok(())
}

/// Reads a processed split directory. Episodes come back sorted by id.
pub fn read_processed(dir: &Path) -> Result<OfflineDataset> {
    let meta_text = std::fs::read_to_string(dir.join("meta.json"))
        .map_err(|e| Error::Data(format!("cannot read {}/meta.json: {e}", dir.display())))?;
    let meta = parse_meta_json(&meta_text)?.into_meta()?;
    let episodes_dir = dir.join("episodes");
    let mut names: Vec<String> = std::fs::read_dir(&episodes_dir)?
        .filter_map(|entry| {
            let entry = entry.ok()?;
            let name = entry.file_name().into_string().ok()?;
            name.strip_suffix(".csv").map(str::to_string)
        })
        .collect();
    names.sort();
    let mut episodes = Vec::with_capacity(names.len());
    for name in names {
        let text = std::fs::read_to_string(episodes_dir.join(format!("{name}.csv")))?;
        episodes.push(parse_episode_csv(&name, &text)?);
    }
    let ds = OfflineDataset { episodes, meta };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_transition_dataset;
    use crate::data::raw::{AnestheticType, ClinicalRecord, RawRow, RawSurgery};

    fn dataset() -> OfflineDataset {
        let rows: Vec<RawRow> = [95.0, 100.0, 104.0, 98.0]
            .iter()
            .enumerate()
            .map(|(t, m)| RawRow {
                t: t as u64,
                ap_sys: Some(m + 30.0),
                ap_dia: Some(m - 15.0),
                map: Some(*m),
                propofol: if t < 3 { Some(4.0 + t as f64) } else { None },
                remifentanil: Some(0.2),
            })
            .collect();
        let s = RawSurgery {
            surgery_id: "s0001".into(),
            rows,
            clinical: ClinicalRecord {
                age: Some(47.0),
                sex: Some(0),
                height: Some(165.0),
                weight: Some(62.0),
                bmi: Some(22.77),
                asa: Some(2),
            },
            anesthetic_type: AnestheticType::Propofol,
        };
        build_transition_dataset(&[s], None, SplitTag::Train).unwrap()
    }

    #[test]
    fn processed_round_trip_is_exact() {
        let ds = dataset();
        let dir = tempfile::tempdir().unwrap();
        write_processed(dir.path(), &ds, Some(7)).unwrap();
        let back = read_processed(dir.path()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn episode_csv_round_trip_preserves_every_float() {
        let ds = dataset();
        let ep = &ds.episodes[0];
        let text = episode_to_csv(ep);
        let back = parse_episode_csv(&ep.episode_id, &text).unwrap();
        assert_eq!(*ep, back);
    }

    #[test]
    fn meta_json_round_trip_and_validation() {
        let ds = dataset();
        let file = MetaFile::from_meta(&ds.meta, Some(3));
        let text = serde_json::to_string(&file).unwrap();
        let parsed = parse_meta_json(&text).unwrap();
        assert_eq!(file, parsed);

        let mut bad = file.clone();
        bad.feature_stds[0] = 0.0;
        let bad_text = serde_json::to_string(&bad).unwrap();
        assert!(parse_meta_json(&bad_text).is_err());
    }

    #[test]
    fn malformed_episode_files_are_rejected() {
        assert!(parse_episode_csv("e", "bad,header\n1,2\n").is_err());
        // too few rows
        let header = super::episode_header();
        assert!(parse_episode_csv("e", &format!("{header}\n")).is_err());
    }
}
