//! Construction of reward-labeled transition datasets from filtered,
//! imputed surgeries.

use crate::data::raw::RawSurgery;
use crate::data::reward::compute_reward;
use crate::domain::{
    flatten_observation, Action, ClinicalInfo, DatasetMeta, Episode, ObservationState,
    OfflineDataset, SplitTag, Transition, VitalsFrame, OBS_DIM, SCHEMA_VERSION,
};
use crate::error::{Error, Result};

/// Retrospective per-surgery MAP setpoint: the arithmetic mean of MAP over
/// the whole operation.
pub fn compute_map_target(vitals: &[VitalsFrame]) -> Result<f64> {
    if vitals.is_empty() {
        return Err(Error::Data("cannot compute MAP target of an empty episode".into()));
    }
    Ok(vitals.iter().map(|v| v.map).sum::<f64>() / vitals.len() as f64)
}

fn clinical_info(surgery: &RawSurgery) -> Result<ClinicalInfo> {
    let c = &surgery.clinical;
    let missing = |field: &str| {
        Error::Data(format!("surgery {}: clinical field `{field}` missing", surgery.surgery_id))
    };
    let height = c.height.ok_or_else(|| missing("height"))?;
    let weight = c.weight.ok_or_else(|| missing("weight"))?;
    // BMI is derivable; recompute when absent.
    let bmi = match c.bmi {
        Some(b) => b,
        None => weight / (height / 100.0).powi(2),
    };
    let info = ClinicalInfo {
        age: c.age.ok_or_else(|| missing("age"))?,
        sex: c.sex.ok_or_else(|| missing("sex"))?,
        height,
        weight,
        bmi,
        asa_grade: c.asa.ok_or_else(|| missing("asa"))?,
    };
    info.validate()?;
    Ok(info)
}

fn vitals_frames(surgery: &RawSurgery) -> Result<Vec<VitalsFrame>> {
    surgery
        .rows
        .iter()
        .map(|r| {
            let frame = VitalsFrame {
                ap_sys: r.ap_sys.ok_or_else(|| {
                    Error::Data(format!("surgery {}: unimputed ap_sys", surgery.surgery_id))
                })?,
                ap_dia: r.ap_dia.ok_or_else(|| {
                    Error::Data(format!("surgery {}: unimputed ap_dia", surgery.surgery_id))
                })?,
                map: r.map.ok_or_else(|| {
                    Error::Data(format!("surgery {}: unimputed map", surgery.surgery_id))
                })?,
                timestamp_index: r.t,
            };
            frame.validate()?;
            Ok(frame)
        })
        .collect()
}

/// Builds the observation at step `t`, back-filling the "previous two
/// moments" with the current frame at the episode boundary.
fn observation_at(
    clinical: ClinicalInfo,
    frames: &[VitalsFrame],
    t: usize,
    remifentanil: f64,
    map_target: f64,
) -> ObservationState {
    let now = frames[t].pressures();
    let prev1 = if t >= 1 { frames[t - 1].pressures() } else { now };
    let prev2 = if t >= 2 { frames[t - 2].pressures() } else { prev1 };
    ObservationState::new(clinical, now, prev1, prev2, remifentanil, map_target)
}

/// Converts surgeries into episodes of reward-labeled transitions.
///
/// When `meta_from` is absent, `p_max` and the feature statistics are
/// computed from these surgeries; otherwise they are reused (validation and
/// test reuse the training meta) and any dose exceeding the given `p_max`
/// is an error naming the episode.
pub fn build_transition_dataset(
    surgeries: &[RawSurgery],
    meta_from: Option<&DatasetMeta>,
    split_tag: SplitTag,
) -> Result<OfflineDataset> {
    if surgeries.is_empty() {
        return Err(Error::Data("no surgeries to build a dataset from".into()));
    }

    let p_max = match meta_from {
        Some(meta) => meta.p_max,
        None => {
            let max_dose = surgeries
                .iter()
                .flat_map(|s| s.rows[..s.duration_steps()].iter().filter_map(|r| r.propofol))
                .fold(0.0f64, f64::max);
            if !(max_dose > 0.0) {
                return Err(Error::Data("maximum propofol dose is not positive".into()));
            }
            max_dose
        }
    };

    let mut episodes = Vec::with_capacity(surgeries.len());
    for surgery in surgeries {
        let clinical = clinical_info(surgery)?;
        let frames = vitals_frames(surgery)?;
        if frames.len() < 2 {
            return Err(Error::Data(format!(
                "surgery {}: needs at least two vitals frames",
                surgery.surgery_id
            )));
        }
        let map_target = compute_map_target(&frames)?;
        let steps = surgery.duration_steps();
        let mut transitions = Vec::with_capacity(steps);
        for t in 0..steps {
            let dose = surgery.rows[t].propofol.ok_or_else(|| {
                Error::Data(format!("surgery {}: unimputed propofol at step {t}", surgery.surgery_id))
            })?;
            if dose > p_max && meta_from.is_some() {
                return Err(Error::Data(format!(
                    "episode {}: dose {dose} exceeds training p_max {p_max}",
                    surgery.surgery_id
                )));
            }
            let action = Action::new(dose / p_max).map_err(|e| {
                Error::Data(format!("episode {}: {e}", surgery.surgery_id))
            })?;
            let remi_now = surgery.rows[t].remifentanil.unwrap_or(0.0);
            let remi_next = surgery.rows[t + 1].remifentanil.unwrap_or(remi_now);
            let state = observation_at(clinical, &frames, t, remi_now, map_target);
            let next_state = observation_at(clinical, &frames, t + 1, remi_next, map_target);
            // credit the action with the pressure observed after it
            let reward = compute_reward(frames[t + 1].map, map_target, action)?.r_total;
            transitions.push(Transition {
                state,
                action,
                reward,
                next_state,
                terminal: t == steps - 1,
            });
        }
        episodes.push(Episode {
            episode_id: surgery.surgery_id.clone(),
            transitions,
            map_target,
        });
    }

    let meta = match meta_from {
        Some(meta) => DatasetMeta { split_tag, ..meta.clone() },
        None => {
            let mut means = vec![0.0; OBS_DIM];
            let mut m2 = vec![0.0; OBS_DIM];
            let mut count = 0.0;
            for ep in &episodes {
                for tr in &ep.transitions {
                    count += 1.0;
                    let v = flatten_observation(&tr.state);
                    for i in 0..OBS_DIM {
                        let delta = v[i] - means[i];
                        means[i] += delta / count;
                        m2[i] += delta * (v[i] - means[i]);
                    }
                }
            }
            let stds: Vec<f64> = m2
                .iter()
                .map(|s| {
                    let std = (s / count).sqrt();
                    if std > 0.0 {
                        std
                    } else {
                        1.0
                    }
                })
                .collect();
            DatasetMeta {
                p_max,
                feature_means: means,
                feature_stds: stds,
                split_tag,
                schema_version: SCHEMA_VERSION,
            }
        }
    };

    let ds = OfflineDataset { episodes, meta };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::raw::{AnestheticType, ClinicalRecord, RawRow};

    fn surgery(id: &str, maps: &[f64], doses: &[f64]) -> RawSurgery {
        assert_eq!(maps.len(), doses.len() + 1);
        let rows: Vec<RawRow> = maps
            .iter()
            .enumerate()
            .map(|(t, m)| RawRow {
                t: t as u64,
                ap_sys: Some(m + 30.0),
                ap_dia: Some(m - 15.0),
                map: Some(*m),
                propofol: doses.get(t).copied(),
                remifentanil: Some(0.2),
            })
            .collect();
        RawSurgery {
            surgery_id: id.to_string(),
            rows,
            clinical: ClinicalRecord {
                age: Some(50.0),
                sex: Some(1),
                height: Some(170.0),
                weight: Some(70.0),
                bmi: Some(24.22),
                asa: Some(2),
            },
            anesthetic_type: AnestheticType::Propofol,
        }
    }

    #[test]
    fn map_target_examples() {
        let frame = |m: f64, t: u64| VitalsFrame { ap_sys: m + 30.0, ap_dia: m - 15.0, map: m, timestamp_index: t };
        assert_eq!(compute_map_target(&[frame(100.0, 0), frame(100.0, 1), frame(100.0, 2)]).unwrap(), 100.0);
        assert_eq!(compute_map_target(&[frame(90.0, 0), frame(110.0, 1)]).unwrap(), 100.0);
        assert_eq!(compute_map_target(&[frame(80.0, 0)]).unwrap(), 80.0);
        assert!(compute_map_target(&[]).is_err());
    }

    #[test]
    fn one_surgery_with_t_plus_one_frames_yields_t_transitions() {
        let s = surgery("s1", &[100.0, 101.0, 99.0, 100.0], &[4.0, 5.0, 3.0]);
        let ds = build_transition_dataset(&[s], None, SplitTag::Train).unwrap();
        assert_eq!(ds.episodes.len(), 1);
        assert_eq!(ds.episodes[0].transitions.len(), 3);
        assert!(ds.episodes[0].transitions[2].terminal);
        assert!(!ds.episodes[0].transitions[0].terminal);
    }

    #[test]
    fn doses_normalize_by_the_dataset_maximum() {
        let s = surgery("s1", &[100.0, 100.0, 100.0], &[8.0, 8.0]);
        let ds = build_transition_dataset(&[s], None, SplitTag::Train).unwrap();
        assert_eq!(ds.meta.p_max, 8.0);
        for tr in ds.transitions() {
            assert_eq!(tr.action.normalized(), 1.0);
        }
    }

    #[test]
    fn constant_map_at_target_and_zero_dose_rewards_plus_one() {
        let s = surgery("s1", &[100.0; 5], &[0.0; 4]);
        // zero doses alone are rejected (p_max must be positive), so pair with
        // a second surgery carrying the max dose
        let s2 = surgery("s2", &[100.0; 5], &[10.0; 4]);
        let ds = build_transition_dataset(&[s, s2], None, SplitTag::Train).unwrap();
        let ep = &ds.episodes[0];
        assert_eq!(ep.episode_id, "s1");
        for tr in &ep.transitions {
            assert_eq!(tr.reward, 1.0);
        }
    }

    #[test]
    fn reward_timing_uses_the_next_map() {
        // MAP jumps out of band after the first action; that action is the
        // one penalized.
        let s = surgery("s1", &[100.0, 140.0, 100.0], &[10.0, 0.0]);
        let ds = build_transition_dataset(&[s], None, SplitTag::Train).unwrap();
        let ep = &ds.episodes[0];
        let map_star = ep.map_target;
        let dev = (140.0 - map_star).abs() / map_star;
        // first reward judged at MAP=140 with the full dose
        let expected_first = if dev <= 0.15 { 1.0 } else if dev <= 0.30 { 0.5 } else { -1.0 };
        assert!((ep.transitions[0].reward - (expected_first - dev * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn boundary_backfill_makes_map_change_zero_at_start() {
        let s = surgery("s1", &[100.0, 90.0, 95.0], &[4.0, 4.0]);
        let ds = build_transition_dataset(&[s], None, SplitTag::Train).unwrap();
        let first = &ds.episodes[0].transitions[0].state;
        assert_eq!(first.map_change, 0.0);
        assert_eq!(first.vitals_prev1, first.vitals_now);
        assert_eq!(first.vitals_prev2, first.vitals_now);
    }

    #[test]
    fn episode_target_matches_recomputed_mean_exactly() {
        let s = surgery("s1", &[95.0, 102.0, 98.0, 101.0], &[4.0, 5.0, 3.0]);
        let frames = vitals_frames(&s).unwrap();
        let expected = compute_map_target(&frames).unwrap();
        let ds = build_transition_dataset(&[s], None, SplitTag::Train).unwrap();
        assert_eq!(ds.episodes[0].map_target, expected);
        for tr in ds.transitions() {
            assert_eq!(tr.state.map_target, expected);
        }
    }

    #[test]
    fn reusing_meta_rejects_doses_above_p_max() {
        let train = surgery("s1", &[100.0; 3], &[5.0, 5.0]);
        let ds = build_transition_dataset(&[train], None, SplitTag::Train).unwrap();
        let hot = surgery("s2", &[100.0; 3], &[6.0, 5.0]);
        let err = build_transition_dataset(&[hot], Some(&ds.meta), SplitTag::Test).unwrap_err();
        assert!(err.to_string().contains("s2"));
    }

    #[test]
    fn zero_variance_features_get_unit_std() {
        let s = surgery("s1", &[100.0, 101.0, 99.0], &[4.0, 5.0]);
        let ds = build_transition_dataset(&[s], None, SplitTag::Train).unwrap();
        // age is constant across the dataset -> std slot 1.0
        assert_eq!(ds.meta.feature_stds[0], 1.0);
        assert!(ds.meta.feature_stds.iter().all(|s| *s > 0.0));
    }
}
