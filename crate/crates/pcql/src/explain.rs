//! Model-agnostic Shapley-value attribution over the 19 observation
//! features, by permutation sampling with a marginal-expectation value
//! function: absent features are filled from a background sample.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::PcqlAgent;
use crate::derive_seed;
use crate::domain::{flatten_observation, OfflineDataset, FEATURE_NAMES, OBS_DIM};
use crate::error::{Error, Result};

/// Attribution of one or more explained samples, plus the per-feature
/// absolute-mean summary used for ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    /// Canonical feature order.
    pub feature_names: Vec<String>,
    /// One 19-vector of Shapley values per explained sample.
    pub per_sample: Vec<Vec<f64>>,
    /// Per-feature mean of |shap| over the samples.
    pub absolute_mean_scores: Vec<f64>,
    /// Feature indices sorted by descending score, ties broken by index.
    pub ranking: Vec<usize>,
}

/// Monte-Carlo Shapley values of `model` at `sample`: for each feature, the
/// average over sampled permutations of the marginal contribution
/// `f(S∪{i}) − f(S)`, with features outside the coalition filled from a
/// background row drawn per permutation. Deterministic given `seed`.
pub fn shapley_attribution<F>(
    model: F,
    sample: &[f64],
    background: &[Vec<f64>],
    n_permutations: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if sample.len() != OBS_DIM {
        return Err(Error::Schema(format!(
            "expected a {OBS_DIM}-feature sample, got {}",
            sample.len()
        )));
    }
    if background.is_empty() {
        return Err(Error::Config("shapley background set must be nonempty".into()));
    }
    if background.iter().any(|b| b.len() != OBS_DIM) {
        return Err(Error::Schema("background rows must have the canonical width".into()));
    }
    if n_permutations == 0 {
        return Err(Error::Config("n_permutations must be >= 1".into()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..OBS_DIM).collect();
    let mut phi = vec![0.0; OBS_DIM];
    for _ in 0..n_permutations {
        order.shuffle(&mut rng);
        let b = &background[rng.gen_range(0..background.len())];
        let mut x = b.clone();
        let mut prev = model(&x)?;
        for &i in &order {
            x[i] = sample[i];
            let cur = model(&x)?;
            phi[i] += cur - prev;
            prev = cur;
        }
    }
    for v in phi.iter_mut() {
        *v /= n_permutations as f64;
    }
    Ok(phi)
}

/// Per-feature mean of absolute Shapley values over a sample set.
pub fn absolute_mean_scores(per_sample: &[Vec<f64>]) -> Result<Vec<f64>> {
    if per_sample.is_empty() {
        return Err(Error::Data("no attributions to summarize".into()));
    }
    let mut scores = vec![0.0; OBS_DIM];
    for row in per_sample {
        if row.len() != OBS_DIM {
            return Err(Error::Schema("attribution rows must have the canonical width".into()));
        }
        for (s, v) in scores.iter_mut().zip(row) {
            *s += v.abs();
        }
    }
    for s in scores.iter_mut() {
        *s /= per_sample.len() as f64;
    }
    Ok(scores)
}

/// Descending ranking of feature indices; equal scores order by index.
pub fn rank_features(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    idx
}

/// Explains the agent's dose recommendation on states drawn from the test
/// split, with a background drawn from the training split. Both draws and
/// the permutation sampling are seeded.
pub fn attribute_agent(
    agent: &PcqlAgent,
    train: &OfflineDataset,
    test: &OfflineDataset,
    n_samples: usize,
    n_background: usize,
    n_permutations: usize,
    seed: u64,
) -> Result<AttributionReport> {
    if n_samples == 0 || n_background == 0 {
        return Err(Error::Config("n_samples and n_background must be >= 1".into()));
    }
    let train_rows: Vec<Vec<f64>> =
        train.transitions().map(|tr| flatten_observation(&tr.state).to_vec()).collect();
    let test_rows: Vec<Vec<f64>> =
        test.transitions().map(|tr| flatten_observation(&tr.state).to_vec()).collect();
    if train_rows.is_empty() || test_rows.is_empty() {
        return Err(Error::Data("attribution needs nonempty train and test splits".into()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, "shap-draws"));
    let background: Vec<Vec<f64>> = (0..n_background.min(train_rows.len()))
        .map(|_| train_rows[rng.gen_range(0..train_rows.len())].clone())
        .collect();
    let samples: Vec<Vec<f64>> = (0..n_samples.min(test_rows.len()))
        .map(|_| test_rows[rng.gen_range(0..test_rows.len())].clone())
        .collect();

    // the explained scalar: standardized features -> actor -> physical dose
    let model = |raw: &[f64]| -> Result<f64> {
        let std = crate::domain::standardize(raw, &agent.meta)?;
        Ok(agent.actor_batch(&std, 1)[0] * agent.meta.p_max)
    };

    let per_sample: Vec<Vec<f64>> = samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            shapley_attribution(
                model,
                s,
                &background,
                n_permutations,
                derive_seed(seed, &format!("shap-sample-{k}")),
            )
        })
        .collect::<Result<_>>()?;
    let scores = absolute_mean_scores(&per_sample)?;
    let ranking = rank_features(&scores);
    Ok(AttributionReport {
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        per_sample,
        absolute_mean_scores: scores,
        ranking,
    })
}

pub fn write_attribution_json(report: &AttributionReport, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

/// The ranked bar-chart data: `feature,score` sorted descending.
pub fn write_scores_csv(report: &AttributionReport, path: &Path) -> Result<()> {
    let mut out = String::from("feature,score\n");
    for &i in &report.ranking {
        out.push_str(&format!("{},{}\n", report.feature_names[i], report.absolute_mean_scores[i]));
    }
    std::fs::write(path, out)?;
    Ok(())
}
