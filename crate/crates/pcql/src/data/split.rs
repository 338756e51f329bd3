//! Deterministic 7:1:2 split by whole episodes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::domain::{DatasetMeta, OfflineDataset, SplitTag};
use crate::error::{Error, Result};

pub const SPLIT_RATIOS: (f64, f64, f64) = (0.7, 0.1, 0.2);

/// Shuffles ids with the seed and cuts them into train/valid/test groups.
/// Train and valid sizes round to the nearest integer; test takes the rest.
pub fn split_ids(
    ids: &[String],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<String>, Vec<String>, Vec<String>)> {
    let (rt, rv, rtest) = ratios;
    if (rt + rv + rtest - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {rt} + {rv} + {rtest}"
        )));
    }
    if ids.len() < 10 {
        return Err(Error::Data(format!("need at least 10 episodes to split, got {}", ids.len())));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    shuffled.sort(); // input-order independence before the seeded shuffle
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let n = shuffled.len();
    let n_train = (rt * n as f64).round() as usize;
    let n_valid = (rv * n as f64).round() as usize;
    if n_train + n_valid >= n {
        return Err(Error::Config("split leaves no test episodes".into()));
    }
    let test = shuffled.split_off(n_train + n_valid);
    let valid = shuffled.split_off(n_train);
    Ok((shuffled, valid, test))
}

/// Splits a built dataset by whole episodes, never within an episode.
pub fn split_dataset(
    ds: &OfflineDataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(OfflineDataset, OfflineDataset, OfflineDataset)> {
    let ids: Vec<String> = ds.episodes.iter().map(|e| e.episode_id.clone()).collect();
    let (train_ids, valid_ids, test_ids) = split_ids(&ids, ratios, seed)?;
    let pick = |wanted: &[String], tag: SplitTag| -> OfflineDataset {
        let set: std::collections::BTreeSet<&str> = wanted.iter().map(|s| s.as_str()).collect();
        OfflineDataset {
            episodes: ds
                .episodes
                .iter()
                .filter(|e| set.contains(e.episode_id.as_str()))
                .cloned()
                .collect(),
            meta: DatasetMeta { split_tag: tag, ..ds.meta.clone() },
        }
    };
    Ok((
        pick(&train_ids, SplitTag::Train),
        pick(&valid_ids, SplitTag::Valid),
        pick(&test_ids, SplitTag::Test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:04}")).collect()
    }

    #[test]
    fn ten_episodes_split_7_1_2() {
        let (tr, va, te) = split_ids(&ids(10), SPLIT_RATIOS, 0).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (7, 1, 2));
    }

    #[test]
    fn full_scale_episode_count_splits_905_129_259() {
        let (tr, va, te) = split_ids(&ids(1293), SPLIT_RATIOS, 0).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (905, 129, 259));
    }

    #[test]
    fn identical_seeds_give_identical_splits() {
        let a = split_ids(&ids(100), SPLIT_RATIOS, 42).unwrap();
        let b = split_ids(&ids(100), SPLIT_RATIOS, 42).unwrap();
        assert_eq!(a, b);
        let c = split_ids(&ids(100), SPLIT_RATIOS, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bad_ratios_are_a_config_error() {
        assert!(split_ids(&ids(10), (0.7, 0.2, 0.2), 0).is_err());
    }

    #[test]
    fn too_few_episodes_rejected() {
        assert!(split_ids(&ids(9), SPLIT_RATIOS, 0).is_err());
    }

    proptest! {
        #[test]
        fn parts_are_disjoint_and_exhaustive(n in 10usize..300, seed in 0u64..1000) {
            let all = ids(n);
            let (tr, va, te) = split_ids(&all, SPLIT_RATIOS, seed).unwrap();
            let mut merged: Vec<String> = tr.iter().chain(&va).chain(&te).cloned().collect();
            prop_assert_eq!(merged.len(), n);
            merged.sort();
            let mut expected = all.clone();
            expected.sort();
            prop_assert_eq!(merged, expected);
        }
    }
}
