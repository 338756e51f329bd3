//! Raw surgery ingestion, filtering, k-NN imputation, reward-labeled
//! transition construction, and the 7:1:2 episode split.

mod build;
mod filter;
mod impute;
mod io;
mod raw;
mod reward;
mod split;

pub use build::{build_transition_dataset, compute_map_target};
pub use filter::{filter_surgeries, FilterReport};
pub use impute::impute_knn;
pub use io::{
    parse_episode_csv, parse_meta_json, read_processed, write_processed, MetaFile,
};
pub use raw::{
    parse_clinical_csv, parse_surgery_csv, read_raw_dir, write_raw_dir, AnestheticType,
    ClinicalRecord, RawRow, RawSurgery,
};
pub use reward::{compute_reward, RewardParts};
pub use split::{split_dataset, split_ids, SPLIT_RATIOS};
