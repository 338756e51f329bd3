//! The run configuration: one plain-text key=value file driving every
//! pipeline stage, with a default for every field, hard errors on unknown
//! keys, and a canonical dump that round-trips through the parser.

use std::path::PathBuf;

use crate::algorithms::{PhiVariant, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{BandConfig, FqeConfig};
use crate::simenv::GenerateConfig;

/// Environment variable overriding the default output root.
pub const OUTPUT_ROOT_ENV: &str = "PCQL_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Global seed; every stage derives its own seed from it by stage name.
    pub seed: u64,
    pub output_root: PathBuf,
    pub raw_dir: Option<PathBuf>,
    pub processed_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub generate: GenerateConfig,
    /// Admission rule: minimum dosing steps per surgery.
    pub filter_min_duration_steps: usize,
    /// Admission rule: maximum tolerated fraction of missing vitals cells.
    pub filter_max_missing_fraction: f64,
    /// Neighbor count for missing-value imputation.
    pub impute_k: usize,
    pub train: TrainConfig,
    pub fqe: FqeConfig,
    pub band: BandConfig,
    pub explain_samples: usize,
    pub explain_background: usize,
    pub explain_permutations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let output_root = std::env::var(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|_| PathBuf::from("pcql-out"));
        Self {
            seed: 0,
            output_root,
            raw_dir: None,
            processed_dir: None,
            checkpoint: None,
            generate: GenerateConfig::default(),
            filter_min_duration_steps: 30,
            filter_max_missing_fraction: 0.3,
            impute_k: 5,
            train: TrainConfig::default(),
            fqe: FqeConfig::default(),
            band: BandConfig::default(),
            explain_samples: 20,
            explain_background: 100,
            explain_permutations: 200,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key {key}: cannot parse value {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("key {key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|part| parse_num(key, part.trim())).collect()
}

fn fmt_list(list: &[usize]) -> String {
    list.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Resolved raw-surgery directory.
    pub fn raw_dir(&self) -> PathBuf {
        self.raw_dir.clone().unwrap_or_else(|| self.output_root.join("raw"))
    }

    /// Resolved processed-dataset directory (with train/valid/test inside).
    pub fn processed_dir(&self) -> PathBuf {
        self.processed_dir.clone().unwrap_or_else(|| self.output_root.join("processed"))
    }

    /// Resolved checkpoint path.
    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.output_root.join("checkpoint.json"))
    }

    /// Applies one `key = value` assignment. Unknown keys are a hard error.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let g = &mut self.generate;
        let b = &mut g.behavior;
        let p = &mut g.population;
        let t = &mut self.train;
        let f = &mut self.fqe;
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "output_root" => self.output_root = PathBuf::from(value),
            "raw_dir" => self.raw_dir = Some(PathBuf::from(value)),
            "processed_dir" => self.processed_dir = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),

            "generate.n_surgeries" => g.n_surgeries = parse_num(key, value)?,
            "generate.duration_min_steps" => g.duration_min_steps = parse_num(key, value)?,
            "generate.duration_max_steps" => g.duration_max_steps = parse_num(key, value)?,
            "generate.missing_cell_prob" => g.missing_cell_prob = parse_num(key, value)?,
            "generate.inhaled_fraction" => g.inhaled_fraction = parse_num(key, value)?,
            "generate.missing_dose_fraction" => g.missing_dose_fraction = parse_num(key, value)?,
            "generate.remi_hold_steps" => g.remi_hold_steps = parse_num(key, value)?,

            "behavior.kp" => b.kp = parse_num(key, value)?,
            "behavior.ki" => b.ki = parse_num(key, value)?,
            "behavior.dose_noise_std" => b.dose_noise_std = parse_num(key, value)?,
            "behavior.adjustment_period" => b.adjustment_period = parse_num(key, value)?,
            "behavior.target_map" => b.target_map = parse_num(key, value)?,
            "behavior.maintenance_dose" => b.maintenance_dose = parse_num(key, value)?,
            "behavior.dose_cap" => b.dose_cap = parse_num(key, value)?,
            "behavior.induction_steps" => b.induction_steps = parse_num(key, value)?,

            "population.age_mean" => p.age_mean = parse_num(key, value)?,
            "population.age_spread" => p.age_spread = parse_num(key, value)?,
            "population.height_mean" => p.height_mean = parse_num(key, value)?,
            "population.height_spread" => p.height_spread = parse_num(key, value)?,
            "population.weight_mean" => p.weight_mean = parse_num(key, value)?,
            "population.weight_spread" => p.weight_spread = parse_num(key, value)?,
            "population.baseline_map_mean" => p.baseline_map_mean = parse_num(key, value)?,
            "population.baseline_map_spread" => p.baseline_map_spread = parse_num(key, value)?,
            "population.emax_mean" => p.emax_mean = parse_num(key, value)?,
            "population.emax_spread" => p.emax_spread = parse_num(key, value)?,
            "population.ec50_mean" => p.ec50_mean = parse_num(key, value)?,
            "population.ec50_spread" => p.ec50_spread = parse_num(key, value)?,
            "population.hill_mean" => p.hill_mean = parse_num(key, value)?,
            "population.hill_spread" => p.hill_spread = parse_num(key, value)?,
            "population.ke0_mean" => p.ke0_mean = parse_num(key, value)?,
            "population.ke0_spread" => p.ke0_spread = parse_num(key, value)?,
            "population.k10_mean" => p.k10_mean = parse_num(key, value)?,
            "population.k10_spread" => p.k10_spread = parse_num(key, value)?,
            "population.v1_mean" => p.v1_mean = parse_num(key, value)?,
            "population.v1_spread" => p.v1_spread = parse_num(key, value)?,
            "population.noise_std" => p.noise_std = parse_num(key, value)?,
            "population.remi_sensitivity_mean" => {
                p.remi_sensitivity_mean = parse_num(key, value)?
            }
            "population.remi_sensitivity_spread" => {
                p.remi_sensitivity_spread = parse_num(key, value)?
            }

            "filter.min_duration_steps" => {
                self.filter_min_duration_steps = parse_num(key, value)?
            }
            "filter.max_missing_fraction" => {
                self.filter_max_missing_fraction = parse_num(key, value)?
            }
            "impute.k" => self.impute_k = parse_num(key, value)?,

            "train.gamma" => t.gamma = parse_num(key, value)?,
            "train.alpha_cql" => t.alpha_cql = parse_num(key, value)?,
            "train.tau_temp" => t.tau_temp = parse_num(key, value)?,
            "train.phi_weight" => t.phi_weight = parse_num(key, value)?,
            "train.phi_variant" => {
                t.phi_variant = match value {
                    "latent" => PhiVariant::Latent,
                    "euclidean" => PhiVariant::Euclidean,
                    _ => {
                        return Err(Error::Config(format!(
                            "key {key}: expected latent or euclidean, got {value:?}"
                        )))
                    }
                }
            }
            "train.phi_updates_constraint_nets" => {
                t.phi_updates_constraint_nets = parse_bool(key, value)?
            }
            "train.n_action_samples" => t.n_action_samples = parse_num(key, value)?,
            "train.cql_action_noise_std" => t.cql_action_noise_std = parse_num(key, value)?,
            "train.target_update_rate" => t.target_update_rate = parse_num(key, value)?,
            "train.epochs" => t.epochs = parse_num(key, value)?,
            "train.batch_size" => t.batch_size = parse_num(key, value)?,
            "train.lr_actor" => t.lr_actor = parse_num(key, value)?,
            "train.lr_critic" => t.lr_critic = parse_num(key, value)?,
            "train.lr_h" => t.lr_h = parse_num(key, value)?,
            "train.lr_g" => t.lr_g = parse_num(key, value)?,
            "train.hidden_actor_critic" => t.hidden_actor_critic = parse_list(key, value)?,
            "train.hidden_constraint" => t.hidden_constraint = parse_list(key, value)?,
            "train.d_proj" => t.d_proj = parse_num(key, value)?,

            "fqe.gamma" => f.gamma = parse_num(key, value)?,
            "fqe.epochs" => f.epochs = parse_num(key, value)?,
            "fqe.batch_size" => f.batch_size = parse_num(key, value)?,
            "fqe.learning_rate" => f.learning_rate = parse_num(key, value)?,
            "fqe.hidden" => f.hidden = parse_list(key, value)?,

            "band.sigma" => self.band.sigma = parse_num(key, value)?,
            "band.n_samples" => self.band.n_samples = parse_num(key, value)?,

            "explain.samples" => self.explain_samples = parse_num(key, value)?,
            "explain.background" => self.explain_background = parse_num(key, value)?,
            "explain.permutations" => self.explain_permutations = parse_num(key, value)?,

            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a plain-text config: one `key = value` per line, `#` comments
    /// and blank lines ignored, later assignments win.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got {raw_line:?}",
                    lineno + 1
                )));
            };
            config.apply(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Canonical dump of every key; `parse(dump())` reproduces the config.
    pub fn dump(&self) -> String {
        let g = &self.generate;
        let b = &g.behavior;
        let p = &g.population;
        let t = &self.train;
        let f = &self.fqe;
        let phi_variant = match t.phi_variant {
            PhiVariant::Latent => "latent",
            PhiVariant::Euclidean => "euclidean",
        };
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("seed", self.seed.to_string());
        kv("output_root", self.output_root.display().to_string());
        kv("raw_dir", self.raw_dir().display().to_string());
        kv("processed_dir", self.processed_dir().display().to_string());
        kv("checkpoint", self.checkpoint().display().to_string());
        kv("generate.n_surgeries", g.n_surgeries.to_string());
        kv("generate.duration_min_steps", g.duration_min_steps.to_string());
        kv("generate.duration_max_steps", g.duration_max_steps.to_string());
        kv("generate.missing_cell_prob", g.missing_cell_prob.to_string());
        kv("generate.inhaled_fraction", g.inhaled_fraction.to_string());
        kv("generate.missing_dose_fraction", g.missing_dose_fraction.to_string());
        kv("generate.remi_hold_steps", g.remi_hold_steps.to_string());
        kv("behavior.kp", b.kp.to_string());
        kv("behavior.ki", b.ki.to_string());
        kv("behavior.dose_noise_std", b.dose_noise_std.to_string());
        kv("behavior.adjustment_period", b.adjustment_period.to_string());
        kv("behavior.target_map", b.target_map.to_string());
        kv("behavior.maintenance_dose", b.maintenance_dose.to_string());
        kv("behavior.dose_cap", b.dose_cap.to_string());
        kv("behavior.induction_steps", b.induction_steps.to_string());
        kv("population.age_mean", p.age_mean.to_string());
        kv("population.age_spread", p.age_spread.to_string());
        kv("population.height_mean", p.height_mean.to_string());
        kv("population.height_spread", p.height_spread.to_string());
        kv("population.weight_mean", p.weight_mean.to_string());
        kv("population.weight_spread", p.weight_spread.to_string());
        kv("population.baseline_map_mean", p.baseline_map_mean.to_string());
        kv("population.baseline_map_spread", p.baseline_map_spread.to_string());
        kv("population.emax_mean", p.emax_mean.to_string());
        kv("population.emax_spread", p.emax_spread.to_string());
        kv("population.ec50_mean", p.ec50_mean.to_string());
        kv("population.ec50_spread", p.ec50_spread.to_string());
        kv("population.hill_mean", p.hill_mean.to_string());
        kv("population.hill_spread", p.hill_spread.to_string());
        kv("population.ke0_mean", p.ke0_mean.to_string());
        kv("population.ke0_spread", p.ke0_spread.to_string());
        kv("population.k10_mean", p.k10_mean.to_string());
        kv("population.k10_spread", p.k10_spread.to_string());
        kv("population.v1_mean", p.v1_mean.to_string());
        kv("population.v1_spread", p.v1_spread.to_string());
        kv("population.noise_std", p.noise_std.to_string());
        kv("population.remi_sensitivity_mean", p.remi_sensitivity_mean.to_string());
        kv("population.remi_sensitivity_spread", p.remi_sensitivity_spread.to_string());
        kv("filter.min_duration_steps", self.filter_min_duration_steps.to_string());
        kv("filter.max_missing_fraction", self.filter_max_missing_fraction.to_string());
        kv("impute.k", self.impute_k.to_string());
        kv("train.gamma", t.gamma.to_string());
        kv("train.alpha_cql", t.alpha_cql.to_string());
        kv("train.tau_temp", t.tau_temp.to_string());
        kv("train.phi_weight", t.phi_weight.to_string());
        kv("train.phi_variant", phi_variant.to_string());
        kv(
            "train.phi_updates_constraint_nets",
            t.phi_updates_constraint_nets.to_string(),
        );
        kv("train.n_action_samples", t.n_action_samples.to_string());
        kv("train.cql_action_noise_std", t.cql_action_noise_std.to_string());
        kv("train.target_update_rate", t.target_update_rate.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.lr_actor", t.lr_actor.to_string());
        kv("train.lr_critic", t.lr_critic.to_string());
        kv("train.lr_h", t.lr_h.to_string());
        kv("train.lr_g", t.lr_g.to_string());
        kv("train.hidden_actor_critic", fmt_list(&t.hidden_actor_critic));
        kv("train.hidden_constraint", fmt_list(&t.hidden_constraint));
        kv("train.d_proj", t.d_proj.to_string());
        kv("fqe.gamma", f.gamma.to_string());
        kv("fqe.epochs", f.epochs.to_string());
        kv("fqe.batch_size", f.batch_size.to_string());
        kv("fqe.learning_rate", f.learning_rate.to_string());
        kv("fqe.hidden", fmt_list(&f.hidden));
        kv("band.sigma", self.band.sigma.to_string());
        kv("band.n_samples", self.band.n_samples.to_string());
        kv("explain.samples", self.explain_samples.to_string());
        kv("explain.background", self.explain_background.to_string());
        kv("explain.permutations", self.explain_permutations.to_string());
        out
    }
}
