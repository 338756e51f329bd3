//! Command-line entry point for the dosing pipeline:
//! `generate` a synthetic raw dataset, `ingest` it into reward-labeled
//! transition splits, `train` a policy, `evaluate` it off-policy, and
//! `explain` its recommendations.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage/config errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pcql::algorithms::{load_checkpoint, save_checkpoint, train_pcql};
use pcql::config::RunConfig;
use pcql::data::{
    build_transition_dataset, filter_surgeries, impute_knn, read_processed, read_raw_dir,
    split_ids, write_processed, write_raw_dir, SPLIT_RATIOS,
};
use pcql::derive_seed;
use pcql::domain::{SplitTag, OBS_DIM};
use pcql::error::{Error, Result};
use pcql::eval::{evaluate_agent, write_episode_curves, write_report_json, EvalReport};
use pcql::explain::{attribute_agent, shapley_attribution, write_attribution_json, write_scores_csv};
use pcql::simenv::generate_dataset;

#[derive(Parser)]
#[command(name = "pcql", version, about = "Offline RL pipeline for continuous anesthetic dosing")]
struct Cli {
    /// Plain-text run configuration file (`key = value` lines, `#` comments).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.epochs=50`. Repeatable;
    /// applied after the file, in order.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    /// Conservative critic plus the learned policy-constraint penalty.
    Pcql,
    /// Conservative critic only (constraint weight forced to zero).
    Cql,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate surgeries and write the raw CSV dataset.
    Generate {
        /// Replace an existing non-empty raw directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Filter, impute, label, and split the raw dataset into train/valid/test.
    Ingest,
    /// Train a policy on the processed splits and write a checkpoint.
    Train {
        #[arg(long, value_enum, default_value_t = Variant::Pcql)]
        variant: Variant,
    },
    /// Off-policy evaluation of one or more checkpoints on the test split.
    Evaluate {
        /// Checkpoint path; repeat to compare several. Defaults to the
        /// configured checkpoint.
        #[arg(long = "checkpoint", value_name = "PATH")]
        checkpoints: Vec<PathBuf>,
    },
    /// Shapley attribution of the policy's dose recommendations.
    Explain {
        /// First verify the attribution engine on a linear model with a known
        /// closed-form answer.
        #[arg(long)]
        self_test: bool,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config file {}: {e}", path.display()))
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for pair in &cli.set {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")));
        };
        config.apply(key.trim(), value.trim())?;
    }
    Ok(config)
}

fn run_generate(config: &RunConfig, overwrite: bool) -> Result<()> {
    let dir = config.raw_dir();
    let occupied = dir.read_dir().map(|mut it| it.next().is_some()).unwrap_or(false);
    if occupied && !overwrite {
        return Err(Error::Config(format!(
            "raw directory {} already contains files; pass --overwrite to replace it",
            dir.display()
        )));
    }
    let mut gen = config.generate.clone();
    gen.seed = derive_seed(config.seed, "generate");
    let surgeries = generate_dataset(&gen)?;
    write_raw_dir(&dir, &surgeries)?;
    let steps: usize = surgeries.iter().map(|s| s.rows.len()).sum();
    println!(
        "generated {} surgeries ({steps} total steps) into {}",
        surgeries.len(),
        dir.display()
    );
    Ok(())
}

fn run_ingest(config: &RunConfig) -> Result<()> {
    let raw = read_raw_dir(&config.raw_dir())?;
    let n_raw = raw.len();
    let (kept, report) = filter_surgeries(
        raw,
        config.filter_min_duration_steps,
        config.filter_max_missing_fraction,
    )?;
    let imputed: Vec<_> = kept
        .into_iter()
        .map(|s| impute_knn(s, config.impute_k))
        .collect::<Result<_>>()?;

    let ids: Vec<String> = imputed.iter().map(|s| s.surgery_id.clone()).collect();
    let split_seed = derive_seed(config.seed, "split");
    let (train_ids, valid_ids, test_ids) = split_ids(&ids, SPLIT_RATIOS, split_seed)?;
    let pick = |wanted: &[String]| -> Vec<_> {
        let set: std::collections::BTreeSet<&str> = wanted.iter().map(|s| s.as_str()).collect();
        imputed.iter().filter(|s| set.contains(s.surgery_id.as_str())).cloned().collect()
    };

    // normalization statistics come from the training split alone and are
    // reused verbatim for the other two
    let train = build_transition_dataset(&pick(&train_ids), None, SplitTag::Train)?;
    let valid = build_transition_dataset(&pick(&valid_ids), Some(&train.meta), SplitTag::Valid)?;
    let test = build_transition_dataset(&pick(&test_ids), Some(&train.meta), SplitTag::Test)?;

    let out = config.processed_dir();
    write_processed(&out.join("train"), &train, Some(split_seed))?;
    write_processed(&out.join("valid"), &valid, Some(split_seed))?;
    write_processed(&out.join("test"), &test, Some(split_seed))?;

    println!(
        "read {n_raw} surgeries; rejected {} (no dosing {}, too short {}, missing vitals {}, inhaled {}); retained {}",
        report.rejected(),
        report.missing_dosing,
        report.too_short,
        report.severe_missing_vitals,
        report.inhaled,
        report.retained,
    );
    println!(
        "split {}/{}/{} episodes into {}",
        train.episodes.len(),
        valid.episodes.len(),
        test.episodes.len(),
        out.display()
    );
    Ok(())
}

fn run_train(config: &RunConfig, variant: Variant) -> Result<()> {
    let processed = config.processed_dir();
    let train = read_processed(&processed.join("train"))?;
    let valid = read_processed(&processed.join("valid"))?;

    let mut tc = config.train.clone();
    tc.seed = derive_seed(config.seed, "train");
    if variant == Variant::Cql {
        tc.phi_weight = 0.0;
    }
    let (agent, log) = train_pcql(&train, &valid, &tc)?;

    std::fs::create_dir_all(&config.output_root)?;
    let checkpoint = config.checkpoint();
    if let Some(parent) = checkpoint.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_checkpoint(&agent, &checkpoint)?;
    std::fs::write(config.output_root.join("train_steps.csv"), log.steps_to_csv())?;
    std::fs::write(config.output_root.join("train_epochs.csv"), log.epochs_to_csv())?;

    if let Some(last) = log.epochs.last() {
        println!(
            "trained {} epochs: valid critic loss {:.6}, phi {:.6}, dose agreement error {:.2}%",
            log.epochs.len(),
            last.valid_critic_loss,
            last.valid_phi,
            last.valid_mape_pct
        );
    } else {
        println!("trained 0 epochs (fresh networks saved)");
    }
    println!("checkpoint written to {}", checkpoint.display());
    Ok(())
}

fn report_stem(path: &std::path::Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into())
}

fn run_evaluate(config: &RunConfig, checkpoints: &[PathBuf]) -> Result<()> {
    let defaults = [config.checkpoint()];
    let paths: &[PathBuf] = if checkpoints.is_empty() { &defaults } else { checkpoints };
    let test = read_processed(&config.processed_dir().join("test"))?;
    let seed = derive_seed(config.seed, "evaluate");

    let mut rows: Vec<(String, EvalReport)> = Vec::new();
    for path in paths {
        let agent = load_checkpoint(path)?;
        let report = evaluate_agent(&agent, &test, &config.fqe, &config.band, seed)?;
        let stem = report_stem(path);
        let out_dir = config.output_root.join("eval").join(&stem);
        std::fs::create_dir_all(&out_dir)?;
        write_report_json(&report, &out_dir.join("report.json"))?;
        write_episode_curves(&agent, &test, &report, &out_dir.join("curves"))?;
        rows.push((stem, report));
    }

    println!(
        "{:<24} {:>12} {:>12} {:>9} {:>9} {:>10} {:>9}",
        "checkpoint", "return", "behavior", "mape%", "rmse", "mean_dose", "rho_map"
    );
    for (name, r) in &rows {
        println!(
            "{:<24} {:>12.4} {:>12.4} {:>9.2} {:>9.4} {:>10.4} {:>9.4}{}",
            name,
            r.initial_state_return,
            r.initial_state_return_behavior,
            r.mape_pct,
            r.rmse,
            r.mean_dose_physical,
            r.pearson_dose_map,
            if r.fqe_diverged { "  [diverged]" } else { "" },
        );
    }
    println!("reports written under {}", config.output_root.join("eval").display());
    Ok(())
}

/// Checks the attribution engine against a linear model, whose Shapley values
/// have the closed form `w_i (x_i - b_i)`.
fn explain_self_test() -> Result<()> {
    let w: Vec<f64> = (0..OBS_DIM).map(|i| 0.3 * (i as f64 - 8.0)).collect();
    let sample: Vec<f64> = (0..OBS_DIM).map(|i| 1.0 + 0.1 * i as f64).collect();
    let background = vec![vec![-0.5; OBS_DIM]];
    let model = {
        let w = w.clone();
        move |x: &[f64]| Ok(w.iter().zip(x).map(|(wi, xi)| wi * xi).sum())
    };
    let phi = shapley_attribution(model, &sample, &background, 8, 11)?;
    for i in 0..OBS_DIM {
        let exact = w[i] * (sample[i] - background[0][i]);
        if (phi[i] - exact).abs() > 1e-10 {
            return Err(Error::Numeric(format!(
                "self-test failed on feature {i}: got {}, expected {exact}",
                phi[i]
            )));
        }
    }
    println!("self-test passed: linear-model attributions match the closed form");
    Ok(())
}

fn run_explain(config: &RunConfig, self_test: bool) -> Result<()> {
    if self_test {
        explain_self_test()?;
    }
    let processed = config.processed_dir();
    let train = read_processed(&processed.join("train"))?;
    let test = read_processed(&processed.join("test"))?;
    let agent = load_checkpoint(&config.checkpoint())?;
    let report = attribute_agent(
        &agent,
        &train,
        &test,
        config.explain_samples,
        config.explain_background,
        config.explain_permutations,
        derive_seed(config.seed, "explain"),
    )?;

    let out_dir = config.output_root.join("explain");
    std::fs::create_dir_all(&out_dir)?;
    write_attribution_json(&report, &out_dir.join("attributions.json"))?;
    write_scores_csv(&report, &out_dir.join("scores.csv"))?;

    println!("top features by mean |attribution| (mg/kg/h of recommended dose):");
    for &i in report.ranking.iter().take(5) {
        println!("  {:<28} {:.6}", report.feature_names[i], report.absolute_mean_scores[i]);
    }
    println!("full attribution written to {}", out_dir.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<bool> {
    let config = load_config(cli)?;
    if cli.print_config {
        print!("{}", config.dump());
        return Ok(true);
    }
    match &cli.command {
        None => Ok(false),
        Some(Command::Generate { overwrite }) => run_generate(&config, *overwrite).map(|_| true),
        Some(Command::Ingest) => run_ingest(&config).map(|_| true),
        Some(Command::Train { variant }) => run_train(&config, *variant).map(|_| true),
        Some(Command::Evaluate { checkpoints }) => {
            run_evaluate(&config, checkpoints).map(|_| true)
        }
        Some(Command::Explain { self_test }) => run_explain(&config, *self_test).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: a subcommand is required (try --help)");
            ExitCode::from(2)
        }
        Err(e @ (Error::Config(_) | Error::Schema(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
