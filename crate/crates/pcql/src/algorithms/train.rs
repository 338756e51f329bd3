//! The joint training loop. Per mini-batch, in order: (1) update the
//! constraint networks h and g on cycle + entropy consistency, (2) update
//! both critics on the TD loss plus the conservative penalty, (3) update the
//! actor on its Q-ascent objective plus the weighted constraint penalty,
//! (4) soft-update the target critics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::algorithms::agent::PcqlAgent;
use crate::algorithms::config::{PhiVariant, TrainConfig};
use crate::algorithms::losses::{
    actor_loss, compute_backup, constraint_cycle_loss, constraint_entropy_loss,
    cql_conservative_term, critic_td_loss, draw_cql_action_samples, Batch,
};
use crate::domain::{flatten_observation, standardize, OfflineDataset, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, MlpNetwork, Tape, Tensor};

/// One optimizer step's logged loss components.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_td: f64,
    pub l_cql: f64,
    pub l_actor: f64,
    pub phi: f64,
    pub l_cycle: f64,
    pub l_entropy: f64,
    /// L2 norm over every gradient applied in this step.
    pub grad_norm: f64,
}

/// Per-epoch validation metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub valid_critic_loss: f64,
    pub valid_phi: f64,
    /// Actor-vs-data dose agreement on the validation split, percent.
    pub valid_mape_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn steps_to_csv(&self) -> String {
        let mut out =
            String::from("epoch,step,l_td,l_cql,l_actor,phi,l_cycle,l_entropy,grad_norms\n");
        for r in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.epoch, r.step, r.l_td, r.l_cql, r.l_actor, r.phi, r.l_cycle, r.l_entropy,
                r.grad_norm
            ));
        }
        out
    }

    pub fn epochs_to_csv(&self) -> String {
        let mut out = String::from("epoch,valid_critic_loss,valid_phi,valid_mape_pct\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.valid_critic_loss, r.valid_phi, r.valid_mape_pct
            ));
        }
        out
    }
}

/// Flat standardized transition arrays for fast batch assembly.
struct FlatData {
    n: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    terminals: Vec<f64>,
}

fn flatten_dataset(ds: &OfflineDataset) -> Result<FlatData> {
    let n = ds.n_transitions();
    let mut out = FlatData {
        n,
        states: Vec::with_capacity(n * OBS_DIM),
        actions: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        next_states: Vec::with_capacity(n * OBS_DIM),
        terminals: Vec::with_capacity(n),
    };
    for tr in ds.transitions() {
        out.states.extend(standardize(&flatten_observation(&tr.state), &ds.meta)?);
        out.next_states.extend(standardize(&flatten_observation(&tr.next_state), &ds.meta)?);
        out.actions.push(tr.action.normalized());
        out.rewards.push(tr.reward);
        out.terminals.push(if tr.terminal { 1.0 } else { 0.0 });
    }
    Ok(out)
}

fn gather_batch(data: &FlatData, idx: &[usize]) -> Batch {
    let n = idx.len();
    let mut b = Batch {
        n,
        states: Vec::with_capacity(n * OBS_DIM),
        actions: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        next_states: Vec::with_capacity(n * OBS_DIM),
        terminals: Vec::with_capacity(n),
    };
    for &i in idx {
        b.states.extend_from_slice(&data.states[i * OBS_DIM..(i + 1) * OBS_DIM]);
        b.next_states.extend_from_slice(&data.next_states[i * OBS_DIM..(i + 1) * OBS_DIM]);
        b.actions.push(data.actions[i]);
        b.rewards.push(data.rewards[i]);
        b.terminals.push(data.terminals[i]);
    }
    b
}

/// In-place exponential target tracking: `target ← (1−ρ)·target + ρ·online`.
pub fn soft_update(target: &mut MlpNetwork, online: &MlpNetwork, rho: f64) {
    debug_assert_eq!(target.widths, online.widths);
    let online_flat = online.flat_params();
    let mut flat = target.flat_params();
    for (t, o) in flat.iter_mut().zip(&online_flat) {
        *t = (1.0 - rho) * *t + rho * *o;
    }
    target.set_flat_params(&flat).expect("matched widths");
}

fn grad_norm_sq(grads: &[Tensor]) -> f64 {
    grads.iter().flat_map(|g| g.data.iter()).map(|v| v * v).sum()
}

fn apply_group(
    nets: &mut [&mut MlpNetwork],
    grads: Vec<Tensor>,
    opt: &mut AdamState,
) -> Result<()> {
    let mut params = Vec::new();
    for net in nets.iter_mut() {
        params.extend(net.params_mut());
    }
    adam_step(&mut params, &grads, opt)
}

/// Trains a fresh agent on the training split. Deterministic given
/// `config.seed`; `epochs = 0` returns the freshly initialized agent.
pub fn train_pcql(
    train: &OfflineDataset,
    valid: &OfflineDataset,
    config: &TrainConfig,
) -> Result<(PcqlAgent, TrainingLog)> {
    config.validate()?;
    train.validate()?;
    valid.validate()?;
    if (train.meta.p_max - valid.meta.p_max).abs() > 1e-12
        || train.meta.feature_means != valid.meta.feature_means
        || train.meta.feature_stds != valid.meta.feature_stds
    {
        return Err(Error::Training(
            "training and validation metadata disagree (splits must share the training meta)"
                .into(),
        ));
    }
    if train.n_transitions() == 0 || valid.n_transitions() == 0 {
        return Err(Error::Training("training and validation splits must be nonempty".into()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut agent = PcqlAgent::new(train.meta.clone(), config.clone(), &mut rng)?;
    let data = flatten_dataset(train)?;
    let valid_data = flatten_dataset(valid)?;
    let mut log = TrainingLog::default();
    let use_euclidean = config.phi_variant == PhiVariant::Euclidean;

    let mut order: Vec<usize> = (0..data.n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let at = |e: Error| Error::Training(format!("epoch {epoch} step {step}: {e}"));
            let batch = gather_batch(&data, chunk);

            // (1) constraint networks on cycle + entropy consistency
            let (l_cycle, l_entropy, mut norm_sq_total) = {
                let mut tape = Tape::new();
                let hh = agent.h.leaf_on(&mut tape, true);
                let gh = agent.g.leaf_on(&mut tape, true);
                let cycle = constraint_cycle_loss(&mut tape, &hh, &gh, &batch);
                let entropy = constraint_entropy_loss(&mut tape, &hh, &gh, &batch, config.tau_temp);
                let total = tape.add(cycle, entropy);
                let grads = tape.backward(total).map_err(at)?;
                let h_grads: Vec<Tensor> =
                    hh.param_ids().iter().map(|id| grads.get(&tape, *id)).collect();
                let g_grads: Vec<Tensor> =
                    gh.param_ids().iter().map(|id| grads.get(&tape, *id)).collect();
                let norm_sq = grad_norm_sq(&h_grads) + grad_norm_sq(&g_grads);
                apply_group(
                    &mut [&mut agent.h.encoder, &mut agent.h.predictor, &mut agent.h.projector],
                    h_grads,
                    &mut agent.opt.h,
                )?;
                apply_group(
                    &mut [&mut agent.g.encoder, &mut agent.g.predictor, &mut agent.g.projector],
                    g_grads,
                    &mut agent.opt.g,
                )?;
                (tape.scalar_value(cycle), tape.scalar_value(entropy), norm_sq)
            };

            // (2) critics on TD + conservative penalty
            let backup = compute_backup(&agent, &batch);
            let samples = draw_cql_action_samples(&agent, &batch, &mut rng);
            let (l_td, l_cql) = {
                let mut tape = Tape::new();
                let q1 = agent.q1.leaf_on(&mut tape, true);
                let q2 = agent.q2.leaf_on(&mut tape, true);
                let td = critic_td_loss(&mut tape, &q1, &q2, &batch, &backup);
                let cql = cql_conservative_term(
                    &mut tape,
                    &q1,
                    &q2,
                    &batch,
                    &samples,
                    config.alpha_cql,
                );
                let total = tape.add(td, cql);
                let grads = tape.backward(total).map_err(at)?;
                let mut ids = q1.param_ids();
                ids.extend(q2.param_ids());
                let gs: Vec<Tensor> = ids.iter().map(|id| grads.get(&tape, *id)).collect();
                norm_sq_total += grad_norm_sq(&gs);
                apply_group(&mut [&mut agent.q1, &mut agent.q2], gs, &mut agent.opt.critic)?;
                (tape.scalar_value(td), tape.scalar_value(cql))
            };

            // (3) actor on Q-ascent + weighted constraint penalty
            let (l_actor, phi) = {
                let mut tape = Tape::new();
                let actor = agent.actor.leaf_on(&mut tape, true);
                let q1 = agent.q1.leaf_on(&mut tape, false);
                let q2 = agent.q2.leaf_on(&mut tape, false);
                let joint = config.phi_updates_constraint_nets;
                let hh = agent.h.leaf_on(&mut tape, joint);
                let gh = agent.g.leaf_on(&mut tape, joint);
                let parts = actor_loss(
                    &mut tape,
                    &actor,
                    &q1,
                    &q2,
                    &hh,
                    &gh,
                    &batch,
                    config.phi_weight,
                    use_euclidean,
                    config.tau_temp,
                );
                let grads = tape.backward(parts.total).map_err(at)?;
                let a_grads: Vec<Tensor> =
                    actor.param_ids().iter().map(|id| grads.get(&tape, *id)).collect();
                norm_sq_total += grad_norm_sq(&a_grads);
                apply_group(&mut [&mut agent.actor], a_grads, &mut agent.opt.actor)?;
                if joint {
                    let h_grads: Vec<Tensor> =
                        hh.param_ids().iter().map(|id| grads.get(&tape, *id)).collect();
                    let g_grads: Vec<Tensor> =
                        gh.param_ids().iter().map(|id| grads.get(&tape, *id)).collect();
                    norm_sq_total += grad_norm_sq(&h_grads) + grad_norm_sq(&g_grads);
                    apply_group(
                        &mut [
                            &mut agent.h.encoder,
                            &mut agent.h.predictor,
                            &mut agent.h.projector,
                        ],
                        h_grads,
                        &mut agent.opt.h,
                    )?;
                    apply_group(
                        &mut [
                            &mut agent.g.encoder,
                            &mut agent.g.predictor,
                            &mut agent.g.projector,
                        ],
                        g_grads,
                        &mut agent.opt.g,
                    )?;
                }
                (tape.scalar_value(parts.total), tape.scalar_value(parts.phi_term))
            };

            // (4) soft-update target critics
            soft_update(&mut agent.q1_target, &agent.q1, config.target_update_rate);
            soft_update(&mut agent.q2_target, &agent.q2, config.target_update_rate);

            log.steps.push(StepRecord {
                epoch,
                step,
                l_td,
                l_cql,
                l_actor,
                phi,
                l_cycle,
                l_entropy,
                grad_norm: norm_sq_total.sqrt(),
            });
        }

        log.epochs.push(validate_epoch(&agent, &valid_data, epoch, config)?);
    }

    Ok((agent, log))
}

/// Validation metrics on (a deterministic prefix of) the validation split.
fn validate_epoch(
    agent: &PcqlAgent,
    valid: &FlatData,
    epoch: usize,
    config: &TrainConfig,
) -> Result<EpochRecord> {
    const MAX_VALID: usize = 1024;
    let n = valid.n.min(MAX_VALID);
    let idx: Vec<usize> = (0..n).collect();
    let batch = gather_batch(valid, &idx);
    let backup = compute_backup(agent, &batch);

    let mut tape = Tape::new();
    let q1 = agent.q1.leaf_on(&mut tape, false);
    let q2 = agent.q2.leaf_on(&mut tape, false);
    let td = critic_td_loss(&mut tape, &q1, &q2, &batch, &backup);
    let actor = agent.actor.leaf_on(&mut tape, false);
    let hh = agent.h.leaf_on(&mut tape, false);
    let gh = agent.g.leaf_on(&mut tape, false);
    let parts = actor_loss(
        &mut tape,
        &actor,
        &q1,
        &q2,
        &hh,
        &gh,
        &batch,
        config.phi_weight,
        config.phi_variant == PhiVariant::Euclidean,
        config.tau_temp,
    );
    tape.ensure_finite().map_err(|e| {
        Error::Training(format!("epoch {epoch} validation: {e}"))
    })?;

    // actor-vs-data dose MAPE in physical units
    let p_max = agent.meta.p_max;
    let recommended = tape.value(parts.actions_hat).data.clone();
    let eps = 1e-8;
    let mape_pct = (0..batch.n)
        .map(|i| {
            let y = recommended[i] * p_max;
            let y_star = batch.actions[i] * p_max;
            (y - y_star).abs() / y_star.abs().max(eps)
        })
        .sum::<f64>()
        / batch.n as f64
        * 100.0;

    Ok(EpochRecord {
        epoch,
        valid_critic_loss: tape.scalar_value(td),
        valid_phi: tape.scalar_value(parts.phi_term),
        valid_mape_pct: mape_pct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_transition_dataset, AnestheticType, ClinicalRecord, RawRow, RawSurgery};
    use crate::domain::SplitTag;

    fn toy_surgery(id: &str, maps: &[f64], doses: &[f64]) -> RawSurgery {
        assert_eq!(maps.len(), doses.len() + 1);
        RawSurgery {
            surgery_id: id.into(),
            rows: maps
                .iter()
                .enumerate()
                .map(|(t, m)| RawRow {
                    t: t as u64,
                    ap_sys: Some(m + 30.0),
                    ap_dia: Some(m - 15.0),
                    map: Some(*m),
                    propofol: doses.get(t).copied().map(Some).unwrap_or(None),
                    remifentanil: Some(0.2),
                })
                .collect(),
            clinical: ClinicalRecord {
                age: Some(45.0),
                sex: Some(1),
                height: Some(172.0),
                weight: Some(75.0),
                bmi: Some(25.35),
                asa: Some(2),
            },
            anesthetic_type: AnestheticType::Propofol,
        }
    }

    fn toy_splits() -> (crate::domain::OfflineDataset, crate::domain::OfflineDataset) {
        let mut surgeries = Vec::new();
        for i in 0..6 {
            let base = 90.0 + i as f64;
            let maps: Vec<f64> = (0..8).map(|t| base + (t as f64 * 1.3).sin() * 4.0).collect();
            let doses: Vec<f64> = (0..7).map(|t| 2.0 + ((i + t) % 5) as f64).collect();
            surgeries.push(toy_surgery(&format!("s{i}"), &maps, &doses));
        }
        let train = build_transition_dataset(&surgeries[..4], None, SplitTag::Train).unwrap();
        let valid =
            build_transition_dataset(&surgeries[4..], Some(&train.meta), SplitTag::Valid).unwrap();
        (train, valid)
    }

    fn tiny_config(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            hidden_actor_critic: vec![8, 8],
            hidden_constraint: vec![6],
            d_proj: 3,
            n_action_samples: 2,
            lr_actor: 1e-3,
            lr_critic: 3e-3,
            lr_h: 1e-2,
            lr_g: 1e-2,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_the_fresh_agent() {
        let (train, valid) = toy_splits();
        let config = tiny_config(0, 5);
        let (agent, log) = train_pcql(&train, &valid, &config).unwrap();
        assert!(log.steps.is_empty() && log.epochs.is_empty());
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let fresh = PcqlAgent::new(train.meta.clone(), config, &mut rng).unwrap();
        assert_eq!(agent.actor.flat_params(), fresh.actor.flat_params());
        assert_eq!(agent.q1.flat_params(), fresh.q1.flat_params());
    }

    #[test]
    fn training_is_deterministic_given_the_seed() {
        let (train, valid) = toy_splits();
        let config = tiny_config(2, 7);
        let (a1, log1) = train_pcql(&train, &valid, &config).unwrap();
        let (a2, log2) = train_pcql(&train, &valid, &config).unwrap();
        assert_eq!(a1.actor.flat_params(), a2.actor.flat_params());
        assert_eq!(a1.q1.flat_params(), a2.q1.flat_params());
        assert_eq!(a1.q1_target.flat_params(), a2.q1_target.flat_params());
        assert_eq!(log1, log2);
        assert_eq!(log1.steps_to_csv(), log2.steps_to_csv());

        let other = TrainConfig { seed: 8, ..tiny_config(2, 7) };
        let (a3, _) = train_pcql(&train, &valid, &other).unwrap();
        assert_ne!(a1.actor.flat_params(), a3.actor.flat_params());
    }

    #[test]
    fn soft_update_is_the_exact_convex_combination() {
        let (train, _) = toy_splits();
        let config = tiny_config(0, 0);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let agent = PcqlAgent::new(train.meta.clone(), config.clone(), &mut rng).unwrap();
        let mut rng2 = ChaCha20Rng::seed_from_u64(2);
        let other = PcqlAgent::new(train.meta, config, &mut rng2).unwrap();

        let mut target = agent.q1.clone();
        let old = target.flat_params();
        let online = other.q1.flat_params();
        soft_update(&mut target, &other.q1, 0.005);
        for ((t, o), n) in target.flat_params().iter().zip(&old).zip(&online) {
            assert!((t - ((1.0 - 0.005) * o + 0.005 * n)).abs() < 1e-15);
        }
    }

    #[test]
    fn losses_fall_and_log_shape_is_consistent() {
        let (train, valid) = toy_splits();
        let config = tiny_config(12, 3);
        let (_, log) = train_pcql(&train, &valid, &config).unwrap();
        assert_eq!(log.epochs.len(), 12);
        assert!(!log.steps.is_empty());
        // the combined constraint objective trends down over training
        let objective = |r: &StepRecord| r.l_cycle + r.l_entropy;
        let first_avg: f64 = log.steps.iter().take(4).map(objective).sum::<f64>() / 4.0;
        let last_avg: f64 = log.steps.iter().rev().take(4).map(objective).sum::<f64>() / 4.0;
        assert!(
            last_avg < first_avg,
            "constraint objective did not fall: {first_avg} -> {last_avg}"
        );
        // CSV headers
        assert!(log
            .steps_to_csv()
            .starts_with("epoch,step,l_td,l_cql,l_actor,phi,l_cycle,l_entropy,grad_norms"));
        assert!(log.epochs_to_csv().starts_with("epoch,valid_critic_loss,valid_phi,valid_mape_pct"));
    }

    #[test]
    fn mismatched_split_meta_is_rejected() {
        let (train, valid) = toy_splits();
        let mut bad = valid.clone();
        bad.meta.p_max += 1.0;
        // bump doses so validation still passes its own p_max check
        assert!(train_pcql(&train, &bad, &tiny_config(1, 0)).is_err());
    }
}
