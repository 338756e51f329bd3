//! Fitted Q evaluation: retrains a fresh Q network against a frozen policy on
//! the held-out transitions, then reads off the mean initial-state value.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::domain::{flatten_observation, standardize, Action, ObservationState, OfflineDataset, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, MlpNetwork, OutputHead, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FqeConfig {
    /// Discount factor, in (0, 1) — or 0 for pure immediate-reward fitting.
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Hidden widths of the value network.
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for FqeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epochs: 60,
            batch_size: 256,
            learning_rate: 1e-3,
            hidden: vec![128, 128],
            seed: 0,
        }
    }
}

impl FqeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("fqe gamma must be in [0, 1), got {}", self.gamma)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("fqe epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "fqe learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("fqe hidden widths must be nonempty and positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FqeOutcome {
    /// Mean over test episodes of `Q(s₀, policy(s₀))`.
    pub initial_state_return: f64,
    /// True when the fitted values blew past 10× the discounted reward bound.
    /// The estimate is still reported; callers should surface the flag.
    pub diverged: bool,
    /// Largest |Q| seen over the dataset's state-action pairs at the end.
    pub q_abs_max: f64,
    /// `10·r_max/(1−γ)`, the divergence threshold applied.
    pub divergence_threshold: f64,
}

/// Off-policy value estimate of `policy` from the test split's transitions.
/// Deterministic given `config.seed`.
pub fn fqe_evaluate<F>(policy: F, test: &OfflineDataset, config: &FqeConfig) -> Result<FqeOutcome>
where
    F: Fn(&ObservationState) -> Result<Action>,
{
    config.validate()?;
    test.validate()?;
    let n = test.n_transitions();
    if n == 0 {
        return Err(Error::Data("fqe needs a nonempty test split".into()));
    }

    // flatten once: standardized states, data actions, the frozen policy's
    // next-state actions, rewards, terminals
    let mut states = Vec::with_capacity(n * OBS_DIM);
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut next_inputs = Vec::with_capacity(n * (OBS_DIM + 1));
    let mut terminals = Vec::with_capacity(n);
    for tr in test.transitions() {
        states.extend(standardize(&flatten_observation(&tr.state), &test.meta)?);
        actions.push(tr.action.normalized());
        rewards.push(tr.reward);
        let mut next = standardize(&flatten_observation(&tr.next_state), &test.meta)?;
        next.push(policy(&tr.next_state)?.normalized());
        next_inputs.extend(next);
        terminals.push(if tr.terminal { 1.0 } else { 0.0 });
    }
    let mut data_inputs = Vec::with_capacity(n * (OBS_DIM + 1));
    for i in 0..n {
        data_inputs.extend_from_slice(&states[i * OBS_DIM..(i + 1) * OBS_DIM]);
        data_inputs.push(actions[i]);
    }
    let mut initial_inputs = Vec::new();
    for ep in &test.episodes {
        let s0 = &ep.transitions[0].state;
        let mut row = standardize(&flatten_observation(s0), &test.meta)?;
        row.push(policy(s0)?.normalized());
        initial_inputs.extend(row);
    }
    let n_episodes = test.episodes.len();

    let mut widths = vec![OBS_DIM + 1];
    widths.extend_from_slice(&config.hidden);
    widths.push(1);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut q = MlpNetwork::new(&widths, OutputHead::Identity, &mut rng);
    let mut q_frozen = q.clone();
    let sizes: Vec<usize> = q.params().iter().map(|t| t.len()).collect();
    let mut opt = AdamState::new(config.learning_rate, &sizes);

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        // bootstrap targets from the previous epoch's frozen network
        let q_next = q_frozen.infer(&next_inputs, n);
        let targets: Vec<f64> = (0..n)
            .map(|i| rewards[i] + config.gamma * (1.0 - terminals[i]) * q_next[i])
            .collect();

        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let m = chunk.len();
            let mut xb = Vec::with_capacity(m * (OBS_DIM + 1));
            let mut yb = Vec::with_capacity(m);
            for &i in chunk {
                xb.extend_from_slice(&data_inputs[i * (OBS_DIM + 1)..(i + 1) * (OBS_DIM + 1)]);
                yb.push(targets[i]);
            }
            let mut tape = Tape::new();
            let qh = q.leaf_on(&mut tape, true);
            let x = tape.constant(Tensor::new(m, OBS_DIM + 1, xb));
            let y = tape.constant(Tensor::new(m, 1, yb));
            let pred = qh.forward(&mut tape, x);
            let diff = tape.sub(pred, y);
            let sq = tape.square(diff);
            let loss = tape.mean_all(sq);
            let grads = tape
                .backward(loss)
                .map_err(|e| Error::Training(format!("fqe epoch {epoch}: {e}")))?;
            let gs: Vec<Tensor> =
                qh.param_ids().iter().map(|id| grads.get(&tape, *id)).collect();
            let mut params = q.params_mut();
            adam_step(&mut params, &gs, &mut opt)?;
        }
        q_frozen = q.clone();
    }

    let q_data = q.infer(&data_inputs, n);
    let q_abs_max = q_data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let r_max = rewards.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let divergence_threshold = if config.gamma < 1.0 {
        10.0 * r_max / (1.0 - config.gamma)
    } else {
        f64::INFINITY
    };
    let q0 = q.infer(&initial_inputs, n_episodes);
    Ok(FqeOutcome {
        initial_state_return: q0.iter().sum::<f64>() / n_episodes as f64,
        diverged: q_abs_max > divergence_threshold,
        q_abs_max,
        divergence_threshold,
    })
}
