//! The training losses: temporal-difference critic regression, the
//! conservative (log-sum-exp minus data mean) penalty, the actor objective
//! with its constraint penalty, and the cycle/entropy losses that train the
//! constraint networks.
//!
//! Every loss is a pure tape expression over caller-registered network
//! handles, so gradient flow is controlled entirely by which handles were
//! registered with `requires_grad`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::algorithms::agent::{ConstraintHandle, PcqlAgent};
use crate::domain::OBS_DIM;
use crate::error::{Error, Result};
use crate::nn::{MlpHandle, NodeId, Tape, Tensor};

/// One standardized mini-batch in flat row-major form.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    /// n × 19 standardized observations.
    pub states: Vec<f64>,
    /// n × 1 normalized doses.
    pub actions: Vec<f64>,
    /// n × 1 rewards.
    pub rewards: Vec<f64>,
    /// n × 19 standardized next observations.
    pub next_states: Vec<f64>,
    /// n × 1 terminal flags (0.0 or 1.0).
    pub terminals: Vec<f64>,
}

impl Batch {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Training("empty mini-batch".into()));
        }
        let want = [
            ("states", self.states.len(), self.n * OBS_DIM),
            ("actions", self.actions.len(), self.n),
            ("rewards", self.rewards.len(), self.n),
            ("next_states", self.next_states.len(), self.n * OBS_DIM),
            ("terminals", self.terminals.len(), self.n),
        ];
        for (name, got, expect) in want {
            if got != expect {
                return Err(Error::Schema(format!("batch {name}: {got} values, expected {expect}")));
            }
        }
        Ok(())
    }
}

/// Interleaves two row-major blocks column-wise: row i becomes
/// `[a_i | b_i]`.
pub fn rows_concat(a: &[f64], a_cols: usize, b: &[f64], b_cols: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * a_cols);
    debug_assert_eq!(b.len(), n * b_cols);
    let mut out = Vec::with_capacity(n * (a_cols + b_cols));
    for i in 0..n {
        out.extend_from_slice(&a[i * a_cols..(i + 1) * a_cols]);
        out.extend_from_slice(&b[i * b_cols..(i + 1) * b_cols]);
    }
    out
}

/// Detached Bellman backup `r + γ·(1−terminal)·min(Q1ᵗ, Q2ᵗ)(s′, actor(s′))`,
/// computed tape-free since no gradient flows through the target.
pub fn compute_backup(agent: &PcqlAgent, batch: &Batch) -> Vec<f64> {
    let gamma = agent.config.gamma;
    let next_actions = agent.actor.infer(&batch.next_states, batch.n);
    let next_input = rows_concat(&batch.next_states, OBS_DIM, &next_actions, 1, batch.n);
    let q1t = agent.q1_target.infer(&next_input, batch.n);
    let q2t = agent.q2_target.infer(&next_input, batch.n);
    (0..batch.n)
        .map(|i| {
            batch.rewards[i] + gamma * (1.0 - batch.terminals[i]) * q1t[i].min(q2t[i])
        })
        .collect()
}

/// Mean squared Bellman residual of both critics against a detached backup:
/// `½·(mse(Q1, y) + mse(Q2, y))`.
pub fn critic_td_loss(
    tape: &mut Tape,
    q1: &MlpHandle,
    q2: &MlpHandle,
    batch: &Batch,
    backup: &[f64],
) -> NodeId {
    debug_assert_eq!(backup.len(), batch.n);
    let input = rows_concat(&batch.states, OBS_DIM, &batch.actions, 1, batch.n);
    let x = tape.constant(Tensor::new(batch.n, OBS_DIM + 1, input));
    let y = tape.constant(Tensor::new(batch.n, 1, backup.to_vec()));
    let mut halves = Vec::new();
    for q in [q1, q2] {
        let pred = q.forward(tape, x);
        let diff = tape.sub(pred, y);
        let sq = tape.square(diff);
        halves.push(tape.mean_all(sq));
    }
    let sum = tape.add(halves[0], halves[1]);
    tape.scale(sum, 0.5)
}

/// Pre-drawn action samples for the conservative term, frozen so the loss is
/// a deterministic function of the networks (finite-difference testable).
#[derive(Debug, Clone, PartialEq)]
pub struct CqlActionSamples {
    /// Samples per state per group.
    pub k: usize,
    /// n × k uniform draws in [0, 1].
    pub uniform: Vec<f64>,
    /// n × k actor actions perturbed by Gaussian noise, clamped to [0, 1].
    pub policy: Vec<f64>,
}

/// Draws the two sample groups for [`cql_conservative_term`].
pub fn draw_cql_action_samples<R: Rng>(
    agent: &PcqlAgent,
    batch: &Batch,
    rng: &mut R,
) -> CqlActionSamples {
    let k = agent.config.n_action_samples;
    let noise_std = agent.config.cql_action_noise_std;
    let uniform: Vec<f64> = (0..batch.n * k).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let mean_actions = agent.actor.infer(&batch.states, batch.n);
    let normal = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).unwrap();
    let policy: Vec<f64> = (0..batch.n)
        .flat_map(|i| {
            let mu = mean_actions[i];
            (0..k)
                .map(|_| {
                    let eps = if noise_std > 0.0 { normal.sample(rng) } else { 0.0 };
                    (mu + eps).clamp(0.0, 1.0)
                })
                .collect::<Vec<f64>>()
        })
        .collect();
    CqlActionSamples { k, uniform, policy }
}

/// Conservative penalty
/// `α · mean_s[ logΣ_a exp Q(s,a) − ln(#samples) − Q(s, a_data) ]`,
/// averaged over both critics. The log-sum-exp over the continuous action
/// space is estimated from the frozen `samples`.
pub fn cql_conservative_term(
    tape: &mut Tape,
    q1: &MlpHandle,
    q2: &MlpHandle,
    batch: &Batch,
    samples: &CqlActionSamples,
    alpha: f64,
) -> NodeId {
    let k = samples.k;
    let m = 2 * k; // total samples per state
    debug_assert_eq!(samples.uniform.len(), batch.n * k);
    debug_assert_eq!(samples.policy.len(), batch.n * k);

    // Big batch: for each state, 2k rows of [s | a_sample].
    let mut big = Vec::with_capacity(batch.n * m * (OBS_DIM + 1));
    for i in 0..batch.n {
        let s = &batch.states[i * OBS_DIM..(i + 1) * OBS_DIM];
        for group in [&samples.uniform, &samples.policy] {
            for j in 0..k {
                big.extend_from_slice(s);
                big.push(group[i * k + j]);
            }
        }
    }
    let big = tape.constant(Tensor::new(batch.n * m, OBS_DIM + 1, big));
    let data_input = rows_concat(&batch.states, OBS_DIM, &batch.actions, 1, batch.n);
    let data = tape.constant(Tensor::new(batch.n, OBS_DIM + 1, data_input));

    let mut terms = Vec::new();
    for q in [q1, q2] {
        let q_samples = q.forward(tape, big);
        let grid = tape.reshape(q_samples, batch.n, m);
        let lse = tape.logsumexp_rows(grid);
        let corrected = tape.add_const(lse, -(m as f64).ln());
        let q_data = q.forward(tape, data);
        let gap = tape.sub(corrected, q_data);
        terms.push(tape.mean_all(gap));
    }
    let sum = tape.add(terms[0], terms[1]);
    tape.scale(sum, 0.5 * alpha)
}

/// Latent constraint penalty
/// `Φ(s, â) = H(Prj(h(s,â)), Prj(h(s, ȧ)))` at temperature τ, with
/// `ȧ = g(s, h(s,â))` and the first (target) projection detached.
pub fn phi_penalty(
    tape: &mut Tape,
    h: &ConstraintHandle,
    g: &ConstraintHandle,
    states: NodeId,
    actions_hat: NodeId,
    tau: f64,
) -> NodeId {
    let sa = tape.concat_cols(states, actions_hat);
    let (s_next_pred, proj_target) = h.predict_and_project(tape, sa);
    let gs = tape.concat_cols(states, s_next_pred);
    let a_recon = g.predict(tape, gs);
    let sa_recon = tape.concat_cols(states, a_recon);
    let (_, proj_recon) = h.predict_and_project(tape, sa_recon);
    let target = tape.detach(proj_target);
    tape.softmax_xent(target, proj_recon, tau)
}

/// Euclidean constraint variant: batch-mean of `‖g(s, h(s,â)) − â‖₂`.
pub fn phi_euclidean(
    tape: &mut Tape,
    h: &ConstraintHandle,
    g: &ConstraintHandle,
    states: NodeId,
    actions_hat: NodeId,
) -> NodeId {
    let sa = tape.concat_cols(states, actions_hat);
    let s_next_pred = h.predict(tape, sa);
    let gs = tape.concat_cols(states, s_next_pred);
    let a_recon = g.predict(tape, gs);
    let diff = tape.sub(a_recon, actions_hat);
    let sq = tape.square(diff);
    let row_norm_sq = tape.sum_rows(sq);
    let row_norm = tape.sqrt(row_norm_sq);
    tape.mean_all(row_norm)
}

/// Actor objective pieces: `(total, q_term, phi_term)` with
/// `total = q_term + phi_weight·phi_term` and
/// `q_term = −mean min(Q1, Q2)(s, â)`.
pub struct ActorLossParts {
    pub total: NodeId,
    pub q_term: NodeId,
    pub phi_term: NodeId,
    pub actions_hat: NodeId,
}

/// Builds the actor objective on the tape. Critics and (by default) the
/// constraint networks are registered by the caller without gradients, so
/// only the actor trains; â carries gradient into the actor.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss(
    tape: &mut Tape,
    actor: &MlpHandle,
    q1: &MlpHandle,
    q2: &MlpHandle,
    h: &ConstraintHandle,
    g: &ConstraintHandle,
    batch: &Batch,
    phi_weight: f64,
    use_euclidean: bool,
    tau: f64,
) -> ActorLossParts {
    let states = tape.constant(Tensor::new(batch.n, OBS_DIM, batch.states.clone()));
    let actions_hat = actor.forward(tape, states);
    let critic_input = tape.concat_cols(states, actions_hat);
    let qa = q1.forward(tape, critic_input);
    let qb = q2.forward(tape, critic_input);
    let qmin = tape.min_elem(qa, qb);
    let mean_q = tape.mean_all(qmin);
    let q_term = tape.scale(mean_q, -1.0);
    let phi_term = if use_euclidean {
        phi_euclidean(tape, h, g, states, actions_hat)
    } else {
        phi_penalty(tape, h, g, states, actions_hat, tau)
    };
    let weighted = tape.scale(phi_term, phi_weight);
    let total = tape.add(q_term, weighted);
    ActorLossParts { total, q_term, phi_term, actions_hat }
}

/// Cycle-consistency loss
/// `mean‖g(s,h(s,a)) − a‖² + mean‖h(s,g(s,s′)) − s′‖²` (squared norms,
/// batch-mean per term).
pub fn constraint_cycle_loss(
    tape: &mut Tape,
    h: &ConstraintHandle,
    g: &ConstraintHandle,
    batch: &Batch,
) -> NodeId {
    let states = tape.constant(Tensor::new(batch.n, OBS_DIM, batch.states.clone()));
    let actions = tape.constant(Tensor::new(batch.n, 1, batch.actions.clone()));
    let next_states = tape.constant(Tensor::new(batch.n, OBS_DIM, batch.next_states.clone()));

    // action branch: a -> h -> g -> a
    let sa = tape.concat_cols(states, actions);
    let s_next_pred = h.predict(tape, sa);
    let gs = tape.concat_cols(states, s_next_pred);
    let a_recon = g.predict(tape, gs);
    let a_diff = tape.sub(a_recon, actions);
    let a_sq = tape.square(a_diff);
    let a_norms = tape.sum_rows(a_sq);
    let a_term = tape.mean_all(a_norms);

    // state branch: s' -> g -> h -> s'
    let ss = tape.concat_cols(states, next_states);
    let a_pred = g.predict(tape, ss);
    let sa_pred = tape.concat_cols(states, a_pred);
    let s_recon = h.predict(tape, sa_pred);
    let s_diff = tape.sub(s_recon, next_states);
    let s_sq = tape.square(s_diff);
    let s_norms = tape.sum_rows(s_sq);
    let s_term = tape.mean_all(s_norms);

    tape.add(a_term, s_term)
}

/// Entropy-consistency loss
/// `H(Prj(h(s,ȧ)), Prj(h(s,a))) + H(Prj(g(s,ṡ′)), Prj(g(s,s′)))` with the
/// reconstructions `ȧ = g(s,h(s,a))`, `ṡ′ = h(s,g(s,s′))` and the first
/// (reconstruction-side) projection of each pair detached.
pub fn constraint_entropy_loss(
    tape: &mut Tape,
    h: &ConstraintHandle,
    g: &ConstraintHandle,
    batch: &Batch,
    tau: f64,
) -> NodeId {
    let states = tape.constant(Tensor::new(batch.n, OBS_DIM, batch.states.clone()));
    let actions = tape.constant(Tensor::new(batch.n, 1, batch.actions.clone()));
    let next_states = tape.constant(Tensor::new(batch.n, OBS_DIM, batch.next_states.clone()));

    // h-side: compare h's projection of (s, ȧ) against that of (s, a).
    let sa = tape.concat_cols(states, actions);
    let (s_next_pred, proj_h_data) = h.predict_and_project(tape, sa);
    let gs_chain = tape.concat_cols(states, s_next_pred);
    let a_recon = g.predict(tape, gs_chain);
    let sa_recon = tape.concat_cols(states, a_recon);
    let (_, proj_h_recon) = h.predict_and_project(tape, sa_recon);
    let h_target = tape.detach(proj_h_recon);
    let h_term = tape.softmax_xent(h_target, proj_h_data, tau);

    // g-side: compare g's projection of (s, ṡ′) against that of (s, s′).
    let ss = tape.concat_cols(states, next_states);
    let (a_pred, proj_g_data) = g.predict_and_project(tape, ss);
    let sa_pred = tape.concat_cols(states, a_pred);
    let s_recon = h.predict(tape, sa_pred);
    let ss_recon = tape.concat_cols(states, s_recon);
    let (_, proj_g_recon) = g.predict_and_project(tape, ss_recon);
    let g_target = tape.detach(proj_g_recon);
    let g_term = tape.softmax_xent(g_target, proj_g_data, tau);

    tape.add(h_term, g_term)
}
