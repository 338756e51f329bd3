//! The trainable agent: actor, twin critics with delayed targets, and the
//! two constraint networks (transition model `h`, behavior model `g`), each
//! an encoder with a predictor head and a latent projector head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::config::TrainConfig;
use crate::domain::{flatten_observation, standardize, Action, DatasetMeta, ObservationState, OBS_DIM};
use crate::error::Result;
use crate::nn::{AdamState, MlpHandle, MlpNetwork, NodeId, OutputHead, Tape};

/// Encoder + predictor + projector. The predictor outputs the modeled
/// quantity (next state for `h`, action for `g`); the projector outputs the
/// latent vector the alignment penalty compares.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintNet {
    pub encoder: MlpNetwork,
    pub predictor: MlpNetwork,
    pub projector: MlpNetwork,
}

impl ConstraintNet {
    pub fn new<R: Rng>(
        input_width: usize,
        predicted_width: usize,
        predictor_head: OutputHead,
        hidden: &[usize],
        d_proj: usize,
        rng: &mut R,
    ) -> Self {
        let mut encoder_widths = vec![input_width];
        encoder_widths.extend_from_slice(hidden);
        let enc_out = *encoder_widths.last().unwrap();
        Self {
            encoder: MlpNetwork::new(&encoder_widths, OutputHead::Identity, rng),
            predictor: MlpNetwork::new(&[enc_out, predicted_width], predictor_head, rng),
            projector: MlpNetwork::new(&[enc_out, d_proj], OutputHead::Identity, rng),
        }
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.predictor.param_count() + self.projector.param_count()
    }

    /// Registers all three sub-networks on a tape.
    pub fn leaf_on(&self, tape: &mut Tape, requires_grad: bool) -> ConstraintHandle {
        ConstraintHandle {
            encoder: self.encoder.leaf_on(tape, requires_grad),
            predictor: self.predictor.leaf_on(tape, requires_grad),
            projector: self.projector.leaf_on(tape, requires_grad),
        }
    }

    /// Tape-free prediction (encoder then predictor head).
    pub fn infer_prediction(&self, input: &[f64], rows: usize) -> Vec<f64> {
        let enc = self.encoder.infer(input, rows);
        self.predictor.infer(&enc, rows)
    }

    /// Tape-free latent projection (encoder then projector head).
    pub fn infer_projection(&self, input: &[f64], rows: usize) -> Vec<f64> {
        let enc = self.encoder.infer(input, rows);
        self.projector.infer(&enc, rows)
    }
}

/// Tape-registered parameters of one [`ConstraintNet`].
pub struct ConstraintHandle {
    pub encoder: MlpHandle,
    pub predictor: MlpHandle,
    pub projector: MlpHandle,
}

impl ConstraintHandle {
    pub fn encode(&self, tape: &mut Tape, input: NodeId) -> NodeId {
        self.encoder.forward(tape, input)
    }

    pub fn predict(&self, tape: &mut Tape, input: NodeId) -> NodeId {
        let enc = self.encode(tape, input);
        self.predictor.forward(tape, enc)
    }

    /// Returns (prediction, projection), sharing one encoder pass.
    pub fn predict_and_project(&self, tape: &mut Tape, input: NodeId) -> (NodeId, NodeId) {
        let enc = self.encode(tape, input);
        (self.predictor.forward(tape, enc), self.projector.forward(tape, enc))
    }

    pub fn param_ids(&self) -> Vec<NodeId> {
        let mut ids = self.encoder.param_ids();
        ids.extend(self.predictor.param_ids());
        ids.extend(self.projector.param_ids());
        ids
    }
}

/// Per-group optimizer states, checkpointed with the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimStates {
    pub actor: AdamState,
    /// One group covering both critics.
    pub critic: AdamState,
    pub h: AdamState,
    pub g: AdamState,
}

/// Actor, twin critics, their delayed targets, constraint networks, and the
/// dataset statistics the agent standardizes its inputs with.
#[derive(Debug, Clone, PartialEq)]
pub struct PcqlAgent {
    /// Standardized observation -> normalized dose in [0, 1].
    pub actor: MlpNetwork,
    /// (standardized observation, action) -> value.
    pub q1: MlpNetwork,
    pub q2: MlpNetwork,
    pub q1_target: MlpNetwork,
    pub q2_target: MlpNetwork,
    /// Transition model: (s, a) -> s'.
    pub h: ConstraintNet,
    /// Behavior model: (s, s') -> a.
    pub g: ConstraintNet,
    pub opt: OptimStates,
    pub meta: DatasetMeta,
    pub config: TrainConfig,
}

impl PcqlAgent {
    pub fn new<R: Rng>(meta: DatasetMeta, config: TrainConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        meta.validate()?;
        let mut actor_widths = vec![OBS_DIM];
        actor_widths.extend_from_slice(&config.hidden_actor_critic);
        actor_widths.push(1);
        let mut critic_widths = vec![OBS_DIM + 1];
        critic_widths.extend_from_slice(&config.hidden_actor_critic);
        critic_widths.push(1);

        let actor = MlpNetwork::new(&actor_widths, OutputHead::Unit, rng);
        let q1 = MlpNetwork::new(&critic_widths, OutputHead::Identity, rng);
        let q2 = MlpNetwork::new(&critic_widths, OutputHead::Identity, rng);
        let h = ConstraintNet::new(
            OBS_DIM + 1,
            OBS_DIM,
            OutputHead::Identity,
            &config.hidden_constraint,
            config.d_proj,
            rng,
        );
        let g = ConstraintNet::new(
            2 * OBS_DIM,
            1,
            OutputHead::Unit,
            &config.hidden_constraint,
            config.d_proj,
            rng,
        );

        let critic_sizes: Vec<usize> = q1
            .params()
            .iter()
            .chain(q2.params().iter())
            .map(|t| t.len())
            .collect();
        let net_sizes = |nets: &[&MlpNetwork]| -> Vec<usize> {
            nets.iter().flat_map(|n| n.params().into_iter().map(|t| t.len())).collect()
        };
        let opt = OptimStates {
            actor: AdamState::new(config.lr_actor, &net_sizes(&[&actor])),
            critic: AdamState::new(config.lr_critic, &critic_sizes),
            h: AdamState::new(
                config.lr_h,
                &net_sizes(&[&h.encoder, &h.predictor, &h.projector]),
            ),
            g: AdamState::new(
                config.lr_g,
                &net_sizes(&[&g.encoder, &g.predictor, &g.projector]),
            ),
        };

        Ok(Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            h,
            g,
            opt,
            meta,
            config,
        })
    }

    /// Standardizes a raw observation into the actor/critic input space.
    pub fn standardized_input(&self, obs: &ObservationState) -> Result<Vec<f64>> {
        standardize(&flatten_observation(obs), &self.meta)
    }

    /// Deterministic mean action for one observation.
    pub fn act(&self, obs: &ObservationState) -> Result<Action> {
        obs.validate()?;
        let input = self.standardized_input(obs)?;
        let out = self.actor.infer_one(&input);
        Action::new(out[0])
    }

    /// Physical dose for one observation, mg/kg/h.
    pub fn recommend_dose(&self, obs: &ObservationState) -> Result<f64> {
        Ok(self.act(obs)?.physical_dose(self.meta.p_max))
    }

    /// Batched actor inference over standardized rows.
    pub fn actor_batch(&self, standardized_states: &[f64], rows: usize) -> Vec<f64> {
        self.actor.infer(standardized_states, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{SplitTag, SCHEMA_VERSION};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    pub(crate) fn test_meta() -> DatasetMeta {
        DatasetMeta {
            p_max: 10.0,
            feature_means: vec![0.0; OBS_DIM],
            feature_stds: vec![1.0; OBS_DIM],
            split_tag: SplitTag::Train,
            schema_version: SCHEMA_VERSION,
        }
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden_actor_critic: vec![16, 16],
            hidden_constraint: vec![12],
            d_proj: 4,
            ..Default::default()
        }
    }

    #[test]
    fn fresh_agent_has_matching_targets_and_bounded_actor() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let agent = PcqlAgent::new(test_meta(), small_config(), &mut rng).unwrap();
        assert_eq!(agent.q1.flat_params(), agent.q1_target.flat_params());
        assert_eq!(agent.q2.flat_params(), agent.q2_target.flat_params());
        let obs = crate::domain::unflatten_observation(&{
            let mut v = vec![1.0; OBS_DIM];
            v[1] = 0.0; // sex
            v[5] = 2.0; // asa
            v
        })
        .unwrap();
        let a = agent.actor.infer_one(&agent.standardized_input(&obs).unwrap());
        assert!((0.0..=1.0).contains(&a[0]));
    }

    #[test]
    fn act_is_deterministic_and_scales_by_p_max() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let agent = PcqlAgent::new(test_meta(), small_config(), &mut rng).unwrap();
        let obs = crate::domain::ObservationState::new(
            crate::domain::ClinicalInfo {
                age: 50.0,
                sex: 1,
                height: 170.0,
                weight: 70.0,
                bmi: 24.22,
                asa_grade: 2,
            },
            crate::domain::PressureTriple { map: 90.0, ap_sys: 120.0, ap_dia: 75.0 },
            crate::domain::PressureTriple { map: 92.0, ap_sys: 122.0, ap_dia: 76.0 },
            crate::domain::PressureTriple { map: 94.0, ap_sys: 124.0, ap_dia: 77.0 },
            0.1,
            95.0,
        );
        let a1 = agent.act(&obs).unwrap();
        let a2 = agent.act(&obs).unwrap();
        assert_eq!(a1, a2);
        let dose = agent.recommend_dose(&obs).unwrap();
        assert!((dose - a1.normalized() * 10.0).abs() < 1e-12);
    }

    #[test]
    fn constraint_net_shares_the_encoder_between_heads() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let net = ConstraintNet::new(5, 3, OutputHead::Identity, &[8], 4, &mut rng);
        assert_eq!(net.encoder.input_width(), 5);
        assert_eq!(net.predictor.input_width(), net.encoder.output_width());
        assert_eq!(net.projector.input_width(), net.encoder.output_width());
        assert_eq!(net.predictor.output_width(), 3);
        assert_eq!(net.projector.output_width(), 4);

        // tape-free prediction equals encoder-then-predictor inference
        let input = vec![0.1, -0.2, 0.3, 0.4, -0.5];
        let manual = net.predictor.infer_one(&net.encoder.infer_one(&input));
        assert_eq!(net.infer_prediction(&input, 1), manual);
    }

    #[test]
    fn optimizer_groups_align_with_parameter_counts() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let agent = PcqlAgent::new(test_meta(), small_config(), &mut rng).unwrap();
        let total = |st: &AdamState| st.m.iter().map(Vec::len).sum::<usize>();
        assert_eq!(total(&agent.opt.actor), agent.actor.param_count());
        assert_eq!(total(&agent.opt.critic), agent.q1.param_count() + agent.q2.param_count());
        assert_eq!(total(&agent.opt.h), agent.h.param_count());
        assert_eq!(total(&agent.opt.g), agent.g.param_count());
    }
}
