//! Agent checkpoints: one JSON file carrying the config, dataset statistics,
//! every network's parameters as bit-exact base64 blobs, the optimizer
//! states, and a SHA-256 checksum of the payload.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algorithms::agent::{ConstraintNet, OptimStates, PcqlAgent};
use crate::algorithms::config::TrainConfig;
use crate::domain::{DatasetMeta, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::nn::{decode_f64s, encode_f64s, MlpNetwork, OutputHead, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkBlob {
    widths: Vec<usize>,
    head: OutputHead,
    /// Little-endian `f64` parameter bytes, base64; canonical w0,b0,w1,b1,…
    params: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointPayload {
    schema_version: u32,
    config: TrainConfig,
    meta: DatasetMeta,
    networks: BTreeMap<String, NetworkBlob>,
    optimizers: OptimStates,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    /// Hex SHA-256 of the canonical JSON serialization of `payload`.
    checksum: String,
    payload: CheckpointPayload,
}

fn payload_checksum(payload: &CheckpointPayload) -> Result<String> {
    let canonical = serde_json::to_string(payload)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn blob_of(net: &MlpNetwork) -> NetworkBlob {
    NetworkBlob {
        widths: net.widths.clone(),
        head: net.head,
        params: encode_f64s(&net.flat_params()),
    }
}

fn net_from_blob(name: &str, blob: &NetworkBlob) -> Result<MlpNetwork> {
    if blob.widths.len() < 2 {
        return Err(Error::Checkpoint(format!(
            "network {name}: widths {:?} need at least input and output",
            blob.widths
        )));
    }
    if blob.widths.contains(&0) {
        return Err(Error::Checkpoint(format!(
            "network {name}: zero width in {:?}",
            blob.widths
        )));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in blob.widths.windows(2) {
        weights.push(Tensor::zeros(pair[0], pair[1]));
        biases.push(Tensor::zeros(1, pair[1]));
    }
    let mut net =
        MlpNetwork { widths: blob.widths.clone(), weights, biases, head: blob.head };
    let flat = decode_f64s(&blob.params)?;
    net.set_flat_params(&flat).map_err(|e| {
        Error::Checkpoint(format!("network {name}: parameter blob mismatch: {e}"))
    })?;
    Ok(net)
}

const NET_NAMES: [&str; 11] = [
    "actor",
    "q1",
    "q2",
    "q1_target",
    "q2_target",
    "h_encoder",
    "h_predictor",
    "h_projector",
    "g_encoder",
    "g_predictor",
    "g_projector",
];

pub fn save_checkpoint(agent: &PcqlAgent, path: &Path) -> Result<()> {
    let nets: [(&str, &MlpNetwork); 11] = [
        ("actor", &agent.actor),
        ("q1", &agent.q1),
        ("q2", &agent.q2),
        ("q1_target", &agent.q1_target),
        ("q2_target", &agent.q2_target),
        ("h_encoder", &agent.h.encoder),
        ("h_predictor", &agent.h.predictor),
        ("h_projector", &agent.h.projector),
        ("g_encoder", &agent.g.encoder),
        ("g_predictor", &agent.g.predictor),
        ("g_projector", &agent.g.projector),
    ];
    let networks: BTreeMap<String, NetworkBlob> =
        nets.iter().map(|(name, net)| (name.to_string(), blob_of(net))).collect();
    let payload = CheckpointPayload {
        schema_version: SCHEMA_VERSION,
        config: agent.config.clone(),
        meta: agent.meta.clone(),
        networks,
        optimizers: agent.opt.clone(),
    };
    let file = CheckpointFile { checksum: payload_checksum(&payload)?, payload };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PcqlAgent> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
    let expected = payload_checksum(&file.payload)?;
    if file.checksum != expected {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: file says {}, payload hashes to {expected}",
            file.checksum
        )));
    }
    let payload = file.payload;
    if payload.schema_version != SCHEMA_VERSION {
        return Err(Error::Checkpoint(format!(
            "schema version {} unsupported (expected {SCHEMA_VERSION})",
            payload.schema_version
        )));
    }
    payload.config.validate()?;
    payload.meta.validate()?;

    let mut nets = BTreeMap::new();
    for name in NET_NAMES {
        let blob = payload
            .networks
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing network {name}")))?;
        nets.insert(name, net_from_blob(name, blob)?);
    }
    let mut take = |name: &str| nets.remove(name).unwrap();

    let agent = PcqlAgent {
        actor: take("actor"),
        q1: take("q1"),
        q2: take("q2"),
        q1_target: take("q1_target"),
        q2_target: take("q2_target"),
        h: ConstraintNet {
            encoder: take("h_encoder"),
            predictor: take("h_predictor"),
            projector: take("h_projector"),
        },
        g: ConstraintNet {
            encoder: take("g_encoder"),
            predictor: take("g_predictor"),
            projector: take("g_projector"),
        },
        opt: payload.optimizers,
        meta: payload.meta,
        config: payload.config,
    };

    // optimizer groups must align with the restored parameter tensors
    let group_sizes = |st: &crate::nn::AdamState| -> Vec<usize> {
        st.m.iter().map(Vec::len).collect()
    };
    let net_sizes = |ns: &[&MlpNetwork]| -> Vec<usize> {
        ns.iter().flat_map(|n| n.params().into_iter().map(|t| t.len())).collect()
    };
    let checks = [
        ("actor", group_sizes(&agent.opt.actor), net_sizes(&[&agent.actor])),
        ("critic", group_sizes(&agent.opt.critic), net_sizes(&[&agent.q1, &agent.q2])),
        (
            "h",
            group_sizes(&agent.opt.h),
            net_sizes(&[&agent.h.encoder, &agent.h.predictor, &agent.h.projector]),
        ),
        (
            "g",
            group_sizes(&agent.opt.g),
            net_sizes(&[&agent.g.encoder, &agent.g.predictor, &agent.g.projector]),
        ),
    ];
    for (name, opt_sizes, param_sizes) in checks {
        if opt_sizes != param_sizes {
            return Err(Error::Checkpoint(format!(
                "optimizer group {name} does not match its network parameters"
            )));
        }
    }
    Ok(agent)
}
