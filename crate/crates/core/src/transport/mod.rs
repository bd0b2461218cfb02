//! Socket pipeline: an edge agent ships encoded feature blocks to a cloud
//! service under an agreed plan epoch.
//!
//! The agent hosts the replan controller because it observes the upload
//! bandwidth. Whenever the plan changes it pushes a PLAN_SYNC and waits for
//! the acknowledgement before sending further blocks. The service answers
//! every block with the digest of the reconstructed map, or with an ERROR
//! when the block cannot be decoded or was sent under a stale epoch.

pub mod cloud;
pub mod edge;
pub mod wire;

use std::sync::{Arc, RwLock};

use sha2::{Digest, Sha256};

use crate::codec::{decode, encode, EncodedBlock};
use crate::error::Result;
use crate::planner::{PlanDecision, PlanRecord};
use crate::profiles::ModelProfile;
use crate::quantizer::{dequantize, quantize, FeatureMap, QuantizedMap};
use crate::synthetic::{gen_feature_map, gen_input_map, GeneratorSpec, INPUT_BIT_DEPTH};

pub use cloud::{CloudConfig, CloudHandle, CloudService, CloudStats};
pub use edge::{EdgeAgent, EdgeConfig, EdgeStats, RequestOutcome};

/// The current `(decision, epoch)` pair, readable by every connection.
#[derive(Debug, Clone, Default)]
pub struct SharedPlan(Arc<RwLock<Option<PlanRecord>>>);

impl SharedPlan {
    pub fn snapshot(&self) -> Option<PlanRecord> {
        self.0.read().expect("plan lock").clone()
    }

    pub fn epoch(&self) -> u64 {
        self.0.read().expect("plan lock").as_ref().map_or(0, |r| r.epoch)
    }

    /// Installs `record` if its epoch is newer. Returns the record in force
    /// afterwards.
    pub fn offer(&self, record: PlanRecord) -> PlanRecord {
        let mut cur = self.0.write().expect("plan lock");
        match cur.as_ref() {
            Some(c) if c.epoch >= record.epoch => c.clone(),
            _ => {
                *cur = Some(record.clone());
                record
            }
        }
    }
}

/// `(layer, bit depth)` of the block a decision ships.
pub fn block_cell(decision: &PlanDecision) -> (usize, u8) {
    (
        decision.split_layer,
        decision.bit_depth.unwrap_or(INPUT_BIT_DEPTH),
    )
}

/// Hex SHA-256 of a map's canonical bytes.
pub fn map_digest(fm: &FeatureMap) -> String {
    hex::encode(Sha256::digest(fm.canonical_bytes()))
}

/// Quantized payload the edge ships for `sample_id` under `decision`.
pub fn edge_payload(
    spec: &GeneratorSpec,
    model: &ModelProfile,
    decision: &PlanDecision,
    sample_id: u64,
) -> Result<QuantizedMap> {
    let (layer, bits) = block_cell(decision);
    let fm = if layer == 0 {
        gen_input_map(spec, model, sample_id)
    } else {
        gen_feature_map(spec, model, layer, sample_id)?
    };
    quantize(&fm, bits)
}

/// Digest of the map the cloud reconstructs from a block body.
pub fn reconstruct_digest(body: &[u8]) -> Result<String> {
    let block = EncodedBlock::from_bytes(body)?;
    Ok(map_digest(&dequantize(&decode(&block)?)?))
}

/// The whole pipeline without a network in between.
pub fn local_digest(
    spec: &GeneratorSpec,
    model: &ModelProfile,
    decision: &PlanDecision,
    sample_id: u64,
) -> Result<String> {
    let qm = edge_payload(spec, model, decision, sample_id)?;
    let block = encode(&qm, decision.split_layer as u32)?;
    reconstruct_digest(&block.to_bytes())
}
