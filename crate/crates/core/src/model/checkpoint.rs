use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Arch, ModelState, OptimizerState};
use crate::error::{Error, Result};
use crate::types::OptimizerKind;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Frozen copy of a model and its optimizer. Serialized as JSON; floats
/// round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arch: Arch,
    pub params: Vec<f64>,
    pub optimizer: OptimizerState,
}

pub fn snapshot(model: &ModelState, opt: &OptimizerState) -> Checkpoint {
    Checkpoint {
        format_version: CHECKPOINT_VERSION,
        arch: model.arch,
        params: model.params.clone(),
        optimizer: opt.clone(),
    }
}

pub fn restore(ckpt: &Checkpoint) -> Result<(ModelState, OptimizerState)> {
    if ckpt.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {CHECKPOINT_VERSION})",
            ckpt.format_version
        )));
    }
    let model = ModelState::from_params(ckpt.arch, ckpt.params.clone())?;
    let opt = &ckpt.optimizer;
    if opt.kind == OptimizerKind::Adam
        && (opt.m.len() != model.num_params() || opt.v.len() != model.num_params())
    {
        return Err(Error::Checkpoint(
            "optimizer moments do not match parameter count".into(),
        ));
    }
    Ok((model, opt.clone()))
}

impl Checkpoint {
    /// 64-bit content digest over the exact bit patterns of every field.
    pub fn digest(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.format_version.to_le_bytes());
        for d in [
            self.arch.vocab_size,
            self.arch.embed_dim,
            self.arch.hidden_dim,
        ] {
            h.update((d as u64).to_le_bytes());
        }
        hash_f64s(&mut h, &self.params);
        let o = &self.optimizer;
        h.update([o.kind as u8]);
        h.update(o.t.to_le_bytes());
        hash_f64s(
            &mut h,
            &[o.hyper.lr, o.hyper.beta1, o.hyper.beta2, o.hyper.eps],
        );
        hash_f64s(&mut h, &o.m);
        hash_f64s(&mut h, &o.v);
        first_u64(&h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

fn hash_f64s(h: &mut Sha256, xs: &[f64]) {
    h.update((xs.len() as u64).to_le_bytes());
    for x in xs {
        h.update(x.to_bits().to_le_bytes());
    }
}

/// First eight bytes of the SHA-256 of `bytes`, little-endian.
pub(crate) fn digest_bytes(bytes: &[u8]) -> u64 {
    first_u64(&Sha256::digest(bytes))
}

pub(crate) fn first_u64(bytes: &[u8]) -> u64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[..8]);
    u64::from_le_bytes(b)
}
