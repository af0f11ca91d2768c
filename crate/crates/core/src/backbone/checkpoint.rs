use std::path::Path;

use super::{BackboneConfig, BackboneModel, FfnKind};
use crate::codec::{open, seal, sha256_hex, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MMRBKPT\0";
const VERSION: u32 = 1;

/// Serializes the model: config header (seven u64 sizes, the FFN kind byte, the seed) followed by the
/// raw parameter buffer as little-endian f64 in layout order.
pub fn write_checkpoint(model: &BackboneModel) -> Vec<u8> {
    let c = model.config();
    let mut w = Writer::new();
    for v in [
        c.vocab_size,
        c.d_model,
        c.n_layers,
        c.n_heads,
        c.d_ffn,
        c.max_seq_len,
        c.edit_layer_index,
    ] {
        w.u64(v as u64);
    }
    w.u8(c.ffn.code());
    w.u64(c.rng_seed);
    w.f64s(model.params());
    seal(MAGIC, VERSION, &w.into_inner())
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<BackboneModel> {
    let body = open(bytes, MAGIC, VERSION, "checkpoint")?;
    let mut r = Reader::new(body, "checkpoint");
    let config = BackboneConfig {
        vocab_size: r.usize()?,
        d_model: r.usize()?,
        n_layers: r.usize()?,
        n_heads: r.usize()?,
        d_ffn: r.usize()?,
        max_seq_len: r.usize()?,
        edit_layer_index: r.usize()?,
        ffn: {
            let code = r.u8()?;
            FfnKind::from_code(code)
                .ok_or_else(|| Error::Format("checkpoint", format!("unknown ffn kind {code}")))?
        },
        rng_seed: r.u64()?,
    };
    let params = r.f64s()?;
    r.finish()?;
    BackboneModel::from_parts(config, params)
}

pub fn save_checkpoint(model: &BackboneModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<BackboneModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

/// Hex SHA-256 of the serialized checkpoint; identifies a backbone.
pub fn checkpoint_digest(model: &BackboneModel) -> String {
    sha256_hex(&write_checkpoint(model))
}
