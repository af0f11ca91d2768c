//! Small byte-level decoder-only transformer used as the frozen host model.
//!
//! Pre-LayerNorm blocks with causal multi-head attention and an ungated GELU
//! FFN (`a = gelu(h W_fc)`, `v = a W_proj`). One block is designated as the
//! edit layer; its FFN input activations are what masks are computed from,
//! and its projection output is where a residual memory branch is added.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{
    checkpoint_digest, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
};
pub use model::{BackboneModel, EditLayerState, MemoryBranch, TailCache};
pub use train::{pretrain, pretrain_with, PretrainOptions, PretrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// FFN form. `Gelu`: `a = gelu(W_fc h)`. `SwiGlu`: `a = silu(W_gate h) * (W_up h)`,
/// with gate and up stacked in `W_fc`. Either way `a` has width `D` and
/// feeds the edited projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FfnKind {
    #[default]
    Gelu,
    SwiGlu,
}

impl FfnKind {
    /// Rows of `W_fc` per hidden unit.
    pub(crate) fn fan(self) -> usize {
        match self {
            FfnKind::Gelu => 1,
            FfnKind::SwiGlu => 2,
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(FfnKind::Gelu),
            1 => Some(FfnKind::SwiGlu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Width `D` of the FFN hidden layer, i.e. the input width of `W_proj`.
    pub d_ffn: usize,
    pub max_seq_len: usize,
    pub edit_layer_index: usize,
    #[serde(default)]
    pub ffn: FfnKind,
    pub rng_seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            vocab_size: 256,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ffn: 256,
            max_seq_len: 96,
            edit_layer_index: 0,
            ffn: FfnKind::default(),
            rng_seed: 0,
        }
    }
}

impl BackboneConfig {
    /// Second-to-last block, or the only block of a one-layer model.
    pub fn default_edit_layer(n_layers: usize) -> usize {
        n_layers.saturating_sub(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_ffn < 8 {
            return Err(Error::Config(format!(
                "d_ffn must be >= 8, got {}",
                self.d_ffn
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be >= 1".into()));
        }
        if self.edit_layer_index >= self.n_layers {
            return Err(Error::Config(format!(
                "edit_layer_index {} out of range for {} layers",
                self.edit_layer_index, self.n_layers
            )));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            return Err(Error::Config(
                "vocab_size and max_seq_len must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Prompt,
    Target,
}

/// Byte-level token ids plus the role the sequence plays.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub role: Role,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, role: Role) -> Self {
        TokenSequence { ids, role }
    }

    pub fn from_text(text: &str, role: Role) -> Self {
        TokenSequence {
            ids: text.bytes().map(u32::from).collect(),
            role,
        }
    }

    pub fn prompt(text: &str) -> Self {
        Self::from_text(text, Role::Prompt)
    }

    pub fn target(text: &str) -> Self {
        Self::from_text(text, Role::Target)
    }

    /// Lossy for ids that are not valid UTF-8 byte sequences.
    pub fn to_text(&self) -> String {
        let bytes: Vec<u8> = self.ids.iter().map(|&id| id.min(255) as u8).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn bytes(&self) -> Vec<u8> {
        self.ids.iter().flat_map(|id| id.to_le_bytes()).collect()
    }

    pub fn validate(&self, config: &BackboneConfig) -> Result<()> {
        if self.ids.is_empty() {
            return Err(Error::Precondition("empty token sequence".into()));
        }
        check_ids(&self.ids, config)
    }
}

pub(crate) fn check_ids(ids: &[u32], config: &BackboneConfig) -> Result<()> {
    if ids.len() > config.max_seq_len {
        return Err(Error::Length {
            len: ids.len(),
            max: config.max_seq_len,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(Error::Token {
            id,
            vocab: config.vocab_size,
        });
    }
    Ok(())
}

/// Decides, once per prompt, which residual-memory branch (if any) the edit
/// layer uses for the whole decode.
pub trait EditHook: Sync {
    /// `activations` is the `[tokens x D]` FFN input at the edit layer for the prompt.
    fn bind(&self, prompt: &TokenSequence, activations: &[f64]) -> Option<MemoryBranch<'_>>;
}

/// Greedy argmax decoding, optionally with the edit layer overridden by `hook`.
pub fn generate(
    model: &BackboneModel,
    hook: Option<&dyn EditHook>,
    prompt: &TokenSequence,
    max_new: usize,
) -> Result<TokenSequence> {
    if max_new == 0 {
        return Err(Error::Precondition("max_new must be >= 1".into()));
    }
    prompt.validate(model.config())?;
    let branch = match hook {
        Some(h) => {
            let acts = model.ffn_input_activations(prompt)?;
            h.bind(prompt, &acts)
        }
        None => None,
    };
    model.greedy_decode(&prompt.ids, branch.as_ref(), max_new)
}
