//! Residual memory on the edit layer's projection, its per-edit training
//! loop, and conditional activation at inference.
//!
//! The edited layer computes `W0 a + W_mem (m ⊙ a)`, where `m` is the sparse
//! mask of the prompt. Because the masked input is zero outside `m`, the
//! gradient of `W_mem` is zero outside those columns and each edit only
//! touches its own `k` columns. At inference the query's mask is matched
//! against the database; the memory is applied with the *stored* mask of
//! the best match when the overlap ratio reaches `tau`, and skipped
//! entirely otherwise.

use std::borrow::Cow;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneModel, EditLayerState, MemoryBranch, TailCache, TokenSequence};
use crate::datagen::EditSample;
use crate::error::{Error, Result};
use crate::tensor::{axpy, log_sum_exp, matmul, softmax_in_place};
use crate::tophash::{
    alternative_mask, pooled_key, CenteringVector, MaskDatabase, MatchResult, Permutation,
    SelectionStrategy, SparseMask,
};

/// `W_mem`, same shape as the edit layer's `W0`, stored input-major: row
/// `j` of the buffer is memory column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMemory {
    dim: usize,
    d_model: usize,
    rows: Vec<f64>,
    dirty: Vec<bool>,
}

impl ResidualMemory {
    pub fn zeros(dim: usize, d_model: usize) -> Self {
        ResidualMemory {
            dim,
            d_model,
            rows: vec![0.0; dim * d_model],
            dirty: vec![false; dim],
        }
    }

    pub fn for_model(model: &BackboneModel) -> Self {
        Self::zeros(model.config().d_ffn, model.config().d_model)
    }

    /// Memory with the given `D x d_model` input-major rows; columns with
    /// any nonzero entry count as dirty.
    pub fn from_rows(dim: usize, d_model: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != dim * d_model {
            return Err(Error::Dimension {
                expected: dim * d_model,
                actual: rows.len(),
            });
        }
        let dirty = rows
            .chunks(d_model.max(1))
            .map(|c| c.iter().any(|&x| x != 0.0))
            .collect();
        Self::from_parts(dim, d_model, rows, dirty)
    }

    pub(crate) fn from_parts(
        dim: usize,
        d_model: usize,
        rows: Vec<f64>,
        dirty: Vec<bool>,
    ) -> Result<Self> {
        if rows.len() != dim * d_model || dirty.len() != dim {
            return Err(Error::Dimension {
                expected: dim * d_model,
                actual: rows.len(),
            });
        }
        Ok(ResidualMemory {
            dim,
            d_model,
            rows,
            dirty,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.rows[j * self.d_model..(j + 1) * self.d_model]
    }

    /// Columns that have ever received a non-zero update.
    pub fn dirty_columns(&self) -> Vec<usize> {
        (0..self.dim).filter(|&j| self.dirty[j]).collect()
    }

    pub(crate) fn dirty_flags(&self) -> &[bool] {
        &self.dirty
    }

    pub fn dirty_fraction(&self) -> f64 {
        self.dirty.iter().filter(|&&d| d).count() as f64 / self.dim as f64
    }

    /// Fraction of columns that are exactly zero.
    pub fn zero_column_fraction(&self) -> f64 {
        let zero = (0..self.dim)
            .filter(|&j| self.column(j).iter().all(|&v| v == 0.0))
            .count();
        zero as f64 / self.dim as f64
    }

    pub fn branch<'a>(&'a self, active: &'a [usize]) -> MemoryBranch<'a> {
        MemoryBranch {
            rows: &self.rows,
            active: Cow::Borrowed(active),
        }
    }

    /// Indices of columns whose bits differ from `other`.
    pub fn changed_columns(&self, other: &ResidualMemory) -> Vec<usize> {
        (0..self.dim)
            .filter(|&j| {
                self.column(j)
                    .iter()
                    .zip(other.column(j))
                    .any(|(a, b)| a.to_bits() != b.to_bits())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditTrainConfig {
    pub learning_rate: f64,
    pub grad_clip_norm: f64,
    pub steps_per_edit: usize,
    pub n_prefix_augmentations: usize,
    pub prefix_len: usize,
    pub rng_seed: u64,
}

impl Default for EditTrainConfig {
    fn default() -> Self {
        EditTrainConfig {
            learning_rate: 1.0,
            grad_clip_norm: 1.0,
            steps_per_edit: 50,
            n_prefix_augmentations: 10,
            prefix_len: 10,
            rng_seed: 0,
        }
    }
}

impl EditTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0;
        if !positive(self.learning_rate)
            || !positive(self.grad_clip_norm)
            || self.steps_per_edit == 0
        {
            return Err(Error::Config(
                "learning_rate, grad_clip_norm and steps_per_edit must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Independent stream per edit, so a session can resume at any edit.
    pub(crate) fn edit_rng(&self, edit_id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(edit_id.wrapping_add(1));
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingConfig {
    pub tau: f64,
    pub k: usize,
    pub strategy: SelectionStrategy,
    pub conditional_activation: bool,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            tau: 0.4,
            k: 64,
            strategy: SelectionStrategy::TopHash,
            conditional_activation: true,
        }
    }
}

impl RoutingConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!(
                "tau must be in [0, 1], got {}",
                self.tau
            )));
        }
        if self.k == 0 || self.k > dim {
            return Err(Error::Config(format!(
                "k must be in 1..={dim}, got {}",
                self.k
            )));
        }
        Ok(())
    }
}

/// Everything that determines the mask of a prompt.
#[derive(Debug, Clone, Copy)]
pub struct MaskContext<'a> {
    pub centering: &'a CenteringVector,
    pub permutation: &'a Permutation,
    pub routing: &'a RoutingConfig,
}

impl MaskContext<'_> {
    /// Mask of a prompt given its `[tokens x D]` edit-layer activations.
    pub fn mask(
        &self,
        prompt: &TokenSequence,
        activations: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<SparseMask> {
        let key = pooled_key(activations, prompt.len(), self.centering)?;
        alternative_mask(
            self.routing.strategy,
            &key,
            self.routing.k,
            self.permutation,
            &prompt.bytes(),
            rng,
        )
    }
}

/// `W0 a_t + W_mem (m ⊙ a_t)` for every token row; `w0` is `D x d_model`
/// input-major like the memory.
pub fn edited_forward_train(
    w0: &[f64],
    memory: &ResidualMemory,
    activations: &[f64],
    rows: usize,
    mask: &SparseMask,
) -> Result<Vec<f64>> {
    let (dim, d) = (memory.dim, memory.d_model);
    if w0.len() != dim * d {
        return Err(Error::Dimension {
            expected: dim * d,
            actual: w0.len(),
        });
    }
    if activations.len() != rows * dim {
        return Err(Error::Dimension {
            expected: rows * dim,
            actual: activations.len(),
        });
    }
    if mask.dim() != dim {
        return Err(Error::Dimension {
            expected: dim,
            actual: mask.dim(),
        });
    }
    let mut out = vec![0.0; rows * d];
    matmul(activations, w0, rows, dim, d, &mut out);
    memory
        .branch(mask.active())
        .apply(activations, rows, dim, d, &mut out);
    Ok(out)
}

/// Which memory branch, if any, a query activates.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteDecision {
    /// Mask applied to the memory input; `None` bypasses the memory.
    pub mask: Option<SparseMask>,
    pub matched: MatchResult,
}

/// Conditional activation: match the query mask and apply the stored mask
/// of the best match when `R_match >= tau`. With conditional activation
/// off, the query's own mask is always applied.
pub fn route(
    db: &MaskDatabase,
    query: SparseMask,
    routing: &RoutingConfig,
) -> Result<RouteDecision> {
    let matched = db.best_match(&query)?;
    if !routing.conditional_activation {
        return Ok(RouteDecision {
            mask: Some(query),
            matched,
        });
    }
    let mask = match matched.matched_edit_id {
        Some(id) if matched.overlap_ratio >= routing.tau => db.get(id),
        _ => None,
    };
    Ok(RouteDecision { mask, matched })
}

/// Edit-layer output at inference for one prompt.
#[allow(clippy::too_many_arguments)]
pub fn routed_forward_infer(
    w0: &[f64],
    memory: &ResidualMemory,
    prompt: &TokenSequence,
    activations: &[f64],
    db: &MaskDatabase,
    ctx: &MaskContext<'_>,
    rng: &mut dyn RngCore,
) -> Result<(Vec<f64>, RouteDecision)> {
    let rows = prompt.len();
    let (dim, d) = (memory.dim, memory.d_model);
    let query = ctx.mask(prompt, activations, rng)?;
    let decision = route(db, query, ctx.routing)?;
    let out = match &decision.mask {
        Some(m) => edited_forward_train(w0, memory, activations, rows, m)?,
        None => {
            let mut out = vec![0.0; rows * d];
            matmul(activations, w0, rows, dim, d, &mut out);
            out
        }
    };
    Ok((out, decision))
}

/// Per-edit outcome of [`apply_edit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub edit_id: u64,
    pub mask: SparseMask,
    pub collision: bool,
    /// Loss before each update step.
    pub losses: Vec<f64>,
}

/// One training sequence: `prefix ++ prompt ++ target[..-1]` with the
/// frozen edit-layer state cached.
struct Variant {
    state: EditLayerState,
    /// First row whose next-token prediction is a target token.
    qs: usize,
    targets: Vec<u32>,
}

impl Variant {
    fn new(model: &BackboneModel, prefix: &[u32], prompt: &[u32], target: &[u32]) -> Result<Self> {
        let mut ids = Vec::with_capacity(prefix.len() + prompt.len() + target.len());
        ids.extend_from_slice(prefix);
        ids.extend_from_slice(prompt);
        ids.extend_from_slice(&target[..target.len() - 1]);
        Ok(Variant {
            state: model.edit_layer_state(&ids)?,
            qs: prefix.len() + prompt.len() - 1,
            targets: target.to_vec(),
        })
    }
}

/// Mean target-token cross-entropy of the rows in `logits` and its gradient.
pub(crate) fn target_loss(logits: &[f64], targets: &[u32], vocab: usize) -> (f64, Vec<f64>) {
    let n = targets.len();
    let mut loss = 0.0;
    let mut dlogits = logits.to_vec();
    for (i, &tgt) in targets.iter().enumerate() {
        let row = &logits[i * vocab..(i + 1) * vocab];
        loss += log_sum_exp(row) - row[tgt as usize];
        let drow = &mut dlogits[i * vocab..(i + 1) * vocab];
        softmax_in_place(drow);
        drow[tgt as usize] -= 1.0;
        drow.iter_mut().for_each(|g| *g /= n as f64);
    }
    (loss / n as f64, dlogits)
}

/// Loss of one training sequence and the gradient w.r.t. the active memory
/// columns (`k x d_model`, in active-set order).
pub fn edit_loss_and_grad(
    model: &BackboneModel,
    memory: &ResidualMemory,
    state: &EditLayerState,
    qs: usize,
    targets: &[u32],
    active: &[usize],
) -> (f64, Vec<f64>) {
    let (dim, d, v) = (memory.dim, memory.d_model, model.config().vocab_size);
    let t = state.tokens;
    let after = model.apply_branch(state, Some(&memory.branch(active)));
    let mut cache = TailCache::default();
    let logits = model.tail_forward(&after, t, qs, Some(&mut cache));
    let (loss, dlogits) = target_loss(&logits, targets, v);
    let dafter = model.tail_backward(&cache, &dlogits);
    let mut grad = vec![0.0; active.len() * d];
    for row in 0..t {
        let a = &state.activations[row * dim..(row + 1) * dim];
        let g = &dafter[row * d..(row + 1) * d];
        for (slot, &j) in active.iter().enumerate() {
            if a[j] != 0.0 {
                axpy(a[j], g, &mut grad[slot * d..(slot + 1) * d]);
            }
        }
    }
    (loss, grad)
}

/// Samples `n` prefixes of up to `len` tokens from the backbone, each
/// starting from a uniformly random token.
pub(crate) fn sample_prefixes(
    model: &BackboneModel,
    n: usize,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<u32>>> {
    let vocab = model.config().vocab_size;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ids = vec![rng.gen_range(0..vocab) as u32];
        while ids.len() < len {
            let mut probs = model.forward_rows(&ids, None, ids.len() - 1)?;
            softmax_in_place(&mut probs);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = vocab - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            ids.push(pick as u32);
        }
        out.push(ids);
    }
    Ok(out)
}

/// Trains the memory on one edit with a fixed mask. Only rows of `memory`
/// listed in `mask` are written.
pub fn train_edit(
    model: &BackboneModel,
    memory: &mut ResidualMemory,
    sample: &EditSample,
    mask: &SparseMask,
    tcfg: &EditTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    tcfg.validate()?;
    let cfg = model.config();
    sample.prompt.validate(cfg)?;
    sample.target.validate(cfg)?;
    let (prompt, target) = (&sample.prompt.ids, &sample.target.ids);
    let base_len = prompt.len() + target.len() - 1;
    if base_len > cfg.max_seq_len {
        return Err(Error::Length {
            len: base_len,
            max: cfg.max_seq_len,
        });
    }
    let prefix_len = tcfg.prefix_len.min(cfg.max_seq_len - base_len);
    let prefixes = if prefix_len > 0 && tcfg.n_prefix_augmentations > 0 {
        sample_prefixes(model, tcfg.n_prefix_augmentations, prefix_len, rng)?
    } else {
        Vec::new()
    };
    let clean = Variant::new(model, &[], prompt, target)?;
    let augmented = prefixes
        .iter()
        .map(|p| Variant::new(model, p, prompt, target))
        .collect::<Result<Vec<_>>>()?;

    let d = memory.d_model;
    let active = mask.active();
    let mut losses = Vec::with_capacity(tcfg.steps_per_edit);
    for step in 0..tcfg.steps_per_edit {
        // clean and augmented sequences alternate
        let v = if step % 2 == 0 || augmented.is_empty() {
            &clean
        } else {
            &augmented[rng.gen_range(0..augmented.len())]
        };
        let (loss, grad) = edit_loss_and_grad(model, memory, &v.state, v.qs, &v.targets, active);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                edit_id: sample.edit_id,
                step,
                loss,
            });
        }
        losses.push(loss);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if norm > tcfg.grad_clip_norm {
            tcfg.grad_clip_norm / norm
        } else {
            1.0
        };
        let step_size = -tcfg.learning_rate * scale;
        for (slot, &j) in active.iter().enumerate() {
            let g = &grad[slot * d..(slot + 1) * d];
            if g.iter().any(|&x| x != 0.0) {
                axpy(step_size, g, &mut memory.rows[j * d..(j + 1) * d]);
                memory.dirty[j] = true;
            }
        }
    }
    Ok(losses)
}

/// Computes the mask of the clean prompt, records it in `db`, and trains
/// the masked memory columns on the edit.
#[allow(clippy::too_many_arguments)]
pub fn apply_edit(
    model: &BackboneModel,
    memory: &mut ResidualMemory,
    db: &mut MaskDatabase,
    sample: &EditSample,
    tcfg: &EditTrainConfig,
    rcfg: &RoutingConfig,
    centering: &CenteringVector,
    permutation: &Permutation,
) -> Result<EditReport> {
    if db.contains(sample.edit_id) {
        return Err(Error::DuplicateEdit(sample.edit_id));
    }
    rcfg.validate(memory.dim)?;
    let mut rng = tcfg.edit_rng(sample.edit_id);
    let acts = model.ffn_input_activations(&sample.prompt)?;
    let ctx = MaskContext {
        centering,
        permutation,
        routing: rcfg,
    };
    let mask = ctx.mask(&sample.prompt, &acts, &mut rng)?;
    let losses = train_edit(model, memory, sample, &mask, tcfg, &mut rng)?;
    let collision = db.insert(sample.edit_id, &mask)?;
    Ok(EditReport {
        edit_id: sample.edit_id,
        mask,
        collision,
        losses,
    })
}
