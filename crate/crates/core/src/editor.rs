//! Edit-stream orchestration for MEMOIR and two comparators, plus the
//! versioned editor-state file.
//!
//! `DenseResidual` trains the same residual memory through the same code
//! path with a full mask and applies it to every prompt. `ExactCodebook`
//! stores prompt-to-target pairs and overrides generation on an exact
//! prompt match only.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{checkpoint_digest, BackboneModel, EditHook, MemoryBranch, TokenSequence};
use crate::codec::{open, seal, Reader, Writer};
use crate::datagen::{BenchmarkSet, EditSample};
use crate::error::{Error, Result};
use crate::memory::{
    apply_edit, route, target_loss, train_edit, EditTrainConfig, MaskContext, ResidualMemory,
    RoutingConfig,
};
use crate::tensor::argmax;
use crate::tophash::{
    compute_centering, decode_centering, decode_permutation, encode_centering, encode_permutation,
    CenteringVector, MaskDatabase, MatchResult, Permutation, SelectionStrategy, SparseMask,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Memoir,
    DenseResidual,
    ExactCodebook,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::Memoir,
        StrategyKind::DenseResidual,
        StrategyKind::ExactCodebook,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Memoir => "memoir",
            StrategyKind::DenseResidual => "dense-residual",
            StrategyKind::ExactCodebook => "exact-codebook",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "memoir" => Ok(StrategyKind::Memoir),
            "dense" | "dense-residual" | "denseresidual" => Ok(StrategyKind::DenseResidual),
            "codebook" | "exact-codebook" | "exactcodebook" => Ok(StrategyKind::ExactCodebook),
            other => Err(Error::Parameter(format!(
                "unknown editor strategy '{other}'"
            ))),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Editor kind plus every configuration that shapes an editing session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditorStrategy {
    pub kind: StrategyKind,
    #[serde(default)]
    pub train: EditTrainConfig,
    #[serde(default)]
    pub routing: RoutingConfig,
    #[serde(default)]
    pub permutation_seed: u64,
}

impl EditorStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        EditorStrategy {
            kind,
            train: EditTrainConfig::default(),
            routing: RoutingConfig::default(),
            permutation_seed: 0,
        }
    }

    pub fn memoir() -> Self {
        Self::new(StrategyKind::Memoir)
    }

    pub fn dense_residual() -> Self {
        Self::new(StrategyKind::DenseResidual)
    }

    pub fn exact_codebook() -> Self {
        Self::new(StrategyKind::ExactCodebook)
    }
}

/// How the edit layer treats one query prompt.
#[derive(Debug, Clone, PartialEq)]
pub enum Binding {
    Bypass,
    /// Apply the memory through this mask.
    Memory(SparseMask),
    /// Emit this target verbatim instead of decoding.
    Override(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRoute {
    pub binding: Binding,
    /// Best stored mask for the query mask; `None` for editors without a
    /// mask database.
    pub matched: Option<MatchResult>,
}

/// Teacher-forced outcome of one `(prompt, target)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetScore {
    /// Every target token is the argmax given the gold prefix, which is
    /// equivalent to greedy decoding reproducing the target.
    pub exact: bool,
    pub token_accuracy: f64,
    pub mean_loss: f64,
    pub route: QueryRoute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub edit_id: u64,
    pub losses: Vec<f64>,
    pub collision: bool,
    pub wall_ms: f64,
}

/// Per-edit records in stream order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditSessionLog {
    pub records: Vec<EditRecord>,
    /// Where the final editor state was written, if anywhere.
    pub final_state: Option<String>,
}

impl EditSessionLog {
    /// One JSON object per edit, then a trailer line naming the final state.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        let trailer =
            serde_json::json!({ "edits": self.records.len(), "final_state": self.final_state });
        serde_json::to_writer(&mut out, &trailer)?;
        out.write_all(b"\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CodebookEntry {
    edit_id: u64,
    prompt: Vec<u32>,
    target: Vec<u32>,
}

/// Everything an editor accumulates over a session.
#[derive(Debug, Clone, PartialEq)]
pub struct EditorState {
    strategy: EditorStrategy,
    backbone_digest: String,
    centering: CenteringVector,
    permutation: Permutation,
    memory: ResidualMemory,
    db: MaskDatabase,
    codebook: Vec<CodebookEntry>,
    codebook_index: HashMap<Vec<u32>, usize>,
    edit_ids: Vec<u64>,
    seen: HashSet<u64>,
}

impl EditorState {
    /// Fresh state. The centering vector is estimated once from
    /// `centering_prompts` and frozen; an empty slice disables centering.
    pub fn new(
        model: &BackboneModel,
        strategy: EditorStrategy,
        centering_prompts: &[TokenSequence],
    ) -> Result<Self> {
        let dim = model.config().d_ffn;
        strategy.train.validate()?;
        let k = match strategy.kind {
            StrategyKind::Memoir => {
                strategy.routing.validate(dim)?;
                strategy.routing.k
            }
            _ => dim,
        };
        let centering = if centering_prompts.is_empty() {
            CenteringVector::disabled(dim)
        } else {
            compute_centering(model, centering_prompts)?
        };
        Ok(EditorState {
            permutation: Permutation::from_seed(dim, strategy.permutation_seed),
            strategy,
            backbone_digest: checkpoint_digest(model),
            centering,
            memory: ResidualMemory::for_model(model),
            db: MaskDatabase::new(dim, k)?,
            codebook: Vec::new(),
            codebook_index: HashMap::new(),
            edit_ids: Vec::new(),
            seen: HashSet::new(),
        })
    }

    pub fn strategy(&self) -> &EditorStrategy {
        &self.strategy
    }

    pub fn backbone_digest(&self) -> &str {
        &self.backbone_digest
    }

    pub fn centering(&self) -> &CenteringVector {
        &self.centering
    }

    pub fn permutation(&self) -> &Permutation {
        &self.permutation
    }

    pub fn memory(&self) -> &ResidualMemory {
        &self.memory
    }

    pub fn database(&self) -> &MaskDatabase {
        &self.db
    }

    pub fn edits_applied(&self) -> usize {
        self.edit_ids.len()
    }

    pub fn edit_ids(&self) -> &[u64] {
        &self.edit_ids
    }

    /// Same state with different inference-time routing; neither `tau` nor
    /// the activation switch influences training.
    pub fn with_inference_routing(&self, tau: f64, conditional_activation: bool) -> Result<Self> {
        let mut out = self.clone();
        out.strategy.routing.tau = tau;
        out.strategy.routing.conditional_activation = conditional_activation;
        out.strategy.routing.validate(self.memory.dim())?;
        Ok(out)
    }

    /// Fails unless `model` is the backbone this state was built on.
    pub fn check_backbone(&self, model: &BackboneModel) -> Result<()> {
        let found = checkpoint_digest(model);
        if found != self.backbone_digest {
            return Err(Error::Backbone {
                expected: self.backbone_digest.clone(),
                found,
            });
        }
        Ok(())
    }

    fn mask_context(&self) -> MaskContext<'_> {
        MaskContext {
            centering: &self.centering,
            permutation: &self.permutation,
            routing: &self.strategy.routing,
        }
    }

    /// Applies one edit. Errors are wrapped with the failing edit id.
    pub fn apply(&mut self, model: &BackboneModel, sample: &EditSample) -> Result<EditRecord> {
        let start = Instant::now();
        let (losses, collision) =
            self.apply_inner(model, sample)
                .map_err(|e| Error::EditFailed {
                    edit_id: sample.edit_id,
                    source: Box::new(e),
                })?;
        self.edit_ids.push(sample.edit_id);
        self.seen.insert(sample.edit_id);
        Ok(EditRecord {
            edit_id: sample.edit_id,
            losses,
            collision,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    fn apply_inner(
        &mut self,
        model: &BackboneModel,
        sample: &EditSample,
    ) -> Result<(Vec<f64>, bool)> {
        if self.seen.contains(&sample.edit_id) {
            return Err(Error::DuplicateEdit(sample.edit_id));
        }
        let s = &self.strategy;
        match s.kind {
            StrategyKind::Memoir => {
                let rep = apply_edit(
                    model,
                    &mut self.memory,
                    &mut self.db,
                    sample,
                    &s.train,
                    &s.routing,
                    &self.centering,
                    &self.permutation,
                )?;
                Ok((rep.losses, rep.collision))
            }
            StrategyKind::DenseResidual => {
                let mut rng = s.train.edit_rng(sample.edit_id);
                let full = SparseMask::full(self.memory.dim());
                let losses =
                    train_edit(model, &mut self.memory, sample, &full, &s.train, &mut rng)?;
                Ok((losses, false))
            }
            StrategyKind::ExactCodebook => {
                sample.prompt.validate(model.config())?;
                sample.target.validate(model.config())?;
                let entry = CodebookEntry {
                    edit_id: sample.edit_id,
                    prompt: sample.prompt.ids.clone(),
                    target: sample.target.ids.clone(),
                };
                let collision = self
                    .codebook_index
                    .insert(entry.prompt.clone(), self.codebook.len())
                    .is_some();
                self.codebook.push(entry);
                Ok((Vec::new(), collision))
            }
        }
    }

    /// Routing decision for a prompt given its edit-layer activations.
    /// `rng` is consulted only by the random selection strategy.
    pub fn route_prompt(
        &self,
        prompt: &TokenSequence,
        activations: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<QueryRoute> {
        match self.strategy.kind {
            StrategyKind::Memoir => {
                let query = self.mask_context().mask(prompt, activations, rng)?;
                let decision = route(&self.db, query, &self.strategy.routing)?;
                Ok(QueryRoute {
                    binding: decision.mask.map_or(Binding::Bypass, Binding::Memory),
                    matched: Some(decision.matched),
                })
            }
            StrategyKind::DenseResidual => Ok(QueryRoute {
                binding: Binding::Memory(SparseMask::full(self.memory.dim())),
                matched: None,
            }),
            StrategyKind::ExactCodebook => Ok(QueryRoute {
                binding: match self.codebook_index.get(&prompt.ids) {
                    Some(&i) => Binding::Override(self.codebook[i].target.clone()),
                    None => Binding::Bypass,
                },
                matched: None,
            }),
        }
    }

    /// Routes `prompt` and returns the logits predicting each token of
    /// `continuation` (rows `len(prompt)-1 ..`), or the override target.
    pub fn continuation_logits(
        &self,
        model: &BackboneModel,
        prompt: &TokenSequence,
        continuation: &[u32],
        rng: &mut dyn RngCore,
    ) -> Result<(QueryRoute, Option<Vec<f64>>)> {
        if continuation.is_empty() {
            return Err(Error::Precondition("continuation must be non-empty".into()));
        }
        let acts = model.ffn_input_activations(prompt)?;
        let route = self.route_prompt(prompt, &acts, rng)?;
        let active = match &route.binding {
            Binding::Override(_) => return Ok((route, None)),
            Binding::Bypass => None,
            Binding::Memory(m) => Some(m.active()),
        };
        let mut ids = prompt.ids.clone();
        ids.extend_from_slice(&continuation[..continuation.len() - 1]);
        let logits = model.forward_rows(
            &ids,
            active.map(|a| self.memory.branch(a)).as_ref(),
            prompt.len() - 1,
        )?;
        Ok((route, Some(logits)))
    }

    /// Teacher-forced score of `target` given `prompt` under routed inference.
    pub fn score(
        &self,
        model: &BackboneModel,
        prompt: &TokenSequence,
        target: &TokenSequence,
        rng: &mut dyn RngCore,
    ) -> Result<TargetScore> {
        let (route, logits) = self.continuation_logits(model, prompt, &target.ids, rng)?;
        let Some(logits) = logits else {
            let Binding::Override(out) = &route.binding else {
                unreachable!("only overrides skip the forward")
            };
            let hits = out.iter().zip(&target.ids).filter(|(a, b)| a == b).count();
            let exact = *out == target.ids;
            return Ok(TargetScore {
                exact,
                token_accuracy: hits as f64 / target.len() as f64,
                mean_loss: if exact { 0.0 } else { f64::INFINITY },
                route,
            });
        };
        let v = model.config().vocab_size;
        let hits = target
            .ids
            .iter()
            .enumerate()
            .filter(|&(i, &t)| argmax(&logits[i * v..(i + 1) * v]) == t as usize)
            .count();
        let (loss, _) = target_loss(&logits, &target.ids, v);
        Ok(TargetScore {
            exact: hits == target.len(),
            token_accuracy: hits as f64 / target.len() as f64,
            mean_loss: loss,
            route,
        })
    }

    /// Greedy decode of up to `max_new` new tokens, with the routing
    /// decision fixed from the prompt.
    pub fn generate(
        &self,
        model: &BackboneModel,
        prompt: &TokenSequence,
        max_new: usize,
        rng: &mut dyn RngCore,
    ) -> Result<TokenSequence> {
        if max_new == 0 {
            return Err(Error::Precondition("max_new must be >= 1".into()));
        }
        let acts = model.ffn_input_activations(prompt)?;
        let route = self.route_prompt(prompt, &acts, rng)?;
        match route.binding {
            Binding::Override(mut t) => {
                t.truncate(max_new);
                Ok(TokenSequence::new(t, crate::backbone::Role::Target))
            }
            Binding::Bypass => model.greedy_decode(&prompt.ids, None, max_new),
            Binding::Memory(m) => {
                model.greedy_decode(&prompt.ids, Some(&self.memory.branch(m.active())), max_new)
            }
        }
    }
}

/// Hook for [`crate::backbone::generate`]. Overrides do not apply here, and
/// the random strategy draws from a stream keyed by the prompt bytes.
impl EditHook for EditorState {
    fn bind(&self, prompt: &TokenSequence, activations: &[f64]) -> Option<MemoryBranch<'_>> {
        let digest = Sha256::digest(prompt.bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        match self
            .route_prompt(prompt, activations, &mut rng)
            .ok()?
            .binding
        {
            Binding::Memory(m) => Some(MemoryBranch {
                rows: self.memory.rows(),
                active: std::borrow::Cow::Owned(m.active().to_vec()),
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionOptions {
    /// Call the snapshot hook after every this many edits; 0 disables.
    pub snapshot_every: usize,
    /// Stop after this many edits in total; `None` runs the whole stream.
    pub stop_after: Option<usize>,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            snapshot_every: 100,
            stop_after: None,
        }
    }
}

pub type SnapshotHook<'a> = &'a mut dyn FnMut(&EditorState) -> Result<()>;

/// Fresh state over `benchmark.centering_corpus`, then every edit in order.
pub fn run_session(
    model: &BackboneModel,
    benchmark: &BenchmarkSet,
    strategy: EditorStrategy,
    opts: SessionOptions,
    on_snapshot: Option<SnapshotHook<'_>>,
) -> Result<(EditorState, EditSessionLog)> {
    if benchmark.edits.is_empty() {
        return Err(Error::Precondition("benchmark has no edits".into()));
    }
    let mut state = EditorState::new(model, strategy, &benchmark.centering_corpus)?;
    let log = resume_session(&mut state, model, benchmark, opts, on_snapshot)?;
    Ok((state, log))
}

/// Applies `benchmark.edits[state.edits_applied()..]` in stream order.
pub fn resume_session(
    state: &mut EditorState,
    model: &BackboneModel,
    benchmark: &BenchmarkSet,
    opts: SessionOptions,
    mut on_snapshot: Option<SnapshotHook<'_>>,
) -> Result<EditSessionLog> {
    state.check_backbone(model)?;
    let done = state.edits_applied();
    if benchmark.edits.len() < done
        || benchmark.edits[..done]
            .iter()
            .map(|e| e.edit_id)
            .ne(state.edit_ids.iter().copied())
    {
        return Err(Error::Precondition(
            "benchmark stream does not start with the edits already applied".into(),
        ));
    }
    let end = opts
        .stop_after
        .unwrap_or(benchmark.edits.len())
        .min(benchmark.edits.len());
    let mut log = EditSessionLog::default();
    for sample in benchmark.edits.iter().take(end).skip(done) {
        log.records.push(state.apply(model, sample)?);
        if opts.snapshot_every > 0 && state.edits_applied().is_multiple_of(opts.snapshot_every) {
            if let Some(hook) = on_snapshot.as_mut() {
                hook(state)?;
            }
        }
    }
    Ok(log)
}

const STATE_MAGIC: &[u8; 8] = b"MMRSTATE";
const STATE_VERSION: u32 = 1;

fn encode_ids(w: &mut Writer, ids: &[u32]) {
    w.u64s(&ids.iter().map(|&i| i as u64).collect::<Vec<_>>());
}

fn decode_ids(r: &mut Reader<'_>) -> Result<Vec<u32>> {
    r.u64s()?
        .into_iter()
        .map(|v| {
            u32::try_from(v)
                .map_err(|_| Error::Format("editor state", format!("token id {v} out of range")))
        })
        .collect()
}

pub fn write_state(state: &EditorState) -> Vec<u8> {
    let s = &state.strategy;
    let mut w = Writer::new();
    w.u8(s.kind.code());
    w.f64(s.train.learning_rate);
    w.f64(s.train.grad_clip_norm);
    w.u64(s.train.steps_per_edit as u64);
    w.u64(s.train.n_prefix_augmentations as u64);
    w.u64(s.train.prefix_len as u64);
    w.u64(s.train.rng_seed);
    w.f64(s.routing.tau);
    w.u64(s.routing.k as u64);
    w.u8(s.routing.strategy.code());
    w.u8(s.routing.conditional_activation as u8);
    w.u64(s.permutation_seed);
    w.str(&state.backbone_digest);
    w.u64s(&state.edit_ids);
    let mem = &state.memory;
    w.u64(mem.dim() as u64);
    w.u64(mem.d_model() as u64);
    w.f64s(mem.rows());
    w.bytes(
        &mem.dirty_flags()
            .iter()
            .map(|&d| d as u8)
            .collect::<Vec<_>>(),
    );
    encode_permutation(&mut w, &state.permutation);
    encode_centering(&mut w, &state.centering);
    state.db.encode(&mut w);
    w.u64(state.codebook.len() as u64);
    for e in &state.codebook {
        w.u64(e.edit_id);
        encode_ids(&mut w, &e.prompt);
        encode_ids(&mut w, &e.target);
    }
    seal(STATE_MAGIC, STATE_VERSION, &w.into_inner())
}

pub fn read_state(bytes: &[u8]) -> Result<EditorState> {
    const KIND: &str = "editor state";
    let body = open(bytes, STATE_MAGIC, STATE_VERSION, KIND)?;
    let mut r = Reader::new(body, KIND);
    let bad = |m: String| Error::Format(KIND, m);
    let code = r.u8()?;
    let kind =
        StrategyKind::from_code(code).ok_or_else(|| bad(format!("unknown editor kind {code}")))?;
    let train = EditTrainConfig {
        learning_rate: r.f64()?,
        grad_clip_norm: r.f64()?,
        steps_per_edit: r.usize()?,
        n_prefix_augmentations: r.usize()?,
        prefix_len: r.usize()?,
        rng_seed: r.u64()?,
    };
    let tau = r.f64()?;
    let k = r.usize()?;
    let sc = r.u8()?;
    let routing = RoutingConfig {
        tau,
        k,
        strategy: SelectionStrategy::from_code(sc)
            .ok_or_else(|| bad(format!("unknown strategy code {sc}")))?,
        conditional_activation: r.u8()? != 0,
    };
    let strategy = EditorStrategy {
        kind,
        train,
        routing,
        permutation_seed: r.u64()?,
    };
    let backbone_digest = r.str()?;
    let edit_ids = r.u64s()?;
    let dim = r.usize()?;
    let d_model = r.usize()?;
    let rows = r.f64s()?;
    let dirty = r.bytes()?.into_iter().map(|b| b != 0).collect();
    let memory = ResidualMemory::from_parts(dim, d_model, rows, dirty)?;
    let permutation = decode_permutation(&mut r)?;
    let centering = decode_centering(&mut r)?;
    let db = MaskDatabase::decode(&mut r)?;
    let n = r.usize()?;
    let mut codebook = Vec::new();
    let mut codebook_index = HashMap::new();
    for i in 0..n {
        let entry = CodebookEntry {
            edit_id: r.u64()?,
            prompt: decode_ids(&mut r)?,
            target: decode_ids(&mut r)?,
        };
        codebook_index.insert(entry.prompt.clone(), i);
        codebook.push(entry);
    }
    r.finish()?;
    if permutation.dim() != dim || centering.dim() != dim || db.dim() != dim {
        return Err(bad("component dimensions disagree".into()));
    }
    let seen: HashSet<u64> = edit_ids.iter().copied().collect();
    if seen.len() != edit_ids.len() {
        return Err(bad("duplicate edit ids".into()));
    }
    Ok(EditorState {
        strategy,
        backbone_digest,
        centering,
        permutation,
        memory,
        db,
        codebook,
        codebook_index,
        edit_ids,
        seen,
    })
}

/// Writes to a temporary sibling and renames, so a crash never leaves a
/// partial state file at `path`.
pub fn snapshot(state: &EditorState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, write_state(state)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn restore(path: impl AsRef<Path>) -> Result<EditorState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_state(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::datagen::generate_benchmark;

    fn setup() -> (BackboneModel, BenchmarkSet) {
        let cfg = BackboneConfig {
            d_model: 16,
            d_ffn: 64,
            n_heads: 2,
            ..Default::default()
        };
        (
            BackboneModel::init(cfg).unwrap(),
            generate_benchmark(6, 2, 5, 3).unwrap(),
        )
    }

    fn quick(kind: StrategyKind) -> EditorStrategy {
        let mut s = EditorStrategy::new(kind);
        s.train.steps_per_edit = 4;
        s.train.n_prefix_augmentations = 2;
        s.train.prefix_len = 3;
        s.routing.k = 16;
        s
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn kind_parsing() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
            assert_eq!(StrategyKind::from_code(k.code()), Some(k));
        }
        assert!("grace".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn state_roundtrip_for_every_kind() {
        let (m, b) = setup();
        for kind in StrategyKind::ALL {
            let (state, log) =
                run_session(&m, &b, quick(kind), SessionOptions::default(), None).unwrap();
            assert_eq!(log.records.len(), 6);
            let back = read_state(&write_state(&state)).unwrap();
            assert_eq!(back, state);
        }
    }

    #[test]
    fn corrupted_state_is_rejected() {
        let (m, b) = setup();
        let (state, _) = run_session(
            &m,
            &b,
            quick(StrategyKind::Memoir),
            SessionOptions::default(),
            None,
        )
        .unwrap();
        let mut bytes = write_state(&state);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(read_state(&bytes), Err(Error::Checksum)));
        let mut v = write_state(&state);
        v[8] = 9;
        assert!(matches!(
            read_state(&v),
            Err(Error::Version { found: 9, .. }) | Err(Error::Checksum)
        ));
    }

    #[test]
    fn duplicate_edit_is_reported_with_its_id() {
        let (m, b) = setup();
        let mut st = EditorState::new(&m, quick(StrategyKind::Memoir), &[]).unwrap();
        st.apply(&m, &b.edits[0]).unwrap();
        let err = st.apply(&m, &b.edits[0]).unwrap_err();
        assert!(matches!(err, Error::EditFailed { edit_id: 0, .. }));
    }

    #[test]
    fn resume_rejects_other_backbone_and_mismatched_stream() {
        let (m, b) = setup();
        let mut st = EditorState::new(&m, quick(StrategyKind::Memoir), &[]).unwrap();
        let other = BackboneModel::init(BackboneConfig {
            rng_seed: 99,
            ..m.config().clone()
        })
        .unwrap();
        assert!(matches!(
            resume_session(&mut st, &other, &b, SessionOptions::default(), None),
            Err(Error::Backbone { .. })
        ));
        st.apply(&m, &b.edits[1]).unwrap();
        assert!(resume_session(&mut st, &m, &b, SessionOptions::default(), None).is_err());
    }

    #[test]
    fn codebook_overrides_only_exact_prompts() {
        let (m, b) = setup();
        let (st, _) = run_session(
            &m,
            &b,
            quick(StrategyKind::ExactCodebook),
            SessionOptions::default(),
            None,
        )
        .unwrap();
        for e in &b.edits {
            assert!(
                st.score(&m, &e.prompt, &e.target, &mut rng())
                    .unwrap()
                    .exact
            );
            let out = st
                .generate(&m, &e.prompt, e.target.len(), &mut rng())
                .unwrap();
            assert_eq!(out, e.target);
            for r in &e.rephrases {
                let route = st.score(&m, r, &e.target, &mut rng()).unwrap().route;
                assert_eq!(route.binding, Binding::Bypass);
            }
        }
    }

    #[test]
    fn snapshot_hook_fires_on_interval_and_stop_after_halts() {
        let (m, b) = setup();
        let mut seen = Vec::new();
        let mut hook = |s: &EditorState| {
            seen.push(s.edits_applied());
            Ok(())
        };
        let opts = SessionOptions {
            snapshot_every: 2,
            stop_after: Some(5),
        };
        let (st, log) =
            run_session(&m, &b, quick(StrategyKind::Memoir), opts, Some(&mut hook)).unwrap();
        assert_eq!(seen, vec![2, 4]);
        assert_eq!(st.edits_applied(), 5);
        assert_eq!(log.records.len(), 5);
    }

    #[test]
    fn session_log_is_line_delimited() {
        let (m, b) = setup();
        let (_, log) = run_session(
            &m,
            &b,
            quick(StrategyKind::Memoir),
            SessionOptions::default(),
            None,
        )
        .unwrap();
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        for line in text.lines().take(6) {
            let r: EditRecord = serde_json::from_str(line).unwrap();
            assert_eq!(r.losses.len(), 4);
        }
    }

    #[test]
    fn hook_and_state_generate_agree() {
        let (m, b) = setup();
        let (st, _) = run_session(
            &m,
            &b,
            quick(StrategyKind::Memoir),
            SessionOptions::default(),
            None,
        )
        .unwrap();
        for e in &b.edits {
            let via_hook = crate::backbone::generate(&m, Some(&st), &e.prompt, 4).unwrap();
            let direct = st.generate(&m, &e.prompt, 4, &mut rng()).unwrap();
            assert_eq!(via_hook, direct);
        }
    }
}
