//! Reliability, generalization and locality of an editor state, plus
//! perplexity, threshold success, forgetting curves, overlap histograms and
//! ablation sweeps.
//!
//! Reliability and generalization are exact-match: every target token must
//! be the greedy choice. Token accuracy is reported alongside. Locality is
//! scored on the unedited model's greedy continuation of each irrelevant
//! prompt: by bitwise logit equality for MEMOIR, whose bypass branch is
//! exact, and by decoded-token equality for the comparators.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneModel, TokenSequence};
use crate::datagen::BenchmarkSet;
use crate::editor::{
    run_session, Binding, EditorState, EditorStrategy, SessionOptions, StrategyKind,
};
use crate::error::{Error, Result};
use crate::tensor::argmax;
use crate::tophash::SelectionStrategy;

/// `-ln(0.8)`: an edit succeeds when its mean target loss is below this.
pub fn default_threshold() -> f64 {
    -(0.8f64.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalityMode {
    Logits,
    Tokens,
}

/// Overlap ratios in `[0, 1)` fall into `bins` equal-width bins; exact
/// `1.0` has its own final bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapHistogram {
    pub counts: Vec<usize>,
}

pub const HISTOGRAM_BINS: usize = 20;

impl OverlapHistogram {
    fn new() -> Self {
        OverlapHistogram {
            counts: vec![0; HISTOGRAM_BINS + 1],
        }
    }

    fn add(&mut self, r: f64) {
        let bin = if r >= 1.0 {
            HISTOGRAM_BINS
        } else {
            ((r * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
        };
        self.counts[bin] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Count of ratios exactly equal to 1.0.
    pub fn exact_ones(&self) -> usize {
        self.counts[HISTOGRAM_BINS]
    }

    /// Lower edge of each bin; the last entry is the exact-1.0 bin.
    pub fn bin_edges() -> Vec<f64> {
        (0..=HISTOGRAM_BINS)
            .map(|b| b as f64 / HISTOGRAM_BINS as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapHistograms {
    pub edited: OverlapHistogram,
    pub rephrased: OverlapHistogram,
    pub irrelevant: OverlapHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: StrategyKind,
    pub edits_evaluated: usize,
    pub reliability: f64,
    pub generalization: f64,
    pub locality: f64,
    /// `(reliability + generalization + locality) / 3`.
    pub average: f64,
    pub locality_mode: LocalityMode,
    pub reliability_token_accuracy: f64,
    pub generalization_token_accuracy: f64,
    /// Fraction of edits whose mean target loss is below [`default_threshold`].
    pub threshold_success: f64,
    /// Mean per-edit target perplexity; `None` when no edit was evaluated.
    pub perplexity: Option<f64>,
    /// Irrelevant prompts routed around the memory.
    pub irrelevant_bypassed: usize,
    pub window: usize,
    /// `(window index, reliability)` over consecutive windows of edits.
    pub window_reliability: Vec<(usize, f64)>,
    /// `None` for editors without a mask database.
    pub histograms: Option<OverlapHistograms>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "strategy,edits,reliability,generalization,locality,average,\
locality_mode,reliability_token_acc,generalization_token_acc,threshold_success,perplexity";

    pub fn csv_row(&self) -> String {
        let mode = match self.locality_mode {
            LocalityMode::Logits => "logits",
            LocalityMode::Tokens => "tokens",
        };
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6},{:.6},{}",
            self.strategy,
            self.edits_evaluated,
            self.reliability,
            self.generalization,
            self.locality,
            self.average,
            mode,
            self.reliability_token_accuracy,
            self.generalization_token_accuracy,
            self.threshold_success,
            self.perplexity.map_or(String::new(), |p| format!("{p:.6}")),
        )
    }
}

pub fn average_of(reliability: f64, generalization: f64, locality: f64) -> f64 {
    (reliability + generalization + locality) / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub window: usize,
    /// Seeds the mask draws of the random selection strategy.
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            window: 100,
            seed: 0,
        }
    }
}

/// Independent draw stream per `(edit, prompt slot)`, so scores do not
/// depend on evaluation order.
fn query_rng(seed: u64, t: usize, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((t as u64) << 8) | slot);
    rng
}

const IRRELEVANT_SLOT: u64 = 255;

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn windows(flags: &[bool], window: usize) -> Vec<(usize, f64)> {
    flags
        .chunks(window.max(1))
        .enumerate()
        .map(|(i, c)| (i, c.iter().filter(|&&f| f).count() as f64 / c.len() as f64))
        .collect()
}

/// Metrics over the first `up_to` edits of `benchmark`, which must all be
/// applied to `state`.
pub fn evaluate(
    state: &EditorState,
    model: &BackboneModel,
    benchmark: &BenchmarkSet,
    up_to: usize,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if up_to > state.edits_applied() {
        return Err(Error::Precondition(format!(
            "cannot evaluate {up_to} edits, session has {}",
            state.edits_applied()
        )));
    }
    if benchmark.edits[..up_to]
        .iter()
        .map(|e| e.edit_id)
        .ne(state.edit_ids()[..up_to].iter().copied())
    {
        return Err(Error::Precondition(
            "benchmark does not match the session's edit stream".into(),
        ));
    }
    evaluate_unchecked(state, model, benchmark, up_to, opts)
}

/// Metrics of the unedited backbone on the first `up_to` edits.
pub fn evaluate_unedited(
    model: &BackboneModel,
    benchmark: &BenchmarkSet,
    up_to: usize,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if up_to > benchmark.edits.len() {
        return Err(Error::Precondition(format!(
            "cannot evaluate {up_to} edits, benchmark has {}",
            benchmark.edits.len()
        )));
    }
    let state = EditorState::new(model, EditorStrategy::memoir(), &[])?;
    evaluate_unchecked(&state, model, benchmark, up_to, opts)
}

fn evaluate_unchecked(
    state: &EditorState,
    model: &BackboneModel,
    benchmark: &BenchmarkSet,
    up_to: usize,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    state.check_backbone(model)?;
    let kind = state.strategy().kind;
    let mode = if kind == StrategyKind::Memoir {
        LocalityMode::Logits
    } else {
        LocalityMode::Tokens
    };
    let mut hist = (kind == StrategyKind::Memoir).then(|| OverlapHistograms {
        edited: OverlapHistogram::new(),
        rephrased: OverlapHistogram::new(),
        irrelevant: OverlapHistogram::new(),
    });
    let (mut rel, mut rel_acc, mut thr, mut ppl) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut gen, mut gen_acc) = (Vec::new(), Vec::new());
    let (mut local, mut bypassed) = (0usize, 0usize);

    for (t, e) in benchmark.edits[..up_to].iter().enumerate() {
        let s = state.score(model, &e.prompt, &e.target, &mut query_rng(opts.seed, t, 0))?;
        rel.push(s.exact);
        rel_acc.push(s.token_accuracy);
        thr.push(s.mean_loss < default_threshold());
        ppl.push(s.mean_loss.exp());
        if let (Some(h), Some(m)) = (hist.as_mut(), s.route.matched) {
            h.edited.add(m.overlap_ratio);
        }
        for (i, r) in e.rephrases.iter().enumerate() {
            let s = state.score(
                model,
                r,
                &e.target,
                &mut query_rng(opts.seed, t, 1 + i as u64),
            )?;
            gen.push(s.exact);
            gen_acc.push(s.token_accuracy);
            if let (Some(h), Some(m)) = (hist.as_mut(), s.route.matched) {
                h.rephrased.add(m.overlap_ratio);
            }
        }

        let (same, route) = locality_of(
            state,
            model,
            &e.irrelevant_prompt,
            e.irrelevant_target.len(),
            mode,
            &mut query_rng(opts.seed, t, IRRELEVANT_SLOT),
        )?;
        local += same as usize;
        bypassed += (route == Binding::Bypass) as usize;
        if let (Some(h), Some(m)) = (
            hist.as_mut(),
            route_match(state, model, &e.irrelevant_prompt, opts.seed, t)?,
        ) {
            h.irrelevant.add(m);
        }
    }

    let frac = |v: &[bool]| mean(v.iter().map(|&b| b as u8 as f64));
    let reliability = frac(&rel);
    let generalization = frac(&gen);
    let locality = if up_to == 0 {
        1.0
    } else {
        local as f64 / up_to as f64
    };
    Ok(MetricsReport {
        strategy: kind,
        edits_evaluated: up_to,
        reliability,
        generalization,
        locality,
        average: average_of(reliability, generalization, locality),
        locality_mode: mode,
        reliability_token_accuracy: mean(rel_acc),
        generalization_token_accuracy: mean(gen_acc),
        threshold_success: frac(&thr),
        perplexity: (!ppl.is_empty()).then(|| mean(ppl)),
        irrelevant_bypassed: bypassed,
        window: opts.window,
        window_reliability: windows(&rel, opts.window),
        histograms: hist,
    })
}

/// Query-mask overlap of an irrelevant prompt, independent of whether the
/// memory was applied.
fn route_match(
    state: &EditorState,
    model: &BackboneModel,
    prompt: &TokenSequence,
    seed: u64,
    t: usize,
) -> Result<Option<f64>> {
    let acts = model.ffn_input_activations(prompt)?;
    let route = state.route_prompt(prompt, &acts, &mut query_rng(seed, t, IRRELEVANT_SLOT))?;
    Ok(route.matched.map(|m| m.overlap_ratio))
}

/// Whether the edited model reproduces the unedited model on an irrelevant
/// prompt along the unedited greedy continuation of `len` tokens.
fn locality_of(
    state: &EditorState,
    model: &BackboneModel,
    prompt: &TokenSequence,
    len: usize,
    mode: LocalityMode,
    rng: &mut ChaCha8Rng,
) -> Result<(bool, Binding)> {
    let decoded = model.greedy_decode(&prompt.ids, None, len)?;
    let path = &decoded.ids[..];
    let (route, logits) = state.continuation_logits(model, prompt, path, rng)?;
    let same = match (&route.binding, logits) {
        (Binding::Override(out), _) => out[..] == *path,
        (_, Some(edited)) => match mode {
            LocalityMode::Logits => {
                let mut ids = prompt.ids.clone();
                ids.extend_from_slice(&path[..path.len() - 1]);
                let base = model.forward_rows(&ids, None, prompt.len() - 1)?;
                base.iter()
                    .zip(&edited)
                    .all(|(a, b)| a.to_bits() == b.to_bits())
            }
            LocalityMode::Tokens => {
                let v = model.config().vocab_size;
                path.iter()
                    .enumerate()
                    .all(|(i, &tok)| argmax(&edited[i * v..(i + 1) * v]) == tok as usize)
            }
        },
        (_, None) => unreachable!("only overrides skip the forward"),
    };
    Ok((same, route.binding))
}

/// `exp` of the mean target cross-entropy under routed inference.
pub fn perplexity(
    state: &EditorState,
    model: &BackboneModel,
    prompt: &TokenSequence,
    target: &TokenSequence,
) -> Result<f64> {
    Ok(state
        .score(model, prompt, target, &mut query_rng(0, 0, 0))?
        .mean_loss
        .exp())
}

/// Whether the mean target loss is strictly below `delta`.
pub fn threshold_success(
    state: &EditorState,
    model: &BackboneModel,
    prompt: &TokenSequence,
    target: &TokenSequence,
    delta: f64,
) -> Result<bool> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::Precondition(format!(
            "delta must be positive, got {delta}"
        )));
    }
    Ok(state
        .score(model, prompt, target, &mut query_rng(0, 0, 0))?
        .mean_loss
        < delta)
}

/// Final-state reliability of each window of `window` consecutive edits.
pub fn forgetting_curve(
    state: &EditorState,
    model: &BackboneModel,
    benchmark: &BenchmarkSet,
    window: usize,
) -> Result<Vec<(usize, f64)>> {
    if window == 0 {
        return Err(Error::Precondition("window must be >= 1".into()));
    }
    let n = state.edits_applied().min(benchmark.edits.len());
    let flags = benchmark.edits[..n]
        .iter()
        .enumerate()
        .map(|(t, e)| {
            Ok(state
                .score(model, &e.prompt, &e.target, &mut query_rng(0, t, 0))?
                .exact)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(windows(&flags, window))
}

#[derive(Debug, Clone, PartialEq)]
pub enum AblationAxis {
    K(Vec<usize>),
    Tau(Vec<f64>),
    Strategy(Vec<SelectionStrategy>),
    CenteringN(Vec<usize>),
    ConditionalActivation(Vec<bool>),
}

impl AblationAxis {
    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::K(_) => "k",
            AblationAxis::Tau(_) => "tau",
            AblationAxis::Strategy(_) => "strategy",
            AblationAxis::CenteringN(_) => "centering_n",
            AblationAxis::ConditionalActivation(_) => "conditional_activation",
        }
    }

    fn labels(&self) -> Vec<String> {
        match self {
            AblationAxis::K(v) => v.iter().map(|x| x.to_string()).collect(),
            AblationAxis::Tau(v) => v.iter().map(|x| x.to_string()).collect(),
            AblationAxis::Strategy(v) => v.iter().map(|x| x.to_string()).collect(),
            AblationAxis::CenteringN(v) => v.iter().map(|x| x.to_string()).collect(),
            AblationAxis::ConditionalActivation(v) => v.iter().map(|x| x.to_string()).collect(),
        }
    }

    /// Parses `name` plus comma-separated values, e.g. `("k", "8,64,256")`.
    pub fn parse(name: &str, values: &str) -> Result<Self> {
        fn list<T: std::str::FromStr>(values: &str) -> Result<Vec<T>> {
            values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::Parameter(format!("bad ablation value '{v}'")))
                })
                .collect()
        }
        Ok(match name {
            "k" => AblationAxis::K(list(values)?),
            "tau" => AblationAxis::Tau(list(values)?),
            "strategy" => AblationAxis::Strategy(list(values)?),
            "centering_n" | "centering-n" => AblationAxis::CenteringN(list(values)?),
            "conditional_activation" | "ka" => AblationAxis::ConditionalActivation(list(values)?),
            other => return Err(Error::Parameter(format!("unknown ablation axis '{other}'"))),
        })
    }

    fn is_empty(&self) -> bool {
        self.labels().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.axis, MetricsReport::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(out, "{},{}", r.value, r.report.csv_row());
        }
        out
    }

    pub fn get(&self, value: &str) -> Option<&MetricsReport> {
        self.rows
            .iter()
            .find(|r| r.value == value)
            .map(|r| &r.report)
    }
}

/// One MEMOIR session over the first `edits` edits per axis value, each
/// with the same seeds, then evaluation. Inference-only axes (`tau`,
/// conditional activation) share a single session, which is bit-identical
/// to re-running it.
pub fn ablate(
    axis: &AblationAxis,
    model: &BackboneModel,
    benchmark: &BenchmarkSet,
    base: &EditorStrategy,
    edits: usize,
    opts: &EvalOptions,
) -> Result<AblationTable> {
    if axis.is_empty() {
        return Err(Error::Precondition(
            "ablation needs at least one value".into(),
        ));
    }
    if edits == 0 || edits > benchmark.edits.len() {
        return Err(Error::Precondition(format!(
            "edits must be in 1..={}, got {edits}",
            benchmark.edits.len()
        )));
    }
    let bench = benchmark.truncated(edits);
    let mut base = base.clone();
    base.kind = StrategyKind::Memoir;
    let session = |strategy: EditorStrategy, bench: &BenchmarkSet| -> Result<EditorState> {
        let opts = SessionOptions {
            snapshot_every: 0,
            stop_after: None,
        };
        Ok(run_session(model, bench, strategy, opts, None)?.0)
    };
    let mut reports = Vec::new();
    match axis {
        AblationAxis::K(ks) => {
            for &k in ks {
                let mut s = base.clone();
                s.routing.k = k;
                reports.push(evaluate(&session(s, &bench)?, model, &bench, edits, opts)?);
            }
        }
        AblationAxis::Strategy(ss) => {
            for &strategy in ss {
                let mut s = base.clone();
                s.routing.strategy = strategy;
                reports.push(evaluate(&session(s, &bench)?, model, &bench, edits, opts)?);
            }
        }
        AblationAxis::CenteringN(ns) => {
            for &n in ns {
                if n > benchmark.centering_corpus.len() {
                    return Err(Error::Precondition(format!(
                        "centering_n {n} exceeds the {} centering prompts available",
                        benchmark.centering_corpus.len()
                    )));
                }
                let b = bench.with_centering(n);
                reports.push(evaluate(
                    &session(base.clone(), &b)?,
                    model,
                    &b,
                    edits,
                    opts,
                )?);
            }
        }
        AblationAxis::Tau(taus) => {
            let st = session(base.clone(), &bench)?;
            for &tau in taus {
                let v = st.with_inference_routing(tau, base.routing.conditional_activation)?;
                reports.push(evaluate(&v, model, &bench, edits, opts)?);
            }
        }
        AblationAxis::ConditionalActivation(flags) => {
            let st = session(base.clone(), &bench)?;
            for &ka in flags {
                let v = st.with_inference_routing(base.routing.tau, ka)?;
                reports.push(evaluate(&v, model, &bench, edits, opts)?);
            }
        }
    }
    Ok(AblationTable {
        axis: axis.name().to_string(),
        rows: axis
            .labels()
            .into_iter()
            .zip(reports)
            .map(|(value, report)| AblationRow { value, report })
            .collect(),
    })
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
            generate_benchmark(5, 2, 4, 11).unwrap(),
        )
    }

    fn quick() -> EditorStrategy {
        let mut s = EditorStrategy::memoir();
        s.train.steps_per_edit = 6;
        s.train.n_prefix_augmentations = 2;
        s.train.prefix_len = 3;
        s.routing.k = 16;
        s
    }

    #[test]
    fn threshold_constant_and_histogram_binning() {
        assert!((default_threshold() - 0.22314355131420976).abs() < 1e-15);
        let mut h = OverlapHistogram::new();
        for r in [0.0, 0.049, 0.05, 0.999, 1.0, 1.0] {
            h.add(r);
        }
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[19], 1);
        assert_eq!(h.exact_ones(), 2);
        assert_eq!(h.total(), 6);
        assert_eq!(OverlapHistogram::bin_edges().len(), h.counts.len());
    }

    #[test]
    fn window_edge_cases() {
        let f = [true, false, true, true, false];
        assert_eq!(windows(&f, 10), vec![(0, 0.6)]);
        assert_eq!(windows(&f, 2), vec![(0, 0.5), (1, 1.0), (2, 0.0)]);
    }

    #[test]
    fn unedited_model_has_perfect_locality() {
        let (m, b) = setup();
        let r = evaluate_unedited(&m, &b, 5, &EvalOptions::default()).unwrap();
        assert_eq!(r.locality, 1.0);
        assert_eq!(r.irrelevant_bypassed, 5);
        assert_eq!(
            r.average,
            average_of(r.reliability, r.generalization, r.locality)
        );
        let h = r.histograms.unwrap();
        assert_eq!(h.edited.total(), 5);
        assert_eq!(h.rephrased.total(), 10);
        assert_eq!(h.irrelevant.total(), 5);
    }

    #[test]
    fn report_is_deterministic_and_consistent() {
        let (m, b) = setup();
        let (st, _) = run_session(&m, &b, quick(), SessionOptions::default(), None).unwrap();
        let opts = EvalOptions { window: 2, seed: 1 };
        let a = evaluate(&st, &m, &b, 5, &opts).unwrap();
        assert_eq!(a, evaluate(&st, &m, &b, 5, &opts).unwrap());
        assert_eq!(
            a.average,
            (a.reliability + a.generalization + a.locality) / 3.0
        );
        assert_eq!(a.window_reliability.len(), 3);
        let h = a.histograms.as_ref().unwrap();
        assert_eq!(h.edited.exact_ones(), 5);
        assert!(evaluate(&st, &m, &b, 6, &opts).is_err());
        let curve = forgetting_curve(&st, &m, &b, 5).unwrap();
        assert_eq!(curve, vec![(0, a.reliability)]);
        assert_eq!(forgetting_curve(&st, &m, &b, 50).unwrap(), curve);
    }

    #[test]
    fn codebook_generalization_is_zero() {
        let (m, b) = setup();
        let (st, _) = run_session(
            &m,
            &b,
            EditorStrategy::exact_codebook(),
            SessionOptions::default(),
            None,
        )
        .unwrap();
        let r = evaluate(&st, &m, &b, 5, &EvalOptions::default()).unwrap();
        assert_eq!(r.reliability, 1.0);
        assert_eq!(r.locality_mode, LocalityMode::Tokens);
        assert!(r.histograms.is_none());
        let base = evaluate_unedited(&m, &b, 5, &EvalOptions::default()).unwrap();
        assert_eq!(r.generalization, base.generalization);
        assert_eq!(r.locality, 1.0);
    }

    #[test]
    fn threshold_and_perplexity_contracts() {
        let (m, b) = setup();
        let st = EditorState::new(&m, quick(), &[]).unwrap();
        let e = &b.edits[0];
        assert!(threshold_success(&st, &m, &e.prompt, &e.target, 0.0).is_err());
        let p = perplexity(&st, &m, &e.prompt, &e.target).unwrap();
        assert!(p >= 1.0);
        let loss = p.ln();
        assert!(!threshold_success(&st, &m, &e.prompt, &e.target, loss).unwrap());
        assert!(threshold_success(&st, &m, &e.prompt, &e.target, loss * 1.0001).unwrap());
    }

    #[test]
    fn ablation_axes_parse_and_run() {
        let (m, b) = setup();
        assert_eq!(
            AblationAxis::parse("k", "8,16").unwrap(),
            AblationAxis::K(vec![8, 16])
        );
        assert!(AblationAxis::parse("depth", "1").is_err());
        assert!(AblationAxis::parse("tau", "x").is_err());
        let t = ablate(
            &AblationAxis::ConditionalActivation(vec![true, false]),
            &m,
            &b,
            &quick(),
            3,
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.to_csv().lines().count() == 3);
        assert_eq!(t.axis, "conditional_activation");
        assert!(t.get("false").is_some() && t.get("maybe").is_none());
        assert!(ablate(
            &AblationAxis::K(vec![]),
            &m,
            &b,
            &quick(),
            3,
            &EvalOptions::default()
        )
        .is_err());
        assert!(ablate(
            &AblationAxis::CenteringN(vec![99]),
            &m,
            &b,
            &quick(),
            3,
            &EvalOptions::default()
        )
        .is_err());
    }
}
