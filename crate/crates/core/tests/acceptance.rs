//! The thirteen acceptance criteria, one test each. Every test writes a
//! single `criterion NN PASS|FAIL ...` line to stderr (bypassing output
//! capture, so the lines show up in plain `cargo test` runs) and then
//! asserts the criterion at its stated tolerance.
//!
//! Shared work is computed once: the pre-trained backbone, a 1,000-edit
//! MEMOIR session (with the per-edit column diff recorded along the way),
//! and its evaluation.

mod common;

use std::io::Write as _;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use memoir_core::backbone::{BackboneConfig, BackboneModel, Role, TokenSequence};
use memoir_core::editor::{
    restore, resume_session, run_session, snapshot, Binding, EditorState, EditorStrategy,
    SessionOptions,
};
use memoir_core::eval::{ablate, evaluate, AblationAxis, EvalOptions, MetricsReport};
use memoir_core::memory::{edit_loss_and_grad, ResidualMemory};
use memoir_core::tophash::{pooled_key, tophash_mask, MaskDatabase, SelectionStrategy, SparseMask};

use common::{backbone, benchmark, exclusive};

const T: usize = 1000;
/// Session length for the ablation sweeps.
const ABLATION_T: usize = 200;

fn verdict(id: u32, name: &str, pass: bool, detail: impl AsRef<str>) {
    let line = format!(
        "criterion {id:02} {} {name}: {}",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(pass, "{line}");
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

struct Session {
    state: EditorState,
    /// Edits whose changed columns escaped their own mask.
    escapes: Vec<u64>,
    wall: Duration,
}

/// MEMOIR with default settings over the first `T` edits, diffing the
/// memory after every edit.
fn memoir_session() -> &'static Session {
    static S: OnceLock<Session> = OnceLock::new();
    S.get_or_init(|| {
        let model = backbone();
        let bench = benchmark();
        let started = Instant::now();
        let mut state =
            EditorState::new(model, EditorStrategy::memoir(), &bench.centering_corpus).unwrap();
        let mut escapes = Vec::new();
        for e in &bench.edits[..T] {
            let before = state.memory().clone();
            state.apply(model, e).unwrap();
            let mask = state.database().get(e.edit_id).unwrap();
            let changed = state.memory().changed_columns(&before);
            if !changed.iter().all(|&j| mask.contains(j)) {
                escapes.push(e.edit_id);
            }
        }
        Session {
            state,
            escapes,
            wall: started.elapsed(),
        }
    })
}

fn memoir_report() -> &'static (MetricsReport, Duration) {
    static R: OnceLock<(MetricsReport, Duration)> = OnceLock::new();
    R.get_or_init(|| {
        let s = memoir_session();
        let started = Instant::now();
        let r = evaluate(
            &s.state,
            backbone(),
            benchmark(),
            T,
            &EvalOptions::default(),
        )
        .unwrap();
        (r, started.elapsed())
    })
}

fn ablation(axis: AblationAxis) -> memoir_core::eval::AblationTable {
    ablate(
        &axis,
        backbone(),
        benchmark(),
        &EditorStrategy::memoir(),
        ABLATION_T,
        &EvalOptions::default(),
    )
    .unwrap()
}

#[test]
fn c01_zero_memory_is_bit_identical() {
    let _g = exclusive();
    let model = backbone();
    let started = Instant::now();
    let bench = benchmark();
    let fresh = EditorState::new(model, EditorStrategy::memoir(), &bench.centering_corpus).unwrap();
    let forced = fresh.with_inference_routing(0.4, false).unwrap();
    let k = fresh.strategy().routing.k;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let len = rng.gen_range(2..=40);
        let ids: Vec<u32> = (0..len).map(|_| rng.gen_range(0..256)).collect();
        let prompt = TokenSequence::new(ids[..len - 1].to_vec(), Role::Prompt);
        let base = model.logits(&ids, None).unwrap();

        let acts = model.ffn_input_activations(&prompt).unwrap();
        let key = pooled_key(&acts, prompt.len(), fresh.centering()).unwrap();
        let mask = tophash_mask(&key, k, fresh.permutation()).unwrap();
        let branch = fresh.memory().branch(mask.active());
        let direct = model.logits(&ids, Some(&branch)).unwrap();

        let (route, routed) = forced
            .continuation_logits(model, &prompt, &ids[len - 1..], &mut rng)
            .unwrap();
        assert!(matches!(route.binding, Binding::Memory(_)));
        let tail = &base[(len - 2) * 256..(len - 1) * 256];
        if !same_bits(&direct, &base) || !same_bits(&routed.unwrap(), tail) {
            mismatches += 1;
        }
    }
    let wall = started.elapsed();
    verdict(
        1,
        "zero-init identity",
        mismatches == 0 && wall < Duration::from_secs(60),
        format!(
            "{mismatches}/1000 prompts differ, {:.1}s",
            wall.as_secs_f64()
        ),
    );
}

#[test]
fn c02_updates_stay_in_the_mask() {
    let _g = exclusive();
    let s = memoir_session();
    assert_eq!(s.state.memory().dim(), 256);
    assert_eq!(s.state.strategy().routing.k, 64);
    verdict(
        2,
        "column confinement",
        s.escapes.is_empty() && s.wall < Duration::from_secs(600),
        format!(
            "{} of {T} edits changed columns outside their mask, session {:.1}s",
            s.escapes.len(),
            s.wall.as_secs_f64()
        ),
    );
}

#[test]
fn c03_bypassed_prompts_are_bit_exact() {
    let _g = exclusive();
    let model = backbone();
    let s = memoir_session();
    let bench = benchmark();
    let unedited = EditorState::new(model, EditorStrategy::memoir(), &[]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut bypassed, mut inexact) = (0, 0);
    for e in &bench.edits[..T] {
        let (route, got) = s
            .state
            .continuation_logits(
                model,
                &e.irrelevant_prompt,
                &e.irrelevant_target.ids,
                &mut rng,
            )
            .unwrap();
        if route.binding == Binding::Bypass {
            bypassed += 1;
            let (_, want) = unedited
                .continuation_logits(
                    model,
                    &e.irrelevant_prompt,
                    &e.irrelevant_target.ids,
                    &mut rng,
                )
                .unwrap();
            if !same_bits(&got.unwrap(), &want.unwrap()) {
                inexact += 1;
            }
        }
    }
    let locality = memoir_report().0.locality;
    verdict(
        3,
        "bypass-exact locality",
        inexact == 0 && locality == 1.0,
        format!(
            "{bypassed}/{T} irrelevant prompts bypassed, {inexact} bypassed but not bit-equal, locality {locality:.3}"
        ),
    );
}

#[test]
fn c04_edited_prompts_retrieve_themselves() {
    let _g = exclusive();
    let model = backbone();
    let s = memoir_session();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut wrong = Vec::new();
    for e in &benchmark().edits[..T] {
        let acts = model.ffn_input_activations(&e.prompt).unwrap();
        let m = s
            .state
            .route_prompt(&e.prompt, &acts, &mut rng)
            .unwrap()
            .matched
            .unwrap();
        if m.overlap_ratio != 1.0 || m.matched_edit_id != Some(e.edit_id) {
            wrong.push(e.edit_id);
        }
    }
    verdict(
        4,
        "exact-match retrieval",
        wrong.is_empty(),
        format!(
            "{} of {T} edited prompts missed R=1.0 or their own id",
            wrong.len()
        ),
    );
}

fn random_mask(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> SparseMask {
    SparseMask::new(rand::seq::index::sample(rng, dim, k).into_vec(), dim).unwrap()
}

#[test]
fn c05_hamming_overlap_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bad = 0;
    for _ in 0..10_000 {
        let dim = rng.gen_range(1..=512);
        let k = rng.gen_range(1..=dim);
        let (a, b) = (random_mask(&mut rng, dim, k), random_mask(&mut rng, dim, k));
        let (da, db) = (a.to_dense(), b.to_dense());
        let d_h = da.iter().zip(&db).filter(|(x, y)| x != y).count();
        let both = da.iter().zip(&db).filter(|(x, y)| **x && **y).count();
        // R = |a & b| / k, so the identity is exact in integers: d_H = 2(k - |a & b|).
        // The float form 2k(1 - R) can round away from the integer.
        if a.overlap(&b) != both || d_h != 2 * (k - both) {
            bad += 1;
        }
    }
    verdict(
        5,
        "hamming/overlap identity",
        bad == 0,
        format!("{bad} of 10000 pairs violate d_H = 2k(1-R)"),
    );
}

#[test]
fn c06_memory_gradient_matches_finite_differences() {
    let cfg = BackboneConfig {
        d_model: 8,
        d_ffn: 16,
        n_heads: 2,
        max_seq_len: 32,
        rng_seed: 6,
        ..Default::default()
    };
    let model = BackboneModel::init(cfg).unwrap();
    let prompt: Vec<u32> = "capital of ab".bytes().map(u32::from).collect();
    let target: Vec<u32> = " xyz".bytes().map(u32::from).collect();
    let ids: Vec<u32> = prompt
        .iter()
        .chain(&target[..target.len() - 1])
        .copied()
        .collect();
    let state = model.edit_layer_state(&ids).unwrap();
    let qs = prompt.len() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<f64> = (0..16 * 8).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let active = vec![0, 3, 5, 8, 13, 15];
    let mem = ResidualMemory::from_rows(16, 8, rows.clone()).unwrap();
    let (_, grad) = edit_loss_and_grad(&model, &mem, &state, qs, &target, &active);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (slot, &j) in active.iter().enumerate() {
        for e in 0..8 {
            let loss_at = |delta: f64| {
                let mut r = rows.clone();
                r[j * 8 + e] += delta;
                let m = ResidualMemory::from_rows(16, 8, r).unwrap();
                edit_loss_and_grad(&model, &m, &state, qs, &target, &active).0
            };
            let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let an = grad[slot * 8 + e];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    verdict(
        6,
        "gradient check",
        worst <= 1e-4,
        format!(
            "max relative error {worst:.2e} over {} entries",
            active.len() * 8
        ),
    );
}

#[test]
fn c07_memoir_forgets_less_than_dense() {
    let _g = exclusive();
    let model = backbone();
    let bench = benchmark().truncated(T);
    let s = memoir_session();
    let (memoir, memoir_eval) = memoir_report();

    let started = Instant::now();
    let opts = SessionOptions {
        snapshot_every: 0,
        stop_after: None,
    };
    let (dense, _) =
        run_session(model, &bench, EditorStrategy::dense_residual(), opts, None).unwrap();
    let dense_report = evaluate(&dense, model, &bench, T, &EvalOptions::default()).unwrap();
    let wall = s.wall + *memoir_eval + started.elapsed();

    let m = memoir.window_reliability[0].1;
    let d = dense_report.window_reliability[0].1;
    verdict(
        7,
        "forgetting contrast",
        m >= d + 0.15 && m >= 0.85 && wall <= Duration::from_secs(1800),
        format!(
            "first-window reliability memoir {m:.3} vs dense {d:.3} (need >= dense+0.15 and >= 0.85), {:.0}s",
            wall.as_secs_f64()
        ),
    );
}

#[test]
fn c08_tophash_generalizes_best() {
    let _g = exclusive();
    let t = ablation(AblationAxis::Strategy(vec![
        SelectionStrategy::TopHash,
        SelectionStrategy::Hash,
        SelectionStrategy::Random,
    ]));
    let g = |v: &str| t.get(v).unwrap().generalization;
    let (top, hash, random) = (g("tophash"), g("hash"), g("random"));
    assert!(benchmark().edits.iter().all(|e| e.rephrases.len() >= 3));
    verdict(
        8,
        "strategy ordering",
        top >= hash + 0.10 && top >= random + 0.10,
        format!(
            "generalization tophash {top:.3}, hash {hash:.3}, random {random:.3} at T={ABLATION_T}"
        ),
    );
}

#[test]
fn c09_conditional_activation_protects_locality() {
    let _g = exclusive();
    let s = memoir_session();
    let on = memoir_report().0.locality;
    let tau = s.state.strategy().routing.tau;
    let off_state = s.state.with_inference_routing(tau, false).unwrap();
    let off = evaluate(
        &off_state,
        backbone(),
        benchmark(),
        T,
        &EvalOptions::default(),
    )
    .unwrap()
    .locality;
    verdict(
        9,
        "K.A. ablation",
        on - off >= 0.10,
        format!("locality with activation {on:.3}, without {off:.3}"),
    );
}

#[test]
fn c10_intermediate_k_is_best() {
    let _g = exclusive();
    let t = ablation(AblationAxis::K(vec![256 / 32, 256 / 4, 256]));
    let avg = |v: &str| t.get(v).unwrap().average;
    let (small, mid, full) = (avg("8"), avg("64"), avg("256"));
    verdict(
        10,
        "k-sweep shape",
        mid > small && mid > full,
        format!("average k=8 {small:.3}, k=64 {mid:.3}, k=256 {full:.3} at T={ABLATION_T}"),
    );
}

#[test]
fn c11_centering_size_is_immaterial() {
    let _g = exclusive();
    let t = ablation(AblationAxis::CenteringN(vec![0, 10, 100]));
    let rows: Vec<(f64, f64)> = ["0", "10", "100"]
        .iter()
        .map(|v| {
            let r = t.get(v).unwrap();
            (r.locality, r.average)
        })
        .collect();
    let all_local = rows.iter().all(|&(l, _)| l == 1.0);
    let (lo, hi) = rows.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &(_, a)| {
        (lo.min(a), hi.max(a))
    });
    verdict(
        11,
        "centering robustness",
        all_local && hi - lo <= 0.05,
        format!(
            "(locality, average) n=0 {:.3?}, n=10 {:.3?}, n=100 {:.3?}; spread {:.3} at T={ABLATION_T}",
            rows[0], rows[1], rows[2], hi - lo
        ),
    );
}

#[test]
fn c12_best_match_equals_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut bad = 0;
    for _ in 0..1000 {
        let (dim, k) = [(16, 4), (64, 8), (256, 64), (100, 37)][rng.gen_range(0..4)];
        let size = rng.gen_range(1..=500);
        let mut db = MaskDatabase::new(dim, k).unwrap();
        let mut stored = Vec::with_capacity(size);
        for _ in 0..size {
            let id = rng.gen::<u64>();
            // repeats make ties and collisions common
            let mask = if !stored.is_empty() && rng.gen_bool(0.1) {
                let (_, m): &(u64, SparseMask) = &stored[rng.gen_range(0..stored.len())];
                m.clone()
            } else {
                random_mask(&mut rng, dim, k)
            };
            db.insert(id, &mask).unwrap();
            stored.push((id, mask));
        }
        let query = if rng.gen_bool(0.3) {
            stored[rng.gen_range(0..size)].1.clone()
        } else {
            random_mask(&mut rng, dim, k)
        };
        let q = query.to_dense();
        let mut best: Option<(u64, usize)> = None;
        for (id, m) in &stored {
            let ov = m
                .to_dense()
                .iter()
                .zip(&q)
                .filter(|(a, b)| **a && **b)
                .count();
            if best.is_none_or(|(_, b)| ov > b) {
                best = Some((*id, ov));
            }
        }
        let (id, ov) = best.unwrap();
        let got = db.best_match(&query).unwrap();
        if got.matched_edit_id != Some(id)
            || got.overlap != ov
            || got.overlap_ratio != ov as f64 / k as f64
            || got.hamming_distance != 2 * (k - ov)
        {
            bad += 1;
        }
    }
    verdict(
        12,
        "oracle equivalence",
        bad == 0,
        format!("{bad} of 1000 databases disagree with the linear scan"),
    );
}

#[test]
fn c13_snapshot_restore_is_bit_identical() {
    let _g = exclusive();
    let model = backbone();
    let bench = benchmark().truncated(60);
    let opts = SessionOptions {
        snapshot_every: 0,
        stop_after: None,
    };
    let (whole, _) = run_session(model, &bench, EditorStrategy::memoir(), opts, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.bin");
    let half = SessionOptions {
        snapshot_every: 0,
        stop_after: Some(30),
    };
    let (first, _) = run_session(model, &bench, EditorStrategy::memoir(), half, None).unwrap();
    snapshot(&first, &path).unwrap();
    drop(first);
    let mut resumed = restore(&path).unwrap();
    resume_session(&mut resumed, model, &bench, opts, None).unwrap();

    let memory_eq = same_bits(whole.memory().rows(), resumed.memory().rows());
    let db_eq = whole.database() == resumed.database();
    let eo = EvalOptions::default();
    let a = evaluate(&whole, model, &bench, 60, &eo).unwrap();
    let b = evaluate(&resumed, model, &bench, 60, &eo).unwrap();
    let report_eq = format!("{a:?}") == format!("{b:?}");
    verdict(
        13,
        "snapshot round-trip",
        memory_eq && db_eq && report_eq,
        format!("W_mem equal {memory_eq}, mask db equal {db_eq}, report equal {report_eq}"),
    );
}
