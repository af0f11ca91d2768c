//! Shared fixtures: the default benchmark and a pre-trained default backbone,
//! cached on disk keyed by everything that determines its weights.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard, OnceLock};

use sha2::{Digest, Sha256};

use memoir_core::backbone::{
    load_checkpoint, pretrain_with, save_checkpoint, BackboneConfig, BackboneModel, PretrainOptions,
};
use memoir_core::datagen::{generate_benchmark, write_records, BenchmarkSet};

pub const FACTS: usize = 1000;
pub const REPHRASES: usize = 3;
pub const CENTERING: usize = 100;
pub const BENCH_SEED: u64 = 7;
pub const PRETRAIN_STEPS: usize = 1000;

pub fn benchmark() -> &'static BenchmarkSet {
    static B: OnceLock<BenchmarkSet> = OnceLock::new();
    B.get_or_init(|| generate_benchmark(FACTS, REPHRASES, CENTERING, BENCH_SEED).unwrap())
}

fn cache_path(config: &BackboneConfig, opts: &PretrainOptions) -> PathBuf {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).unwrap());
    h.update(serde_json::to_vec(opts).unwrap());
    let mut records = Vec::new();
    write_records(benchmark(), &mut records).unwrap();
    h.update(&records);
    let tag: String = h.finalize()[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("memoir-backbone-{tag}.ckpt"))
}

/// Default-config backbone pre-trained on [`benchmark`]. Loaded from the
/// cache when present; otherwise trained (a few minutes) and cached.
pub fn backbone() -> &'static BackboneModel {
    static M: OnceLock<BackboneModel> = OnceLock::new();
    M.get_or_init(|| {
        let config = BackboneConfig::default();
        let opts = PretrainOptions {
            steps: PRETRAIN_STEPS,
            ..Default::default()
        };
        let path = cache_path(&config, &opts);
        if let Ok(m) = load_checkpoint(&path) {
            return m;
        }
        let (m, report) = pretrain_with(config, &benchmark().pretrain_corpus, &opts).unwrap();
        assert!(report.final_loss < report.initial_loss);
        let tmp = path.with_extension("tmp");
        save_checkpoint(&m, &tmp).unwrap();
        std::fs::rename(&tmp, &path).unwrap();
        m
    })
}

/// Serializes the heavy tests so wall-clock budgets are measured alone.
pub fn exclusive() -> MutexGuard<'static, ()> {
    static L: Mutex<()> = Mutex::new(());
    L.lock().unwrap_or_else(|e| e.into_inner())
}
