use criterion::{black_box, criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use memoir_core::backbone::{BackboneConfig, BackboneModel};
use memoir_core::datagen::generate_benchmark;
use memoir_core::editor::{EditorState, EditorStrategy};
use memoir_core::tophash::{tophash_mask, MaskDatabase, Permutation, SparseMask};

const D: usize = 256;
const K: usize = 64;

fn random_mask(rng: &mut ChaCha8Rng) -> SparseMask {
    let idx = rand::seq::index::sample(rng, D, K).into_vec();
    SparseMask::new(idx, D).unwrap()
}

fn masks(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let key: Vec<f64> = (0..D).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let perm = Permutation::from_seed(D, 0);
    c.bench_function("tophash_mask/D256_k64", |b| {
        b.iter(|| tophash_mask(black_box(&key), K, &perm).unwrap())
    });

    let mut group = c.benchmark_group("best_match");
    for n in [100usize, 1000, 10_000] {
        let mut db = MaskDatabase::new(D, K).unwrap();
        for id in 0..n as u64 {
            db.insert(id, &random_mask(&mut rng)).unwrap();
        }
        let query = random_mask(&mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &db, |b, db| {
            b.iter(|| db.best_match(black_box(&query)).unwrap())
        });
    }
    group.finish();
}

fn editing(c: &mut Criterion) {
    let model = BackboneModel::init(BackboneConfig::default()).unwrap();
    let bench = generate_benchmark(64, 1, 16, 3).unwrap();
    let fresh =
        EditorState::new(&model, EditorStrategy::memoir(), &bench.centering_corpus).unwrap();

    let mut group = c.benchmark_group("editor");
    group.sample_size(10);
    group.bench_function("apply_edit/50_steps", |b| {
        b.iter_batched(
            || fresh.clone(),
            |mut state| state.apply(&model, &bench.edits[0]).unwrap(),
            BatchSize::LargeInput,
        )
    });

    let mut state = fresh.clone();
    for e in &bench.edits[..32] {
        state.apply(&model, e).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let e = &bench.edits[5];
    group.bench_function("routed_score/32_edits", |b| {
        b.iter(|| state.score(&model, &e.prompt, &e.target, &mut rng).unwrap())
    });
    group.finish();
}

criterion_group!(benches, masks, editing);
criterion_main!(benches);
