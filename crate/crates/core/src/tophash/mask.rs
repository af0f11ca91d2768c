use std::cmp::Ordering;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{BackboneModel, TokenSequence};
use crate::error::{Error, Result};

/// Mean pooled activation of a reference prompt set, subtracted from every
/// key before top-k selection. `n_samples == 0` means centering is off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringVector {
    mean: Vec<f64>,
    n_samples: usize,
}

impl CenteringVector {
    pub fn disabled(dim: usize) -> Self {
        CenteringVector {
            mean: vec![0.0; dim],
            n_samples: 0,
        }
    }

    pub fn from_mean(mean: Vec<f64>, n_samples: usize) -> Self {
        CenteringVector { mean, n_samples }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Token-mean of `[rows x dim]` activations minus the centering mean.
pub fn pooled_key(
    activations: &[f64],
    rows: usize,
    centering: &CenteringVector,
) -> Result<Vec<f64>> {
    let dim = centering.dim();
    if rows == 0 {
        return Err(Error::Precondition(
            "pooled_key needs at least one token row".into(),
        ));
    }
    if activations.len() != rows * dim {
        return Err(Error::Dimension {
            expected: rows * dim,
            actual: activations.len(),
        });
    }
    let mut key = vec![0.0; dim];
    for r in 0..rows {
        for (k, a) in key.iter_mut().zip(&activations[r * dim..(r + 1) * dim]) {
            *k += a;
        }
    }
    let inv = 1.0 / rows as f64;
    for (k, m) in key.iter_mut().zip(&centering.mean) {
        *k = *k * inv - m;
    }
    Ok(key)
}

/// Mean over `prompts` of each prompt's token-mean activation at the edit layer.
pub fn compute_centering(
    model: &BackboneModel,
    prompts: &[TokenSequence],
) -> Result<CenteringVector> {
    let dim = model.config().d_ffn;
    if prompts.is_empty() {
        return Ok(CenteringVector::disabled(dim));
    }
    let zero = CenteringVector::disabled(dim);
    let mut mean = vec![0.0; dim];
    for p in prompts {
        let acts = model.ffn_input_activations(p)?;
        let pooled = pooled_key(&acts, p.len(), &zero)?;
        for (m, v) in mean.iter_mut().zip(&pooled) {
            *m += v;
        }
    }
    let inv = 1.0 / prompts.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(CenteringVector::from_mean(mean, prompts.len()))
}

/// Fixed bijection of `[0, D)`, derived from a seed by a Fisher-Yates shuffle
/// driven by ChaCha8.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    seed: Option<u64>,
    map: Vec<usize>,
}

impl Permutation {
    pub fn from_seed(dim: usize, seed: u64) -> Self {
        let mut map: Vec<usize> = (0..dim).collect();
        map.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Permutation {
            seed: Some(seed),
            map,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Permutation {
            seed: None,
            map: (0..dim).collect(),
        }
    }

    pub fn from_mapping(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::Parameter("mapping is not a bijection".into()));
            }
        }
        Ok(Permutation { seed: None, map })
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn mapping(&self) -> &[usize] {
        &self.map
    }

    pub fn dim(&self) -> usize {
        self.map.len()
    }

    #[inline]
    pub fn apply(&self, j: usize) -> usize {
        self.map[j]
    }
}

/// Binary mask of width `dim` with a sorted, duplicate-free active set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SparseMask {
    dim: usize,
    active: Vec<usize>,
}

impl SparseMask {
    pub fn new(mut active: Vec<usize>, dim: usize) -> Result<Self> {
        active.sort_unstable();
        if active.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter("duplicate active index".into()));
        }
        if active.last().is_some_and(|&j| j >= dim) {
            return Err(Error::Parameter(format!(
                "active index out of range for width {dim}"
            )));
        }
        Ok(SparseMask { dim, active })
    }

    pub fn full(dim: usize) -> Self {
        SparseMask {
            dim,
            active: (0..dim).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.active.len()
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn contains(&self, j: usize) -> bool {
        self.active.binary_search(&j).is_ok()
    }

    pub fn to_dense(&self) -> Vec<bool> {
        let mut v = vec![false; self.dim];
        for &j in &self.active {
            v[j] = true;
        }
        v
    }

    /// Packed little-endian bitset, `ceil(dim / 64)` words.
    pub fn to_words(&self) -> Vec<u64> {
        let mut w = vec![0u64; self.dim.div_ceil(64)];
        for &j in &self.active {
            w[j / 64] |= 1 << (j % 64);
        }
        w
    }

    pub fn from_words(words: &[u64], dim: usize) -> Result<Self> {
        if words.len() != dim.div_ceil(64) {
            return Err(Error::Dimension {
                expected: dim.div_ceil(64),
                actual: words.len(),
            });
        }
        let mut active = Vec::new();
        for (wi, &w) in words.iter().enumerate() {
            let mut bits = w;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                active.push(wi * 64 + b);
                bits &= bits - 1;
            }
        }
        SparseMask::new(active, dim)
    }

    /// Number of shared active indices.
    pub fn overlap(&self, other: &SparseMask) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.active.len() && j < other.active.len() {
            match self.active[i].cmp(&other.active[j]) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// Indices of the `k` largest entries of `key`. Among equal values the lower
/// index ranks higher, so exactly `k` indices come back and the set at `k`
/// is contained in the set at `k + 1`.
pub fn topk_indices(key: &[f64], k: usize) -> Result<Vec<usize>> {
    check_k(k, key.len())?;
    let rank = |&a: &usize, &b: &usize| key[b].total_cmp(&key[a]).then(a.cmp(&b));
    let mut idx: Vec<usize> = (0..key.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k, rank);
        idx.truncate(k);
    }
    idx.sort_unstable();
    Ok(idx)
}

fn check_k(k: usize, dim: usize) -> Result<()> {
    if k == 0 || k > dim {
        return Err(Error::Parameter(format!("k must be in 1..={dim}, got {k}")));
    }
    Ok(())
}

/// Top-k selection on `key` followed by the fixed permutation.
pub fn tophash_mask(key: &[f64], k: usize, perm: &Permutation) -> Result<SparseMask> {
    if perm.dim() != key.len() {
        return Err(Error::Dimension {
            expected: key.len(),
            actual: perm.dim(),
        });
    }
    let top = topk_indices(key, k)?;
    SparseMask::new(top.into_iter().map(|j| perm.apply(j)).collect(), key.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionStrategy {
    /// Largest-value indices, no permutation.
    TopK,
    /// A fresh uniform k-subset on every call.
    Random,
    /// A k-subset seeded by a digest of the prompt bytes.
    Hash,
    TopHash,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 4] = [
        SelectionStrategy::TopK,
        SelectionStrategy::Random,
        SelectionStrategy::Hash,
        SelectionStrategy::TopHash,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionStrategy::TopK => "topk",
            SelectionStrategy::Random => "random",
            SelectionStrategy::Hash => "hash",
            SelectionStrategy::TopHash => "tophash",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            SelectionStrategy::TopK => 0,
            SelectionStrategy::Random => 1,
            SelectionStrategy::Hash => 2,
            SelectionStrategy::TopHash => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Parameter(format!("unknown selection strategy {s:?}")))
    }
}

impl std::fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn random_subset(rng: &mut dyn RngCore, dim: usize, k: usize) -> Result<SparseMask> {
    let idx = rand::seq::index::sample(rng, dim, k).into_vec();
    SparseMask::new(idx, dim)
}

/// Mask under any of the selection strategies. `rng` is only consumed by
/// [`SelectionStrategy::Random`].
pub fn alternative_mask(
    strategy: SelectionStrategy,
    key: &[f64],
    k: usize,
    perm: &Permutation,
    prompt_bytes: &[u8],
    rng: &mut dyn RngCore,
) -> Result<SparseMask> {
    let dim = key.len();
    check_k(k, dim)?;
    match strategy {
        SelectionStrategy::TopK => SparseMask::new(topk_indices(key, k)?, dim),
        SelectionStrategy::TopHash => tophash_mask(key, k, perm),
        SelectionStrategy::Random => random_subset(rng, dim, k),
        SelectionStrategy::Hash => {
            let digest = Sha256::digest(prompt_bytes);
            let seed = u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"));
            random_subset(&mut ChaCha8Rng::seed_from_u64(seed), dim, k)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shift(dim: usize) -> Permutation {
        Permutation::from_mapping((0..dim).map(|j| (j + 1) % dim).collect()).unwrap()
    }

    #[test]
    fn pooled_key_examples() {
        let zero = CenteringVector::disabled(2);
        assert_eq!(pooled_key(&[1.5, -2.0], 1, &zero).unwrap(), vec![1.5, -2.0]);
        assert_eq!(
            pooled_key(&[1.0, 3.0, 3.0, 1.0], 2, &zero).unwrap(),
            vec![2.0, 2.0]
        );
        let c = CenteringVector::from_mean(vec![0.5, 4.0], 3);
        assert_eq!(
            pooled_key(&[0.5, 4.0, 0.5, 4.0], 2, &c).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(matches!(
            pooled_key(&[1.0, 2.0, 3.0], 1, &zero),
            Err(Error::Dimension { .. })
        ));
        assert!(pooled_key(&[], 0, &zero).is_err());
    }

    #[test]
    fn tophash_examples() {
        let key = [3.0, 1.0, 2.0];
        assert_eq!(
            tophash_mask(&key, 1, &Permutation::identity(3))
                .unwrap()
                .active(),
            &[0]
        );
        assert_eq!(tophash_mask(&key, 1, &shift(3)).unwrap().active(), &[1]);
        assert_eq!(
            tophash_mask(&[5.0, 5.0, 1.0, 0.0], 2, &Permutation::identity(4))
                .unwrap()
                .active(),
            &[0, 1]
        );
        assert_eq!(
            tophash_mask(&key, 3, &shift(3)).unwrap().active(),
            &[0, 1, 2]
        );
        assert!(matches!(
            tophash_mask(&key, 4, &shift(3)),
            Err(Error::Parameter(_))
        ));
        assert!(tophash_mask(&key, 0, &shift(3)).is_err());
    }

    #[test]
    fn ties_keep_lowest_indices() {
        assert_eq!(
            topk_indices(&[1.0, 2.0, 2.0, 2.0, 0.0], 2).unwrap(),
            vec![1, 2]
        );
    }

    #[test]
    fn permutation_from_seed_is_reproducible_bijection() {
        let p = Permutation::from_seed(256, 42);
        assert_eq!(p, Permutation::from_seed(256, 42));
        assert_ne!(p, Permutation::from_seed(256, 43));
        let mut sorted = p.mapping().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..256).collect::<Vec<_>>());
        assert!(Permutation::from_mapping(vec![0, 0, 1]).is_err());
    }

    #[test]
    fn hash_masks_are_deterministic_and_prompt_specific() {
        let key = vec![0.0; 64];
        let perm = Permutation::identity(64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = alternative_mask(
            SelectionStrategy::Hash,
            &key,
            16,
            &perm,
            b"prompt one",
            &mut rng,
        )
        .unwrap();
        let b = alternative_mask(
            SelectionStrategy::Hash,
            &key,
            16,
            &perm,
            b"prompt one",
            &mut rng,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hash_masks_of_near_identical_prompts_overlap_like_independent_sets() {
        // k/D = 0.25: independent subsets overlap by 0.25 in expectation
        let (dim, k) = (256, 64);
        let key = vec![0.0; dim];
        let perm = Permutation::identity(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut total = 0.0;
        for i in 0..100u32 {
            let a = format!("What network aired show number {i:03}?");
            let mut b = a.clone().into_bytes();
            b[5] ^= 1;
            let ma = alternative_mask(
                SelectionStrategy::Hash,
                &key,
                k,
                &perm,
                a.as_bytes(),
                &mut rng,
            )
            .unwrap();
            let mb =
                alternative_mask(SelectionStrategy::Hash, &key, k, &perm, &b, &mut rng).unwrap();
            total += ma.overlap(&mb) as f64 / k as f64;
        }
        let mean = total / 100.0;
        assert!(mean < 0.5, "mean overlap {mean}");
        assert!((mean - 0.25).abs() < 0.05, "mean overlap {mean}");
    }

    #[test]
    fn random_masks_differ_between_calls() {
        let key = vec![0.0; 128];
        let perm = Permutation::identity(128);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a =
            alternative_mask(SelectionStrategy::Random, &key, 32, &perm, b"x", &mut rng).unwrap();
        let b =
            alternative_mask(SelectionStrategy::Random, &key, 32, &perm, b"x", &mut rng).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn words_roundtrip() {
        let m = SparseMask::new(vec![0, 63, 64, 200], 256).unwrap();
        assert_eq!(SparseMask::from_words(&m.to_words(), 256).unwrap(), m);
        assert!(SparseMask::new(vec![1, 1], 4).is_err());
        assert!(SparseMask::new(vec![4], 4).is_err());
    }

    fn key_strategy() -> impl Strategy<Value = (Vec<f64>, usize, u64)> {
        (8usize..96).prop_flat_map(|dim| {
            (
                prop::collection::vec(
                    prop_oneof![(-4i32..4).prop_map(f64::from), -4.0f64..4.0],
                    dim,
                ),
                1..=dim,
                any::<u64>(),
            )
        })
    }

    proptest! {
        #[test]
        fn every_strategy_yields_weight_k((key, k, seed) in key_strategy()) {
            let perm = Permutation::from_seed(key.len(), seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for st in SelectionStrategy::ALL {
                let m = alternative_mask(st, &key, k, &perm, &seed.to_le_bytes(), &mut rng).unwrap();
                prop_assert_eq!(m.k(), k);
            }
        }

        #[test]
        fn tophash_is_permuted_topk((key, k, seed) in key_strategy()) {
            let perm = Permutation::from_seed(key.len(), seed);
            let top = topk_indices(&key, k).unwrap();
            let th = tophash_mask(&key, k, &perm).unwrap();
            let expect = SparseMask::new(top.iter().map(|&j| perm.apply(j)).collect(), key.len()).unwrap();
            prop_assert_eq!(&th, &expect);
            prop_assert_eq!(th, tophash_mask(&key, k, &perm).unwrap());
        }

        #[test]
        fn topk_sets_are_nested((key, k, _seed) in key_strategy()) {
            prop_assume!(k < key.len());
            let small = topk_indices(&key, k).unwrap();
            let large = topk_indices(&key, k + 1).unwrap();
            prop_assert!(small.iter().all(|j| large.contains(j)));
        }

        #[test]
        fn topk_agrees_with_sorting((key, k, _seed) in key_strategy()) {
            let mut order: Vec<usize> = (0..key.len()).collect();
            order.sort_by(|&a, &b| key[b].partial_cmp(&key[a]).unwrap().then(a.cmp(&b)));
            let mut expect = order[..k].to_vec();
            expect.sort_unstable();
            prop_assert_eq!(topk_indices(&key, k).unwrap(), expect);
        }
    }
}
