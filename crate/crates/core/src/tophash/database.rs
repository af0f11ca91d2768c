use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{CenteringVector, Permutation, SelectionStrategy, SparseMask};
use crate::codec::{open, seal, Reader, Writer};
use crate::error::{Error, Result};

/// Result of a maximum-overlap lookup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matched_edit_id: Option<u64>,
    /// Shared active indices divided by `k`.
    pub overlap_ratio: f64,
    pub overlap: usize,
    pub hamming_distance: usize,
}

/// Per-edit masks in insertion (edit) order, stored as packed bitsets.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskDatabase {
    dim: usize,
    k: usize,
    words_per: usize,
    ids: Vec<u64>,
    words: Vec<u64>,
    index: HashMap<u64, usize>,
    collisions: usize,
}

impl MaskDatabase {
    pub fn new(dim: usize, k: usize) -> Result<Self> {
        if k == 0 || k > dim {
            return Err(Error::Parameter(format!("k must be in 1..={dim}, got {k}")));
        }
        Ok(MaskDatabase {
            dim,
            k,
            words_per: dim.div_ceil(64),
            ids: Vec::new(),
            words: Vec::new(),
            index: HashMap::new(),
            collisions: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Inserts made while an identical mask was already stored.
    pub fn collisions(&self) -> usize {
        self.collisions
    }

    pub fn contains(&self, edit_id: u64) -> bool {
        self.index.contains_key(&edit_id)
    }

    fn check(&self, mask: &SparseMask) -> Result<()> {
        if mask.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: mask.dim(),
            });
        }
        if mask.k() != self.k {
            return Err(Error::Parameter(format!(
                "mask weight {} does not match database k {}",
                mask.k(),
                self.k
            )));
        }
        Ok(())
    }

    /// Appends a mask. Returns `true` when an identical mask was already
    /// present (a collision, which is allowed and counted).
    pub fn insert(&mut self, edit_id: u64, mask: &SparseMask) -> Result<bool> {
        self.check(mask)?;
        if self.index.contains_key(&edit_id) {
            return Err(Error::DuplicateEdit(edit_id));
        }
        let collided = self.best_match(mask)?.overlap == self.k && !self.is_empty();
        if collided {
            self.collisions += 1;
        }
        self.index.insert(edit_id, self.ids.len());
        self.ids.push(edit_id);
        self.words.extend(mask.to_words());
        Ok(collided)
    }

    pub fn get(&self, edit_id: u64) -> Option<SparseMask> {
        self.index.get(&edit_id).map(|&i| self.mask_at(i))
    }

    fn mask_at(&self, i: usize) -> SparseMask {
        SparseMask::from_words(
            &self.words[i * self.words_per..(i + 1) * self.words_per],
            self.dim,
        )
        .expect("stored masks are valid")
    }

    /// `(edit_id, mask)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, SparseMask)> + '_ {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, self.mask_at(i)))
    }

    /// Entry with the largest overlap with `query` (equivalently the
    /// smallest Hamming distance); the earliest entry wins ties.
    pub fn best_match(&self, query: &SparseMask) -> Result<MatchResult> {
        self.check(query)?;
        let q = query.to_words();
        let mut best: Option<(usize, u32)> = None;
        for (i, entry) in self.words.chunks_exact(self.words_per).enumerate() {
            let ov: u32 = entry
                .iter()
                .zip(&q)
                .map(|(a, b)| (a & b).count_ones())
                .sum();
            if best.is_none_or(|(_, b)| ov > b) {
                best = Some((i, ov));
                if ov as usize == self.k {
                    break;
                }
            }
        }
        Ok(match best {
            Some((i, ov)) => {
                let ov = ov as usize;
                MatchResult {
                    matched_edit_id: Some(self.ids[i]),
                    overlap_ratio: ov as f64 / self.k as f64,
                    overlap: ov,
                    hamming_distance: 2 * (self.k - ov),
                }
            }
            None => MatchResult {
                matched_edit_id: None,
                overlap_ratio: 0.0,
                overlap: 0,
                hamming_distance: 2 * self.k,
            },
        })
    }

    /// Mean and max pairwise overlap ratio over at most `max_pairs` pairs of
    /// consecutive-stride entries.
    pub fn pairwise_overlap_summary(&self, max_pairs: usize) -> (f64, f64) {
        let n = self.len();
        if n < 2 {
            return (0.0, 0.0);
        }
        let total_pairs = n * (n - 1) / 2;
        let stride = total_pairs.div_ceil(max_pairs.max(1)).max(1);
        let (mut sum, mut max, mut count) = (0.0, 0.0f64, 0usize);
        let mut p = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                if p.is_multiple_of(stride) {
                    let a = &self.words[i * self.words_per..(i + 1) * self.words_per];
                    let b = &self.words[j * self.words_per..(j + 1) * self.words_per];
                    let ov: u32 = a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum();
                    let r = ov as f64 / self.k as f64;
                    sum += r;
                    max = max.max(r);
                    count += 1;
                }
                p += 1;
            }
        }
        (sum / count as f64, max)
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u64(self.dim as u64);
        w.u64(self.k as u64);
        w.u64(self.collisions as u64);
        w.u64(self.ids.len() as u64);
        for (i, &id) in self.ids.iter().enumerate() {
            w.u64(id);
            for &word in &self.words[i * self.words_per..(i + 1) * self.words_per] {
                w.u64(word);
            }
        }
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let dim = r.usize()?;
        let k = r.usize()?;
        let mut db = MaskDatabase::new(dim, k)?;
        let collisions = r.usize()?;
        let n = r.usize()?;
        for _ in 0..n {
            let id = r.u64()?;
            let words = (0..db.words_per)
                .map(|_| r.u64())
                .collect::<Result<Vec<_>>>()?;
            let mask = SparseMask::from_words(&words, dim)?;
            if mask.k() != k {
                return Err(Error::Format(
                    "mask database",
                    format!("entry {id} has weight {}", mask.k()),
                ));
            }
            if db.index.insert(id, db.ids.len()).is_some() {
                return Err(Error::Format(
                    "mask database",
                    format!("duplicate edit id {id}"),
                ));
            }
            db.ids.push(id);
            db.words.extend(words);
        }
        db.collisions = collisions;
        Ok(db)
    }
}

const MAGIC: &[u8; 8] = b"MMRMASKD";
const VERSION: u32 = 1;

/// Everything needed to recompute and match masks outside an editing session.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskDatabaseFile {
    pub strategy: SelectionStrategy,
    pub permutation: Permutation,
    pub centering: CenteringVector,
    pub database: MaskDatabase,
}

pub(crate) fn encode_permutation(w: &mut Writer, p: &Permutation) {
    match p.seed() {
        Some(seed) => {
            w.u8(0);
            w.u64(p.dim() as u64);
            w.u64(seed);
        }
        None => {
            w.u8(1);
            w.u64s(&p.mapping().iter().map(|&m| m as u64).collect::<Vec<_>>());
        }
    }
}

pub(crate) fn decode_permutation(r: &mut Reader<'_>) -> Result<Permutation> {
    match r.u8()? {
        0 => {
            let dim = r.usize()?;
            Ok(Permutation::from_seed(dim, r.u64()?))
        }
        1 => Permutation::from_mapping(r.u64s()?.into_iter().map(|m| m as usize).collect()),
        t => Err(Error::Format("permutation", format!("unknown tag {t}"))),
    }
}

pub(crate) fn encode_centering(w: &mut Writer, c: &CenteringVector) {
    w.u64(c.n_samples() as u64);
    w.f64s(c.mean());
}

pub(crate) fn decode_centering(r: &mut Reader<'_>) -> Result<CenteringVector> {
    let n = r.usize()?;
    Ok(CenteringVector::from_mean(r.f64s()?, n))
}

/// Header (`D`, `k`, strategy, permutation seed, centering vector) followed
/// by the packed bitsets in edit order.
pub fn write_mask_database(file: &MaskDatabaseFile) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(file.strategy.code());
    encode_permutation(&mut w, &file.permutation);
    encode_centering(&mut w, &file.centering);
    file.database.encode(&mut w);
    seal(MAGIC, VERSION, &w.into_inner())
}

pub fn read_mask_database(bytes: &[u8]) -> Result<MaskDatabaseFile> {
    let body = open(bytes, MAGIC, VERSION, "mask database")?;
    let mut r = Reader::new(body, "mask database");
    let code = r.u8()?;
    let strategy = SelectionStrategy::from_code(code)
        .ok_or_else(|| Error::Format("mask database", format!("unknown strategy code {code}")))?;
    let permutation = decode_permutation(&mut r)?;
    let centering = decode_centering(&mut r)?;
    let database = MaskDatabase::decode(&mut r)?;
    r.finish()?;
    Ok(MaskDatabaseFile {
        strategy,
        permutation,
        centering,
        database,
    })
}
