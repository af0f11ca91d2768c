//! Pre-training of the host model (Adam on next-token cross-entropy).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_ids, BackboneConfig, BackboneModel, TokenSequence};
use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, softmax_in_place};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub grad_clip: f64,
    /// Record the mean batch loss every this many steps.
    pub log_every: usize,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions {
            steps: 2000,
            batch_size: 16,
            learning_rate: 3e-3,
            warmup_steps: 100,
            grad_clip: 1.0,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean next-token loss over a fixed evaluation subset, before training.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `(step, mean batch loss)` samples.
    pub curve: Vec<(usize, f64)>,
}

pub fn pretrain(
    config: BackboneConfig,
    corpus: &[(TokenSequence, TokenSequence)],
    steps: usize,
) -> Result<(BackboneModel, PretrainReport)> {
    pretrain_with(
        config,
        corpus,
        &PretrainOptions {
            steps,
            ..Default::default()
        },
    )
}

pub fn pretrain_with(
    config: BackboneConfig,
    corpus: &[(TokenSequence, TokenSequence)],
    opts: &PretrainOptions,
) -> Result<(BackboneModel, PretrainReport)> {
    if opts.steps == 0 {
        return Err(Error::Precondition("pretraining steps must be >= 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Precondition("pretraining corpus is empty".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Precondition("batch_size must be >= 1".into()));
    }
    let mut model = BackboneModel::init(config)?;
    let seqs: Vec<Vec<u32>> = corpus
        .iter()
        .map(|(p, t)| {
            let ids: Vec<u32> = p.ids.iter().chain(&t.ids).copied().collect();
            check_ids(&ids, model.config()).map(|_| ids)
        })
        .collect::<Result<_>>()?;
    if let Some(s) = seqs.iter().find(|s| s.len() < 2) {
        return Err(Error::Precondition(format!(
            "sequence of {} tokens is too short to train on",
            s.len()
        )));
    }

    let eval_set: Vec<&[u32]> = seqs
        .iter()
        .step_by((seqs.len() / 256).max(1))
        .map(|s| s.as_slice())
        .collect();
    let initial_loss = mean_loss(&model, &eval_set);

    let mut rng = ChaCha8Rng::seed_from_u64(model.config().rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = model.params.len();
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let mut grads = vec![0.0; n];
    let (b1, b2, eps) = (0.9, 0.99, 1e-8);
    let mut curve = Vec::new();
    let mut window = 0.0;
    let mut window_n = 0usize;

    for step in 0..opts.steps {
        grads.fill(0.0);
        let mut batch_loss = 0.0;
        let mut n_tok = 0usize;
        for _ in 0..opts.batch_size {
            let ids = &seqs[rng.gen_range(0..seqs.len())];
            let (logits, cache) = model.forward_train(ids);
            let v = model.config().vocab_size;
            let mut dlogits = vec![0.0; logits.len()];
            for p in 0..ids.len() - 1 {
                let row = &logits[p * v..(p + 1) * v];
                let target = ids[p + 1] as usize;
                batch_loss += log_sum_exp(row) - row[target];
                let drow = &mut dlogits[p * v..(p + 1) * v];
                drow.copy_from_slice(row);
                softmax_in_place(drow);
                drow[target] -= 1.0;
            }
            n_tok += ids.len() - 1;
            model.backward_train(&cache, &dlogits, &mut grads);
        }
        let inv = 1.0 / n_tok as f64;
        let mut norm_sq = 0.0;
        for g in grads.iter_mut() {
            *g *= inv;
            norm_sq += *g * *g;
        }
        let norm = norm_sq.sqrt();
        let clip = if norm > opts.grad_clip {
            opts.grad_clip / norm
        } else {
            1.0
        };

        let lr = schedule(opts, step);
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - f64::powi(b1, t), 1.0 - f64::powi(b2, t));
        for i in 0..n {
            let g = grads[i] * clip;
            m1[i] = b1 * m1[i] + (1.0 - b1) * g;
            m2[i] = b2 * m2[i] + (1.0 - b2) * g * g;
            model.params[i] -= lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
        }

        window += batch_loss * inv;
        window_n += 1;
        if window_n == opts.log_every.max(1) || step + 1 == opts.steps {
            curve.push((step + 1, window / window_n as f64));
            window = 0.0;
            window_n = 0;
        }
    }
    let final_loss = mean_loss(&model, &eval_set);
    Ok((
        model,
        PretrainReport {
            initial_loss,
            final_loss,
            curve,
        },
    ))
}

fn schedule(opts: &PretrainOptions, step: usize) -> f64 {
    let base = opts.learning_rate;
    if step < opts.warmup_steps {
        return base * (step + 1) as f64 / opts.warmup_steps as f64;
    }
    let span = (opts.steps - opts.warmup_steps).max(1) as f64;
    let progress = (step - opts.warmup_steps) as f64 / span;
    let floor = 0.1;
    base * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Mean next-token cross-entropy over all positions of `seqs`.
pub(crate) fn mean_loss(model: &BackboneModel, seqs: &[&[u32]]) -> f64 {
    let v = model.config().vocab_size;
    let mut total = 0.0;
    let mut n = 0usize;
    for ids in seqs {
        let logits = model.logits(ids, None).expect("validated sequence");
        for p in 0..ids.len() - 1 {
            let row = &logits[p * v..(p + 1) * v];
            total += log_sum_exp(row) - row[ids[p + 1] as usize];
        }
        n += ids.len() - 1;
    }
    total / n.max(1) as f64
}
