use std::borrow::Cow;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{check_ids, BackboneConfig, FfnKind};
use crate::error::{Error, Result};
use crate::tensor::{
    argmax, axpy, dot, gelu, gelu_grad, layer_norm, layer_norm_backward, matmul, matmul_grad_input,
    matmul_grad_weight, silu, silu_grad, softmax_in_place, LnCache,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Span {
    pub off: usize,
    pub len: usize,
}

impl Span {
    pub fn range(self) -> Range<usize> {
        self.off..self.off + self.len
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockLayout {
    pub ln1_g: Span,
    pub ln1_b: Span,
    pub w_qkv: Span,
    pub w_o: Span,
    pub ln2_g: Span,
    pub ln2_b: Span,
    pub w_fc: Span,
    pub w_proj: Span,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok_emb: Span,
    pub pos_emb: Span,
    pub blocks: Vec<BlockLayout>,
    pub lnf_g: Span,
    pub lnf_b: Span,
    pub w_head: Span,
    pub total: usize,
}

impl Layout {
    pub fn new(c: &BackboneConfig) -> Self {
        let mut off = 0;
        let mut take = |len: usize| {
            let s = Span { off, len };
            off += len;
            s
        };
        let d = c.d_model;
        let tok_emb = take(c.vocab_size * d);
        let pos_emb = take(c.max_seq_len * d);
        let blocks = (0..c.n_layers)
            .map(|_| BlockLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                w_qkv: take(d * 3 * d),
                w_o: take(d * d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_fc: take(d * c.d_ffn * c.ffn.fan()),
                w_proj: take(c.d_ffn * d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        let w_head = take(d * c.vocab_size);
        Layout {
            tok_emb,
            pos_emb,
            blocks,
            lnf_g,
            lnf_b,
            w_head,
            total: off,
        }
    }
}

/// Two disjoint mutable views into one buffer; `a` must precede `b`.
fn two_mut(buf: &mut [f64], a: Span, b: Span) -> (&mut [f64], &mut [f64]) {
    assert!(a.off + a.len <= b.off);
    let (lo, hi) = buf.split_at_mut(b.off);
    (&mut lo[a.range()], &mut hi[..b.len])
}

/// A residual-memory branch bound to the edit layer: adds
/// `sum_{j in active} a_j * rows[j]` to the projection output of every token.
#[derive(Debug, Clone)]
pub struct MemoryBranch<'a> {
    /// `D x d_model`, input-major; row `j` is memory column `j`.
    pub rows: &'a [f64],
    pub active: Cow<'a, [usize]>,
}

impl MemoryBranch<'_> {
    /// `out[t] += sum_j a[t, j] * rows[j]` over active `j`, in active-set order.
    pub fn apply(
        &self,
        acts: &[f64],
        n_rows: usize,
        d_ffn: usize,
        d_model: usize,
        out: &mut [f64],
    ) {
        for t in 0..n_rows {
            let at = &acts[t * d_ffn..(t + 1) * d_ffn];
            let ot = &mut out[t * d_model..(t + 1) * d_model];
            for &j in self.active.iter() {
                let aj = at[j];
                if aj != 0.0 {
                    axpy(aj, &self.rows[j * d_model..(j + 1) * d_model], ot);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct BlockCache {
    t: usize,
    qs: usize,
    ln1: LnCache,
    h1: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    att: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

/// Activations captured for backprop through the blocks above the edit layer.
#[derive(Debug, Clone, Default)]
pub struct TailCache {
    t: usize,
    qs: usize,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    hf: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct FullCache {
    ids: Vec<u32>,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    hf: Vec<f64>,
}

/// Frozen state of a sequence at the edit layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EditLayerState {
    pub tokens: usize,
    /// `[tokens x D]` input activations of the edited projection.
    pub activations: Vec<f64>,
    /// `[tokens x d_model]` residual stream after the edit block with the
    /// memory branch absent.
    pub base_out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneModel {
    config: BackboneConfig,
    pub(crate) layout: Layout,
    pub(crate) params: Vec<f64>,
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.total == other.total
    }
}

impl BackboneModel {
    /// Freshly initialized model; all randomness comes from `config.rng_seed`.
    pub fn init(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let std = 0.02;
        let resid_std = std / (2.0 * config.n_layers as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let resid = Normal::new(0.0, resid_std).expect("valid std");
        let mut fill = |params: &mut [f64], span: Span, dist: &Normal<f64>| {
            for p in &mut params[span.range()] {
                *p = dist.sample(&mut rng);
            }
        };
        fill(&mut params, layout.tok_emb, &normal);
        fill(&mut params, layout.pos_emb, &normal);
        for b in &layout.blocks {
            params[b.ln1_g.range()].fill(1.0);
            params[b.ln2_g.range()].fill(1.0);
            fill(&mut params, b.w_qkv, &normal);
            fill(&mut params, b.w_o, &resid);
            fill(&mut params, b.w_fc, &normal);
            fill(&mut params, b.w_proj, &resid);
        }
        params[layout.lnf_g.range()].fill(1.0);
        fill(&mut params, layout.w_head, &normal);
        Ok(BackboneModel {
            config,
            layout,
            params,
        })
    }

    pub(crate) fn from_parts(config: BackboneConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Dimension {
                expected: layout.total,
                actual: params.len(),
            });
        }
        Ok(BackboneModel {
            config,
            layout,
            params,
        })
    }

    /// Same weights with a different edit layer; the weights do not depend on it.
    pub fn with_edit_layer(mut self, index: usize) -> Result<Self> {
        let mut config = self.config.clone();
        config.edit_layer_index = index;
        config.validate()?;
        self.config = config;
        Ok(self)
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// All parameters in layout order.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// The pre-trained projection `W0` of the edit layer, `D x d_model` input-major.
    pub fn edit_projection(&self) -> &[f64] {
        &self.params[self.layout.blocks[self.config.edit_layer_index]
            .w_proj
            .range()]
    }

    fn p(&self, span: Span) -> &[f64] {
        &self.params[span.range()]
    }

    fn embed(&self, ids: &[u32]) -> Vec<f64> {
        let d = self.config.d_model;
        let tok = self.p(self.layout.tok_emb);
        let pos = self.p(self.layout.pos_emb);
        let mut x = vec![0.0; ids.len() * d];
        for (t, &id) in ids.iter().enumerate() {
            let id = id as usize;
            let row = &mut x[t * d..(t + 1) * d];
            for i in 0..d {
                row[i] = tok[id * d + i] + pos[t * d + i];
            }
        }
        x
    }

    /// Runs block `l` on `x` (`t x d`). Rows below `qs` are only used as
    /// attention keys/values and are passed through unchanged. When `branch`
    /// is given it is added after the projection output.
    fn block_forward(
        &self,
        l: usize,
        x: &[f64],
        t: usize,
        qs: usize,
        branch: Option<&MemoryBranch<'_>>,
        cache: Option<&mut BlockCache>,
    ) -> Vec<f64> {
        let c = &self.config;
        let (d, dff, nh, hd) = (c.d_model, c.d_ffn, c.n_heads, c.head_dim());
        let nq = t - qs;
        let bl = &self.layout.blocks[l];

        let mut ln1 = LnCache::default();
        let mut h1 = vec![0.0; t * d];
        layer_norm(
            x,
            self.p(bl.ln1_g),
            self.p(bl.ln1_b),
            t,
            d,
            &mut h1,
            Some(&mut ln1),
        );
        let mut qkv = vec![0.0; t * 3 * d];
        matmul(&h1, self.p(bl.w_qkv), t, d, 3 * d, &mut qkv);

        let scale = 1.0 / (hd as f64).sqrt();
        let mut probs = vec![0.0; nh * nq * t];
        let mut att = vec![0.0; nq * d];
        let mut scores = vec![0.0; t];
        for h in 0..nh {
            for i in 0..nq {
                let p = qs + i;
                let q = &qkv[p * 3 * d + h * hd..p * 3 * d + (h + 1) * hd];
                let sc = &mut scores[..=p];
                for (j, s) in sc.iter_mut().enumerate() {
                    let k = &qkv[j * 3 * d + d + h * hd..j * 3 * d + d + (h + 1) * hd];
                    *s = dot(q, k) * scale;
                }
                softmax_in_place(sc);
                let out = &mut att[i * d + h * hd..i * d + (h + 1) * hd];
                for (j, &pj) in sc.iter().enumerate() {
                    let v = &qkv[j * 3 * d + 2 * d + h * hd..j * 3 * d + 2 * d + (h + 1) * hd];
                    axpy(pj, v, out);
                }
                probs[(h * nq + i) * t..(h * nq + i) * t + p + 1].copy_from_slice(sc);
            }
        }
        let mut o = vec![0.0; nq * d];
        matmul(&att, self.p(bl.w_o), nq, d, d, &mut o);
        let mut xmid = x[qs * d..].to_vec();
        for (m, v) in xmid.iter_mut().zip(&o) {
            *m += v;
        }

        let mut ln2 = LnCache::default();
        let mut h2 = vec![0.0; nq * d];
        layer_norm(
            &xmid,
            self.p(bl.ln2_g),
            self.p(bl.ln2_b),
            nq,
            d,
            &mut h2,
            Some(&mut ln2),
        );
        let fan = c.ffn.fan();
        let mut pre = vec![0.0; nq * dff * fan];
        matmul(&h2, self.p(bl.w_fc), nq, d, dff * fan, &mut pre);
        let act: Vec<f64> = match c.ffn {
            FfnKind::Gelu => pre.iter().map(|&v| gelu(v)).collect(),
            FfnKind::SwiGlu => pre
                .chunks_exact(2 * dff)
                .flat_map(|r| r[..dff].iter().zip(&r[dff..]).map(|(&g, &u)| silu(g) * u))
                .collect(),
        };
        let mut f = vec![0.0; nq * d];
        matmul(&act, self.p(bl.w_proj), nq, dff, d, &mut f);

        let mut out = x.to_vec();
        {
            let rows = &mut out[qs * d..];
            for ((r, m), fv) in rows.iter_mut().zip(&xmid).zip(&f) {
                *r = m + fv;
            }
            if let Some(b) = branch {
                b.apply(&act, nq, dff, d, rows);
            }
        }

        if let Some(cache) = cache {
            *cache = BlockCache {
                t,
                qs,
                ln1,
                h1,
                qkv,
                probs,
                att,
                ln2,
                h2,
                pre,
                act,
            };
        }
        out
    }

    /// Backward of [`Self::block_forward`]. `dout` covers rows `qs..t`; the
    /// result covers all `t` rows. Parameter gradients are accumulated into
    /// `grads` (full parameter layout) when given.
    fn block_backward(
        &self,
        l: usize,
        cache: &BlockCache,
        dout: &[f64],
        branch: Option<&MemoryBranch<'_>>,
        mut grads: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let c = &self.config;
        let (d, dff, nh, hd) = (c.d_model, c.d_ffn, c.n_heads, c.head_dim());
        let (t, qs) = (cache.t, cache.qs);
        let nq = t - qs;
        let bl = &self.layout.blocks[l];

        let df = dout;
        let mut da = vec![0.0; nq * dff];
        matmul_grad_input(df, self.p(bl.w_proj), nq, dff, d, &mut da);
        if let Some(b) = branch {
            for r in 0..nq {
                let dfr = &df[r * d..(r + 1) * d];
                for &j in b.active.iter() {
                    da[r * dff + j] += dot(dfr, &b.rows[j * d..(j + 1) * d]);
                }
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            matmul_grad_weight(&cache.act, df, nq, dff, d, &mut g[bl.w_proj.range()]);
        }
        let fan = c.ffn.fan();
        let dpre: Vec<f64> = match c.ffn {
            FfnKind::Gelu => da
                .iter()
                .zip(&cache.pre)
                .map(|(g, &p)| g * gelu_grad(p))
                .collect(),
            FfnKind::SwiGlu => {
                let mut out = vec![0.0; nq * 2 * dff];
                for r in 0..nq {
                    let pr = &cache.pre[r * 2 * dff..(r + 1) * 2 * dff];
                    let (dg, du) = out[r * 2 * dff..(r + 1) * 2 * dff].split_at_mut(dff);
                    for j in 0..dff {
                        let (g, u, dj) = (pr[j], pr[dff + j], da[r * dff + j]);
                        dg[j] = dj * u * silu_grad(g);
                        du[j] = dj * silu(g);
                    }
                }
                out
            }
        };
        if let Some(g) = grads.as_deref_mut() {
            matmul_grad_weight(&cache.h2, &dpre, nq, d, dff * fan, &mut g[bl.w_fc.range()]);
        }
        let mut dh2 = vec![0.0; nq * d];
        matmul_grad_input(&dpre, self.p(bl.w_fc), nq, d, dff * fan, &mut dh2);
        let ln2_params = grads.as_deref_mut().map(|g| two_mut(g, bl.ln2_g, bl.ln2_b));
        let dln2 = layer_norm_backward(&dh2, self.p(bl.ln2_g), &cache.ln2, nq, d, ln2_params);
        let mut dxmid = dout.to_vec();
        for (a, b) in dxmid.iter_mut().zip(&dln2) {
            *a += b;
        }

        if let Some(g) = grads.as_deref_mut() {
            matmul_grad_weight(&cache.att, &dxmid, nq, d, d, &mut g[bl.w_o.range()]);
        }
        let mut datt = vec![0.0; nq * d];
        matmul_grad_input(&dxmid, self.p(bl.w_o), nq, d, d, &mut datt);

        let scale = 1.0 / (hd as f64).sqrt();
        let qkv = &cache.qkv;
        let mut dqkv = vec![0.0; t * 3 * d];
        let mut dp = vec![0.0; t];
        for h in 0..nh {
            for i in 0..nq {
                let p = qs + i;
                let probs = &cache.probs[(h * nq + i) * t..(h * nq + i) * t + p + 1];
                let dat = &datt[i * d + h * hd..i * d + (h + 1) * hd];
                let mut s = 0.0;
                for j in 0..=p {
                    let vo = j * 3 * d + 2 * d + h * hd;
                    dp[j] = dot(dat, &qkv[vo..vo + hd]);
                    s += probs[j] * dp[j];
                    axpy(probs[j], dat, &mut dqkv[vo..vo + hd]);
                }
                let qo = p * 3 * d + h * hd;
                for j in 0..=p {
                    let ds = probs[j] * (dp[j] - s) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let ko = j * 3 * d + d + h * hd;
                    for e in 0..hd {
                        dqkv[qo + e] += ds * qkv[ko + e];
                        dqkv[ko + e] += ds * qkv[qo + e];
                    }
                }
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            matmul_grad_weight(&cache.h1, &dqkv, t, d, 3 * d, &mut g[bl.w_qkv.range()]);
        }
        let mut dh1 = vec![0.0; t * d];
        matmul_grad_input(&dqkv, self.p(bl.w_qkv), t, d, 3 * d, &mut dh1);
        let ln1_params = grads.map(|g| two_mut(g, bl.ln1_g, bl.ln1_b));
        let mut dx = layer_norm_backward(&dh1, self.p(bl.ln1_g), &cache.ln1, t, d, ln1_params);
        for (a, b) in dx[qs * d..].iter_mut().zip(&dxmid) {
            *a += b;
        }
        dx
    }

    fn head_forward(
        &self,
        x: &[f64],
        t: usize,
        qs: usize,
        cache: Option<(&mut LnCache, &mut Vec<f64>)>,
    ) -> Vec<f64> {
        let (d, v) = (self.config.d_model, self.config.vocab_size);
        let nq = t - qs;
        let mut ln = LnCache::default();
        let mut hf = vec![0.0; nq * d];
        layer_norm(
            &x[qs * d..],
            self.p(self.layout.lnf_g),
            self.p(self.layout.lnf_b),
            nq,
            d,
            &mut hf,
            Some(&mut ln),
        );
        let mut logits = vec![0.0; nq * v];
        matmul(&hf, self.p(self.layout.w_head), nq, d, v, &mut logits);
        if let Some((lc, hc)) = cache {
            *lc = ln;
            *hc = hf;
        }
        logits
    }

    fn head_backward(
        &self,
        ln: &LnCache,
        hf: &[f64],
        dlogits: &[f64],
        nq: usize,
        mut grads: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let (d, v) = (self.config.d_model, self.config.vocab_size);
        if let Some(g) = grads.as_deref_mut() {
            matmul_grad_weight(hf, dlogits, nq, d, v, &mut g[self.layout.w_head.range()]);
        }
        let mut dhf = vec![0.0; nq * d];
        matmul_grad_input(dlogits, self.p(self.layout.w_head), nq, d, v, &mut dhf);
        let lnp = grads.map(|g| two_mut(g, self.layout.lnf_g, self.layout.lnf_b));
        layer_norm_backward(&dhf, self.p(self.layout.lnf_g), ln, nq, d, lnp)
    }

    /// Runs the unedited model up to and including the edit block.
    pub fn edit_layer_state(&self, ids: &[u32]) -> Result<EditLayerState> {
        if ids.is_empty() {
            return Err(Error::Precondition("empty token sequence".into()));
        }
        check_ids(ids, &self.config)?;
        let t = ids.len();
        let mut x = self.embed(ids);
        for l in 0..self.config.edit_layer_index {
            x = self.block_forward(l, &x, t, 0, None, None);
        }
        let mut cache = BlockCache::default();
        let base_out = self.block_forward(
            self.config.edit_layer_index,
            &x,
            t,
            0,
            None,
            Some(&mut cache),
        );
        Ok(EditLayerState {
            tokens: t,
            activations: cache.act,
            base_out,
        })
    }

    /// `[tokens x D]` FFN input activations of the edit layer.
    pub fn ffn_input_activations(&self, prompt: &super::TokenSequence) -> Result<Vec<f64>> {
        Ok(self.edit_layer_state(&prompt.ids)?.activations)
    }

    /// Residual stream after the edit block with `branch` added.
    pub fn apply_branch(
        &self,
        state: &EditLayerState,
        branch: Option<&MemoryBranch<'_>>,
    ) -> Vec<f64> {
        let mut after = state.base_out.clone();
        if let Some(b) = branch {
            b.apply(
                &state.activations,
                state.tokens,
                self.config.d_ffn,
                self.config.d_model,
                &mut after,
            );
        }
        after
    }

    /// Logits for rows `qs..t` given the residual stream after the edit block.
    pub fn tail_forward(
        &self,
        after_edit: &[f64],
        t: usize,
        qs: usize,
        cache: Option<&mut TailCache>,
    ) -> Vec<f64> {
        let n = self.config.n_layers;
        let e = self.config.edit_layer_index;
        let mut x = after_edit.to_vec();
        match cache {
            Some(tc) => {
                tc.t = t;
                tc.qs = qs;
                tc.blocks.clear();
                for l in e + 1..n {
                    let qsl = if l == n - 1 { qs } else { 0 };
                    let mut bc = BlockCache::default();
                    x = self.block_forward(l, &x, t, qsl, None, Some(&mut bc));
                    tc.blocks.push(bc);
                }
                self.head_forward(&x, t, qs, Some((&mut tc.lnf, &mut tc.hf)))
            }
            None => {
                for l in e + 1..n {
                    let qsl = if l == n - 1 { qs } else { 0 };
                    x = self.block_forward(l, &x, t, qsl, None, None);
                }
                self.head_forward(&x, t, qs, None)
            }
        }
    }

    /// Gradient of the loss w.r.t. the residual stream after the edit block
    /// (`t x d_model`), given `dlogits` for rows `qs..t`. Frozen weights get
    /// no gradient.
    pub fn tail_backward(&self, cache: &TailCache, dlogits: &[f64]) -> Vec<f64> {
        let d = self.config.d_model;
        let (t, qs) = (cache.t, cache.qs);
        let dtop = self.head_backward(&cache.lnf, &cache.hf, dlogits, t - qs, None);
        let e = self.config.edit_layer_index;
        if cache.blocks.is_empty() {
            let mut dx = vec![0.0; t * d];
            dx[qs * d..].copy_from_slice(&dtop);
            return dx;
        }
        // the top block consumes rows qs..t; every block below it has qs = 0
        let mut dx = dtop;
        for (i, bc) in cache.blocks.iter().enumerate().rev() {
            dx = self.block_backward(e + 1 + i, bc, &dx, None, None);
        }
        dx
    }

    /// Logits for rows `qs..len` of `ids`, with `branch` at the edit layer.
    pub fn forward_rows(
        &self,
        ids: &[u32],
        branch: Option<&MemoryBranch<'_>>,
        qs: usize,
    ) -> Result<Vec<f64>> {
        if qs >= ids.len() {
            return Err(Error::Precondition(format!(
                "row {qs} out of range for {} tokens",
                ids.len()
            )));
        }
        let state = self.edit_layer_state(ids)?;
        let after = self.apply_branch(&state, branch);
        Ok(self.tail_forward(&after, ids.len(), qs, None))
    }

    /// Full `[tokens x vocab]` logits.
    pub fn logits(&self, ids: &[u32], branch: Option<&MemoryBranch<'_>>) -> Result<Vec<f64>> {
        self.forward_rows(ids, branch, 0)
    }

    pub(crate) fn greedy_decode(
        &self,
        prompt: &[u32],
        branch: Option<&MemoryBranch<'_>>,
        max_new: usize,
    ) -> Result<super::TokenSequence> {
        let mut ids = prompt.to_vec();
        let mut out = Vec::with_capacity(max_new);
        for _ in 0..max_new {
            if ids.len() >= self.config.max_seq_len {
                break;
            }
            let logits = self.forward_rows(&ids, branch, ids.len() - 1)?;
            let tok = argmax(&logits) as u32;
            ids.push(tok);
            out.push(tok);
        }
        Ok(super::TokenSequence::new(out, super::Role::Target))
    }

    pub(crate) fn forward_train(&self, ids: &[u32]) -> (Vec<f64>, FullCache) {
        let t = ids.len();
        let mut x = self.embed(ids);
        let mut blocks = Vec::with_capacity(self.config.n_layers);
        for l in 0..self.config.n_layers {
            let mut bc = BlockCache::default();
            x = self.block_forward(l, &x, t, 0, None, Some(&mut bc));
            blocks.push(bc);
        }
        let mut lnf = LnCache::default();
        let mut hf = Vec::new();
        let logits = self.head_forward(&x, t, 0, Some((&mut lnf, &mut hf)));
        (
            logits,
            FullCache {
                ids: ids.to_vec(),
                blocks,
                lnf,
                hf,
            },
        )
    }

    pub(crate) fn backward_train(&self, cache: &FullCache, dlogits: &[f64], grads: &mut [f64]) {
        let d = self.config.d_model;
        let t = cache.ids.len();
        let mut dx = self.head_backward(&cache.lnf, &cache.hf, dlogits, t, Some(grads));
        for l in (0..self.config.n_layers).rev() {
            dx = self.block_backward(l, &cache.blocks[l], &dx, None, Some(grads));
        }
        let tok = self.layout.tok_emb;
        let pos = self.layout.pos_emb;
        for (p, &id) in cache.ids.iter().enumerate() {
            let row = &dx[p * d..(p + 1) * d];
            axpy(
                1.0,
                row,
                &mut grads[tok.off + id as usize * d..tok.off + (id as usize + 1) * d],
            );
            axpy(1.0, row, &mut grads[pos.off + p * d..pos.off + (p + 1) * d]);
        }
    }

    /// Block backward with a memory branch, exposed for gradient checks that
    /// need the exact edit-layer path.
    #[cfg(test)]
    pub(crate) fn block_backward_for_test(
        &self,
        l: usize,
        cache: &BlockCache,
        dout: &[f64],
        branch: Option<&MemoryBranch<'_>>,
    ) -> Vec<f64> {
        self.block_backward(l, cache, dout, branch, None)
    }
}
