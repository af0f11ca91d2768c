//! Dense row-major kernels used by the backbone and the residual memory.
//!
//! Every weight matrix is stored input-major: a linear map from `n_in` to
//! `n_out` features is a `n_in x n_out` buffer, so `y = x W` is a sequence
//! of row axpys and row `j` of the buffer holds everything input feature `j`
//! contributes. For the FFN projection this makes row `j` the "column `j`"
//! of the usual `out x in` weight, which is the unit the residual memory
//! allocates per edit.

pub const LN_EPS: f64 = 1e-5;

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators let the loop vectorize without changing results
    // between call sites; the summation order is fixed.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `out[rows x n_out] = x[rows x n_in] * w[n_in x n_out]`.
pub fn matmul(x: &[f64], w: &[f64], rows: usize, n_in: usize, n_out: usize, out: &mut [f64]) {
    debug_assert_eq!(x.len(), rows * n_in);
    debug_assert_eq!(w.len(), n_in * n_out);
    debug_assert_eq!(out.len(), rows * n_out);
    out.fill(0.0);
    for r in 0..rows {
        let xr = &x[r * n_in..(r + 1) * n_in];
        let or = &mut out[r * n_out..(r + 1) * n_out];
        for (i, &xi) in xr.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, &w[i * n_out..(i + 1) * n_out], or);
            }
        }
    }
}

/// `dx[rows x n_in] = dy[rows x n_out] * w^T`.
pub fn matmul_grad_input(
    dy: &[f64],
    w: &[f64],
    rows: usize,
    n_in: usize,
    n_out: usize,
    dx: &mut [f64],
) {
    debug_assert_eq!(dx.len(), rows * n_in);
    for r in 0..rows {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        for i in 0..n_in {
            dx[r * n_in + i] = dot(dyr, &w[i * n_out..(i + 1) * n_out]);
        }
    }
}

/// `dw[n_in x n_out] += x^T * dy`.
pub fn matmul_grad_weight(
    x: &[f64],
    dy: &[f64],
    rows: usize,
    n_in: usize,
    n_out: usize,
    dw: &mut [f64],
) {
    for r in 0..rows {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        for i in 0..n_in {
            let xi = x[r * n_in + i];
            if xi != 0.0 {
                axpy(xi, dyr, &mut dw[i * n_out..(i + 1) * n_out]);
            }
        }
    }
}

/// Cached statistics of one LayerNorm application, per row.
#[derive(Debug, Clone, Default)]
pub struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    rows: usize,
    dim: usize,
    out: &mut [f64],
    cache: Option<&mut LnCache>,
) {
    let mut xhat_all = Vec::new();
    let mut rstd_all = Vec::new();
    let want_cache = cache.is_some();
    if want_cache {
        xhat_all.reserve(rows * dim);
        rstd_all.reserve(rows);
    }
    for r in 0..rows {
        let xr = &x[r * dim..(r + 1) * dim];
        let mean = xr.iter().sum::<f64>() / dim as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        let or = &mut out[r * dim..(r + 1) * dim];
        for i in 0..dim {
            let xh = (xr[i] - mean) * rstd;
            or[i] = xh * gain[i] + bias[i];
            if want_cache {
                xhat_all.push(xh);
            }
        }
        if want_cache {
            rstd_all.push(rstd);
        }
    }
    if let Some(c) = cache {
        c.xhat = xhat_all;
        c.rstd = rstd_all;
    }
}

/// Backward of [`layer_norm`]. Returns dx; accumulates parameter grads when given.
pub fn layer_norm_backward(
    dy: &[f64],
    gain: &[f64],
    cache: &LnCache,
    rows: usize,
    dim: usize,
    mut dparams: Option<(&mut [f64], &mut [f64])>,
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * dim];
    let mut dxhat = vec![0.0; dim];
    for r in 0..rows {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        if let Some((dg, db)) = dparams.as_mut() {
            for i in 0..dim {
                dg[i] += dyr[i] * xh[i];
                db[i] += dyr[i];
            }
        }
        for i in 0..dim {
            dxhat[i] = dyr[i] * gain[i];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / dim as f64;
        let mean_dxhat_xhat = dot(&dxhat, xh) / dim as f64;
        let rstd = cache.rstd[r];
        let dxr = &mut dx[r * dim..(r + 1) * dim];
        for i in 0..dim {
            dxr[i] = rstd * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// `x * sigmoid(x)`.
#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `log(sum(exp(v)))`, stable.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
