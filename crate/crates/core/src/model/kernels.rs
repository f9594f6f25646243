//! Dense row-major kernels and their derivatives.

/// `c = a·b + beta·c` where `a` is m x k and `b` is k x n, both row-major.
/// `a_t`/`b_t` mark operands stored transposed (k x m, n x k).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the m*k, k*n and m*n
    // buffers whose lengths are asserted.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y = x·w + bias` for `rows` rows.
pub fn linear(x: &[f64], rows: usize, w: &[f64], bias: &[f64], out: &mut [f64]) {
    let n = bias.len();
    let k = w.len() / n;
    for r in out.chunks_exact_mut(n) {
        r.copy_from_slice(bias);
    }
    gemm(rows, k, n, x, false, w, false, 1.0, out);
}

/// Accumulates weight and bias gradients of [`linear`] and, when `dx` is
/// given, overwrites it with the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    rows: usize,
    w: &[f64],
    dy: &[f64],
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
    dx: Option<&mut [f64]>,
) {
    let n = dy.len() / rows.max(1);
    let k = w.len() / n.max(1);
    if let Some(dw) = dw {
        gemm(k, rows, n, x, true, dy, false, 1.0, dw);
    }
    if let Some(db) = db {
        for r in dy.chunks_exact(n) {
            for (b, g) in db.iter_mut().zip(r) {
                *b += g;
            }
        }
    }
    if let Some(dx) = dx {
        gemm(rows, n, k, dy, false, w, true, 0.0, dx);
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Per-row statistics kept for the layer-norm backward pass.
#[derive(Clone, Debug, Default)]
pub struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(x: &[f64], d: usize, gain: &[f64], bias: &[f64], out: &mut [f64]) -> LnCache {
    let rows = x.len() / d;
    let mut cache = LnCache {
        xhat: vec![0.0; x.len()],
        rstd: vec![0.0; rows],
    };
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        cache.rstd[r] = rstd;
        for i in 0..d {
            let h = (xr[i] - mean) * rstd;
            cache.xhat[r * d + i] = h;
            out[r * d + i] = h * gain[i] + bias[i];
        }
    }
    cache
}

/// Writes the input gradient into `dx` (overwriting) and accumulates the
/// parameter gradients when requested.
pub fn layer_norm_backward(
    cache: &LnCache,
    d: usize,
    gain: &[f64],
    dy: &[f64],
    mut dgain: Option<&mut [f64]>,
    mut dbias: Option<&mut [f64]>,
    dx: &mut [f64],
) {
    let rows = cache.rstd.len();
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        if let Some(dg) = dgain.as_deref_mut() {
            for i in 0..d {
                dg[i] += g[i] * xh[i];
            }
        }
        if let Some(db) = dbias.as_deref_mut() {
            for i in 0..d {
                db[i] += g[i];
            }
        }
        let mut sum = 0.0;
        let mut sum_x = 0.0;
        for i in 0..d {
            dxhat[i] = g[i] * gain[i];
            sum += dxhat[i];
            sum_x += dxhat[i] * xh[i];
        }
        let mean = sum / d as f64;
        let mean_x = sum_x / d as f64;
        let rstd = cache.rstd[r];
        for i in 0..d {
            dx[r * d + i] = rstd * (dxhat[i] - mean - xh[i] * mean_x);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// In-place softmax; returns log of the normalizer (log-sum-exp).
pub fn softmax_in_place(v: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; x.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = x[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_in_all_layouts() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        for (a_t, b_t) in [(false, false), (true, false), (false, true), (true, true)] {
            let aa = if a_t { transpose(m, k, &a) } else { a.clone() };
            let bb = if b_t { transpose(k, n, &b) } else { b.clone() };
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, &aa, a_t, &bb, b_t, 0.0, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_rows_do_not_depend_on_row_count() {
        let (k, n) = (64, 96);
        let a: Vec<f64> = (0..3 * k).map(|i| (i as f64 * 0.731).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.173).cos()).collect();
        let mut all = vec![0.0; 3 * n];
        gemm(3, k, n, &a, false, &b, false, 0.0, &mut all);
        for r in 0..3 {
            let mut one = vec![0.0; n];
            gemm(1, k, n, &a[r * k..(r + 1) * k], false, &b, false, 0.0, &mut one);
            assert_eq!(one, all[r * n..(r + 1) * n]);
        }
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.3, 2.2] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_normalizes() {
        let mut v = vec![1.0, 2.0, 3.0];
        let lse = softmax_in_place(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((lse - (1f64.exp() + 2f64.exp() + 3f64.exp()).ln()).abs() < 1e-12);
    }
}
