//! Dense row-major kernels and their backward passes.

use alloc::vec;
use alloc::vec::Vec;

pub(crate) const LN_EPS: f64 = 1e-5;

/// `A[m×k] · B[k×n]`.
pub(crate) fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, &w) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * w;
            }
        }
    }
    out
}

/// `A[m×k] · W[k×n] + bias[n]`.
pub(crate) fn affine(a: &[f64], m: usize, k: usize, w: &[f64], bias: &[f64], n: usize) -> Vec<f64> {
    let mut out = matmul(a, m, k, w, n);
    for row in out.chunks_exact_mut(n) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
    out
}

/// `G[m×n] · Wᵀ` where `W` is `k×n`; the input gradient of [`affine`].
pub(crate) fn matmul_bt(g: &[f64], m: usize, n: usize, w: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = gi
                .iter()
                .zip(&w[p * n..(p + 1) * n])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    out
}

/// `acc[k×n] += Aᵀ · G` for `A[m×k]`, `G[m×n]`; the weight gradient of
/// [`affine`].
pub(crate) fn acc_at_g(acc: &mut [f64], a: &[f64], m: usize, k: usize, g: &[f64], n: usize) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, &gv) in acc[p * n..(p + 1) * n].iter_mut().zip(gi) {
                *o += x * gv;
            }
        }
    }
}

/// `acc[n] += Σ_rows G`.
pub(crate) fn acc_rows(acc: &mut [f64], g: &[f64], n: usize) {
    for row in g.chunks_exact(n) {
        for (o, &x) in acc.iter_mut().zip(row) {
            *o += x;
        }
    }
}

pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm(x: &[f64], n: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, NormCache) {
    let rows = x.len() / n;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * n..(r + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let s = 1.0 / libm::sqrt(var + LN_EPS);
        rstd[r] = s;
        for j in 0..n {
            let h = (row[j] - mean) * s;
            xhat[r * n + j] = h;
            out[r * n + j] = h * gain[j] + bias[j];
        }
    }
    (out, NormCache { xhat, rstd })
}

/// Returns the input gradient; parameter gradients are accumulated when the
/// slots are given.
pub(crate) fn layer_norm_backward(
    dy: &[f64],
    n: usize,
    gain: &[f64],
    cache: &NormCache,
    dgain: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
) -> Vec<f64> {
    let rows = dy.len() / n;
    if let Some(dg) = dgain {
        for r in 0..rows {
            for j in 0..n {
                dg[j] += dy[r * n + j] * cache.xhat[r * n + j];
            }
        }
    }
    if let Some(db) = dbias {
        acc_rows(db, dy, n);
    }
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; n];
    for r in 0..rows {
        let xh = &cache.xhat[r * n..(r + 1) * n];
        for j in 0..n {
            dxhat[j] = dy[r * n + j] * gain[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        for j in 0..n {
            dx[r * n + j] = cache.rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + libm::tanh(GELU_C * (u + 0.044715 * u * u * u)))
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    let th = libm::tanh(GELU_C * (u + 0.044715 * u * u * u));
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

/// In-place softmax of one row.
pub(crate) fn softmax(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// `ln Σ exp(row)`.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(row.iter().map(|&x| libm::exp(x - max)).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_shapes() {
        // [1 2; 3 4] · [5; 6]
        assert_eq!(
            matmul(&[1.0, 2.0, 3.0, 4.0], 2, 2, &[5.0, 6.0], 1),
            vec![17.0, 39.0]
        );
        let g = [1.0, 1.0];
        assert_eq!(
            matmul_bt(&g, 1, 2, &[1.0, 2.0, 3.0, 4.0], 2),
            vec![3.0, 7.0]
        );
        let mut acc = vec![0.0; 1];
        acc_at_g(&mut acc, &[1.0, 2.0], 2, 1, &[3.0, 4.0], 1);
        assert_eq!(acc, vec![11.0]);
    }

    #[test]
    fn layer_norm_zero_mean_unit_variance() {
        let (y, _) = layer_norm(&[1.0, 2.0, 3.0, 4.0], 4, &[1.0; 4], &[0.0; 4]);
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.25 / (1.25 + LN_EPS)).abs() < 1e-12);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &u in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let fd = (gelu(u + 1e-6) - gelu(u - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(u)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_normalizes() {
        let mut r = [1000.0, 1000.0];
        softmax(&mut r);
        assert_eq!(r, [0.5, 0.5]);
        assert!((log_sum_exp(&[0.0, 0.0]) - libm::log(2.0)).abs() < 1e-15);
    }
}
