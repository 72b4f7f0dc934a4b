//! Small dense kernels shared by the encoder and the biaffine scorer.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Row-wise layer normalization.
pub fn layer_norm(x: &Array2<f64>, gamma: ArrayView1<f64>, beta: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let k = *s;
        row.mapv_inplace(|v| v * k);
    }
    let mut y = &xhat * &gamma;
    y += &beta;
    (y, LnCache { xhat, inv_std })
}

/// Backward of [`layer_norm`]; accumulates into `dgamma`/`dbeta`.
pub fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gamma: ArrayView1<f64>,
    mut dgamma: ArrayViewMut1<f64>,
    mut dbeta: ArrayViewMut1<f64>,
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    dgamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    dbeta += &dy.sum_axis(Axis(0));
    let mut dx = dy * &gamma;
    for ((mut row, xh), &s) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.inv_std.iter()) {
        let sum = row.sum();
        let dot = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
        Zip::from(&mut row).and(&xh).for_each(|g, &x| {
            *g = s / d * (d * *g - sum - x * dot);
        });
    }
    dx
}

pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / sum).collect()
}

/// log(sum(exp(x)))
pub fn log_sum_exp<'a>(x: impl IntoIterator<Item = &'a f64> + Clone) -> f64 {
    let max = x.clone().into_iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
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

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// `x · w + b`
pub fn affine(x: &ArrayView2<f64>, w: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// `acc += aᵀ · b`
pub fn add_at_b(acc: &mut ArrayViewMut2<f64>, a: &ArrayView2<f64>, b: &ArrayView2<f64>) {
    general_mat_mul(1.0, &a.t(), b, 1.0, acc);
}

/// Appends a constant-one column.
pub fn with_bias_column(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::ones((x.nrows(), x.ncols() + 1));
    out.slice_mut(ndarray::s![.., ..x.ncols()]).assign(x);
    out
}
