//! Dense kernels: products, activations, dropout.

use super::{Rng, Tensor};
use crate::error::{Error, Result};

/// `c = a · b` for 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    a.check_finite("matmul lhs")?;
    b.check_finite("matmul rhs")?;
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut c, m, k, n);
    Tensor::from_vec(&[m, n], c)
}

/// Gradients of `c = a · b`: returns `(dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    dc.ensure_shape("matmul_backward", &[m, n])?;
    let mut da = vec![0.0; m * k];
    for i in 0..m {
        for p in 0..k {
            da[i * k + p] = dot(&dc.data()[i * n..(i + 1) * n], &b.data()[p * n..(p + 1) * n]);
        }
    }
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            axpy(av, &dc.data()[i * n..(i + 1) * n], &mut db[p * n..(p + 1) * n]);
        }
    }
    Ok((Tensor::from_vec(&[m, k], da)?, Tensor::from_vec(&[k, n], db)?))
}

/// `c += a(m×k) · b(k×n)` on raw row-major slices.
pub fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], crow);
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out += W · x` with `W` stored row-major as `rows × x.len()`.
pub fn gemv_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ · y` with `W` stored row-major as `y.len() × out.len()`.
pub fn gemv_t_acc(w: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (yi, row) in y.iter().zip(w.chunks_exact(cols)) {
        if *yi != 0.0 {
            axpy(*yi, row, out);
        }
    }
}

/// `G += y · xᵀ`
pub fn outer_acc(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (yi, row) in y.iter().zip(g.chunks_exact_mut(cols)) {
        if *yi != 0.0 {
            axpy(*yi, x, row);
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn tanh(z: f64) -> f64 {
    z.tanh()
}

pub fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

pub fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::contract("softmax of an empty vector"));
    }
    super::tensor::check_finite(z, "softmax input")?;
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    Ok(out)
}

pub fn softmax_tensor(z: &Tensor) -> Result<Tensor> {
    Tensor::from_vec(z.shape(), softmax(z.data())?)
}

/// Backward of softmax given its output `p` and upstream `dp`.
pub fn softmax_backward(p: &[f64], dp: &[f64], dz: &mut [f64]) {
    let s = dot(p, dp);
    for ((d, pi), gi) in dz.iter_mut().zip(p).zip(dp) {
        *d += pi * (gi - s);
    }
}

/// Inverted-dropout mask: each entry is 0 or `1/(1-rate)`.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    pub scale: Vec<f64>,
}

impl DropoutMask {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.scale).map(|(v, s)| v * s).collect()
    }
}

pub fn dropout_mask(n: usize, rate: f64, rng: &mut Rng, training: bool) -> Result<DropoutMask> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(DropoutMask {
            scale: vec![1.0; n],
        });
    }
    let keep = 1.0 / (1.0 - rate);
    let scale = (0..n)
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect();
    Ok(DropoutMask { scale })
}

pub fn dropout(x: &Tensor, rate: f64, rng: &mut Rng, training: bool) -> Result<(Tensor, DropoutMask)> {
    let mask = dropout_mask(x.len(), rate, rng, training)?;
    let y = Tensor::from_vec(x.shape(), mask.apply(x.data()))?;
    Ok((y, mask))
}
