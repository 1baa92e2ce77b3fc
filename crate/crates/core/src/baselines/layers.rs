//! Row-wise building blocks over `T × width` matrices.

use crate::error::{Error, Result};
use crate::numerics::ops::{axpy, dot, softmax};
use crate::numerics::{init_params, InitScheme, ParamKind, ParamMut, ParamRef, Parameterized, Rng, Tensor};
use crate::{push_params, push_params_mut};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `y = x Wᵀ + b` applied to each row.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(n_in: usize, n_out: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Linear {
            w: init_params(&[n_out, n_in], InitScheme::FanAvgUniform, rng)?,
            b: Tensor::zeros(&[n_out]),
        })
    }

    pub fn n_in(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.n_in() {
            return Err(Error::shape("linear", format!("{:?} into width {}", x.shape(), self.n_in())));
        }
        let (n_in, n_out) = (self.n_in(), self.n_out());
        let w = self.w.data();
        let mut y = Vec::with_capacity(x.rows() * n_out);
        for r in 0..x.rows() {
            let xr = x.row(r);
            for o in 0..n_out {
                y.push(self.b.data()[o] + dot(&w[o * n_in..(o + 1) * n_in], xr));
            }
        }
        Tensor::from_vec(&[x.rows(), n_out], y)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let (n_in, n_out) = (self.n_in(), self.n_out());
        dy.ensure_shape("linear_backward", &[x.rows(), n_out])?;
        let mut dx = vec![0.0; x.rows() * n_in];
        {
            let (w, gw) = self.w.data_and_grad_mut();
            for r in 0..x.rows() {
                let xr = x.row(r);
                let dyr = dy.row(r);
                let dxr = &mut dx[r * n_in..(r + 1) * n_in];
                for o in 0..n_out {
                    let g = dyr[o];
                    if g != 0.0 {
                        axpy(g, xr, &mut gw[o * n_in..(o + 1) * n_in]);
                        axpy(g, &w[o * n_in..(o + 1) * n_in], dxr);
                    }
                }
            }
        }
        let gb = self.b.grad_mut();
        for r in 0..x.rows() {
            for (g, v) in gb.iter_mut().zip(dy.row(r)) {
                *g += v;
            }
        }
        Tensor::from_vec(&[x.rows(), n_in], dx)
    }
}

impl Parameterized for Linear {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        push_params!(out, prefix, ParamKind::Trainable; "w" => self.w, "b" => self.b);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        push_params_mut!(out, prefix, ParamKind::Trainable; "w" => self.w, "b" => self.b);
    }
}

/// Per-row layer normalization with learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        LayerNorm {
            gamma: Tensor::filled(&[width], 1.0),
            beta: Tensor::zeros(&[width]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        let c = self.gamma.len();
        if x.cols() != c {
            return Err(Error::shape("layer_norm", format!("{:?} for width {c}", x.shape())));
        }
        let mut xhat = Vec::with_capacity(x.len());
        let mut y = Vec::with_capacity(x.len());
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (k, v) in row.iter().enumerate() {
                let xh = (v - mean) * is;
                xhat.push(xh);
                y.push(self.gamma.data()[k] * xh + self.beta.data()[k]);
            }
        }
        Ok((
            Tensor::from_vec(x.shape(), y)?,
            LayerNormCache {
                xhat: Tensor::from_vec(x.shape(), xhat)?,
                inv_std,
            },
        ))
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Tensor) -> Result<Tensor> {
        let c = self.gamma.len();
        let rows = cache.xhat.rows();
        let mut dx = vec![0.0; rows * c];
        let gamma = self.gamma.data().to_vec();
        let gg = self.gamma.grad_mut();
        for r in 0..rows {
            for k in 0..c {
                gg[k] += dy.row(r)[k] * cache.xhat.row(r)[k];
            }
        }
        let gb = self.beta.grad_mut();
        for r in 0..rows {
            for (g, v) in gb.iter_mut().zip(dy.row(r)) {
                *g += v;
            }
        }
        for r in 0..rows {
            let xh = cache.xhat.row(r);
            let dxh: Vec<f64> = dy.row(r).iter().zip(&gamma).map(|(a, b)| a * b).collect();
            let m1 = dxh.iter().sum::<f64>() / c as f64;
            let m2 = dot(&dxh, xh) / c as f64;
            for k in 0..c {
                dx[r * c + k] = cache.inv_std[r] * (dxh[k] - m1 - xh[k] * m2);
            }
        }
        Tensor::from_vec(&[rows, c], dx)
    }
}

impl Parameterized for LayerNorm {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        push_params!(out, prefix, ParamKind::Trainable; "gamma" => self.gamma, "beta" => self.beta);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        push_params_mut!(out, prefix, ParamKind::Trainable; "gamma" => self.gamma, "beta" => self.beta);
    }
}

/// Single-head `softmax(Q Kᵀ / √d_k) V`. Returns the output and the
/// attention matrix (rows are distributions over keys).
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    if q.shape().len() != 2 || k.shape() != q.shape() || v.rows() != k.rows() {
        return Err(Error::shape(
            "attention",
            format!("Q {:?} K {:?} V {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    let (t, dk) = (q.rows(), q.cols());
    let scale = 1.0 / (dk as f64).sqrt();
    let mut weights = Vec::with_capacity(t * t);
    for i in 0..t {
        let scores: Vec<f64> = (0..t).map(|j| scale * dot(q.row(i), k.row(j))).collect();
        weights.extend(softmax(&scores)?);
    }
    let a = Tensor::from_vec(&[t, t], weights)?;
    let dv = v.cols();
    let mut out = vec![0.0; t * dv];
    for i in 0..t {
        for j in 0..t {
            axpy(a.at2(i, j), v.row(j), &mut out[i * dv..(i + 1) * dv]);
        }
    }
    Ok((Tensor::from_vec(&[t, dv], out)?, a))
}

/// Gradients of [`scaled_dot_attention`] given the stored weights.
pub fn scaled_dot_attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    a: &Tensor,
    d_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (t, dk) = (q.rows(), q.cols());
    let dvw = v.cols();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut dq = vec![0.0; t * dk];
    let mut dkm = vec![0.0; t * dk];
    let mut dv = vec![0.0; t * dvw];
    for i in 0..t {
        let ai = a.row(i);
        let doi = d_out.row(i);
        let da: Vec<f64> = (0..t).map(|j| dot(doi, v.row(j))).collect();
        let s = dot(&da, ai);
        for j in 0..t {
            axpy(ai[j], doi, &mut dv[j * dvw..(j + 1) * dvw]);
            let ds = ai[j] * (da[j] - s) * scale;
            if ds != 0.0 {
                axpy(ds, k.row(j), &mut dq[i * dk..(i + 1) * dk]);
                axpy(ds, q.row(i), &mut dkm[j * dk..(j + 1) * dk]);
            }
        }
    }
    (
        Tensor::from_vec(&[t, dk], dq).expect("shape"),
        Tensor::from_vec(&[t, dk], dkm).expect("shape"),
        Tensor::from_vec(&[t, dvw], dv).expect("shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn attention_over_one_key_returns_value() {
        let mut rng = Rng::new(1);
        let (q, k, v) = (random(&[1, 4], &mut rng), random(&[1, 4], &mut rng), random(&[1, 4], &mut rng));
        let (o, a) = scaled_dot_attention(&q, &k, &v).unwrap();
        assert_eq!(a.data(), &[1.0]);
        assert_eq!(o, v);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = Rng::new(2);
        let q = random(&[3, 4], &mut rng);
        let key = random(&[1, 4], &mut rng);
        let k = Tensor::from_rows(&vec![key.data().to_vec(); 3]).unwrap();
        let v = random(&[3, 4], &mut rng);
        let (o, _) = scaled_dot_attention(&q, &k, &v).unwrap();
        for c in 0..4 {
            let mean = (0..3).map(|r| v.at2(r, c)).sum::<f64>() / 3.0;
            for r in 0..3 {
                assert!((o.at2(r, c) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = Rng::new(3);
        let (q, k, v) = (random(&[6, 8], &mut rng), random(&[6, 8], &mut rng), random(&[6, 8], &mut rng));
        let (_, a) = scaled_dot_attention(&q, &k, &v).unwrap();
        for r in 0..6 {
            assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.row(r).iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn mismatched_attention_shapes() {
        let mut rng = Rng::new(4);
        let q = random(&[3, 4], &mut rng);
        let k = random(&[3, 5], &mut rng);
        assert!(scaled_dot_attention(&q, &k, &q).is_err());
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut rng = Rng::new(5);
        let x = random(&[4, 10], &mut rng);
        let (y, _) = LayerNorm::new(10).forward(&x).unwrap();
        for r in 0..4 {
            let m = y.row(r).iter().sum::<f64>() / 10.0;
            let v = y.row(r).iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 10.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-4);
        }
    }
}
