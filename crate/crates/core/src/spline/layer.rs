use std::sync::Arc;

use super::{grid::BasisEval, KanEdgeFunction, SplineGrid};
use crate::error::{Error, Result};
use crate::numerics::{init_params, ops, InitScheme, ParamKind, ParamMut, ParamRef, Parameterized, Rng, Tensor};
use crate::{push_params, push_params_mut};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Silu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Silu => ops::silu(z),
        }
    }

    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Silu => ops::silu_grad(z),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Silu => "silu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "silu" => Ok(Activation::Silu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Layer of `n_out × n_in` edge functions followed by a pointwise `ρ`.
///
/// `alpha` is `n_out × n_in`; `coeffs` is `n_out × n_in × K`.
#[derive(Debug, Clone)]
pub struct KanLayer {
    n_in: usize,
    n_out: usize,
    grid: Arc<SplineGrid>,
    pub alpha: Tensor,
    pub coeffs: Tensor,
    pub rho: Activation,
}

/// Forward intermediates for one input vector.
#[derive(Debug, Clone)]
pub struct KanCache {
    x: Vec<f64>,
    basis: Vec<BasisEval>,
    z: Vec<f64>,
}

impl KanLayer {
    /// Random layer: `α` fan-avg uniform, spline coefficients `N(0, (0.1/√K)²)`.
    pub fn new(n_in: usize, n_out: usize, grid: Arc<SplineGrid>, rho: Activation, rng: &mut Rng) -> Result<Self> {
        let k = grid.num_basis();
        let alpha = init_params(&[n_out, n_in], InitScheme::FanAvgUniform, rng)?;
        let coeffs = init_params(&[n_out, n_in, k], InitScheme::Normal(0.1 / (k as f64).sqrt()), rng)?;
        Self::from_parts(grid, alpha, coeffs, rho)
    }

    pub fn from_parts(grid: Arc<SplineGrid>, alpha: Tensor, coeffs: Tensor, rho: Activation) -> Result<Self> {
        if alpha.shape().len() != 2 {
            return Err(Error::shape("kan_layer", "alpha must be 2-D"));
        }
        let (n_out, n_in) = (alpha.shape()[0], alpha.shape()[1]);
        coeffs.ensure_shape("kan_layer", &[n_out, n_in, grid.num_basis()])?;
        Ok(KanLayer {
            n_in,
            n_out,
            grid,
            alpha,
            coeffs,
            rho,
        })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn grid(&self) -> &Arc<SplineGrid> {
        &self.grid
    }

    pub fn num_edges(&self) -> usize {
        self.n_in * self.n_out
    }

    /// Copy of the edge function from input `i` to output `j`.
    pub fn edge(&self, j: usize, i: usize) -> KanEdgeFunction {
        let k = self.grid.num_basis();
        let off = (j * self.n_in + i) * k;
        KanEdgeFunction::new(
            self.alpha.data()[j * self.n_in + i],
            self.coeffs.data()[off..off + k].to_vec(),
            self.grid.clone(),
        )
        .expect("layer invariants hold")
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, KanCache)> {
        if x.len() != self.n_in {
            return Err(Error::shape(
                "kan_layer_forward",
                format!("input width {} but layer expects {}", x.len(), self.n_in),
            ));
        }
        let k = self.grid.num_basis();
        let p1 = self.grid.degree() + 1;
        let basis: Vec<BasisEval> = x.iter().map(|&u| self.grid.eval(u)).collect();
        let alpha = self.alpha.data();
        let coeffs = self.coeffs.data();
        let mut z = vec![0.0; self.n_out];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, b) in basis.iter().enumerate() {
                let e = j * self.n_in + i;
                acc += alpha[e] * x[i];
                let c = &coeffs[e * k + b.start..e * k + b.start + p1];
                for r in 0..p1 {
                    acc += c[r] * b.values[r];
                }
            }
            *zj = acc;
        }
        let out = z.iter().map(|&v| self.rho.apply(v)).collect();
        Ok((
            out,
            KanCache {
                x: x.to_vec(),
                basis,
                z,
            },
        ))
    }

    /// Accumulates parameter gradients and adds `∂L/∂x` into `dx`.
    pub fn backward(&mut self, cache: &KanCache, dout: &[f64], dx: &mut [f64]) {
        let k = self.grid.num_basis();
        let p1 = self.grid.degree() + 1;
        let n_in = self.n_in;
        let dz: Vec<f64> = dout
            .iter()
            .zip(&cache.z)
            .map(|(g, &z)| g * self.rho.grad(z))
            .collect();
        {
            let (alpha, galpha) = self.alpha.data_and_grad_mut();
            for (j, &dzj) in dz.iter().enumerate() {
                if dzj == 0.0 {
                    continue;
                }
                for i in 0..n_in {
                    galpha[j * n_in + i] += dzj * cache.x[i];
                    dx[i] += dzj * alpha[j * n_in + i];
                }
            }
        }
        let (coeffs, gcoeffs) = self.coeffs.data_and_grad_mut();
        for (j, &dzj) in dz.iter().enumerate() {
            if dzj == 0.0 {
                continue;
            }
            for (i, b) in cache.basis.iter().enumerate() {
                let base = (j * n_in + i) * k + b.start;
                let mut slope = 0.0;
                for r in 0..p1 {
                    gcoeffs[base + r] += dzj * b.values[r];
                    slope += coeffs[base + r] * b.derivs[r];
                }
                dx[i] += dzj * slope;
            }
        }
    }

    /// Row-wise forward over an `N × n_in` batch.
    pub fn forward_batch(&self, x: &Tensor) -> Result<(Tensor, Vec<KanCache>)> {
        if x.shape().len() != 2 || x.shape()[1] != self.n_in {
            return Err(Error::shape("kan_layer_forward", format!("batch shape {:?}", x.shape())));
        }
        let mut out = Vec::with_capacity(x.rows() * self.n_out);
        let mut caches = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let (y, c) = self.forward(x.row(r))?;
            out.extend(y);
            caches.push(c);
        }
        Ok((Tensor::from_vec(&[x.rows(), self.n_out], out)?, caches))
    }
}

impl Parameterized for KanLayer {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        push_params!(out, prefix, ParamKind::Trainable; "alpha" => self.alpha, "coeffs" => self.coeffs);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        push_params_mut!(out, prefix, ParamKind::Trainable; "alpha" => self.alpha, "coeffs" => self.coeffs);
    }
}

/// Left-to-right composition of KAN layers.
#[derive(Debug, Clone)]
pub struct DeepKan {
    pub layers: Vec<KanLayer>,
}

impl DeepKan {
    pub fn new(layers: Vec<KanLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("deep KAN needs at least one layer"));
        }
        for (l, w) in layers.windows(2).enumerate() {
            if w[0].n_out() != w[1].n_in() {
                return Err(Error::contract(format!(
                    "layer {l} emits {} values but layer {} expects {}",
                    w[0].n_out(),
                    l + 1,
                    w[1].n_in()
                )));
            }
        }
        Ok(DeepKan { layers })
    }

    /// Random stack with the given widths, e.g. `[4, 6, 3]`.
    pub fn random(widths: &[usize], grid: Arc<SplineGrid>, rho: Activation, rng: &mut Rng) -> Result<Self> {
        let layers = widths
            .windows(2)
            .map(|w| KanLayer::new(w[0], w[1], grid.clone(), rho, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<KanCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let (y, c) = layer.forward(&cur)?;
            caches.push(c);
            cur = y;
        }
        Ok((cur, caches))
    }

    pub fn backward(&mut self, caches: &[KanCache], dout: &[f64], dx: &mut [f64]) {
        let mut grad = dout.to_vec();
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            let mut dprev = vec![0.0; layer.n_in()];
            layer.backward(cache, &grad, &mut dprev);
            grad = dprev;
        }
        for (d, g) in dx.iter_mut().zip(grad) {
            *d += g;
        }
    }
}

impl Parameterized for DeepKan {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        for (l, layer) in self.layers.iter().enumerate() {
            layer.params(&crate::numerics::params::join(prefix, &format!("layer{l}")), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.params_mut(&crate::numerics::params::join(prefix, &format!("layer{l}")), out);
        }
    }
}
