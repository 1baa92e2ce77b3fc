use crate::error::{Error, Result};
use crate::numerics::ops::{dropout_mask, gemv_acc, gemv_t_acc, outer_acc, softmax, DropoutMask};
use crate::numerics::{init_params, InitScheme, ParamKind, ParamMut, ParamRef, Parameterized, Rng, Tensor};
use crate::{push_params, push_params_mut};

pub const DEFAULT_DROPOUT: f64 = 0.3;

/// Sequence model mapping `T × in` features to `T × out` step outputs.
pub trait TemporalHead: Parameterized {
    type Cache;

    fn input_width(&self) -> usize;
    fn output_width(&self) -> usize;
    fn forward(&self, xs: &Tensor) -> Result<(Tensor, Self::Cache)>;
    /// Accumulates parameter gradients; returns `∂L/∂X`.
    fn backward(&mut self, cache: &Self::Cache, d_out: &Tensor) -> Result<Tensor>;
}

/// Temporal mean of the rows of `H`.
pub fn temporal_mean(hs: &Tensor) -> Result<Vec<f64>> {
    if hs.shape().len() != 2 || hs.rows() == 0 {
        return Err(Error::contract(format!("temporal pooling of shape {:?}", hs.shape())));
    }
    let t = hs.rows() as f64;
    let mut out = vec![0.0; hs.cols()];
    for r in 0..hs.rows() {
        for (o, v) in out.iter_mut().zip(hs.row(r)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= t);
    Ok(out)
}

/// Mean pooling, dropout and a linear-softmax classifier.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub w_y: Tensor,
    pub b_y: Tensor,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    steps: usize,
    mask: DropoutMask,
    dropped: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PoolOutput {
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(width: usize, classes: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        if classes == 0 {
            return Err(Error::contract("classifier needs at least one class"));
        }
        Ok(ClassifierHead {
            w_y: init_params(&[classes, width], InitScheme::FanAvgUniform, rng)?,
            b_y: Tensor::zeros(&[classes]),
            dropout,
        })
    }

    pub fn classes(&self) -> usize {
        self.w_y.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.w_y.shape()[1]
    }

    pub fn forward(&self, hs: &Tensor, training: bool, rng: &mut Rng) -> Result<(PoolOutput, PoolCache)> {
        if hs.shape().len() != 2 || hs.cols() != self.width() {
            return Err(Error::shape(
                "pool_and_classify",
                format!("H {:?} for classifier width {}", hs.shape(), self.width()),
            ));
        }
        let pooled = temporal_mean(hs)?;
        let mask = dropout_mask(pooled.len(), self.dropout, rng, training)?;
        let dropped = mask.apply(&pooled);
        let mut logits = self.b_y.data().to_vec();
        gemv_acc(self.w_y.data(), &dropped, &mut logits);
        let probs = softmax(&logits)?;
        Ok((
            PoolOutput { pooled, logits, probs },
            PoolCache { steps: hs.rows(), mask, dropped },
        ))
    }

    /// Given `∂L/∂logits`, accumulates classifier gradients and returns `∂L/∂H`.
    pub fn backward(&mut self, cache: &PoolCache, d_logits: &[f64]) -> Result<Tensor> {
        outer_acc(self.w_y.grad_mut(), d_logits, &cache.dropped);
        for (g, v) in self.b_y.grad_mut().iter_mut().zip(d_logits) {
            *g += v;
        }
        let mut d_dropped = vec![0.0; self.width()];
        gemv_t_acc(self.w_y.data(), d_logits, &mut d_dropped);
        let t = cache.steps as f64;
        let row: Vec<f64> = d_dropped
            .iter()
            .zip(&cache.mask.scale)
            .map(|(g, s)| g * s / t)
            .collect();
        let mut out = Vec::with_capacity(cache.steps * row.len());
        for _ in 0..cache.steps {
            out.extend_from_slice(&row);
        }
        Tensor::from_vec(&[cache.steps, row.len()], out)
    }
}

impl Parameterized for ClassifierHead {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        push_params!(out, prefix, ParamKind::Trainable; "w_y" => self.w_y, "b_y" => self.b_y);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        push_params_mut!(out, prefix, ParamKind::Trainable; "w_y" => self.w_y, "b_y" => self.b_y);
    }
}

/// Clip embedding: the pooled step outputs of a head, without dropout.
pub fn embed<H: TemporalHead>(head: &H, xs: &Tensor) -> Result<Vec<f64>> {
    let (hs, _) = head.forward(xs)?;
    temporal_mean(&hs)
}
