use super::batchnorm::{BatchNorm, BatchNormCache};
use super::conv::{conv3x3_acc, conv3x3_backward};
use super::pool::{maxpool2x2_backward, maxpool2x2_planes, plane_mean};
use crate::baselines::Linear;
use crate::error::{Error, Result};
use crate::numerics::params::join;
use crate::numerics::{init_params, InitScheme, ParamKind, ParamMut, ParamRef, Parameterized, Rng, Tensor};
use crate::{push_params, push_params_mut};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Max2x2,
    GlobalAverage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub channels: [usize; 4],
    /// Projection width, i.e. the per-frame feature size.
    pub width: usize,
    /// Side length of the square input frames.
    pub input: usize,
}

impl EncoderConfig {
    pub fn new(channels: [usize; 4], width: usize, input: usize) -> Self {
        EncoderConfig { channels, width, input }
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { channels: [32, 64, 128, 256], width: 256, input: 64 }
    }
}

/// conv 3×3 → batchnorm → rectifier → pooling.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub kernel: Tensor,
    pub bn: BatchNorm,
    pub pool: Pooling,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    input: Vec<f64>,
    bn: BatchNormCache,
    argmax: Vec<u32>,
    n: usize,
    side: usize,
}

impl ConvBlock {
    pub fn new(c_in: usize, c_out: usize, pool: Pooling, rng: &mut Rng) -> Result<Self> {
        Ok(ConvBlock {
            kernel: init_params(&[c_out, c_in, 3, 3], InitScheme::FanAvgUniform, rng)?,
            bn: BatchNorm::new(c_out),
            pool,
        })
    }

    pub fn c_in(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape()[0]
    }

    /// `x` holds `n` maps of `c_in × side × side`.
    pub fn forward(&self, x: Vec<f64>, n: usize, side: usize, training: bool) -> Result<(Vec<f64>, BlockCache)> {
        let (ci, co, hw) = (self.c_in(), self.c_out(), side * side);
        let mut conv = vec![0.0; n * co * hw];
        for b in 0..n {
            conv3x3_acc(&x[b * ci * hw..(b + 1) * ci * hw], ci, side, side, self.kernel.data(), co,
                &mut conv[b * co * hw..(b + 1) * co * hw]);
        }
        let (mut act, bn) = self.bn.forward(&conv, n, hw, training)?;
        drop(conv);
        act.iter_mut().for_each(|v| *v = v.max(0.0));
        let (out, argmax) = match self.pool {
            Pooling::Max2x2 => maxpool2x2_planes(&act, n * co, side, side)?,
            Pooling::GlobalAverage => (act.chunks(hw).map(plane_mean).collect(), Vec::new()),
        };
        Ok((out, BlockCache { input: x, bn, argmax, n, side }))
    }

    pub fn backward(&mut self, cache: &BlockCache, d_out: &[f64], want_input: bool) -> Option<Vec<f64>> {
        let (ci, co, side) = (self.c_in(), self.c_out(), cache.side);
        let hw = side * side;
        let len = cache.n * co * hw;
        let mut d_act = match self.pool {
            Pooling::Max2x2 => maxpool2x2_backward(&cache.argmax, d_out, len),
            Pooling::GlobalAverage => {
                let mut d = vec![0.0; len];
                for (plane, g) in d.chunks_mut(hw).zip(d_out) {
                    plane.iter_mut().for_each(|v| *v = g / hw as f64);
                }
                d
            }
        };
        for (k, g) in d_act.iter_mut().enumerate() {
            if *g != 0.0 && self.bn.output_at(&cache.bn, k) <= 0.0 {
                *g = 0.0;
            }
        }
        let d_conv = self.bn.backward(&cache.bn, &d_act);
        drop(d_act);
        let mut d_in = want_input.then(|| vec![0.0; cache.n * ci * hw]);
        let (w, gw) = self.kernel.data_and_grad_mut();
        for b in 0..cache.n {
            conv3x3_backward(
                &cache.input[b * ci * hw..(b + 1) * ci * hw],
                ci, side, side, w, co,
                &d_conv[b * co * hw..(b + 1) * co * hw],
                gw,
                d_in.as_mut().map(|d| &mut d[b * ci * hw..(b + 1) * ci * hw]),
            );
        }
        d_in
    }
}

impl Parameterized for ConvBlock {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        push_params!(out, prefix, ParamKind::Trainable; "kernel" => self.kernel);
        self.bn.params(&join(prefix, "bn"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        push_params_mut!(out, prefix, ParamKind::Trainable; "kernel" => self.kernel);
        self.bn.params_mut(&join(prefix, "bn"), out);
    }
}

/// Four conv blocks, global average pooling, and a rectified projection,
/// applied independently to every frame of a batch.
#[derive(Debug, Clone)]
pub struct FrameEncoder {
    config: EncoderConfig,
    pub blocks: Vec<ConvBlock>,
    pub proj: Linear,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    blocks: Vec<BlockCache>,
    pooled: Tensor,
    pre_relu: Tensor,
}

impl EncoderCache {
    pub fn batchnorm_caches(&self) -> impl Iterator<Item = &BatchNormCache> {
        self.blocks.iter().map(|b| &b.bn)
    }
}

impl FrameEncoder {
    pub fn new(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        if config.input == 0 || config.input % 8 != 0 {
            return Err(Error::contract(format!(
                "encoder input side {} must halve cleanly three times",
                config.input
            )));
        }
        if config.channels.contains(&0) || config.width == 0 {
            return Err(Error::contract("encoder channels and width must be positive"));
        }
        let mut blocks = Vec::with_capacity(4);
        let mut c_in = 1;
        for (i, &c) in config.channels.iter().enumerate() {
            let pool = if i == 3 { Pooling::GlobalAverage } else { Pooling::Max2x2 };
            blocks.push(ConvBlock::new(c_in, c, pool, rng)?);
            c_in = c;
        }
        let proj = Linear::new(c_in, config.width, rng)?;
        let enc = FrameEncoder { config, blocks, proj };
        debug_assert_eq!(enc.spatial_sides(), [enc.config.input, enc.config.input / 2, enc.config.input / 4, enc.config.input / 8]);
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    /// Map side length seen by each block.
    pub fn spatial_sides(&self) -> [usize; 4] {
        let s = self.config.input;
        [s, s / 2, s / 4, s / 8]
    }

    fn check_frames(&self, frames: &Tensor) -> Result<usize> {
        let s = self.config.input;
        let n = match frames.shape() {
            [n, 1, h, w] | [n, h, w] if *h == s && *w == s => *n,
            other => {
                return Err(Error::contract(format!("encoder expects N×1×{s}×{s} frames, got {other:?}")));
            }
        };
        if n == 0 {
            return Err(Error::contract("encoder needs at least one frame"));
        }
        if let Some(v) = frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("frame value {v} outside [0, 1]")));
        }
        Ok(n)
    }

    /// Encodes a batch of frames into `N × width` features.
    pub fn forward(&self, frames: &Tensor, training: bool) -> Result<(Tensor, EncoderCache)> {
        let n = self.check_frames(frames)?;
        let mut x = frames.data().to_vec();
        let mut caches = Vec::with_capacity(4);
        for (block, side) in self.blocks.iter().zip(self.spatial_sides()) {
            let (y, cache) = block.forward(x, n, side, training)?;
            caches.push(cache);
            x = y;
        }
        let pooled = Tensor::from_vec(&[n, self.config.channels[3]], x)?;
        let pre_relu = self.proj.forward(&pooled)?;
        let mut out = pre_relu.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        Ok((out, EncoderCache { blocks: caches, pooled, pre_relu }))
    }

    pub fn backward(&mut self, cache: &EncoderCache, d_out: &Tensor) -> Result<()> {
        d_out.ensure_shape("encoder_backward", cache.pre_relu.shape())?;
        let mut d_pre = d_out.clone();
        for (g, z) in d_pre.data_mut().iter_mut().zip(cache.pre_relu.data()) {
            if *z <= 0.0 {
                *g = 0.0;
            }
        }
        let mut d = self.proj.backward(&cache.pooled, &d_pre)?.into_data();
        for (i, (block, bc)) in self.blocks.iter_mut().zip(&cache.blocks).enumerate().rev() {
            match block.backward(bc, &d, i > 0) {
                Some(next) => d = next,
                None => break,
            }
        }
        Ok(())
    }

    /// Folds the batch statistics of a training pass into the running averages.
    pub fn update_running_stats(&mut self, cache: &EncoderCache) {
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks) {
            block.bn.update_running(&bc.bn);
        }
    }

    /// Inference-mode encoding of one `1 × H × W` frame.
    pub fn encode_frame(&self, frame: &Tensor) -> Result<Vec<f64>> {
        let s = self.config.input;
        let batch = frame.clone().reshape(&[1, 1, s, s]).map_err(|_| {
            Error::contract(format!("encoder expects a 1×{s}×{s} frame, got {:?}", frame.shape()))
        })?;
        Ok(self.forward(&batch, false)?.0.into_data())
    }

    /// Encodes a `T × 1 × H × W` clip into `T × width` features.
    pub fn encode_clip(&self, frames: &Tensor, training: bool) -> Result<(Tensor, EncoderCache)> {
        self.forward(frames, training)
    }
}

impl Parameterized for FrameEncoder {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&join(prefix, &format!("block{}", i + 1)), out);
        }
        self.proj.params(&join(prefix, "proj"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&join(prefix, &format!("block{}", i + 1)), out);
        }
        self.proj.params_mut(&join(prefix, "proj"), out);
    }
}
