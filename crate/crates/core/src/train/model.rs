use crate::baselines::{LstmHead, LstmHeadCache, TransformerCache, TransformerConfig, TransformerHead};
use crate::cnn::{BatchNorm, BatchNormCache, EncoderCache, EncoderConfig, FrameEncoder};
use crate::data::{ClipData, ClipRecord};
use crate::error::{Error, Result};
use crate::numerics::params::join;
use crate::numerics::{ParamMut, ParamRef, Parameterized, Rng, Tensor};
use crate::spline::SplineGrid;
use crate::tkan::{temporal_mean, ClassifierHead, PoolCache, TemporalHead, TkanCell, TkanConfig, TkanSeqCache};

use super::config::{HeadKind, TrainConfig};
use super::loss::{cross_entropy, cross_entropy_grad};

/// RNG stream ids for model initialization. The encoder stream does not
/// depend on the head, so all heads start from the same encoder.
mod stream {
    pub const ENCODER: u64 = 1;
    pub const HEAD: u64 = 2;
    pub const CLASSIFIER: u64 = 3;
}

#[derive(Debug, Clone)]
pub enum Head {
    Tkan(TkanCell),
    Lstm(LstmHead),
    Transformer(TransformerHead),
}

pub enum HeadCache {
    Tkan(TkanSeqCache),
    Lstm(LstmHeadCache),
    Transformer(TransformerCache),
}

impl Head {
    pub fn new(cfg: &TrainConfig, rng: &mut Rng) -> Result<Self> {
        Ok(match cfg.head {
            HeadKind::Tkan => {
                let tc = TkanConfig {
                    d: cfg.d,
                    d_sub: cfg.d_sub,
                    sublayers: cfg.sublayers,
                    grid: SplineGrid::new(-1.0, 1.0, cfg.grid_intervals, cfg.spline_degree)?,
                    rho: cfg.kan_activation,
                    forget_bias: cfg.forget_bias,
                };
                Head::Tkan(TkanCell::new(&tc, rng)?)
            }
            HeadKind::Lstm => Head::Lstm(LstmHead::new(cfg.d, cfg.lstm_hidden1, cfg.lstm_hidden2, rng)?),
            HeadKind::Transformer => {
                let tc = TransformerConfig {
                    d_model: cfg.d,
                    heads: cfg.transformer_heads,
                    ff: cfg.transformer_ff,
                    layers: cfg.transformer_layers,
                    max_len: cfg.frames,
                    pre_norm: cfg.transformer_pre_norm,
                };
                Head::Transformer(TransformerHead::new(&tc, rng)?)
            }
        })
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Tkan(_) => HeadKind::Tkan,
            Head::Lstm(_) => HeadKind::Lstm,
            Head::Transformer(_) => HeadKind::Transformer,
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            Head::Tkan(h) => h.output_width(),
            Head::Lstm(h) => h.output_width(),
            Head::Transformer(h) => h.output_width(),
        }
    }

    pub fn forward(&self, xs: &Tensor) -> Result<(Tensor, HeadCache)> {
        Ok(match self {
            Head::Tkan(h) => {
                let (y, c) = TemporalHead::forward(h, xs)?;
                (y, HeadCache::Tkan(c))
            }
            Head::Lstm(h) => {
                let (y, c) = h.forward(xs)?;
                (y, HeadCache::Lstm(c))
            }
            Head::Transformer(h) => {
                let (y, c) = h.forward(xs)?;
                (y, HeadCache::Transformer(c))
            }
        })
    }

    pub fn backward(&mut self, cache: &HeadCache, d_out: &Tensor) -> Result<Tensor> {
        match (self, cache) {
            (Head::Tkan(h), HeadCache::Tkan(c)) => TemporalHead::backward(h, c, d_out),
            (Head::Lstm(h), HeadCache::Lstm(c)) => h.backward(c, d_out),
            (Head::Transformer(h), HeadCache::Transformer(c)) => h.backward(c, d_out),
            _ => Err(Error::contract("head cache from a different head type")),
        }
    }
}

impl Parameterized for Head {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        match self {
            Head::Tkan(h) => h.params(prefix, out),
            Head::Lstm(h) => h.params(prefix, out),
            Head::Transformer(h) => h.params(prefix, out),
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        match self {
            Head::Tkan(h) => h.params_mut(prefix, out),
            Head::Lstm(h) => h.params_mut(prefix, out),
            Head::Transformer(h) => h.params_mut(prefix, out),
        }
    }
}

/// Encoder (unless training on features) → feature batchnorm → temporal
/// head → pooled classifier.
#[derive(Debug, Clone)]
pub struct GaitModel {
    pub encoder: Option<FrameEncoder>,
    pub feature_norm: BatchNorm,
    pub head: Head,
    pub classifier: ClassifierHead,
    frames: usize,
    d: usize,
}

pub struct BatchCache {
    encoder: Option<EncoderCache>,
    norm: BatchNormCache,
    heads: Vec<HeadCache>,
    pools: Vec<PoolCache>,
    probs: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub loss: f64,
    pub correct: usize,
    pub probs: Vec<Vec<f64>>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl GaitModel {
    pub fn new(cfg: &TrainConfig, classes: usize) -> Result<Self> {
        cfg.validate()?;
        let root = Rng::new(cfg.seed);
        let encoder = if cfg.features {
            None
        } else {
            let ec = EncoderConfig::new(cfg.channels, cfg.d, cfg.input_side);
            Some(FrameEncoder::new(ec, &mut root.split(stream::ENCODER))?)
        };
        let head = Head::new(cfg, &mut root.split(stream::HEAD))?;
        let classifier = ClassifierHead::new(head.output_width(), classes, cfg.dropout, &mut root.split(stream::CLASSIFIER))?;
        Ok(GaitModel { encoder, feature_norm: BatchNorm::new(cfg.d), head, classifier, frames: cfg.frames, d: cfg.d })
    }

    pub fn classes(&self) -> usize {
        self.classifier.classes()
    }

    pub fn embedding_width(&self) -> usize {
        self.head.output_width()
    }

    fn stack_inputs(&self, clips: &[&ClipRecord]) -> Result<Tensor> {
        let t = self.frames;
        let mut data = Vec::new();
        for c in clips {
            if c.len() != t {
                return Err(Error::Data(format!("{} has {} frames, model expects {t}", c.label(), c.len())));
            }
            match (&c.data, &self.encoder) {
                (ClipData::Frames { side, data: f }, Some(enc)) => {
                    if *side != enc.config().input {
                        return Err(Error::Data(format!(
                            "{} frames are {side}×{side}, encoder expects {}",
                            c.label(),
                            enc.config().input
                        )));
                    }
                    data.extend(f.iter().map(|&v| v as f64));
                }
                (ClipData::Features(x), None) => {
                    if x.cols() != self.d {
                        return Err(Error::Data(format!("{} has width {}, model expects {}", c.label(), x.cols(), self.d)));
                    }
                    data.extend_from_slice(x.data());
                }
                (ClipData::Frames { .. }, None) => {
                    return Err(Error::Data(format!("{} holds frames but the model reads features", c.label())));
                }
                (ClipData::Features(_), Some(_)) => {
                    return Err(Error::Data(format!("{} holds features but the model has an encoder", c.label())));
                }
            }
        }
        let n = clips.len() * t;
        match &self.encoder {
            Some(enc) => {
                let s = enc.config().input;
                Tensor::from_vec(&[n, 1, s, s], data)
            }
            None => Tensor::from_vec(&[n, self.d], data),
        }
    }

    /// Normalized per-step features of a batch, `B·T × d`.
    fn features(&self, clips: &[&ClipRecord], training: bool) -> Result<(Tensor, Option<EncoderCache>, BatchNormCache)> {
        let x = self.stack_inputs(clips)?;
        let (feats, enc_cache) = match &self.encoder {
            Some(enc) => {
                let (f, c) = enc.forward(&x, training)?;
                (f, Some(c))
            }
            None => (x, None),
        };
        let n = feats.rows();
        let (normed, norm) = self.feature_norm.forward(feats.data(), n, 1, training)?;
        Ok((Tensor::from_vec(&[n, self.d], normed)?, enc_cache, norm))
    }

    fn clip_rows(&self, all: &Tensor, b: usize) -> Result<Tensor> {
        let t = self.frames;
        Tensor::from_vec(&[t, self.d], all.data()[b * t * self.d..(b + 1) * t * self.d].to_vec())
    }

    pub fn forward_batch(
        &self,
        clips: &[&ClipRecord],
        labels: &[usize],
        training: bool,
        rng: &mut Rng,
    ) -> Result<(BatchOutput, BatchCache)> {
        if clips.is_empty() || clips.len() != labels.len() {
            return Err(Error::contract("batch needs one label per clip"));
        }
        let (feats, encoder, norm) = self.features(clips, training)?;
        let (mut heads, mut pools, mut probs) = (Vec::new(), Vec::new(), Vec::new());
        let (mut loss, mut correct) = (0.0, 0);
        for (b, &y) in labels.iter().enumerate() {
            let (hs, hc) = self.head.forward(&self.clip_rows(&feats, b)?)?;
            let (out, pc) = self.classifier.forward(&hs, training, rng)?;
            loss += cross_entropy(&out.probs, y)?;
            correct += usize::from(argmax(&out.probs) == y);
            heads.push(hc);
            pools.push(pc);
            probs.push(out.probs);
        }
        loss /= clips.len() as f64;
        let out = BatchOutput { loss, correct, probs: probs.clone() };
        Ok((out, BatchCache { encoder, norm, heads, pools, probs, labels: labels.to_vec() }))
    }

    /// Accumulates gradients of the mean batch loss.
    pub fn backward_batch(&mut self, cache: &BatchCache) -> Result<()> {
        let bsz = cache.labels.len() as f64;
        let mut d_feats = Vec::with_capacity(cache.labels.len() * self.frames * self.d);
        for b in 0..cache.labels.len() {
            let mut g = cross_entropy_grad(&cache.probs[b], cache.labels[b])?;
            g.iter_mut().for_each(|v| *v /= bsz);
            let dh = self.classifier.backward(&cache.pools[b], &g)?;
            let dx = self.head.backward(&cache.heads[b], &dh)?;
            d_feats.extend_from_slice(dx.data());
        }
        let d_raw = self.feature_norm.backward(&cache.norm, &d_feats);
        if let (Some(enc), Some(ec)) = (self.encoder.as_mut(), cache.encoder.as_ref()) {
            let rows = d_raw.len() / self.d;
            enc.backward(ec, &Tensor::from_vec(&[rows, self.d], d_raw)?)?;
        }
        Ok(())
    }

    /// Folds a training batch's statistics into the running averages.
    pub fn update_running_stats(&mut self, cache: &BatchCache) {
        self.feature_norm.update_running(&cache.norm);
        if let (Some(enc), Some(ec)) = (self.encoder.as_mut(), cache.encoder.as_ref()) {
            enc.update_running_stats(ec);
        }
    }

    /// Inference-mode clip embedding: the temporal mean of the head outputs.
    pub fn embed(&self, clip: &ClipRecord) -> Result<Vec<f64>> {
        let (feats, _, _) = self.features(&[clip], false)?;
        let (hs, _) = self.head.forward(&feats)?;
        temporal_mean(&hs)
    }

    /// Inference-mode class probabilities.
    pub fn predict(&self, clip: &ClipRecord) -> Result<Vec<f64>> {
        let (feats, _, _) = self.features(&[clip], false)?;
        let (hs, _) = self.head.forward(&feats)?;
        let (out, _) = self.classifier.forward(&hs, false, &mut Rng::new(0))?;
        Ok(out.probs)
    }
}

impl Parameterized for GaitModel {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        if let Some(e) = &self.encoder {
            e.params(&join(prefix, "encoder"), out);
        }
        self.feature_norm.params(&join(prefix, "feature_norm"), out);
        self.head.params(&join(prefix, "head"), out);
        self.classifier.params(&join(prefix, "classifier"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        if let Some(e) = &mut self.encoder {
            e.params_mut(&join(prefix, "encoder"), out);
        }
        self.feature_norm.params_mut(&join(prefix, "feature_norm"), out);
        self.head.params_mut(&join(prefix, "head"), out);
        self.classifier.params_mut(&join(prefix, "classifier"), out);
    }
}
