use super::layers::{scaled_dot_attention, scaled_dot_attention_backward, LayerNorm, LayerNormCache, Linear};
use crate::error::{Error, Result};
use crate::numerics::params::join;
use crate::numerics::{init_params, InitScheme, ParamKind, ParamMut, ParamRef, Parameterized, Rng, Tensor};
use crate::tkan::TemporalHead;
use crate::{push_params, push_params_mut};

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ff: usize,
    pub layers: usize,
    pub max_len: usize,
    /// Pre-norm residual blocks (with a final norm) when true, post-norm otherwise.
    pub pre_norm: bool,
}

impl TransformerConfig {
    /// Two layers, four heads, feed-forward width `4·d`.
    pub fn new(d_model: usize, max_len: usize) -> Self {
        TransformerConfig {
            d_model,
            heads: 4,
            ff: 4 * d_model,
            layers: 2,
            max_len,
            pre_norm: true,
        }
    }
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

fn columns(x: &Tensor, start: usize, width: usize) -> Tensor {
    let mut out = Vec::with_capacity(x.rows() * width);
    for r in 0..x.rows() {
        out.extend_from_slice(&x.row(r)[start..start + width]);
    }
    Tensor::from_vec(&[x.rows(), width], out).expect("shape")
}

fn put_columns(dst: &mut Tensor, src: &Tensor, start: usize) {
    let w = src.cols();
    for r in 0..src.rows() {
        dst.row_mut(r)[start..start + w].copy_from_slice(src.row(r));
    }
}

/// Multi-head self-attention with an output projection.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

pub struct AttentionCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    weights: Vec<Tensor>,
    concat: Tensor,
}

impl MultiHeadAttention {
    pub fn new(d: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::contract(format!("model width {d} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            heads,
            q: Linear::new(d, d, rng)?,
            k: Linear::new(d, d, rng)?,
            v: Linear::new(d, d, rng)?,
            out: Linear::new(d, d, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, AttentionCache)> {
        let q = self.q.forward(x)?;
        let k = self.k.forward(x)?;
        let v = self.v.forward(x)?;
        let dk = q.cols() / self.heads;
        let mut concat = Tensor::zeros(&[x.rows(), q.cols()]);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (o, a) = scaled_dot_attention(&columns(&q, h * dk, dk), &columns(&k, h * dk, dk), &columns(&v, h * dk, dk))?;
            put_columns(&mut concat, &o, h * dk);
            weights.push(a);
        }
        let y = self.out.forward(&concat)?;
        Ok((y, AttentionCache { x: x.clone(), q, k, v, weights, concat }))
    }

    pub fn backward(&mut self, c: &AttentionCache, dy: &Tensor) -> Result<Tensor> {
        let d_concat = self.out.backward(&c.concat, dy)?;
        let dk = c.q.cols() / self.heads;
        let mut dq = Tensor::zeros(c.q.shape());
        let mut dkm = Tensor::zeros(c.k.shape());
        let mut dv = Tensor::zeros(c.v.shape());
        for h in 0..self.heads {
            let (gq, gk, gv) = scaled_dot_attention_backward(
                &columns(&c.q, h * dk, dk),
                &columns(&c.k, h * dk, dk),
                &columns(&c.v, h * dk, dk),
                &c.weights[h],
                &columns(&d_concat, h * dk, dk),
            );
            put_columns(&mut dq, &gq, h * dk);
            put_columns(&mut dkm, &gk, h * dk);
            put_columns(&mut dv, &gv, h * dk);
        }
        let dx = add(
            &add(&self.q.backward(&c.x, &dq)?, &self.k.backward(&c.x, &dkm)?),
            &self.v.backward(&c.x, &dv)?,
        );
        Ok(dx)
    }

    /// Attention matrices of every head for the given input.
    pub fn attention_weights(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.forward(x)?.1.weights)
    }
}

impl Parameterized for MultiHeadAttention {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.q.params(&join(prefix, "q"), out);
        self.k.params(&join(prefix, "k"), out);
        self.v.params(&join(prefix, "v"), out);
        self.out.params(&join(prefix, "out"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.q.params_mut(&join(prefix, "q"), out);
        self.k.params_mut(&join(prefix, "k"), out);
        self.v.params_mut(&join(prefix, "v"), out);
        self.out.params_mut(&join(prefix, "out"), out);
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pre_norm: bool,
}

pub struct EncoderLayerCache {
    norm1: LayerNormCache,
    attn: AttentionCache,
    norm2: LayerNormCache,
    ff_in: Tensor,
    ff_hidden: Tensor,
    ff_act: Tensor,
}

impl EncoderLayer {
    pub fn new(cfg: &TransformerConfig, rng: &mut Rng) -> Result<Self> {
        let d = cfg.d_model;
        Ok(EncoderLayer {
            norm1: LayerNorm::new(d),
            attn: MultiHeadAttention::new(d, cfg.heads, rng)?,
            norm2: LayerNorm::new(d),
            ff1: Linear::new(d, cfg.ff, rng)?,
            ff2: Linear::new(cfg.ff, d, rng)?,
            pre_norm: cfg.pre_norm,
        })
    }

    fn feed_forward(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let hidden = self.ff1.forward(x)?;
        let act = Tensor::from_vec(hidden.shape(), hidden.data().iter().map(|v| v.max(0.0)).collect())?;
        let y = self.ff2.forward(&act)?;
        Ok((y, hidden, act))
    }

    fn feed_forward_backward(&mut self, c: &EncoderLayerCache, dy: &Tensor) -> Result<Tensor> {
        let d_act = self.ff2.backward(&c.ff_act, dy)?;
        let d_hidden: Vec<f64> = d_act
            .data()
            .iter()
            .zip(c.ff_hidden.data())
            .map(|(g, h)| if *h > 0.0 { *g } else { 0.0 })
            .collect();
        self.ff1.backward(&c.ff_in, &Tensor::from_vec(d_act.shape(), d_hidden)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, EncoderLayerCache)> {
        if self.pre_norm {
            let (n1, norm1) = self.norm1.forward(x)?;
            let (a, attn) = self.attn.forward(&n1)?;
            let x1 = add(x, &a);
            let (n2, norm2) = self.norm2.forward(&x1)?;
            let (f, ff_hidden, ff_act) = self.feed_forward(&n2)?;
            let y = add(&x1, &f);
            Ok((y, EncoderLayerCache { norm1, attn, norm2, ff_in: n2, ff_hidden, ff_act }))
        } else {
            let (a, attn) = self.attn.forward(x)?;
            let (x1, norm1) = self.norm1.forward(&add(x, &a))?;
            let (f, ff_hidden, ff_act) = self.feed_forward(&x1)?;
            let (y, norm2) = self.norm2.forward(&add(&x1, &f))?;
            Ok((y, EncoderLayerCache { norm1, attn, norm2, ff_in: x1, ff_hidden, ff_act }))
        }
    }

    pub fn backward(&mut self, c: &EncoderLayerCache, dy: &Tensor) -> Result<Tensor> {
        if self.pre_norm {
            let d_n2 = self.feed_forward_backward(c, dy)?;
            let d_x1 = add(dy, &self.norm2.backward(&c.norm2, &d_n2)?);
            let d_n1 = self.attn.backward(&c.attn, &d_x1)?;
            Ok(add(&d_x1, &self.norm1.backward(&c.norm1, &d_n1)?))
        } else {
            let d_s2 = self.norm2.backward(&c.norm2, dy)?;
            let d_x1 = add(&d_s2, &self.feed_forward_backward(c, &d_s2)?);
            let d_s1 = self.norm1.backward(&c.norm1, &d_x1)?;
            Ok(add(&d_s1, &self.attn.backward(&c.attn, &d_s1)?))
        }
    }
}

impl Parameterized for EncoderLayer {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.norm1.params(&join(prefix, "norm1"), out);
        self.attn.params(&join(prefix, "attn"), out);
        self.norm2.params(&join(prefix, "norm2"), out);
        self.ff1.params(&join(prefix, "ff1"), out);
        self.ff2.params(&join(prefix, "ff2"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.norm1.params_mut(&join(prefix, "norm1"), out);
        self.attn.params_mut(&join(prefix, "attn"), out);
        self.norm2.params_mut(&join(prefix, "norm2"), out);
        self.ff1.params_mut(&join(prefix, "ff1"), out);
        self.ff2.params_mut(&join(prefix, "ff2"), out);
    }
}

/// Learned positional embeddings followed by a stack of encoder layers.
#[derive(Debug, Clone)]
pub struct TransformerHead {
    pub positions: Tensor,
    pub layers: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
    pre_norm: bool,
}

pub struct TransformerCache {
    layers: Vec<EncoderLayerCache>,
    final_norm: Option<LayerNormCache>,
    steps: usize,
}

impl TransformerHead {
    pub fn new(cfg: &TransformerConfig, rng: &mut Rng) -> Result<Self> {
        let layers = (0..cfg.layers)
            .map(|_| EncoderLayer::new(cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(TransformerHead {
            positions: init_params(&[cfg.max_len, cfg.d_model], InitScheme::Normal(0.02), rng)?,
            layers,
            final_norm: LayerNorm::new(cfg.d_model),
            pre_norm: cfg.pre_norm,
        })
    }

    pub fn d_model(&self) -> usize {
        self.positions.shape()[1]
    }

    pub fn max_len(&self) -> usize {
        self.positions.shape()[0]
    }
}

impl TemporalHead for TransformerHead {
    type Cache = TransformerCache;

    fn input_width(&self) -> usize {
        self.d_model()
    }

    fn output_width(&self) -> usize {
        self.d_model()
    }

    fn forward(&self, xs: &Tensor) -> Result<(Tensor, TransformerCache)> {
        let d = self.d_model();
        if xs.shape().len() != 2 || xs.cols() != d || xs.rows() == 0 {
            return Err(Error::shape("transformer_head", format!("input {:?} for width {d}", xs.shape())));
        }
        let t = xs.rows();
        if t > self.max_len() {
            return Err(Error::contract(format!(
                "sequence of {t} steps exceeds the positional table of {}",
                self.max_len()
            )));
        }
        let mut cur = xs.clone();
        for r in 0..t {
            for (v, p) in cur.row_mut(r).iter_mut().zip(self.positions.row(r)) {
                *v += p;
            }
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(&cur)?;
            caches.push(c);
            cur = y;
        }
        let final_norm = if self.pre_norm {
            let (y, c) = self.final_norm.forward(&cur)?;
            cur = y;
            Some(c)
        } else {
            None
        };
        cur.check_finite("transformer head output")?;
        Ok((cur, TransformerCache { layers: caches, final_norm, steps: t }))
    }

    fn backward(&mut self, cache: &TransformerCache, d_out: &Tensor) -> Result<Tensor> {
        let mut grad = match &cache.final_norm {
            Some(c) => self.final_norm.backward(c, d_out)?,
            None => d_out.clone(),
        };
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            grad = layer.backward(c, &grad)?;
        }
        let gp = self.positions.grad_mut();
        let d = grad.cols();
        for r in 0..cache.steps {
            for (g, v) in gp[r * d..(r + 1) * d].iter_mut().zip(grad.row(r)) {
                *g += v;
            }
        }
        Ok(grad)
    }
}

impl Parameterized for TransformerHead {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        push_params!(out, prefix, ParamKind::Trainable; "positions" => self.positions);
        for (l, layer) in self.layers.iter().enumerate() {
            layer.params(&join(prefix, &format!("layer{l}")), out);
        }
        if self.pre_norm {
            self.final_norm.params(&join(prefix, "final_norm"), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        push_params_mut!(out, prefix, ParamKind::Trainable; "positions" => self.positions);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.params_mut(&join(prefix, &format!("layer{l}")), out);
        }
        if self.pre_norm {
            self.final_norm.params_mut(&join(prefix, "final_norm"), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tkan::temporal_mean;

    fn head(pre_norm: bool, seed: u64) -> TransformerHead {
        let mut cfg = TransformerConfig::new(8, 6);
        cfg.heads = 2;
        cfg.ff = 12;
        cfg.pre_norm = pre_norm;
        TransformerHead::new(&cfg, &mut Rng::new(seed)).unwrap()
    }

    fn random(t: usize, d: usize, rng: &mut Rng) -> Tensor {
        Tensor::from_vec(&[t, d], (0..t * d).map(|_| rng.normal()).collect()).unwrap()
    }

    fn zero_blocks(h: &mut TransformerHead) {
        for l in &mut h.layers {
            for lin in [&mut l.attn.q, &mut l.attn.k, &mut l.attn.v, &mut l.attn.out, &mut l.ff1, &mut l.ff2] {
                lin.w = Tensor::zeros(lin.w.shape());
            }
        }
    }

    fn layer_norm_rows(x: &Tensor) -> Tensor {
        let c = x.cols() as f64;
        let mut out = Vec::new();
        for r in 0..x.rows() {
            let row = x.row(r);
            let m = row.iter().sum::<f64>() / c;
            let v = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / c;
            out.extend(row.iter().map(|a| (a - m) / (v + 1e-5).sqrt()));
        }
        Tensor::from_vec(x.shape(), out).unwrap()
    }

    #[test]
    fn zero_blocks_reduce_to_normalized_residual_path() {
        let mut rng = Rng::new(1);
        for pre in [true, false] {
            let mut h = head(pre, 2);
            zero_blocks(&mut h);
            let xs = random(4, 8, &mut rng);
            let (y, _) = h.forward(&xs).unwrap();
            let mut with_pos = xs.clone();
            for r in 0..4 {
                for (v, p) in with_pos.row_mut(r).iter_mut().zip(h.positions.row(r)) {
                    *v += p;
                }
            }
            let mut expect = layer_norm_rows(&with_pos);
            if !pre {
                // post-norm normalizes after every residual sum
                for _ in 0..3 {
                    expect = layer_norm_rows(&expect);
                }
            }
            assert!(y.max_abs_diff(&expect) < 1e-9, "pre_norm={pre}");
        }
    }

    #[test]
    fn joint_permutation_of_frames_and_positions() {
        let mut rng = Rng::new(3);
        let h = head(true, 4);
        let xs = random(5, 8, &mut rng);
        let perm = [3, 0, 4, 1, 2];
        let mut hp = h.clone();
        let mut xp = xs.clone();
        for (dst, &src) in perm.iter().enumerate() {
            xp.row_mut(dst).copy_from_slice(xs.row(src));
            hp.positions.row_mut(dst).copy_from_slice(h.positions.row(src));
        }
        let a = temporal_mean(&h.forward(&xs).unwrap().0).unwrap();
        let b = temporal_mean(&hp.forward(&xp).unwrap().0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sequence_longer_than_table_is_rejected() {
        let h = head(true, 5);
        assert!(h.forward(&Tensor::zeros(&[7, 8])).is_err());
    }

    #[test]
    fn width_must_divide_by_heads() {
        assert!(MultiHeadAttention::new(10, 4, &mut Rng::new(0)).is_err());
    }
}
