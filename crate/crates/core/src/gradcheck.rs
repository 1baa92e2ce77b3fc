//! Central finite-difference checks of the hand-written backward passes.
//!
//! Each suite builds a reduced model, contracts its output with a fixed
//! random weighting into a scalar, and compares every trainable entry's
//! analytic gradient with `(L(θ+h) − L(θ−h)) / 2h`.

use std::sync::Arc;

use crate::baselines::{LstmHead, TransformerConfig, TransformerHead};
use crate::cnn::pool::{maxpool2x2_backward, maxpool2x2_planes};
use crate::cnn::{BatchNorm, EncoderConfig, FrameEncoder};
use crate::error::Result;
use crate::numerics::{ParamKind, ParamMut, ParamRef, Parameterized, Rng, Tensor};
use crate::spline::{Activation, DeepKan, KanLayer, SplineGrid};
use crate::tkan::{ClassifierHead, RkanSublayer, TemporalHead, TkanCell, TkanConfig};
use crate::train::loss::{cross_entropy, cross_entropy_grad};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
/// Lower bound on the error denominator. Tensors whose true gradient is
/// structurally zero (e.g. attention key biases) are then judged on absolute
/// roundoff rather than on a ratio of two noise terms.
pub const NOISE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖ + ‖numeric‖, NOISE_FLOOR)`.
    pub rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: String,
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn worst_error(&self) -> f64 {
        self.worst().map_or(0.0, |t| t.rel_error)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.rel_error < self.tolerance)
    }
}

fn trainable_mut<M: Parameterized>(model: &mut M) -> Vec<ParamMut<'_>> {
    model.named_params_mut().into_iter().filter(|p| p.kind == ParamKind::Trainable).collect()
}

fn set_entry<M: Parameterized>(model: &mut M, tensor: usize, k: usize, v: f64) {
    trainable_mut(model)[tensor].tensor.data_mut()[k] = v;
}

/// Compares analytic and numeric gradients of every trainable tensor.
/// `objective(model, with_grad)` returns the scalar loss and, when asked,
/// accumulates its gradient into the model's buffers.
pub fn check_gradients<M, F>(model: &mut M, step: f64, mut objective: F) -> Result<Vec<TensorCheck>>
where
    M: Parameterized,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    model.zero_grads();
    objective(model, true)?;
    let analytic: Vec<(String, Vec<f64>)> = trainable_mut(model)
        .into_iter()
        .map(|p| {
            let g = p.tensor.grad().map_or_else(|| vec![0.0; p.tensor.len()], <[f64]>::to_vec);
            (p.name, g)
        })
        .collect();
    let mut out = Vec::with_capacity(analytic.len());
    for (ti, (name, grad)) in analytic.into_iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = trainable_mut(model)[ti].tensor.data()[k];
            set_entry(model, ti, k, orig + step);
            let up = objective(model, false)?;
            set_entry(model, ti, k, orig - step);
            let down = objective(model, false)?;
            set_entry(model, ti, k, orig);
            *slot = (up - down) / (2.0 * step);
        }
        let diff = grad.iter().zip(&numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
        let scale = norm(&grad) + norm(&numeric);
        let max_abs_error = grad.iter().zip(&numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
        out.push(TensorCheck {
            name,
            entries: grad.len(),
            rel_error: diff / scale.max(NOISE_FLOOR),
            max_abs_error,
        });
    }
    model.zero_grads();
    Ok(out)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A model bundled with an input tensor that is checked like a parameter.
pub struct WithInput<M> {
    pub model: M,
    pub input: Tensor,
}

impl<M: Parameterized> Parameterized for WithInput<M> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.model.params(prefix, out);
        out.push(ParamRef { name: "input".into(), tensor: &self.input, kind: ParamKind::Trainable });
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.model.params_mut(prefix, out);
        out.push(ParamMut { name: "input".into(), tensor: &mut self.input, kind: ParamKind::Trainable });
    }
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform_in(lo, hi)).collect()).expect("shape")
}

fn contract(out: &[f64], weights: &[f64]) -> f64 {
    out.iter().zip(weights).map(|(a, b)| a * b).sum()
}

fn add_into(dst: &mut Tensor, src: &[f64]) {
    for (g, v) in dst.grad_mut().iter_mut().zip(src) {
        *g += v;
    }
}

fn kan_layer(rng: &mut Rng) -> Result<Vec<TensorCheck>> {
    let grid = Arc::new(SplineGrid::default());
    let model = KanLayer::new(4, 3, grid, Activation::Silu, rng)?;
    let input = random_tensor(&[5, 4], -1.3, 1.3, rng);
    let r = random_tensor(&[5, 3], -1.0, 1.0, rng);
    let mut m = WithInput { model, input };
    check_gradients(&mut m, DEFAULT_STEP, |m, grad| {
        let mut loss = 0.0;
        for row in 0..5 {
            let (y, cache) = m.model.forward(m.input.row(row))?;
            loss += contract(&y, r.row(row));
            if grad {
                let mut dx = vec![0.0; 4];
                m.model.backward(&cache, r.row(row), &mut dx);
                m.input.grad_mut()[row * 4..row * 4 + 4].iter_mut().zip(&dx).for_each(|(g, v)| *g += v);
            }
        }
        Ok(loss)
    })
}

fn deep_kan(rng: &mut Rng) -> Result<Vec<TensorCheck>> {
    let grid = Arc::new(SplineGrid::default());
    let model = DeepKan::random(&[3, 4, 2], grid, Activation::Silu, rng)?;
    let input = random_tensor(&[3], -0.9, 0.9, rng);
    let r = random_tensor(&[2], -1.0, 1.0, rng);
    let mut m = WithInput { model, input };
    check_gradients(&mut m, DEFAULT_STEP, |m, grad| {
        let (y, caches) = m.model.forward(m.input.data())?;
        if grad {
            let mut dx = vec![0.0; 3];
            m.model.backward(&caches, r.data(), &mut dx);
            add_into(&mut m.input, &dx);
        }
        Ok(contract(&y, r.data()))
    })
}

struct RkanProbe {
    layer: RkanSublayer,
    x: Tensor,
    h_prev: Tensor,
}

impl Parameterized for RkanProbe {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.layer.params(prefix, out);
        crate::push_params!(out, prefix, ParamKind::Trainable; "x" => self.x, "h_prev" => self.h_prev);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.layer.params_mut(prefix, out);
        crate::push_params_mut!(out, prefix, ParamKind::Trainable; "x" => self.x, "h_prev" => self.h_prev);
    }
}

fn rkan_step(rng: &mut Rng) -> Result<Vec<TensorCheck>> {
    let grid = Arc::new(SplineGrid::default());
    let layer = RkanSublayer::new(5, 3, grid, Activation::Identity, rng)?;
    let mut m = RkanProbe {
        layer,
        x: random_tensor(&[5], -1.0, 1.0, rng),
        h_prev: random_tensor(&[3], -0.5, 0.5, rng),
    };
    let (ro, rh) = (random_tensor(&[3], -1.0, 1.0, rng), random_tensor(&[3], -1.0, 1.0, rng));
    check_gradients(&mut m, DEFAULT_STEP, |m, grad| {
        let (o, h, cache) = m.layer.step(m.x.data(), m.h_prev.data())?;
        if grad {
            let (mut dx, mut dh) = (vec![0.0; 5], vec![0.0; 3]);
            m.layer.backward_step(&cache, ro.data(), rh.data(), &mut dx, &mut dh);
            add_into(&mut m.x, &dx);
            add_into(&mut m.h_prev, &dh);
        }
        Ok(contract(&o, ro.data()) + contract(&h, rh.data()))
    })
}

fn head_suite<H: TemporalHead>(head: H, steps: usize, rng: &mut Rng) -> Result<Vec<TensorCheck>> {
    let input = random_tensor(&[steps, head.input_width()], -1.0, 1.0, rng);
    let r = random_tensor(&[steps, head.output_width()], -1.0, 1.0, rng);
    let mut m = WithInput { model: head, input };
    check_gradients(&mut m, DEFAULT_STEP, |m, grad| {
        let (hs, cache) = m.model.forward(&m.input)?;
        if grad {
            let dx = m.model.backward(&cache, &r)?;
            add_into(&mut m.input, dx.data());
        }
        Ok(contract(hs.data(), r.data()))
    })
}

fn tkan_cell(rng: &mut Rng) -> Result<Vec<TensorCheck>> {
    let mut cfg = TkanConfig::new(6);
    cfg.d_sub = 4;
    cfg.rho = Activation::Silu;
    head_suite(TkanCell::new(&cfg, rng)?, 5, rng)
}

fn lstm_head(rng: &mut Rng) -> Result<Vec<TensorCheck>> {
    head_suite(LstmHead::new(8, 6, 4, rng)?, 4, rng)
}

fn transformer_head(rng: &mut Rng, pre_norm: bool) -> Result<Vec<TensorCheck>> {
    let mut cfg = TransformerConfig::new(16, 6);
    cfg.heads = 2;
    cfg.pre_norm = pre_norm;
    head_suite(TransformerHead::new(&cfg, rng)?, 4, rng)
}

fn cnn_encoder(rng: &mut Rng) -> Result<Vec<TensorCheck>> {
    let mut model = FrameEncoder::new(EncoderConfig::new([2, 3, 4, 5], 6, 16), rng)?;
    let frames = random_tensor(&[3, 1, 16, 16], 0.0, 1.0, rng);
    let r = random_tensor(&[3, 6], -1.0, 1.0, rng);
    check_gradients(&mut model, DEFAULT_STEP, |m, grad| {
        let (y, cache) = m.forward(&frames, true)?;
        if grad {
            m.backward(&cache, &r)?;
        }
        Ok(contract(y.data(), r.data()))
    })
}

fn batchnorm(rng: &mut Rng) -> Result<Vec<TensorCheck>> {
    let mut bn = BatchNorm::new(3);
    bn.gamma = random_tensor(&[3], 0.5, 1.5, rng);
    bn.beta = random_tensor(&[3], -0.5, 0.5, rng);
    let input = random_tensor(&[2, 3, 4, 4], -2.0, 2.0, rng);
    let r = random_tensor(&[2 * 3 * 16], -1.0, 1.0, rng);
    let mut m = WithInput { model: bn, input };
    check_gradients(&mut m, DEFAULT_STEP, |m, grad| {
        let (y, cache) = m.model.forward(m.input.data(), 2, 16, true)?;
        if grad {
            let dx = m.model.backward(&cache, r.data());
            add_into(&mut m.input, &dx);
        }
        Ok(contract(&y, r.data()))
    })
}

fn maxpool(rng: &mut Rng) -> Result<Vec<TensorCheck>> {
    let input = random_tensor(&[2, 6, 6], -1.0, 1.0, rng);
    let r = random_tensor(&[2 * 9], -1.0, 1.0, rng);
    let mut m = WithInput { model: NoParams, input };
    check_gradients(&mut m, DEFAULT_STEP, |m, grad| {
        let (y, arg) = maxpool2x2_planes(m.input.data(), 2, 6, 6)?;
        if grad {
            let dx = maxpool2x2_backward(&arg, r.data(), m.input.len());
            add_into(&mut m.input, &dx);
        }
        Ok(contract(&y, r.data()))
    })
}

fn classifier(rng: &mut Rng) -> Result<Vec<TensorCheck>> {
    let model = ClassifierHead::new(5, 4, 0.3, rng)?;
    let input = random_tensor(&[3, 5], -1.0, 1.0, rng);
    let seed = rng.next_u64();
    let mut m = WithInput { model, input };
    check_gradients(&mut m, DEFAULT_STEP, |m, grad| {
        let mut drop_rng = Rng::new(seed);
        let (out, cache) = m.model.forward(&m.input, true, &mut drop_rng)?;
        let loss = cross_entropy(&out.probs, 2)?;
        if grad {
            let dh = m.model.backward(&cache, &cross_entropy_grad(&out.probs, 2)?)?;
            add_into(&mut m.input, dh.data());
        }
        Ok(loss)
    })
}

/// Placeholder model for operations without parameters.
pub struct NoParams;

impl Parameterized for NoParams {
    fn params<'a>(&'a self, _: &str, _: &mut Vec<ParamRef<'a>>) {}
    fn params_mut<'a>(&'a mut self, _: &str, _: &mut Vec<ParamMut<'a>>) {}
}

type SuiteFn = fn(&mut Rng) -> Result<Vec<TensorCheck>>;

/// Every registered suite, by name.
pub const SUITES: &[(&str, SuiteFn)] = &[
    ("kan-layer", kan_layer),
    ("deep-kan", deep_kan),
    ("rkan-step", rkan_step),
    ("tkan-cell", tkan_cell),
    ("lstm-head", lstm_head),
    ("transformer-head", |rng| transformer_head(rng, true)),
    ("transformer-head-post-norm", |rng| transformer_head(rng, false)),
    ("cnn-encoder", cnn_encoder),
    ("batchnorm", batchnorm),
    ("maxpool", maxpool),
    ("classifier", classifier),
];

pub fn suite_names() -> impl Iterator<Item = &'static str> {
    SUITES.iter().map(|(n, _)| *n)
}

/// Runs one suite by name with its own seeded stream.
pub fn run_suite(name: &str, seed: u64) -> Result<SuiteReport> {
    let (idx, (_, f)) = SUITES
        .iter()
        .enumerate()
        .find(|(_, (n, _))| *n == name)
        .ok_or_else(|| crate::Error::Config(format!("unknown gradient-check suite '{name}'")))?;
    let mut rng = Rng::new(seed).split(idx as u64);
    Ok(SuiteReport { suite: name.to_string(), tensors: f(&mut rng)?, tolerance: DEFAULT_TOLERANCE })
}

pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    suite_names().map(|n| run_suite(n, seed)).collect()
}

/// One line per suite: name, worst tensor, worst relative error, verdict.
pub fn format_reports(reports: &[SuiteReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let (who, err) = r.worst().map_or(("-", 0.0), |t| (t.name.as_str(), t.rel_error));
        s.push_str(&format!(
            "{:<28} {:<24} {:>10.3e}  {}\n",
            r.suite,
            who,
            err,
            if r.passed() { "ok" } else { "FAIL" }
        ));
    }
    s
}
