use crate::error::{Error, Result};
use crate::numerics::ops::{gemv_acc, gemv_t_acc, outer_acc, sigmoid};
use crate::numerics::params::join;
use crate::numerics::{init_params, InitScheme, ParamKind, ParamMut, ParamRef, Parameterized, Rng, Tensor};
use crate::tkan::TemporalHead;
use crate::{push_params, push_params_mut};

/// One LSTM layer. Gate blocks in `W`, `U` and `b` are ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i, f, g, o]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmLayer {
    pub fn new(n_in: usize, hidden: usize, forget_bias: f64, rng: &mut Rng) -> Result<Self> {
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = forget_bias);
        Ok(LstmLayer {
            w: init_params(&[4 * hidden, n_in], InitScheme::FanAvgUniform, rng)?,
            u: init_params(&[4 * hidden, hidden], InitScheme::FanAvgUniform, rng)?,
            b,
        })
    }

    pub fn n_in(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.u.shape()[1]
    }

    /// Returns `(h_t, c_t)`.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache)> {
        let h = self.hidden();
        if x.len() != self.n_in() || h_prev.len() != h || c_prev.len() != h {
            return Err(Error::shape(
                "lstm_step",
                format!("x {} h {} c {} for layer {}→{h}", x.len(), h_prev.len(), c_prev.len(), self.n_in()),
            ));
        }
        let mut a = self.b.data().to_vec();
        gemv_acc(self.w.data(), x, &mut a);
        gemv_acc(self.u.data(), h_prev, &mut a);
        for (k, v) in a.iter_mut().enumerate() {
            *v = if (2 * h..3 * h).contains(&k) { v.tanh() } else { sigmoid(*v) };
        }
        let mut c = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for k in 0..h {
            c[k] = a[h + k] * c_prev[k] + a[k] * a[2 * h + k];
            tanh_c[k] = c[k].tanh();
            hn[k] = a[3 * h + k] * tanh_c[k];
        }
        let cache = LstmStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates: a,
            tanh_c,
        };
        Ok((hn, c, cache))
    }

    pub fn forward(&self, xs: &Tensor) -> Result<(Tensor, Vec<LstmStepCache>)> {
        if xs.shape().len() != 2 || xs.rows() == 0 {
            return Err(Error::contract(format!("LSTM input of shape {:?}", xs.shape())));
        }
        let h = self.hidden();
        let (mut hp, mut cp) = (vec![0.0; h], vec![0.0; h]);
        let mut out = Vec::with_capacity(xs.rows() * h);
        let mut caches = Vec::with_capacity(xs.rows());
        for t in 0..xs.rows() {
            let (hn, cn, cache) = self.step(xs.row(t), &hp, &cp)?;
            out.extend_from_slice(&hn);
            caches.push(cache);
            hp = hn;
            cp = cn;
        }
        Ok((Tensor::from_vec(&[xs.rows(), h], out)?, caches))
    }

    pub fn backward(&mut self, caches: &[LstmStepCache], d_hs: &Tensor) -> Result<Tensor> {
        let h = self.hidden();
        let n_in = self.n_in();
        d_hs.ensure_shape("lstm_backward", &[caches.len(), h])?;
        let mut dx_all = vec![0.0; caches.len() * n_in];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for t in (0..caches.len()).rev() {
            let s = &caches[t];
            let g = &s.gates;
            let mut da = vec![0.0; 4 * h];
            for k in 0..h {
                let dh = d_hs.row(t)[k] + dh_next[k];
                let o = g[3 * h + k];
                let dc = dc_next[k] + dh * o * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                let (ig, fg, cg) = (g[k], g[h + k], g[2 * h + k]);
                da[k] = dc * cg * ig * (1.0 - ig);
                da[h + k] = dc * s.c_prev[k] * fg * (1.0 - fg);
                da[2 * h + k] = dc * ig * (1.0 - cg * cg);
                da[3 * h + k] = dh * s.tanh_c[k] * o * (1.0 - o);
                dc_next[k] = dc * fg;
            }
            outer_acc(self.w.grad_mut(), &da, &s.x);
            outer_acc(self.u.grad_mut(), &da, &s.h_prev);
            for (gb, v) in self.b.grad_mut().iter_mut().zip(&da) {
                *gb += v;
            }
            gemv_t_acc(self.w.data(), &da, &mut dx_all[t * n_in..(t + 1) * n_in]);
            let mut dh_prev = vec![0.0; h];
            gemv_t_acc(self.u.data(), &da, &mut dh_prev);
            dh_next = dh_prev;
        }
        Tensor::from_vec(&[caches.len(), n_in], dx_all)
    }
}

impl Parameterized for LstmLayer {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        push_params!(out, prefix, ParamKind::Trainable; "w" => self.w, "u" => self.u, "b" => self.b);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        push_params_mut!(out, prefix, ParamKind::Trainable; "w" => self.w, "u" => self.u, "b" => self.b);
    }
}

/// Two stacked LSTM layers, both returning full sequences.
#[derive(Debug, Clone)]
pub struct LstmHead {
    pub layer1: LstmLayer,
    pub layer2: LstmLayer,
}

pub struct LstmHeadCache {
    hidden1: Tensor,
    steps1: Vec<LstmStepCache>,
    steps2: Vec<LstmStepCache>,
}

impl LstmHead {
    /// Full-size widths are `256 → 256 → 128`; desk runs scale them down.
    pub fn new(n_in: usize, hidden1: usize, hidden2: usize, rng: &mut Rng) -> Result<Self> {
        Ok(LstmHead {
            layer1: LstmLayer::new(n_in, hidden1, 1.0, rng)?,
            layer2: LstmLayer::new(hidden1, hidden2, 1.0, rng)?,
        })
    }
}

impl TemporalHead for LstmHead {
    type Cache = LstmHeadCache;

    fn input_width(&self) -> usize {
        self.layer1.n_in()
    }

    fn output_width(&self) -> usize {
        self.layer2.hidden()
    }

    fn forward(&self, xs: &Tensor) -> Result<(Tensor, LstmHeadCache)> {
        let (h1, steps1) = self.layer1.forward(xs)?;
        let (h2, steps2) = self.layer2.forward(&h1)?;
        h2.check_finite("LSTM head output")?;
        Ok((h2, LstmHeadCache { hidden1: h1, steps1, steps2 }))
    }

    fn backward(&mut self, cache: &LstmHeadCache, d_out: &Tensor) -> Result<Tensor> {
        let dh1 = self.layer2.backward(&cache.steps2, d_out)?;
        debug_assert_eq!(dh1.shape(), cache.hidden1.shape());
        self.layer1.backward(&cache.steps1, &dh1)
    }
}

impl Parameterized for LstmHead {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.layer1.params(&join(prefix, "lstm1"), out);
        self.layer2.params(&join(prefix, "lstm2"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.layer1.params_mut(&join(prefix, "lstm1"), out);
        self.layer2.params_mut(&join(prefix, "lstm2"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_layer_outputs_zero() {
        let mut l = LstmLayer::new(3, 2, 0.0, &mut Rng::new(1)).unwrap();
        l.w = Tensor::zeros(&[8, 3]);
        l.u = Tensor::zeros(&[8, 2]);
        let (h, c, _) = l.step(&[0.4, -0.3, 0.8], &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);
    }

    #[test]
    fn saturated_gates_keep_cell_state() {
        let mut l = LstmLayer::new(3, 2, 20.0, &mut Rng::new(2)).unwrap();
        l.b.data_mut()[0..2].iter_mut().for_each(|v| *v = -20.0);
        l.w = Tensor::zeros(&[8, 3]);
        l.u = Tensor::zeros(&[8, 2]);
        let c0 = [0.7, -0.2];
        let (_, c, _) = l.step(&[1.0, 2.0, -1.0], &[0.1, 0.3], &c0).unwrap();
        assert!((c[0] - c0[0]).abs() < 1e-8 && (c[1] - c0[1]).abs() < 1e-8);
    }

    #[test]
    fn step_matches_scalar_oracle() {
        let l = LstmLayer::new(4, 3, 1.0, &mut Rng::new(3)).unwrap();
        let mut rng = Rng::new(33);
        let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let hp: Vec<f64> = (0..3).map(|_| rng.normal() * 0.5).collect();
        let cp: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let (h, c, _) = l.step(&x, &hp, &cp).unwrap();
        let pre = |row: usize| {
            let mut s = l.b.data()[row];
            for i in 0..4 {
                s += l.w.at2(row, i) * x[i];
            }
            for i in 0..3 {
                s += l.u.at2(row, i) * hp[i];
            }
            s
        };
        for k in 0..3 {
            let ig = 1.0 / (1.0 + (-pre(k)).exp());
            let fg = 1.0 / (1.0 + (-pre(3 + k)).exp());
            let gg = pre(6 + k).tanh();
            let og = 1.0 / (1.0 + (-pre(9 + k)).exp());
            let ck = fg * cp[k] + ig * gg;
            assert!((ck - c[k]).abs() < 1e-12);
            assert!((og * ck.tanh() - h[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_head_composes_layers() {
        let head = LstmHead::new(5, 4, 3, &mut Rng::new(4)).unwrap();
        let x = [0.1, -0.4, 0.3, 0.9, -1.1];
        let xs = Tensor::from_vec(&[1, 5], x.to_vec()).unwrap();
        let (out, _) = head.forward(&xs).unwrap();
        let (h1, _, _) = head.layer1.step(&x, &[0.0; 4], &[0.0; 4]).unwrap();
        let (h2, _, _) = head.layer2.step(&h1, &[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(out.row(0), h2.as_slice());
    }

    #[test]
    fn long_saturated_run_stays_bounded() {
        let mut head = LstmHead::new(6, 5, 4, &mut Rng::new(5)).unwrap();
        for l in [&mut head.layer1, &mut head.layer2] {
            let h = l.hidden();
            l.b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 20.0);
        }
        let xs = Tensor::filled(&[50, 6], 3.0);
        let (out, _) = head.forward(&xs).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite() && v.abs() < 1.0));
    }
}
