use std::sync::Arc;

use super::rkan::{RkanStepCache, RkanSublayer};
use crate::error::{Error, Result};
use crate::numerics::ops::{gemv_acc, gemv_t_acc, outer_acc, sigmoid};
use crate::numerics::params::join;
use crate::numerics::{
    check_finite, init_params, InitScheme, ParamKind, ParamMut, ParamRef, Parameterized, Rng, Tensor,
};
use crate::spline::{Activation, SplineGrid};
use crate::{push_params, push_params_mut};

#[derive(Debug, Clone, PartialEq)]
pub struct TkanConfig {
    pub d: usize,
    pub d_sub: usize,
    pub sublayers: usize,
    pub grid: SplineGrid,
    pub rho: Activation,
    pub forget_bias: f64,
}

impl TkanConfig {
    /// `M = 2` sublayers of width `d/2` with the default spline grid.
    pub fn new(d: usize) -> Self {
        TkanConfig {
            d,
            d_sub: (d / 2).max(1),
            sublayers: 2,
            grid: SplineGrid::default(),
            rho: Activation::Identity,
            forget_bias: 1.0,
        }
    }
}

/// Gated long-term memory whose output gate is driven by the concatenated
/// responses of `M` parallel RKAN sublayers.
///
/// ```text
/// f_t = σ(W_f x_t + U_f h_{t-1} + b_f)
/// i_t = σ(W_i x_t + U_i h_{t-1} + b_i)
/// c̃_t = tanh(W_c x_t + U_c h_{t-1} + b_c)
/// o_t = σ(W_o r_t + b_o),   r_t = [õ_1,t ; … ; õ_M,t]
/// c_t = f_t ⊙ c_{t-1} + i_t ⊙ c̃_t
/// h_t = o_t ⊙ tanh(c_t)
/// ```
#[derive(Debug, Clone)]
pub struct TkanCell {
    d: usize,
    d_sub: usize,
    pub sublayers: Vec<RkanSublayer>,
    pub w_f: Tensor,
    pub w_i: Tensor,
    pub w_c: Tensor,
    pub u_f: Tensor,
    pub u_i: Tensor,
    pub u_c: Tensor,
    pub b_f: Tensor,
    pub b_i: Tensor,
    pub b_c: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TkanState {
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    pub h_sub: Vec<Vec<f64>>,
}

impl TkanState {
    pub fn zeros(d: usize, d_sub: usize, m: usize) -> Self {
        TkanState {
            c: vec![0.0; d],
            h: vec![0.0; d],
            h_sub: vec![vec![0.0; d_sub]; m],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TkanStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    r: Vec<f64>,
    sub: Vec<RkanStepCache>,
}

#[derive(Debug, Clone)]
pub struct TkanSeqCache {
    steps: Vec<TkanStepCache>,
}

impl TkanCell {
    pub fn new(cfg: &TkanConfig, rng: &mut Rng) -> Result<Self> {
        let (d, ds, m) = (cfg.d, cfg.d_sub, cfg.sublayers);
        if d == 0 || ds == 0 || m == 0 {
            return Err(Error::contract("TKAN widths and sublayer count must be positive"));
        }
        let grid = Arc::new(cfg.grid.clone());
        let sublayers = (0..m)
            .map(|_| RkanSublayer::new(d, ds, grid.clone(), cfg.rho, rng))
            .collect::<Result<Vec<_>>>()?;
        let mut w = || init_params(&[d, d], InitScheme::FanAvgUniform, rng);
        let (w_f, w_i, w_c, u_f, u_i, u_c) = (w()?, w()?, w()?, w()?, w()?, w()?);
        Ok(TkanCell {
            d,
            d_sub: ds,
            sublayers,
            w_f,
            w_i,
            w_c,
            u_f,
            u_i,
            u_c,
            b_f: Tensor::filled(&[d], cfg.forget_bias),
            b_i: Tensor::zeros(&[d]),
            b_c: Tensor::zeros(&[d]),
            w_o: init_params(&[d, m * ds], InitScheme::FanAvgUniform, rng)?,
            b_o: Tensor::zeros(&[d]),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d_sub(&self) -> usize {
        self.d_sub
    }

    pub fn zero_state(&self) -> TkanState {
        TkanState::zeros(self.d, self.d_sub, self.sublayers.len())
    }

    pub fn step(&self, x: &[f64], state: &TkanState, t: usize) -> Result<(TkanState, TkanStepCache)> {
        let d = self.d;
        if x.len() != d || state.h.len() != d || state.c.len() != d || state.h_sub.len() != self.sublayers.len() {
            return Err(Error::shape(
                "tkan_step",
                format!("input {} / state {} for width {d}", x.len(), state.h.len()),
            ));
        }
        let mut r = Vec::with_capacity(self.sublayers.len() * self.d_sub);
        let mut h_sub = Vec::with_capacity(self.sublayers.len());
        let mut sub = Vec::with_capacity(self.sublayers.len());
        for (m, layer) in self.sublayers.iter().enumerate() {
            let (o, h, c) = layer.step(x, &state.h_sub[m])?;
            check_finite(&o, &format!("RKAN sublayer {m} response at step {t}"))?;
            r.extend_from_slice(&o);
            h_sub.push(h);
            sub.push(c);
        }
        let gate = |w: &Tensor, u: &Tensor, b: &Tensor| {
            let mut a = b.data().to_vec();
            gemv_acc(w.data(), x, &mut a);
            gemv_acc(u.data(), &state.h, &mut a);
            a
        };
        let f: Vec<f64> = gate(&self.w_f, &self.u_f, &self.b_f).into_iter().map(sigmoid).collect();
        check_finite(&f, &format!("forget gate at step {t}"))?;
        let i: Vec<f64> = gate(&self.w_i, &self.u_i, &self.b_i).into_iter().map(sigmoid).collect();
        check_finite(&i, &format!("input gate at step {t}"))?;
        let g: Vec<f64> = gate(&self.w_c, &self.u_c, &self.b_c).into_iter().map(f64::tanh).collect();
        check_finite(&g, &format!("candidate at step {t}"))?;
        let mut ao = self.b_o.data().to_vec();
        gemv_acc(self.w_o.data(), &r, &mut ao);
        let o: Vec<f64> = ao.into_iter().map(sigmoid).collect();
        check_finite(&o, &format!("output gate at step {t}"))?;

        let c: Vec<f64> = (0..d).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..d).map(|k| o[k] * tanh_c[k]).collect();
        check_finite(&c, &format!("cell state at step {t}"))?;

        let cache = TkanStepCache {
            x: x.to_vec(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            f,
            i,
            g,
            o,
            tanh_c,
            r,
            sub,
        };
        Ok((TkanState { c, h, h_sub }, cache))
    }

    /// Unrolls over `X` (`T × d`) from the zero state; returns `H` (`T × d`).
    pub fn forward(&self, xs: &Tensor) -> Result<(Tensor, TkanSeqCache)> {
        let (h, _, cache) = self.forward_with_state(xs)?;
        Ok((h, cache))
    }

    /// As [`forward`](Self::forward), also returning the final state.
    pub fn forward_with_state(&self, xs: &Tensor) -> Result<(Tensor, TkanState, TkanSeqCache)> {
        if xs.shape().len() != 2 || xs.shape()[1] != self.d {
            return Err(Error::shape("tkan_forward", format!("input {:?}", xs.shape())));
        }
        let t_len = xs.rows();
        if t_len == 0 {
            return Err(Error::contract("tkan_forward needs at least one time step"));
        }
        let mut state = self.zero_state();
        let mut out = Vec::with_capacity(t_len * self.d);
        let mut steps = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (next, cache) = self.step(xs.row(t), &state, t)?;
            out.extend_from_slice(&next.h);
            steps.push(cache);
            state = next;
        }
        Ok((Tensor::from_vec(&[t_len, self.d], out)?, state, TkanSeqCache { steps }))
    }

    /// Full-horizon BPTT. Accumulates parameter gradients; returns `∂L/∂X`.
    pub fn backward(&mut self, cache: &TkanSeqCache, d_hs: &Tensor) -> Result<Tensor> {
        let d = self.d;
        let ds = self.d_sub;
        let m = self.sublayers.len();
        let t_len = cache.steps.len();
        d_hs.ensure_shape("tkan_backward", &[t_len, d])?;
        let mut dx_all = vec![0.0; t_len * d];
        let mut dh_next = vec![0.0; d];
        let mut dc_next = vec![0.0; d];
        let mut dsub_next = vec![vec![0.0; ds]; m];

        for t in (0..t_len).rev() {
            let s = &cache.steps[t];
            let dh: Vec<f64> = d_hs.row(t).iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let mut dc = dc_next.clone();
            let mut da_o = vec![0.0; d];
            for k in 0..d {
                let d_o = dh[k] * s.tanh_c[k];
                dc[k] += dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                da_o[k] = d_o * s.o[k] * (1.0 - s.o[k]);
            }
            let mut da_f = vec![0.0; d];
            let mut da_i = vec![0.0; d];
            let mut da_c = vec![0.0; d];
            for k in 0..d {
                da_f[k] = dc[k] * s.c_prev[k] * s.f[k] * (1.0 - s.f[k]);
                da_i[k] = dc[k] * s.g[k] * s.i[k] * (1.0 - s.i[k]);
                da_c[k] = dc[k] * s.i[k] * (1.0 - s.g[k] * s.g[k]);
                dc_next[k] = dc[k] * s.f[k];
            }

            let dx = &mut dx_all[t * d..(t + 1) * d];
            let mut dh_prev = vec![0.0; d];
            for (da, w, u, b) in [
                (&da_f, &mut self.w_f, &mut self.u_f, &mut self.b_f),
                (&da_i, &mut self.w_i, &mut self.u_i, &mut self.b_i),
                (&da_c, &mut self.w_c, &mut self.u_c, &mut self.b_c),
            ] {
                outer_acc(w.grad_mut(), da, &s.x);
                outer_acc(u.grad_mut(), da, &s.h_prev);
                for (g, v) in b.grad_mut().iter_mut().zip(da.iter()) {
                    *g += v;
                }
                gemv_t_acc(w.data(), da, dx);
                gemv_t_acc(u.data(), da, &mut dh_prev);
            }

            outer_acc(self.w_o.grad_mut(), &da_o, &s.r);
            for (g, v) in self.b_o.grad_mut().iter_mut().zip(&da_o) {
                *g += v;
            }
            let mut dr = vec![0.0; m * ds];
            gemv_t_acc(self.w_o.data(), &da_o, &mut dr);

            for (mi, layer) in self.sublayers.iter_mut().enumerate() {
                let mut dprev = vec![0.0; ds];
                layer.backward_step(&s.sub[mi], &dr[mi * ds..(mi + 1) * ds], &dsub_next[mi], dx, &mut dprev);
                dsub_next[mi] = dprev;
            }
            dh_next = dh_prev;
        }
        Tensor::from_vec(&[t_len, d], dx_all)
    }
}

impl Parameterized for TkanCell {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        for (m, s) in self.sublayers.iter().enumerate() {
            s.params(&join(prefix, &format!("rkan{m}")), out);
        }
        push_params!(out, prefix, ParamKind::Trainable;
            "w_f" => self.w_f, "w_i" => self.w_i, "w_c" => self.w_c,
            "u_f" => self.u_f, "u_i" => self.u_i, "u_c" => self.u_c,
            "b_f" => self.b_f, "b_i" => self.b_i, "b_c" => self.b_c,
            "w_o" => self.w_o, "b_o" => self.b_o);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        for (m, s) in self.sublayers.iter_mut().enumerate() {
            s.params_mut(&join(prefix, &format!("rkan{m}")), out);
        }
        push_params_mut!(out, prefix, ParamKind::Trainable;
            "w_f" => self.w_f, "w_i" => self.w_i, "w_c" => self.w_c,
            "u_f" => self.u_f, "u_i" => self.u_i, "u_c" => self.u_c,
            "b_f" => self.b_f, "b_i" => self.b_i, "b_c" => self.b_c,
            "w_o" => self.w_o, "b_o" => self.b_o);
    }
}
