use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::ops::{gemv_acc, gemv_t_acc, outer_acc};
use crate::numerics::params::join;
use crate::numerics::{init_params, InitScheme, ParamKind, ParamMut, ParamRef, Parameterized, Rng, Tensor};
use crate::spline::{Activation, KanCache, KanLayer, SplineGrid};
use crate::{push_params, push_params_mut};

/// One short-term recurrent KAN sublayer:
///
/// ```text
/// s_t = W_x x_t + W_h h̃_{t-1} + b
/// õ_t = φ(s_t)
/// h̃_t = W_hh h̃_{t-1} + W_hz õ_t
/// ```
#[derive(Debug, Clone)]
pub struct RkanSublayer {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
    pub phi: KanLayer,
    pub w_hh: Tensor,
    pub w_hz: Tensor,
}

#[derive(Debug, Clone)]
pub struct RkanStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    kan: KanCache,
    o: Vec<f64>,
}

impl RkanSublayer {
    pub fn new(d: usize, d_sub: usize, grid: Arc<SplineGrid>, rho: Activation, rng: &mut Rng) -> Result<Self> {
        Ok(RkanSublayer {
            w_x: init_params(&[d_sub, d], InitScheme::FanAvgUniform, rng)?,
            w_h: init_params(&[d_sub, d_sub], InitScheme::FanAvgUniform, rng)?,
            b: Tensor::zeros(&[d_sub]),
            phi: KanLayer::new(d_sub, d_sub, grid, rho, rng)?,
            w_hh: init_params(&[d_sub, d_sub], InitScheme::FanAvgUniform, rng)?,
            w_hz: init_params(&[d_sub, d_sub], InitScheme::FanAvgUniform, rng)?,
        })
    }

    pub fn input_width(&self) -> usize {
        self.w_x.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.w_x.shape()[0]
    }

    /// Returns `(õ_t, h̃_t)`.
    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>, RkanStepCache)> {
        let ds = self.width();
        if x.len() != self.input_width() || h_prev.len() != ds {
            return Err(Error::shape(
                "rkan_step",
                format!(
                    "x {} (expects {}), state {} (expects {ds})",
                    x.len(),
                    self.input_width(),
                    h_prev.len()
                ),
            ));
        }
        let mut s = self.b.data().to_vec();
        gemv_acc(self.w_x.data(), x, &mut s);
        gemv_acc(self.w_h.data(), h_prev, &mut s);
        let (o, kan) = self.phi.forward(&s)?;
        let mut h = vec![0.0; ds];
        gemv_acc(self.w_hh.data(), h_prev, &mut h);
        gemv_acc(self.w_hz.data(), &o, &mut h);
        let cache = RkanStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            kan,
            o: o.clone(),
        };
        Ok((o, h, cache))
    }

    /// Backward of one step. `d_o` is the gradient reaching `õ_t` from
    /// outside the sublayer, `d_h` the gradient on `h̃_t`.
    pub fn backward_step(
        &mut self,
        cache: &RkanStepCache,
        d_o: &[f64],
        d_h: &[f64],
        dx: &mut [f64],
        dh_prev: &mut [f64],
    ) {
        let ds = self.width();
        outer_acc(self.w_hh.grad_mut(), d_h, &cache.h_prev);
        outer_acc(self.w_hz.grad_mut(), d_h, &cache.o);
        gemv_t_acc(self.w_hh.data(), d_h, dh_prev);
        let mut d_out = d_o.to_vec();
        gemv_t_acc(self.w_hz.data(), d_h, &mut d_out);

        let mut d_s = vec![0.0; ds];
        self.phi.backward(&cache.kan, &d_out, &mut d_s);

        outer_acc(self.w_x.grad_mut(), &d_s, &cache.x);
        outer_acc(self.w_h.grad_mut(), &d_s, &cache.h_prev);
        for (g, v) in self.b.grad_mut().iter_mut().zip(&d_s) {
            *g += v;
        }
        gemv_t_acc(self.w_x.data(), &d_s, dx);
        gemv_t_acc(self.w_h.data(), &d_s, dh_prev);
    }
}

impl Parameterized for RkanSublayer {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        push_params!(out, prefix, ParamKind::Trainable;
            "w_x" => self.w_x, "w_h" => self.w_h, "b" => self.b);
        self.phi.params(&join(prefix, "phi"), out);
        push_params!(out, prefix, ParamKind::Trainable; "w_hh" => self.w_hh, "w_hz" => self.w_hz);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        push_params_mut!(out, prefix, ParamKind::Trainable;
            "w_x" => self.w_x, "w_h" => self.w_h, "b" => self.b);
        self.phi.params_mut(&join(prefix, "phi"), out);
        push_params_mut!(out, prefix, ParamKind::Trainable; "w_hh" => self.w_hh, "w_hz" => self.w_hz);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(d: usize, ds: usize, seed: u64) -> RkanSublayer {
        RkanSublayer::new(d, ds, Arc::new(SplineGrid::default()), Activation::Identity, &mut Rng::new(seed)).unwrap()
    }

    fn zero(t: &mut Tensor) {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }

    /// φ with α = 1 on the diagonal and no spline terms.
    fn identity_phi(p: &mut RkanSublayer) {
        let n = p.width();
        p.phi.alpha = Tensor::identity(n);
        zero(&mut p.phi.coeffs);
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let mut p = sub(4, 4, 1);
        for t in [&mut p.w_x, &mut p.w_h, &mut p.b, &mut p.w_hh, &mut p.w_hz] {
            zero(t);
        }
        identity_phi(&mut p);
        let (o, h, _) = p.step(&[0.3, -0.2, 0.9, 1.4], &[0.0; 4]).unwrap();
        assert!(o.iter().chain(&h).all(|&v| v == 0.0));
    }

    #[test]
    fn pass_through_configuration() {
        let mut p = sub(3, 3, 2);
        p.w_x = Tensor::identity(3);
        zero(&mut p.w_h);
        zero(&mut p.b);
        zero(&mut p.w_hh);
        p.w_hz = Tensor::identity(3);
        identity_phi(&mut p);
        let x = [0.25, -1.5, 2.0];
        let (_, h, _) = p.step(&x, &[0.7, 0.1, -0.3]).unwrap();
        assert_eq!(h, x.to_vec());
    }

    #[test]
    fn step_matches_scalar_recomputation() {
        let p = sub(5, 3, 3);
        let mut rng = Rng::new(33);
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let hp: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let (o, h, _) = p.step(&x, &hp).unwrap();
        let mut s = [0.0; 3];
        for j in 0..3 {
            s[j] = p.b.data()[j];
            for i in 0..5 {
                s[j] += p.w_x.at2(j, i) * x[i];
            }
            for i in 0..3 {
                s[j] += p.w_h.at2(j, i) * hp[i];
            }
        }
        let mut oo = [0.0; 3];
        for j in 0..3 {
            for i in 0..3 {
                oo[j] += p.phi.edge(j, i).eval(s[i]);
            }
            assert!((oo[j] - o[j]).abs() < 1e-12);
        }
        for j in 0..3 {
            let mut v = 0.0;
            for i in 0..3 {
                v += p.w_hh.at2(j, i) * hp[i] + p.w_hz.at2(j, i) * oo[i];
            }
            assert!((v - h[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = sub(4, 2, 4);
        assert!(p.step(&[0.0; 3], &[0.0; 2]).is_err());
        assert!(p.step(&[0.0; 4], &[0.0; 3]).is_err());
    }
}
