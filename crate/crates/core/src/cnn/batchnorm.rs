use crate::error::{Error, Result};
use crate::numerics::{ParamKind, ParamMut, ParamRef, Parameterized, Tensor};
use crate::{push_params, push_params_mut};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel normalization over batch × spatial positions of an
/// `N × C × S` array, with learned scale/shift and running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub(crate) xhat: Vec<f64>,
    inv_std: Vec<f64>,
    n: usize,
    s: usize,
    training: bool,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes `x` (`n × C × s`). Training mode uses batch statistics;
    /// fold them into the running averages with [`BatchNorm::update_running`].
    pub fn forward(&self, x: &[f64], n: usize, s: usize, training: bool) -> Result<(Vec<f64>, BatchNormCache)> {
        let c = self.channels();
        if x.len() != n * c * s {
            return Err(Error::shape("batchnorm", format!("{} values for {n}×{c}×{s}", x.len())));
        }
        if training && n < 2 {
            return Err(Error::contract("batch normalization in training mode needs a batch of at least 2"));
        }
        let m = (n * s) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if training {
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * s;
                    mean[ch] += x[base..base + s].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * s;
                    var[ch] += x[base..base + s].iter().map(|v| (v - mean[ch]) * (v - mean[ch])).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
        } else {
            mean.copy_from_slice(self.running_mean.data());
            var.copy_from_slice(self.running_var.data());
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                let (g, bt) = (self.gamma.data()[ch], self.beta.data()[ch]);
                for k in base..base + s {
                    let xh = (x[k] - mean[ch]) * inv_std[ch];
                    xhat[k] = xh;
                    y[k] = g * xh + bt;
                }
            }
        }
        let (batch_mean, batch_var) = if training { (mean, var) } else { (Vec::new(), Vec::new()) };
        Ok((y, BatchNormCache { xhat, inv_std, n, s, training, batch_mean, batch_var }))
    }

    pub fn update_running(&mut self, cache: &BatchNormCache) {
        if !cache.training {
            return;
        }
        let mom = self.momentum;
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = mom * *r + (1.0 - mom) * b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = mom * *r + (1.0 - mom) * b;
        }
    }

    /// Recovers the affine output from a cache (used to rebuild rectifier masks).
    pub(crate) fn output_at(&self, cache: &BatchNormCache, k: usize) -> f64 {
        let ch = (k / cache.s) % self.channels();
        self.gamma.data()[ch] * cache.xhat[k] + self.beta.data()[ch]
    }

    pub fn backward(&mut self, cache: &BatchNormCache, dy: &[f64]) -> Vec<f64> {
        let c = self.channels();
        let (n, s) = (cache.n, cache.s);
        let m = (n * s) as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                for k in base..base + s {
                    sum_dy[ch] += dy[k];
                    sum_dy_xhat[ch] += dy[k] * cache.xhat[k];
                }
            }
        }
        for ch in 0..c {
            self.gamma.grad_mut()[ch] += sum_dy_xhat[ch];
            self.beta.grad_mut()[ch] += sum_dy[ch];
        }
        let gamma = self.gamma.data();
        let mut dx = vec![0.0; dy.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                let scale = gamma[ch] * cache.inv_std[ch];
                for k in base..base + s {
                    dx[k] = if cache.training {
                        scale * (dy[k] - sum_dy[ch] / m - cache.xhat[k] * sum_dy_xhat[ch] / m)
                    } else {
                        scale * dy[k]
                    };
                }
            }
        }
        dx
    }
}

impl Parameterized for BatchNorm {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        push_params!(out, prefix, ParamKind::Trainable; "gamma" => self.gamma, "beta" => self.beta);
        push_params!(out, prefix, ParamKind::Buffer;
            "running_mean" => self.running_mean, "running_var" => self.running_var);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        push_params_mut!(out, prefix, ParamKind::Trainable; "gamma" => self.gamma, "beta" => self.beta);
        push_params_mut!(out, prefix, ParamKind::Buffer;
            "running_mean" => self.running_mean, "running_var" => self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn training_output_is_standardized_per_channel() {
        let mut rng = Rng::new(1);
        let (n, c, s) = (3, 2, 5);
        let x: Vec<f64> = (0..n * c * s).map(|_| 3.0 + 2.0 * rng.normal()).collect();
        let bn = BatchNorm::new(c);
        let (y, _) = bn.forward(&x, n, s, true).unwrap();
        for ch in 0..c {
            let vals: Vec<f64> = (0..n).flat_map(|b| y[(b * c + ch) * s..(b * c + ch + 1) * s].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-3, "var {v}");
        }
    }

    #[test]
    fn normalized_input_passes_through() {
        let x = vec![-1.0, 1.0, -1.0, 1.0];
        let bn = BatchNorm::new(1);
        let (y, _) = bn.forward(&x, 4, 1, true).unwrap();
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn single_sample_training_batch_is_rejected() {
        let bn = BatchNorm::new(2);
        assert!(bn.forward(&[0.0; 8], 1, 4, true).is_err());
        assert!(bn.forward(&[0.0; 8], 1, 4, false).is_ok());
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let mut bn = BatchNorm::new(1);
        let (_, cache) = bn.forward(&[1.0, 3.0], 2, 1, true).unwrap();
        bn.update_running(&cache);
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-15);
        assert!(bn.running_var.data().iter().all(|&v| v >= 0.0));
    }
}
