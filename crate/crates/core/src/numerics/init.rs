use super::{Rng, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    FanAvgUniform,
    /// Normal with the given standard deviation.
    Normal(f64),
    Zeros,
    Ones,
    Constant(f64),
}

/// `(fan_in, fan_out)` for a weight of the given shape. Matrices are
/// `out × in`; 4-D kernels are `out × in × kh × kw`.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (0, 0),
        [n] => (*n, *n),
        [out, inp] => (*inp, *out),
        [out, inp, rest @ ..] => {
            let r: usize = rest.iter().product();
            (inp * r, out * r)
        }
    }
}

pub fn init_params(shape: &[usize], scheme: InitScheme, rng: &mut Rng) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data = match scheme {
        InitScheme::Zeros => vec![0.0; n],
        InitScheme::Ones => vec![1.0; n],
        InitScheme::Constant(c) => vec![c; n],
        InitScheme::Normal(std) => (0..n).map(|_| std * rng.normal()).collect(),
        InitScheme::FanAvgUniform => {
            let (fi, fo) = fans(shape);
            if fi == 0 || fo == 0 {
                return Err(Error::contract(format!(
                    "fan-avg init of shape {shape:?} has zero fan"
                )));
            }
            let bound = (6.0 / (fi + fo) as f64).sqrt();
            (0..n).map(|_| rng.uniform_in(-bound, bound)).collect()
        }
    };
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_scheme() {
        let t = init_params(&[3, 4], InitScheme::Zeros, &mut Rng::new(0)).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fan_avg_statistics_and_bounds() {
        let t = init_params(&[100, 100], InitScheme::FanAvgUniform, &mut Rng::new(11)).unwrap();
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        let bound = (6.0f64 / 200.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn same_seed_same_tensor() {
        let a = init_params(&[7, 5], InitScheme::FanAvgUniform, &mut Rng::new(9)).unwrap();
        let b = init_params(&[7, 5], InitScheme::FanAvgUniform, &mut Rng::new(9)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn zero_fan_is_rejected() {
        assert!(init_params(&[0, 5], InitScheme::FanAvgUniform, &mut Rng::new(0)).is_err());
    }
}
