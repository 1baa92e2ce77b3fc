use std::sync::Arc;

use super::SplineGrid;
use crate::error::{Error, Result};

/// Learnable univariate map `φ(u) = α·u + Σ_k a_k·b_k(u)`.
#[derive(Debug, Clone)]
pub struct KanEdgeFunction {
    pub alpha: f64,
    pub coeffs: Vec<f64>,
    grid: Arc<SplineGrid>,
}

/// Gradients of one edge evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGrad {
    pub du: f64,
    pub dalpha: f64,
    pub dcoeffs: Vec<f64>,
}

impl KanEdgeFunction {
    pub fn new(alpha: f64, coeffs: Vec<f64>, grid: Arc<SplineGrid>) -> Result<Self> {
        if coeffs.len() != grid.num_basis() {
            return Err(Error::shape(
                "kan_edge",
                format!("{} coefficients for {} basis functions", coeffs.len(), grid.num_basis()),
            ));
        }
        super::super::numerics::check_finite(&coeffs, "edge coefficients")?;
        Ok(KanEdgeFunction {
            alpha,
            coeffs,
            grid,
        })
    }

    pub fn grid(&self) -> &SplineGrid {
        &self.grid
    }

    pub fn eval(&self, u: f64) -> f64 {
        edge_value(&self.grid, self.alpha, &self.coeffs, u)
    }

    pub fn grad(&self, u: f64) -> EdgeGrad {
        let e = self.grid.eval(u);
        let mut dcoeffs = vec![0.0; self.coeffs.len()];
        let mut du = self.alpha;
        for r in 0..=self.grid.degree() {
            dcoeffs[e.start + r] = e.values[r];
            du += self.coeffs[e.start + r] * e.derivs[r];
        }
        EdgeGrad {
            du,
            dalpha: u,
            dcoeffs,
        }
    }
}

pub(crate) fn edge_value(grid: &SplineGrid, alpha: f64, coeffs: &[f64], u: f64) -> f64 {
    let e = grid.eval(u);
    let mut v = alpha * u;
    for r in 0..=grid.degree() {
        v += coeffs[e.start + r] * e.values[r];
    }
    v
}
