use crate::error::{Error, Result};

/// Highest supported spline degree; keeps basis evaluation allocation-free.
pub const MAX_DEGREE: usize = 7;

/// Open-uniform (clamped) knot vector on `[u_min, u_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineGrid {
    u_min: f64,
    u_max: f64,
    intervals: usize,
    degree: usize,
    knots: Vec<f64>,
}

/// Nonzero basis values at one point: entries `start..=start+degree`.
#[derive(Debug, Clone, Copy)]
pub struct BasisEval {
    pub start: usize,
    pub values: [f64; MAX_DEGREE + 1],
    /// Derivatives w.r.t. the *unclamped* input; zero outside the domain.
    pub derivs: [f64; MAX_DEGREE + 1],
}

impl Default for SplineGrid {
    fn default() -> Self {
        SplineGrid::new(-1.0, 1.0, 5, 3).expect("default grid is valid")
    }
}

impl SplineGrid {
    pub fn new(u_min: f64, u_max: f64, intervals: usize, degree: usize) -> Result<Self> {
        if intervals < 1 {
            return Err(Error::contract("spline grid needs at least one interval"));
        }
        if degree > MAX_DEGREE {
            return Err(Error::contract(format!(
                "spline degree {degree} exceeds {MAX_DEGREE}"
            )));
        }
        if !(u_min.is_finite() && u_max.is_finite() && u_min < u_max) {
            return Err(Error::contract(format!(
                "invalid spline domain [{u_min}, {u_max}]"
            )));
        }
        let mut knots = Vec::with_capacity(intervals + 2 * degree + 1);
        knots.extend(std::iter::repeat_n(u_min, degree));
        for j in 0..=intervals {
            knots.push(if j == intervals {
                u_max
            } else {
                u_min + (u_max - u_min) * j as f64 / intervals as f64
            });
        }
        knots.extend(std::iter::repeat_n(u_max, degree));
        Ok(SplineGrid {
            u_min,
            u_max,
            intervals,
            degree,
            knots,
        })
    }

    pub fn u_min(&self) -> f64 {
        self.u_min
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions, `G + p`.
    pub fn num_basis(&self) -> usize {
        self.intervals + self.degree
    }

    /// Knot span `i` with `knots[i] <= u < knots[i+1]`; the right end of the
    /// domain belongs to the last non-empty span.
    fn span(&self, u: f64) -> usize {
        let p = self.degree;
        let last = p + self.intervals - 1;
        if u >= self.u_max {
            return last;
        }
        let h = (self.u_max - self.u_min) / self.intervals as f64;
        let mut i = (p + ((u - self.u_min) / h).floor().max(0.0) as usize).min(last);
        while i > p && u < self.knots[i] {
            i -= 1;
        }
        while i < last && u >= self.knots[i + 1] {
            i += 1;
        }
        i
    }

    /// Cox-de Boor triangle for degree `deg` on span `i`.
    fn basis_funs(&self, i: usize, u: f64, deg: usize, out: &mut [f64; MAX_DEGREE + 1]) {
        let k = &self.knots;
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        out[0] = 1.0;
        for j in 1..=deg {
            left[j] = u - k[i + 1 - j];
            right[j] = k[i + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Values and first derivatives of the `p+1` active basis functions.
    /// Inputs outside the domain are clamped and get zero derivative.
    pub fn eval(&self, u: f64) -> BasisEval {
        let p = self.degree;
        let inside = u >= self.u_min && u <= self.u_max;
        let uc = u.clamp(self.u_min, self.u_max);
        let i = self.span(uc);
        let mut values = [0.0; MAX_DEGREE + 1];
        self.basis_funs(i, uc, p, &mut values);
        let mut derivs = [0.0; MAX_DEGREE + 1];
        if p > 0 && inside {
            // degree p-1 functions active on span i are N_{i-p+1..=i, p-1}
            let mut lower = [0.0; MAX_DEGREE + 1];
            self.basis_funs(i, uc, p - 1, &mut lower);
            let k = &self.knots;
            let pf = p as f64;
            for (r, d) in derivs.iter_mut().enumerate().take(p + 1) {
                let idx = i - p + r;
                // N_{idx, p-1} sits at lower[r - 1], N_{idx+1, p-1} at lower[r]
                let a = if r >= 1 {
                    let den = k[idx + p] - k[idx];
                    if den > 0.0 { lower[r - 1] / den } else { 0.0 }
                } else {
                    0.0
                };
                let b = if r < p {
                    let den = k[idx + p + 1] - k[idx + 1];
                    if den > 0.0 { lower[r] / den } else { 0.0 }
                } else {
                    0.0
                };
                *d = pf * (a - b);
            }
        }
        BasisEval {
            start: i - p,
            values,
            derivs,
        }
    }

    /// Dense basis vector of length `K`.
    pub fn basis(&self, u: f64) -> Vec<f64> {
        let e = self.eval(u);
        let mut out = vec![0.0; self.num_basis()];
        for r in 0..=self.degree {
            out[e.start + r] = e.values[r];
        }
        out
    }

    /// Dense derivative vector of length `K`.
    pub fn basis_derivs(&self, u: f64) -> Vec<f64> {
        let e = self.eval(u);
        let mut out = vec![0.0; self.num_basis()];
        for r in 0..=self.degree {
            out[e.start + r] = e.derivs[r];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knot_vector_shape() {
        let g = SplineGrid::default();
        assert_eq!(g.knots().len(), 5 + 2 * 3 + 1);
        assert!(g.knots().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(g.num_basis(), 8);
    }

    #[test]
    fn degenerate_grid_is_rejected() {
        assert!(SplineGrid::new(-1.0, 1.0, 0, 3).is_err());
        assert!(SplineGrid::new(1.0, 1.0, 4, 3).is_err());
    }

    #[test]
    fn degree_zero_is_an_indicator() {
        let g = SplineGrid::new(-1.0, 1.0, 4, 0).unwrap();
        let b = g.basis(-0.2);
        assert_eq!(b, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(g.basis(1.0), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn partition_of_unity_and_local_support() {
        let g = SplineGrid::default();
        for s in 0..=2000 {
            let u = -1.0 + 2.0 * s as f64 / 2000.0;
            let b = g.basis(u);
            assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(b.iter().all(|&v| v >= 0.0));
            assert!(b.iter().filter(|&&v| v != 0.0).count() <= 4);
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let g = SplineGrid::default();
        let h = 1e-6;
        for &u in &[-0.93, -0.41, 0.05, 0.3, 0.77] {
            let d = g.basis_derivs(u);
            let bp = g.basis(u + h);
            let bm = g.basis(u - h);
            for k in 0..g.num_basis() {
                let num = (bp[k] - bm[k]) / (2.0 * h);
                assert!((num - d[k]).abs() < 1e-7, "u={u} k={k}");
            }
        }
    }

    #[test]
    fn outside_domain_is_clamped_with_zero_slope() {
        let g = SplineGrid::default();
        assert_eq!(g.basis(3.0), g.basis(1.0));
        assert_eq!(g.basis(-7.0), g.basis(-1.0));
        assert!(g.basis_derivs(3.0).iter().all(|&d| d == 0.0));
    }
}
