//! Library operations against independent brute-force implementations.

mod common;

use common::random;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use tkan::baselines::LstmLayer;
use tkan::data::{length_indices, resize_bilinear, GrayFrame};
use tkan::numerics::ops::softmax;
use tkan::numerics::{Rng, Tensor};
use tkan::spline::{Activation, KanLayer, SplineGrid};
use tkan::tkan::{TkanCell, TkanConfig};
use tkan::train::metrics::cosine_similarity;

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Textbook recursive Cox-de Boor with the convention 0/0 = 0 and the
/// last non-empty interval closed on the right.
fn cox_de_boor(knots: &[f64], i: usize, p: usize, u: f64) -> f64 {
    if p == 0 {
        let last = knots[knots.len() - 1];
        let inside = knots[i] <= u && u < knots[i + 1];
        let right_end = u == last && knots[i] < knots[i + 1] && knots[i + 1] == last;
        return if inside || right_end { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let a = knots[i + p] - knots[i];
    if a > 0.0 {
        v += (u - knots[i]) / a * cox_de_boor(knots, i, p - 1, u);
    }
    let b = knots[i + p + 1] - knots[i + 1];
    if b > 0.0 {
        v += (knots[i + p + 1] - u) / b * cox_de_boor(knots, i + 1, p - 1, u);
    }
    v
}

fn cox_de_boor_exact(knots: &[BigRational], i: usize, p: usize, u: &BigRational) -> BigRational {
    if p == 0 {
        let last = &knots[knots.len() - 1];
        let inside = &knots[i] <= u && u < &knots[i + 1];
        let right_end = u == last && knots[i] < knots[i + 1] && &knots[i + 1] == last;
        return if inside || right_end { BigRational::one() } else { BigRational::zero() };
    }
    let mut v = BigRational::zero();
    let a = &knots[i + p] - &knots[i];
    if !a.is_zero() {
        v += (u - &knots[i]) / &a * cox_de_boor_exact(knots, i, p - 1, u);
    }
    let b = &knots[i + p + 1] - &knots[i + 1];
    if !b.is_zero() {
        v += (&knots[i + p + 1] - u) / &b * cox_de_boor_exact(knots, i + 1, p - 1, u);
    }
    v
}

/// Scalar edge-sum evaluation of a KAN layer with clamped inputs.
fn kan_scalar(layer: &KanLayer, x: &[f64]) -> Vec<f64> {
    let grid = layer.grid();
    let knots = grid.knots();
    let k = grid.num_basis();
    let mut out = Vec::new();
    for j in 0..layer.n_out() {
        let mut z = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let e = j * layer.n_in() + i;
            z += layer.alpha.data()[e] * xi;
            let u = xi.clamp(grid.u_min(), grid.u_max());
            for b in 0..k {
                z += layer.coeffs.data()[e * k + b] * cox_de_boor(knots, b, grid.degree(), u);
            }
        }
        out.push(match layer.rho {
            Activation::Identity => z,
            Activation::Silu => z * sigmoid(z),
        });
    }
    out
}

fn mat_vec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (r, c) = (w.shape()[0], w.shape()[1]);
    (0..r).map(|i| (0..c).map(|j| w.data()[i * c + j] * x[j]).sum()).collect()
}

#[test]
fn matmul_matches_triple_loop() {
    assert!(common::matmul_gap(11) < 1e-12);
}

#[test]
fn conv_matches_six_nested_loops() {
    assert!(common::conv_gap(12) < 1e-12);
}

#[test]
fn attention_matches_explicit_matrix() {
    assert!(common::attention_gap(13) < 1e-12);
}

fn exp_exact(z: i64) -> BigRational {
    let zr = BigRational::from_integer(BigInt::from(z));
    let mut term = BigRational::one();
    let mut sum = BigRational::one();
    for n in 1..80 {
        term = term * &zr / BigRational::from_integer(BigInt::from(n));
        sum += &term;
    }
    sum
}

#[test]
fn softmax_matches_extended_precision() {
    let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
    let e: Vec<BigRational> = (1..=3).map(exp_exact).collect();
    let total = e.iter().fold(BigRational::zero(), |acc, v| acc + v);
    for (pi, ei) in p.iter().zip(&e) {
        let exact = (ei / &total).to_f64().unwrap();
        assert!((pi - exact).abs() < 1e-15, "{pi} vs {exact}");
    }
}

#[test]
fn bspline_basis_matches_exact_recursion() {
    let grid = SplineGrid::default();
    let ideal = [-5, -5, -5, -5, -3, -1, 1, 3, 5, 5, 5, 5];
    for (a, n) in grid.knots().iter().zip(ideal) {
        assert!((a - n as f64 / 5.0).abs() < 1e-15);
    }
    let knots: Vec<BigRational> = grid.knots().iter().map(|&k| rat(k)).collect();
    for (num, den) in [(3, 10), (-1, 1), (1, 1), (0, 1), (-7, 8), (59, 100)] {
        let x = num as f64 / den as f64;
        let u = rat(x);
        let values = grid.basis(x);
        let mut sum = BigRational::zero();
        for (i, v) in values.iter().enumerate() {
            let exact = cox_de_boor_exact(&knots, i, 3, &u);
            assert!((v - exact.to_f64().unwrap()).abs() < 1e-15, "u={num}/{den} basis {i}");
            sum += exact;
        }
        assert!(sum.is_one());
    }
}

#[test]
fn kan_layer_matches_edge_sum() {
    let mut rng = Rng::new(14);
    let grid = std::sync::Arc::new(SplineGrid::default());
    for rho in [Activation::Identity, Activation::Silu] {
        let layer = KanLayer::new(4, 3, grid.clone(), rho, &mut rng).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| 1.3 * rng.normal()).collect();
            let (y, _) = layer.forward(&x).unwrap();
            for (a, b) in y.iter().zip(kan_scalar(&layer, &x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn tkan_unroll_matches_scalar_recomputation() {
    let mut rng = Rng::new(15);
    let mut cfg = TkanConfig::new(6);
    cfg.d_sub = 4;
    let mut cell = TkanCell::new(&cfg, &mut rng).unwrap();
    for sub in &mut cell.sublayers {
        sub.b.data_mut().iter_mut().for_each(|v| *v = 0.2 * rng.normal());
    }
    cell.b_o.data_mut().iter_mut().for_each(|v| *v = 0.2 * rng.normal());
    let xs = random(&mut rng, &[3, 6]);
    let (hs, _) = cell.forward(&xs).unwrap();

    let d = 6;
    let (mut h, mut c) = (vec![0.0; d], vec![0.0; d]);
    let mut h_sub = vec![vec![0.0; 4]; 2];
    for t in 0..3 {
        let x = xs.row(t);
        let mut r = Vec::new();
        for (m, sub) in cell.sublayers.iter().enumerate() {
            let (wx, wh) = (mat_vec(&sub.w_x, x), mat_vec(&sub.w_h, &h_sub[m]));
            let s: Vec<f64> = (0..4).map(|k| wx[k] + wh[k] + sub.b.data()[k]).collect();
            let o = kan_scalar(&sub.phi, &s);
            let (a, b) = (mat_vec(&sub.w_hh, &h_sub[m]), mat_vec(&sub.w_hz, &o));
            h_sub[m] = (0..4).map(|k| a[k] + b[k]).collect();
            r.extend(o);
        }
        let pre = |w: &Tensor, u: &Tensor, b: &Tensor| -> Vec<f64> {
            let (a, e) = (mat_vec(w, x), mat_vec(u, &h));
            (0..d).map(|k| a[k] + e[k] + b.data()[k]).collect()
        };
        let f = pre(&cell.w_f, &cell.u_f, &cell.b_f);
        let i = pre(&cell.w_i, &cell.u_i, &cell.b_i);
        let g = pre(&cell.w_c, &cell.u_c, &cell.b_c);
        let o = mat_vec(&cell.w_o, &r);
        for k in 0..d {
            c[k] = sigmoid(f[k]) * c[k] + sigmoid(i[k]) * g[k].tanh();
            h[k] = sigmoid(o[k] + cell.b_o.data()[k]) * c[k].tanh();
        }
        for k in 0..d {
            assert!((hs.at2(t, k) - h[k]).abs() < 1e-12, "step {t} unit {k}");
        }
    }
}

#[test]
fn lstm_step_matches_scalar_oracle() {
    let mut rng = Rng::new(16);
    let layer = LstmLayer::new(5, 3, 1.0, &mut rng).unwrap();
    let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
    let h0: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
    let c0: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
    let (h, c, _) = layer.step(&x, &h0, &c0).unwrap();
    let (a, b) = (mat_vec(&layer.w, &x), mat_vec(&layer.u, &h0));
    let z: Vec<f64> = (0..12).map(|k| a[k] + b[k] + layer.b.data()[k]).collect();
    for k in 0..3 {
        let (ig, fg, gg, og) = (sigmoid(z[k]), sigmoid(z[3 + k]), z[6 + k].tanh(), sigmoid(z[9 + k]));
        let ck = fg * c0[k] + ig * gg;
        assert!((c[k] - ck).abs() < 1e-12);
        assert!((h[k] - og * ck.tanh()).abs() < 1e-12);
    }
}

#[test]
fn cosine_matches_exact_rational() {
    let mut rng = Rng::new(17);
    for _ in 0..50 {
        let a: Vec<f64> = (0..7).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..7).map(|_| rng.normal()).collect();
        let dot = a.iter().zip(&b).fold(BigRational::zero(), |s, (x, y)| s + rat(*x) * rat(*y));
        let na = a.iter().fold(BigRational::zero(), |s, x| s + rat(*x) * rat(*x));
        let nb = b.iter().fold(BigRational::zero(), |s, x| s + rat(*x) * rat(*x));
        let cos2 = (&dot * &dot / (na * nb)).to_f64().unwrap();
        let exact = if dot.is_negative() { -cos2.sqrt() } else { cos2.sqrt() };
        assert!((cosine_similarity(&a, &b) - exact).abs() < 1e-12);
    }
}

#[test]
fn auc_matches_threshold_sweep() {
    assert!(common::auc_gap() < 1e-12);
}

#[test]
fn rankings_match_exhaustive_enumeration() {
    assert_eq!(common::ranking_mismatches(18, 10), 0);
}

#[test]
fn resize_checkerboard_matches_hand_weights() {
    let f = GrayFrame::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let g = resize_bilinear(&f, 4, 4);
    for i in 0..4 {
        for j in 0..4 {
            let (u, v) = (i as f64 / 3.0, j as f64 / 3.0);
            let expected = (1.0 - u) * v + u * (1.0 - v);
            assert!((g.at(i, j) - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn windowing_matches_arithmetic() {
    assert_eq!(length_indices(73, 50).unwrap(), (11..61).collect::<Vec<_>>());
    assert_eq!(length_indices(100, 50).unwrap(), (25..75).collect::<Vec<_>>());
    let cyc: Vec<usize> = (0..20).chain(0..20).chain(0..10).collect();
    assert_eq!(length_indices(20, 50).unwrap(), cyc);
    assert_eq!(length_indices(50, 50).unwrap(), (0..50).collect::<Vec<_>>());
}
