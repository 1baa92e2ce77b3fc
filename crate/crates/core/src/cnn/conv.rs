use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Unfolds a `c_in × h × w` map into a `(c_in·9) × (h·w)` patch matrix
/// with zero padding; row `ic·9 + ky·3 + kx` holds the shifted plane.
fn im2col(input: &[f64], c_in: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    cols.iter_mut().for_each(|v| *v = 0.0);
    for ic in 0..c_in {
        let src = &input[ic * hw..(ic + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ic * 9 + ky * 3 + kx) * hw..(ic * 9 + ky * 3 + kx + 1) * hw];
                for_each_tap(h, w, ky, kx, |y, sy, x0, x1, sx0| {
                    row[y * w + x0..y * w + x1].copy_from_slice(&src[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                });
            }
        }
    }
}

/// Adds a patch-matrix gradient back onto the `c_in × h × w` map.
fn col2im(cols: &[f64], c_in: usize, h: usize, w: usize, out: &mut [f64]) {
    let hw = h * w;
    for ic in 0..c_in {
        let dst = &mut out[ic * hw..(ic + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ic * 9 + ky * 3 + kx) * hw..(ic * 9 + ky * 3 + kx + 1) * hw];
                for_each_tap(h, w, ky, kx, |y, sy, x0, x1, sx0| {
                    let d = &mut dst[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for (a, b) in d.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *a += b;
                    }
                });
            }
        }
    }
}

/// Calls `f(y, source_row, x0, x1, source_x0)` for every output row that
/// tap `(ky, kx)` reaches inside the map.
fn for_each_tap(h: usize, w: usize, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let (x0, x1) = (1usize.saturating_sub(kx), (w + 1).saturating_sub(kx).min(w));
    if x1 <= x0 {
        return;
    }
    let y0 = 1usize.saturating_sub(ky);
    let y1 = (h + 1).saturating_sub(ky).min(h);
    for y in y0..y1 {
        f(y, y + ky - 1, x0, x1, x0 + kx - 1);
    }
}

/// `c += a·b` for row-major `a` (`m × k`) and `b` (`k × n`), with explicit
/// strides so transposed views need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, c: &mut [f64]) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices covering every strided index of the
    // `m × k`, `k × n` and `m × n` operands.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa as isize, csa as isize,
            b.as_ptr(), rsb as isize, csb as isize,
            1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Same-padded, stride-1 3×3 cross-correlation of one `c_in × h × w` map.
/// `kernel` is `c_out × c_in × 3 × 3`; results are added into `out`.
pub fn conv3x3_acc(input: &[f64], c_in: usize, h: usize, w: usize, kernel: &[f64], c_out: usize, out: &mut [f64]) {
    let (hw, k9) = (h * w, c_in * 9);
    assert!(input.len() >= c_in * hw && kernel.len() >= c_out * k9 && out.len() >= c_out * hw);
    let mut cols = vec![0.0; k9 * hw];
    im2col(input, c_in, h, w, &mut cols);
    gemm_acc(c_out, k9, hw, kernel, k9, 1, &cols, hw, 1, out);
}

/// Backward of [`conv3x3_acc`]: adds kernel gradients into `d_kernel` and,
/// when given, input gradients into `d_input`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    c_out: usize,
    d_out: &[f64],
    d_kernel: &mut [f64],
    d_input: Option<&mut [f64]>,
) {
    let (hw, k9) = (h * w, c_in * 9);
    assert!(input.len() >= c_in * hw && kernel.len() >= c_out * k9 && d_out.len() >= c_out * hw && d_kernel.len() >= c_out * k9);
    let mut cols = vec![0.0; k9 * hw];
    im2col(input, c_in, h, w, &mut cols);
    gemm_acc(c_out, hw, k9, d_out, hw, 1, &cols, 1, hw, d_kernel);
    if let Some(di) = d_input {
        assert!(di.len() >= c_in * hw);
        cols.iter_mut().for_each(|v| *v = 0.0);
        gemm_acc(k9, c_out, hw, kernel, 1, k9, d_out, hw, 1, &mut cols);
        col2im(&cols, c_in, h, w, di);
    }
}

/// Tensor front end: `input` is `c_in × H × W`, `kernel` is `c_out × c_in × 3 × 3`.
pub fn conv2d_3x3(input: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (ks, is) = (kernel.shape(), input.shape());
    if ks.len() != 4 || ks[2] != 3 || ks[3] != 3 {
        return Err(Error::shape("conv2d_3x3", format!("kernel {ks:?} is not out×in×3×3")));
    }
    if is.len() != 3 || is[0] != ks[1] {
        return Err(Error::shape("conv2d_3x3", format!("input {is:?} for kernel {ks:?}")));
    }
    if is[1] == 0 || is[2] == 0 {
        return Err(Error::contract("conv2d_3x3 needs non-empty spatial extents"));
    }
    let (c_out, c_in, h, w) = (ks[0], ks[1], is[1], is[2]);
    let mut out = vec![0.0; c_out * h * w];
    conv3x3_acc(input.data(), c_in, h, w, kernel.data(), c_out, &mut out);
    Tensor::from_vec(&[c_out, h, w], out)
}
