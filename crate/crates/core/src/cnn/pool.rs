use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// 2×2 max pooling of `planes` stacked `h × w` maps. Returns the pooled
/// values and, per output, the flat input index that won.
pub fn maxpool2x2_planes(x: &[f64], planes: usize, h: usize, w: usize) -> Result<(Vec<f64>, Vec<u32>)> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::contract(format!("max pooling needs even spatial dims, got {h}×{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    let mut arg = vec![0u32; planes * oh * ow];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let i0 = base + 2 * y * w + 2 * xo;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                let o = (p * oh + y) * ow + xo;
                out[o] = x[best];
                arg[o] = best as u32;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2x2_backward(arg: &[u32], d_out: &[f64], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&a, &g) in arg.iter().zip(d_out) {
        dx[a as usize] += g;
    }
    dx
}

/// Tensor front end for a `c × H × W` map.
pub fn maxpool_2x2(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::shape("maxpool_2x2", format!("expected c×H×W, got {s:?}")));
    }
    let (out, _) = maxpool2x2_planes(x.data(), s[0], s[1], s[2])?;
    Tensor::from_vec(&[s[0], s[1] / 2, s[2] / 2], out)
}

/// Spatial mean of one plane, summed in sorted order so the result does not
/// depend on where values sit in the map.
pub fn plane_mean(p: &[f64]) -> f64 {
    let mut v = p.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / p.len() as f64
}

/// Per-channel spatial mean of a `c × H × W` map.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 || s[1] * s[2] == 0 {
        return Err(Error::shape("global_avg_pool", format!("expected non-empty c×H×W, got {s:?}")));
    }
    let hw = s[1] * s[2];
    let out = x.data().chunks(hw).map(plane_mean).collect();
    Tensor::from_vec(&[s[0]], out)
}
