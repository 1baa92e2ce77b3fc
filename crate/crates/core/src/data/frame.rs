use std::path::Path;

use image::DynamicImage;

use crate::error::{Error, Result};

/// A grayscale image with values in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GrayFrame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Data(format!("{} values for a {height}×{width} frame", data.len())));
        }
        Ok(GrayFrame { height, width, data })
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Converts any decoded image to [0, 1] grayscale.
pub fn to_gray(img: &DynamicImage) -> GrayFrame {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(g) => g.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(g) => g.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA8(g) => g.as_raw().chunks(2).map(|p| p[0] as f64 / 255.0).collect(),
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) | DynamicImage::ImageLumaA16(_) => {
            let rgb = img.to_rgb16();
            rgb.as_raw()
                .chunks(3)
                .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64) / 65535.0)
                .collect()
        }
        _ => {
            let rgb = img.to_rgb8();
            rgb.as_raw()
                .chunks(3)
                .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
                .collect()
        }
    };
    GrayFrame { height: h, width: w, data }
}

pub fn read_frame(path: &Path) -> Result<GrayFrame> {
    let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let frame = to_gray(&img);
    if frame.data.is_empty() {
        return Err(Error::Data(format!("{}: empty image", path.display())));
    }
    Ok(frame)
}

/// Writes an 8-bit binary PGM.
pub fn write_pgm(path: &Path, frame: &GrayFrame) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    bytes.extend(frame.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Bilinear resampling with corner-aligned sample positions: output pixel
/// `i` reads source coordinate `i · (H − 1) / (H' − 1)`.
pub fn resize_bilinear(frame: &GrayFrame, out_h: usize, out_w: usize) -> GrayFrame {
    if frame.height == out_h && frame.width == out_w {
        return frame.clone();
    }
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (s.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f64)
    };
    let mut data = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, frame.height, out_h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, frame.width, out_w);
            let top = frame.at(y0, x0) * (1.0 - fx) + frame.at(y0, x1) * fx;
            let bottom = frame.at(y1, x0) * (1.0 - fx) + frame.at(y1, x1) * fx;
            data.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    GrayFrame { height: out_h, width: out_w, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let f = GrayFrame::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(resize_bilinear(&f, 3, 2), f);
    }

    #[test]
    fn constant_stays_constant() {
        let f = GrayFrame::new(5, 7, vec![0.37; 35]).unwrap();
        let r = resize_bilinear(&f, 64, 64);
        assert!(r.data.iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn checkerboard_upsample() {
        let f = GrayFrame::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = resize_bilinear(&f, 4, 4);
        // value at (u, v) in [0,1]² is u + v − 2uv
        for y in 0..4 {
            for x in 0..4 {
                let (u, v) = (x as f64 / 3.0, y as f64 / 3.0);
                assert!((r.at(y, x) - (u + v - 2.0 * u * v)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn luma_weights() {
        assert!((luma(1.0, 1.0, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(luma(1.0, 0.0, 0.0), 0.299);
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.pgm");
        let f = GrayFrame::new(2, 3, vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        write_pgm(&p, &f).unwrap();
        assert_eq!(read_frame(&p).unwrap(), f);
    }
}
