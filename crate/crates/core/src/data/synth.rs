//! Procedural walking silhouettes.
//!
//! A subject is a fixed body shape plus a gait signature (cadence, hip and
//! arm swing, a second harmonic, knee flexion). Each clip re-renders the
//! subject with nuisance variation: start phase, small cadence/amplitude
//! jitter, a view-dependent horizontal scale, condition artifacts and pixel
//! noise. Clips can also be translated, which is off by default.

use std::f64::consts::PI;

use libm::{cos, sin};

use super::record::{ClipRecord, Condition, DatasetSplit};
use super::sequence::CLIP_LEN;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub subjects: usize,
    pub clips_per_subject: usize,
    /// Subjects `1..=train_subjects` form the training split.
    pub train_subjects: usize,
    pub frames: usize,
    pub side: usize,
    /// View tags assigned to clips in rotation, with their horizontal scales.
    pub views: Vec<(String, f64)>,
    pub speckle: f64,
    pub frame_dropout: f64,
    /// Samples per pixel along each axis; values above 1 give
    /// anti-aliased coverage instead of binary frames.
    pub supersample: usize,
    /// Largest horizontal offset of a clip, in pixels at side 64; the
    /// vertical offset is a third of it.
    pub translation: f64,
}

impl SynthConfig {
    /// Training share follows the standard 74-of-124 subject ratio.
    pub fn new(subjects: usize, clips_per_subject: usize) -> Self {
        let train = ((subjects as f64 * 74.0 / 124.0).round() as usize).clamp(1, subjects.saturating_sub(1).max(1));
        SynthConfig {
            subjects,
            clips_per_subject,
            train_subjects: train,
            frames: CLIP_LEN,
            side: 64,
            views: vec![("036".into(), 0.85), ("090".into(), 1.0), ("144".into(), 1.15)],
            speckle: 0.01,
            frame_dropout: 0.03,
            supersample: 1,
            translation: 0.0,
        }
    }

    /// Ten subjects with eight clips each at side 32, anti-aliased.
    pub fn desk() -> Self {
        SynthConfig { side: 32, supersample: 4, ..Self::new(10, 8) }
    }
}

/// Condition and sequence index of a subject's `k`-th clip:
/// NM 1–6, BG 1, CL 1, BG 2, CL 2, then further NM sequences.
pub fn clip_slot(k: usize) -> (Condition, u32) {
    match k {
        0..=5 => (Condition::Nm, k as u32 + 1),
        6 => (Condition::Bg, 1),
        7 => (Condition::Cl, 1),
        8 => (Condition::Bg, 2),
        9 => (Condition::Cl, 2),
        _ => (Condition::Nm, k as u32 - 3),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectStyle {
    /// Gait cycles per frame.
    pub cadence: f64,
    pub hip_swing: f64,
    pub harmonic: f64,
    pub harmonic_phase: f64,
    pub knee_flex: f64,
    pub knee_phase: f64,
    pub arm_swing: f64,
    pub torso_half_width: f64,
    pub torso_half_height: f64,
    pub head_radius: f64,
    pub leg_length: f64,
    pub bob: f64,
    pub lean: f64,
}

impl SubjectStyle {
    pub fn sample(rng: &mut Rng) -> Self {
        SubjectStyle {
            cadence: rng.uniform_in(0.05, 0.11),
            hip_swing: rng.uniform_in(0.3, 0.75),
            harmonic: rng.uniform_in(0.0, 0.45),
            harmonic_phase: rng.uniform_in(0.0, 2.0 * PI),
            knee_flex: rng.uniform_in(0.1, 0.9),
            knee_phase: rng.uniform_in(0.0, 2.0 * PI),
            arm_swing: rng.uniform_in(0.15, 0.75),
            torso_half_width: rng.uniform_in(3.5, 7.0),
            torso_half_height: rng.uniform_in(7.5, 11.5),
            head_radius: rng.uniform_in(2.8, 4.8),
            leg_length: rng.uniform_in(15.0, 22.0),
            bob: rng.uniform_in(0.0, 2.0),
            lean: rng.uniform_in(-0.15, 0.15),
        }
    }
}

#[derive(Debug, Clone)]
struct ClipStyle {
    phase0: f64,
    cadence: f64,
    swing_scale: f64,
    dx: f64,
    dy: f64,
    x_scale: f64,
    condition: Condition,
    bag: (f64, f64, f64, f64),
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, angle: f64 },
    Capsule { ax: f64, ay: f64, bx: f64, by: f64, r: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry, angle } => {
                let (s, c) = (sin(angle), cos(angle));
                let (u, v) = (x - cx, y - cy);
                let (p, q) = (c * u + s * v, -s * u + c * v);
                (p / rx) * (p / rx) + (q / ry) * (q / ry) <= 1.0
            }
            Shape::Capsule { ax, ay, bx, by, r } => {
                let (vx, vy) = (bx - ax, by - ay);
                let len2 = vx * vx + vy * vy;
                let t = if len2 > 0.0 { (((x - ax) * vx + (y - ay) * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let (dx, dy) = (x - ax - t * vx, y - ay - t * vy);
                dx * dx + dy * dy <= r * r
            }
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry, .. } => {
                let m = rx.max(ry);
                (cx - m, cy - m, cx + m, cy + m)
            }
            Shape::Capsule { ax, ay, bx, by, r } => (ax.min(bx) - r, ay.min(by) - r, ax.max(bx) + r, ay.max(by) + r),
        }
    }
}

fn body_shapes(s: &SubjectStyle, c: &ClipStyle, t: usize, side: f64) -> Vec<Shape> {
    let k = side / 64.0;
    let phase = c.phase0 + 2.0 * PI * c.cadence * t as f64;
    let hip_x = side / 2.0 + c.dx;
    let hip_y = side * 0.58 + c.dy - k * s.bob * sin(2.0 * phase).abs();
    let (tw, th) = (k * s.torso_half_width, k * s.torso_half_height);
    let leg = k * s.leg_length;
    let mut shapes = Vec::with_capacity(9);
    let mut coat = 0.0;
    if c.condition == Condition::Cl {
        coat = 1.0;
    }
    shapes.push(Shape::Ellipse {
        cx: hip_x + th * sin(s.lean),
        cy: hip_y - th + coat * k * 3.0,
        rx: tw + coat * k * 2.0,
        ry: th + coat * k * 5.0,
        angle: s.lean,
    });
    let neck = (hip_x + 2.0 * th * sin(s.lean), hip_y - 2.0 * th * cos(s.lean));
    let hr = k * s.head_radius;
    shapes.push(Shape::Ellipse { cx: neck.0 + hr * sin(s.lean), cy: neck.1 - hr + k, rx: hr, ry: hr, angle: 0.0 });
    for side_sign in [0.0, PI] {
        let p = phase + side_sign;
        let hip = c.swing_scale * s.hip_swing * (sin(p) + s.harmonic * sin(2.0 * p + s.harmonic_phase));
        let knee = c.swing_scale * s.knee_flex * (0.5 + 0.5 * sin(p + s.knee_phase));
        let (kx, ky) = (hip_x + 0.5 * leg * sin(hip), hip_y + 0.5 * leg * cos(hip));
        let (fx, fy) = (kx + 0.5 * leg * sin(hip - knee), ky + 0.5 * leg * cos(hip - knee));
        shapes.push(Shape::Capsule { ax: hip_x, ay: hip_y, bx: kx, by: ky, r: k * 2.3 });
        shapes.push(Shape::Capsule { ax: kx, ay: ky, bx: fx, by: fy, r: k * 1.8 });
        let arm = -c.swing_scale * s.arm_swing * sin(p);
        let (sx, sy) = (neck.0, neck.1 + k * 2.0);
        let arm_len = 0.8 * leg;
        shapes.push(Shape::Capsule { ax: sx, ay: sy, bx: sx + arm_len * sin(arm), by: sy + arm_len * cos(arm), r: k * 1.5 });
    }
    if c.condition == Condition::Bg {
        let (ox, oy, rx, ry) = c.bag;
        shapes.push(Shape::Ellipse { cx: hip_x + k * ox, cy: hip_y - th + k * oy, rx: k * rx, ry: k * ry, angle: 0.0 });
    }
    shapes
}

fn render(s: &SubjectStyle, c: &ClipStyle, t: usize, side: usize, ss: usize) -> Vec<f32> {
    let hi = side * ss;
    let fine = ClipStyle { dx: c.dx * ss as f64, dy: c.dy * ss as f64, ..c.clone() };
    let mut img = render_mask(s, &fine, t, hi);
    if c.condition == Condition::Cl {
        for _ in 0..ss {
            img = dilate(&img, hi);
        }
    }
    let norm = 1.0 / (ss * ss) as f32;
    let mut out = vec![0.0f32; side * side];
    for (y, row) in img.chunks(hi).enumerate() {
        for (x, &on) in row.iter().enumerate() {
            if on {
                out[(y / ss) * side + x / ss] += norm;
            }
        }
    }
    out
}

fn render_mask(s: &SubjectStyle, c: &ClipStyle, t: usize, side: usize) -> Vec<bool> {
    let sf = side as f64;
    let mut img = vec![false; side * side];
    let center = sf / 2.0 + c.dx;
    for shape in body_shapes(s, c, t, sf) {
        let (x0, y0, x1, y1) = shape.bounds();
        let px0 = ((center + (x0 - center) * c.x_scale).floor().max(0.0)) as usize;
        let px1 = ((center + (x1 - center) * c.x_scale).ceil().min(sf - 1.0)).max(0.0) as usize;
        let py0 = y0.floor().max(0.0) as usize;
        let py1 = y1.ceil().min(sf - 1.0).max(0.0) as usize;
        for py in py0..=py1 {
            for px in px0..=px1 {
                let x = center + (px as f64 + 0.5 - center) / c.x_scale;
                if shape.contains(x, py as f64 + 0.5) {
                    img[py * side + px] = true;
                }
            }
        }
    }
    img
}

fn dilate(img: &[bool], side: usize) -> Vec<bool> {
    let mut out = img.to_vec();
    for y in 0..side {
        for x in 0..side {
            if img[y * side + x] {
                continue;
            }
            let hit = [(0isize, 1isize), (0, -1), (1, 0), (-1, 0)].iter().any(|&(dy, dx)| {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                yy >= 0 && xx >= 0 && (yy as usize) < side && (xx as usize) < side && img[yy as usize * side + xx as usize]
            });
            out[y * side + x] = hit;
        }
    }
    out
}

/// Renders one clip of subject `style`. All randomness comes from `rng`.
pub fn render_clip(
    style: &SubjectStyle,
    condition: Condition,
    x_scale: f64,
    cfg: &SynthConfig,
    rng: &mut Rng,
) -> Vec<f32> {
    let k = cfg.side as f64 / 64.0;
    let clip = ClipStyle {
        phase0: rng.uniform_in(0.0, 2.0 * PI),
        cadence: style.cadence * (1.0 + rng.uniform_in(-0.03, 0.03)),
        swing_scale: 1.0 + rng.uniform_in(-0.05, 0.05),
        dx: k * rng.uniform_in(-cfg.translation, cfg.translation),
        dy: k * rng.uniform_in(-cfg.translation, cfg.translation) / 3.0,
        x_scale,
        condition,
        bag: (
            rng.uniform_in(5.0, 8.0) * if rng.bernoulli(0.5) { 1.0 } else { -1.0 },
            rng.uniform_in(4.0, 10.0),
            rng.uniform_in(3.0, 5.0),
            rng.uniform_in(4.0, 7.0),
        ),
    };
    let side = cfg.side;
    let mut out = Vec::with_capacity(cfg.frames * side * side);
    for t in 0..cfg.frames {
        if rng.bernoulli(cfg.frame_dropout) {
            out.extend(std::iter::repeat_n(0.0f32, side * side));
            continue;
        }
        for v in render(style, &clip, t, side, cfg.supersample) {
            let flip = rng.bernoulli(cfg.speckle);
            out.push(if flip { 1.0 - v } else { v });
        }
    }
    out
}

/// Seeded synthetic dataset with subjects `1..=n` split by id.
pub fn synth_gait_dataset(cfg: &SynthConfig, seed: u64) -> Result<DatasetSplit> {
    if cfg.subjects < 2 {
        return Err(Error::Config("synthetic dataset needs at least 2 subjects".into()));
    }
    if cfg.clips_per_subject == 0 || cfg.frames == 0 || cfg.side < 8 || cfg.views.is_empty() || cfg.supersample == 0 {
        return Err(Error::Config(
            "synthetic dataset needs clips, frames, views, a side of at least 8 and a nonzero supersample".into(),
        ));
    }
    if cfg.train_subjects == 0 || cfg.train_subjects > cfg.subjects {
        return Err(Error::Config(format!("train_subjects must be in 1..={}", cfg.subjects)));
    }
    let root = Rng::new(seed);
    let mut records = Vec::with_capacity(cfg.subjects * cfg.clips_per_subject);
    for s in 0..cfg.subjects {
        let mut srng = root.split(s as u64);
        let style = SubjectStyle::sample(&mut srng);
        for k in 0..cfg.clips_per_subject {
            let (condition, seq) = clip_slot(k);
            let (view, scale) = &cfg.views[k % cfg.views.len()];
            let mut crng = srng.split(1000 + k as u64);
            let data = render_clip(&style, condition, *scale, cfg, &mut crng);
            records.push(ClipRecord::frames(s as u32 + 1, condition, seq, view, cfg.side, data)?);
        }
    }
    records.sort_by_key(|r| r.sort_key());
    Ok(DatasetSplit::by_subject_id(records, cfg.train_subjects as u32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_generation_is_reproducible() {
        let cfg = SynthConfig { frames: 6, ..SynthConfig::new(3, 2) };
        assert_eq!(synth_gait_dataset(&cfg, 9).unwrap(), synth_gait_dataset(&cfg, 9).unwrap());
        assert_ne!(synth_gait_dataset(&cfg, 9).unwrap(), synth_gait_dataset(&cfg, 10).unwrap());
    }

    #[test]
    fn two_subjects_one_clip() {
        let cfg = SynthConfig { frames: 4, ..SynthConfig::new(2, 1) };
        let split = synth_gait_dataset(&cfg, 1).unwrap();
        assert_eq!(split.train().len() + split.test().len(), 2);
        assert!(split.train_subjects().is_disjoint(&split.test_subjects()));
    }

    #[test]
    fn silhouettes_are_nonempty_binary_frames() {
        let cfg = SynthConfig { speckle: 0.0, frame_dropout: 0.0, ..SynthConfig::new(2, 10) };
        let split = synth_gait_dataset(&cfg, 3).unwrap();
        for r in split.train() {
            let crate::data::ClipData::Frames { data, .. } = &r.data else { panic!() };
            assert_eq!(r.len(), 50);
            assert!(data.iter().all(|&v| v == 0.0 || v == 1.0));
            for f in data.chunks(64 * 64) {
                let on = f.iter().filter(|&&v| v == 1.0).count();
                assert!((150..2000).contains(&on), "{on} pixels on");
            }
        }
    }

    #[test]
    fn supersampled_frames_keep_total_coverage() {
        let base = SynthConfig { speckle: 0.0, frame_dropout: 0.0, frames: 4, side: 32, ..SynthConfig::new(2, 1) };
        let frames = |cfg: &SynthConfig| -> Vec<f32> {
            let (a, _) = synth_gait_dataset(cfg, 7).unwrap().into_parts();
            let crate::data::ClipData::Frames { data, .. } = &a[0].data else { panic!() };
            data.clone()
        };
        let coarse = frames(&base);
        let smooth = frames(&SynthConfig { supersample: 4, ..base });
        assert!(smooth.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(smooth.iter().any(|&v| v > 0.0 && v < 1.0));
        for (c, f) in coarse.chunks(32 * 32).zip(smooth.chunks(32 * 32)) {
            let (c, f): (f32, f32) = (c.iter().sum(), f.iter().sum());
            assert!((c - f).abs() < 0.15 * c, "{c} vs {f}");
        }
    }

    #[test]
    fn slot_order() {
        let slots: Vec<_> = (0..10).map(clip_slot).collect();
        assert_eq!(slots[4], (Condition::Nm, 5));
        assert_eq!(slots[7], (Condition::Cl, 1));
        assert_eq!(slots[9], (Condition::Cl, 2));
        assert_eq!(clip_slot(10), (Condition::Nm, 7));
    }

    #[test]
    fn too_few_subjects() {
        assert!(synth_gait_dataset(&SynthConfig::new(1, 1), 0).is_err());
    }
}
