//! Pitcher crops and luminosity enhancement.
//!
//! Frames are cropped around a detector box, converted to CIELAB and the
//! `L*` channel is run through contrast-limited adaptive histogram
//! equalisation (CLAHE): per-tile 256-bin histograms are clipped at
//! `clip_limit × mean bin count`, the excess is spread evenly over all bins,
//! and each pixel's new value blends the mappings of the four nearest tile
//! centres bilinearly. The chroma channels are never touched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BoundingBox, Frame};

// sRGB primaries, D65 white.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];
const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhanceConfig {
    /// Padding added on every side, as a fraction of the box size.
    pub margin: f64,
    pub clip_limit: f64,
    /// `(rows, cols)`; `(1, 1)` is global equalisation.
    pub tile_grid: (u32, u32),
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            margin: 0.1,
            clip_limit: 2.0,
            tile_grid: (8, 8),
        }
    }
}

impl EnhanceConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            out.push(format!("margin must be >= 0, got {}", self.margin));
        }
        if !(self.clip_limit > 0.0 && self.clip_limit.is_finite()) {
            out.push(format!("clip_limit must be > 0, got {}", self.clip_limit));
        }
        if self.tile_grid.0 == 0 || self.tile_grid.1 == 0 {
            out.push(format!(
                "tile grid {}x{} must be at least 1x1",
                self.tile_grid.0, self.tile_grid.1
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().as_slice() {
            [] => Ok(()),
            p => Err(Error::InvalidParameter(p.join("; "))),
        }
    }
}

/// Sub-image under `bbox` grown by `margin` on each side, clipped to the
/// frame.
pub fn crop(frame: &Frame, bbox: &BoundingBox, margin: f64) -> Result<Frame> {
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::InvalidParameter(format!("margin must be >= 0, got {margin}")));
    }
    let (w, h) = (frame.width() as f64, frame.height() as f64);
    let x0 = (bbox.x - margin * bbox.w).floor().clamp(0.0, w);
    let y0 = (bbox.y - margin * bbox.h).floor().clamp(0.0, h);
    let x1 = (bbox.x + bbox.w + margin * bbox.w).ceil().clamp(0.0, w);
    let y1 = (bbox.y + bbox.h + margin * bbox.h).ceil().clamp(0.0, h);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::OutOfBounds(format!(
            "box ({}, {}, {}, {}) does not intersect the {}x{} frame",
            bbox.x,
            bbox.y,
            bbox.w,
            bbox.h,
            frame.width(),
            frame.height()
        )));
    }
    let (x0, y0, cw, ch) = (x0 as usize, y0 as usize, (x1 - x0) as usize, (y1 - y0) as usize);
    let stride = frame.width() as usize * 3;
    let mut pixels = Vec::with_capacity(cw * ch * 3);
    for y in y0..y0 + ch {
        let start = y * stride + x0 * 3;
        pixels.extend_from_slice(&frame.pixels()[start..start + cw * 3]);
    }
    Frame::new(frame.id(), cw as u32, ch as u32, pixels)
}

/// Planar CIELAB image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub width: u32,
    pub height: u32,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    let v = if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    v * 255.0
}

fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let cube = f * f * f;
    if cube > EPSILON {
        cube
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

fn mat_mul(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn rgb_pixel_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = [srgb_to_linear(rgb[0]), srgb_to_linear(rgb[1]), srgb_to_linear(rgb[2])];
    let xyz = mat_mul(&RGB_TO_XYZ, lin);
    let fx = lab_f(xyz[0] / WHITE[0]);
    let fy = lab_f(xyz[1] / WHITE[1]);
    let fz = lab_f(xyz[2] / WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn lab_pixel_to_rgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        lab_f_inv(fx) * WHITE[0],
        lab_f_inv(fy) * WHITE[1],
        lab_f_inv(fz) * WHITE[2],
    ];
    let lin = mat_mul(&XYZ_TO_RGB, xyz);
    lin.map(|c| linear_to_srgb(c).round().clamp(0.0, 255.0) as u8)
}

pub fn rgb_to_lab(frame: &Frame) -> LabImage {
    let n = frame.width() as usize * frame.height() as usize;
    let mut lab = LabImage {
        width: frame.width(),
        height: frame.height(),
        l: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
    };
    for p in frame.pixels().chunks_exact(3) {
        let [l, a, b] = rgb_pixel_to_lab([p[0], p[1], p[2]]);
        lab.l.push(l);
        lab.a.push(a);
        lab.b.push(b);
    }
    lab
}

pub fn lab_to_rgb(lab: &LabImage, id: u64) -> Result<Frame> {
    let pixels = lab
        .l
        .iter()
        .zip(&lab.a)
        .zip(&lab.b)
        .flat_map(|((&l, &a), &b)| lab_pixel_to_rgb([l, a, b]))
        .collect();
    Frame::new(id, lab.width, lab.height, pixels)
}

const BINS: usize = 256;

#[inline]
fn l_bin(l: f64) -> usize {
    ((l.clamp(0.0, 100.0) * (BINS - 1) as f64 / 100.0).round()) as usize
}

/// Equalisation mapping of one tile, `None` for a tile of a single level.
fn tile_mapping(l: &[f64], width: usize, xs: (usize, usize), ys: (usize, usize), clip_limit: f64) -> Option<[f64; BINS]> {
    let mut hist = [0.0f64; BINS];
    for y in ys.0..ys.1 {
        for x in xs.0..xs.1 {
            hist[l_bin(l[y * width + x])] += 1.0;
        }
    }
    if hist.iter().filter(|&&c| c > 0.0).count() <= 1 {
        return None;
    }
    let count = ((xs.1 - xs.0) * (ys.1 - ys.0)) as f64;
    let limit = (clip_limit * count / BINS as f64).max(1.0);
    let mut excess = 0.0;
    for c in hist.iter_mut() {
        if *c > limit {
            excess += *c - limit;
            *c = limit;
        }
    }
    let bonus = excess / BINS as f64;
    let mut map = [0.0f64; BINS];
    let mut cdf = 0.0;
    for (m, c) in map.iter_mut().zip(hist) {
        cdf += c + bonus;
        *m = (cdf / count).min(1.0) * 100.0;
    }
    Some(map)
}

/// Tile `i` of `n` over `extent` pixels: `[start, end)` and its centre.
fn tile_span(i: usize, n: usize, extent: usize) -> (usize, usize, f64) {
    let start = i * extent / n;
    let end = (i + 1) * extent / n;
    (start, end, (start + end) as f64 / 2.0 - 0.5)
}

/// Neighbouring tile indices and the weight of the second one.
fn blend_position(p: f64, centres: &[f64]) -> (usize, usize, f64) {
    let n = centres.len();
    if p <= centres[0] {
        return (0, 0, 0.0);
    }
    if p >= centres[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let hi = centres.partition_point(|&c| c <= p);
    let lo = hi - 1;
    (lo, hi, (p - centres[lo]) / (centres[hi] - centres[lo]))
}

/// CLAHE on `L*`; `a*` and `b*` are returned untouched.
pub fn enhance_luminosity(lab: LabImage, cfg: &EnhanceConfig) -> Result<LabImage> {
    cfg.validate()?;
    let (width, height) = (lab.width as usize, lab.height as usize);
    let rows = (cfg.tile_grid.0 as usize).min(height);
    let cols = (cfg.tile_grid.1 as usize).min(width);

    let row_spans: Vec<_> = (0..rows).map(|i| tile_span(i, rows, height)).collect();
    let col_spans: Vec<_> = (0..cols).map(|i| tile_span(i, cols, width)).collect();
    let mut maps = Vec::with_capacity(rows * cols);
    for &(y0, y1, _) in &row_spans {
        for &(x0, x1, _) in &col_spans {
            maps.push(tile_mapping(&lab.l, width, (x0, x1), (y0, y1), cfg.clip_limit));
        }
    }
    let row_centres: Vec<f64> = row_spans.iter().map(|s| s.2).collect();
    let col_centres: Vec<f64> = col_spans.iter().map(|s| s.2).collect();

    let mut l_out = Vec::with_capacity(lab.l.len());
    for y in 0..height {
        let (r0, r1, fy) = blend_position(y as f64, &row_centres);
        for x in 0..width {
            let (c0, c1, fx) = blend_position(x as f64, &col_centres);
            let l = lab.l[y * width + x];
            let bin = l_bin(l);
            // Identity tiles contribute a zero delta, so an image made only
            // of them comes back unchanged.
            let delta = |r: usize, c: usize| maps[r * cols + c].as_ref().map_or(0.0, |m| m[bin] - l);
            let top = (1.0 - fx) * delta(r0, c0) + fx * delta(r0, c1);
            let bottom = (1.0 - fx) * delta(r1, c0) + fx * delta(r1, c1);
            l_out.push(l + (1.0 - fy) * top + fy * bottom);
        }
    }
    Ok(LabImage { l: l_out, ..lab })
}

/// Crop, convert, equalise `L*` and convert back.
pub fn enhance_frame(frame: &Frame, bbox: &BoundingBox, cfg: &EnhanceConfig) -> Result<Frame> {
    let cropped = crop(frame, bbox, cfg.margin)?;
    let lab = enhance_luminosity(rgb_to_lab(&cropped), cfg)?;
    lab_to_rgb(&lab, frame.id())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbered(w: u32, h: u32) -> Frame {
        let mut f = Frame::filled(4, w, h, [0; 3]).unwrap();
        for y in 0..h {
            for x in 0..w {
                f.set_pixel(x, y, [x as u8, y as u8, (x ^ y) as u8]);
            }
        }
        f
    }

    #[test]
    fn full_frame_crop_is_identity() {
        let f = numbered(40, 30);
        let b = BoundingBox::new(4, 0.0, 0.0, 40.0, 30.0).unwrap();
        assert_eq!(crop(&f, &b, 0.0).unwrap(), f);
    }

    #[test]
    fn crop_offsets_match_source() {
        let f = numbered(100, 100);
        let b = BoundingBox::new(4, 10.0, 10.0, 20.0, 20.0).unwrap();
        let c = crop(&f, &b, 0.0).unwrap();
        assert_eq!(c.dims(), (20, 20));
        assert_eq!(c.pixel(0, 0), f.pixel(10, 10));
        assert_eq!(c.pixel(19, 19), f.pixel(29, 29));
    }

    #[test]
    fn corner_crop_with_margin_is_clipped() {
        let f = numbered(100, 80);
        // Padding of 10 px each side: [-10, 30) x [-10, 30) -> [0, 30) x [0, 30).
        let b = BoundingBox::new(4, 0.0, 0.0, 20.0, 20.0).unwrap();
        assert_eq!(crop(&f, &b, 0.5).unwrap().dims(), (30, 30));
        // [85, 115) x [65, 95) -> [85, 100) x [65, 80).
        let b = BoundingBox::new(4, 90.0, 70.0, 10.0, 10.0).unwrap();
        let c = crop(&f, &b, 0.5).unwrap();
        assert_eq!(c.dims(), (15, 15));
        assert_eq!(c.pixel(0, 0), f.pixel(85, 65));
    }

    #[test]
    fn disjoint_box_is_rejected() {
        let f = numbered(10, 10);
        let b = BoundingBox::new(4, 20.0, 20.0, 5.0, 5.0).unwrap();
        assert!(matches!(crop(&f, &b, 0.0), Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn white_and_black_points() {
        let [l, a, b] = rgb_pixel_to_lab([255, 255, 255]);
        assert!((l - 100.0).abs() < 0.5);
        assert!(a.abs() < 0.01 && b.abs() < 0.01);
        let [l, a, b] = rgb_pixel_to_lab([0, 0, 0]);
        assert!(l.abs() < 1e-9 && a == 0.0 && b == 0.0);
        assert_eq!(lab_pixel_to_rgb([100.0, 0.0, 0.0]), [255, 255, 255]);
        assert_eq!(lab_pixel_to_rgb([0.0, 0.0, 0.0]), [0, 0, 0]);
    }

    #[test]
    fn constant_luminosity_is_unchanged() {
        let f = Frame::filled(0, 33, 21, [90, 120, 60]).unwrap();
        let lab = rgb_to_lab(&f);
        let out = enhance_luminosity(lab.clone(), &EnhanceConfig::default()).unwrap();
        assert_eq!(out, lab);
    }

    fn two_level(w: usize, h: usize) -> LabImage {
        let l: Vec<f64> = (0..w * h).map(|i| if (i % w) < w / 2 { 40.0 } else { 60.0 }).collect();
        LabImage {
            width: w as u32,
            height: h as u32,
            a: vec![3.0; w * h],
            b: vec![-7.5; w * h],
            l,
        }
    }

    fn std_dev(v: &[f64]) -> f64 {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn two_level_image_gains_contrast() {
        let lab = two_level(64, 64);
        for tiles in [(1, 1), (4, 4), (8, 8)] {
            let cfg = EnhanceConfig {
                clip_limit: 40.0,
                tile_grid: tiles,
                ..EnhanceConfig::default()
            };
            let out = enhance_luminosity(lab.clone(), &cfg).unwrap();
            assert!(std_dev(&out.l) >= std_dev(&lab.l), "{tiles:?}");
            assert_eq!(out.a, lab.a);
            assert_eq!(out.b, lab.b);
        }
    }

    #[test]
    fn tile_mapping_is_monotone() {
        let l: Vec<f64> = (0..400).map(|i| ((i * 37) % 101) as f64).collect();
        let map = tile_mapping(&l, 20, (0, 20), (0, 20), 2.0).unwrap();
        assert!(map.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn config_problems_are_exhaustive() {
        let cfg = EnhanceConfig {
            margin: -1.0,
            clip_limit: 0.0,
            tile_grid: (0, 3),
        };
        assert_eq!(cfg.problems().len(), 3);
    }
}
