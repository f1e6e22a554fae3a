//! Dense motion between consecutive frames.
//!
//! The built-in estimator is coarse-to-fine block matching: both frames are
//! reduced to luma, a 2× averaging pyramid is built, and at every level each
//! pixel searches small windows of integer displacements around the
//! upsampled estimates of itself and its neighbours, scoring candidates by
//! the sum of absolute differences over a square block. Each level is
//! median filtered before it seeds the next. Samples outside the image are
//! clamped to the border. An optional 3×3 box filter smooths the result.
//!
//! Flow can also be read from and written to Middlebury `.flo` files so that
//! fields from stronger external estimators can be used instead.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Frame, PatchRegion};

/// Magic number that opens every `.flo` file.
pub const FLO_MAGIC: f32 = 202021.25;

/// Per-pixel `(dx, dy)` displacement, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: u32,
    height: u32,
    vectors: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(width: u32, height: u32, vectors: Vec<[f32; 2]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "flow dimensions must be positive, got {width}x{height}"
            )));
        }
        if vectors.len() != width as usize * height as usize {
            return Err(Error::dims(
                format!("{} vectors", width as usize * height as usize),
                format!("{} vectors", vectors.len()),
            ));
        }
        if vectors.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("flow contains non-finite components".into()));
        }
        Ok(Self {
            width,
            height,
            vectors,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self::uniform(width, height, [0.0, 0.0])
    }

    pub fn uniform(width: u32, height: u32, v: [f32; 2]) -> Self {
        Self {
            width,
            height,
            vectors: vec![v; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn vectors(&self) -> &[[f32; 2]] {
        &self.vectors
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f32; 2] {
        self.vectors[y as usize * self.width as usize + x as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub pyramid_levels: u32,
    pub block_radius: u32,
    pub search_radius: u32,
    pub smoothing_passes: u32,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            block_radius: 3,
            search_radius: 2,
            smoothing_passes: 1,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels == 0 {
            return Err(Error::InvalidParameter("pyramid_levels must be >= 1".into()));
        }
        if self.search_radius == 0 {
            return Err(Error::InvalidParameter("search_radius must be >= 1".into()));
        }
        Ok(())
    }

    /// Largest displacement the pyramid can represent, in full-resolution
    /// pixels.
    pub fn search_budget(&self) -> u32 {
        self.search_radius * ((1 << self.pyramid_levels) - 1)
    }
}

/// How `M_k^t` reduces the vectors of a patch to one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeMode {
    /// Sum of per-pixel Euclidean magnitudes; opposing motions do not cancel.
    #[default]
    PixelMagnitude,
    /// Euclidean norm of the summed vectors.
    VectorSum,
}

/// Flow score of `region`.
pub fn patch_flow_magnitude(flow: &FlowField, region: &PatchRegion, mode: MagnitudeMode) -> Result<f64> {
    region.check_within(flow.width, flow.height)?;
    let w = flow.width as usize;
    let rows = (region.y..region.y + region.h).map(|y| {
        let start = y as usize * w + region.x as usize;
        &flow.vectors[start..start + region.w as usize]
    });
    Ok(match mode {
        MagnitudeMode::PixelMagnitude => rows
            .flatten()
            .map(|[dx, dy]| (*dx as f64).hypot(*dy as f64))
            .sum(),
        MagnitudeMode::VectorSum => {
            let (sx, sy) = rows
                .flatten()
                .fold((0.0f64, 0.0f64), |(sx, sy), [dx, dy]| (sx + *dx as f64, sy + *dy as f64));
            sx.hypot(sy)
        }
    })
}

struct Gray {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Gray {
    #[inline]
    fn at(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    fn downsample(&self) -> Gray {
        let width = self.width.div_ceil(2);
        let height = self.height.div_ceil(2);
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (sx, sy) = (2 * x as isize, 2 * y as isize);
                let sum = self.at(sx, sy) + self.at(sx + 1, sy) + self.at(sx, sy + 1) + self.at(sx + 1, sy + 1);
                data.push(sum * 0.25);
            }
        }
        Gray { width, height, data }
    }
}

fn pyramid(base: Gray, levels: u32, min_side: usize) -> Vec<Gray> {
    let mut out = vec![base];
    while out.len() < levels as usize {
        let top = out.last().unwrap();
        if top.width.div_ceil(2) < min_side || top.height.div_ceil(2) < min_side {
            break;
        }
        out.push(top.downsample());
    }
    out
}

fn block_sad(a: &Gray, b: &Gray, x: isize, y: isize, dx: isize, dy: isize, r: isize) -> f32 {
    let mut sad = 0.0f32;
    for j in -r..=r {
        for i in -r..=r {
            sad += (a.at(x + i, y + j) - b.at(x + i + dx, y + j + dy)).abs();
        }
    }
    sad
}

/// One level of integer block matching, seeded by `prior` (same size as the
/// level).
fn match_level(a: &Gray, b: &Gray, prior: &[[i32; 2]], params: &FlowParams) -> Vec<[i32; 2]> {
    let s = params.search_radius as i32;
    let r = params.block_radius as isize;
    let (w, h) = (a.width, a.height);
    let mut out = vec![[0i32; 2]; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, slot) in row.iter_mut().enumerate() {
            // Seeds from the pixel and its neighbours two steps away, which
            // come from distinct coarse cells.
            let mut seeds = [[0i32; 2]; 5];
            let mut n = 0;
            for (i, j) in [(0, 0), (-2, 0), (2, 0), (0, -2), (0, 2)] {
                let sx = (x as isize + i).clamp(0, w as isize - 1) as usize;
                let sy = (y as isize + j).clamp(0, h as isize - 1) as usize;
                let p = prior[sy * w + sx];
                if !seeds[..n].contains(&p) {
                    seeds[n] = p;
                    n += 1;
                }
            }
            let mut candidates: Vec<[i32; 2]> = Vec::with_capacity(n * ((2 * s + 1) * (2 * s + 1)) as usize);
            for &[px, py] in &seeds[..n] {
                for oy in -s..=s {
                    for ox in -s..=s {
                        let c = [px + ox, py + oy];
                        if !candidates.contains(&c) {
                            candidates.push(c);
                        }
                    }
                }
            }
            let mut best = (f32::INFINITY, i64::MAX, [0i32; 2]);
            for &[dx, dy] in &candidates {
                let sad = block_sad(a, b, x as isize, y as isize, dx as isize, dy as isize, r);
                let len = (dx as i64).pow(2) + (dy as i64).pow(2);
                if sad < best.0 || (sad == best.0 && len < best.1) {
                    best = (sad, len, [dx, dy]);
                }
            }
            *slot = best.2;
        }
    });
    out
}

/// Component-wise 3×3 median of an integer field; removes isolated
/// mismatches before they seed the next level.
fn median_filter(field: &[[i32; 2]], w: usize, h: usize) -> Vec<[i32; 2]> {
    let mut out = vec![[0i32; 2]; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, slot) in row.iter_mut().enumerate() {
            let mut us = [0i32; 9];
            let mut vs = [0i32; 9];
            let mut n = 0;
            for j in -1isize..=1 {
                for i in -1isize..=1 {
                    let sx = (x as isize + i).clamp(0, w as isize - 1) as usize;
                    let sy = (y as isize + j).clamp(0, h as isize - 1) as usize;
                    let [u, v] = field[sy * w + sx];
                    us[n] = u;
                    vs[n] = v;
                    n += 1;
                }
            }
            us.sort_unstable();
            vs.sort_unstable();
            *slot = [us[4], vs[4]];
        }
    });
    out
}

fn upsample_prior(coarse: &[[i32; 2]], cw: usize, fine_w: usize, fine_h: usize) -> Vec<[i32; 2]> {
    let mut out = Vec::with_capacity(fine_w * fine_h);
    for y in 0..fine_h {
        for x in 0..fine_w {
            let [dx, dy] = coarse[(y / 2) * cw + x / 2];
            out.push([dx * 2, dy * 2]);
        }
    }
    out
}

fn box_smooth(vectors: &[[f32; 2]], w: usize, h: usize) -> Vec<[f32; 2]> {
    let mut out = vec![[0.0f32; 2]; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, slot) in row.iter_mut().enumerate() {
            let mut acc = [0.0f32; 2];
            for j in -1isize..=1 {
                for i in -1isize..=1 {
                    let sx = (x as isize + i).clamp(0, w as isize - 1) as usize;
                    let sy = (y as isize + j).clamp(0, h as isize - 1) as usize;
                    let v = vectors[sy * w + sx];
                    acc[0] += v[0];
                    acc[1] += v[1];
                }
            }
            *slot = [acc[0] / 9.0, acc[1] / 9.0];
        }
    });
    out
}

/// Dense flow from `frame_a` to `frame_b`: `a(x, y) ≈ b(x + dx, y + dy)`.
///
/// Row work is split across the rayon pool; the result does not depend on
/// the number of threads.
pub fn estimate_flow(frame_a: &Frame, frame_b: &Frame, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    if frame_a.dims() != frame_b.dims() {
        return Err(Error::dims(
            format!("{}x{}", frame_a.width(), frame_a.height()),
            format!("{}x{}", frame_b.width(), frame_b.height()),
        ));
    }
    let (width, height) = (frame_a.width() as usize, frame_a.height() as usize);
    let to_gray = |f: &Frame| Gray {
        width,
        height,
        data: f.luma(),
    };
    let min_side = (2 * params.block_radius as usize + 1).max(4);
    let pa = pyramid(to_gray(frame_a), params.pyramid_levels, min_side);
    let pb = pyramid(to_gray(frame_b), pa.len() as u32, min_side);

    let top = pa.last().unwrap();
    let mut flow = vec![[0i32; 2]; top.width * top.height];
    for level in (0..pa.len()).rev() {
        let (a, b) = (&pa[level], &pb[level]);
        if level + 1 < pa.len() {
            flow = upsample_prior(&flow, pa[level + 1].width, a.width, a.height);
        }
        flow = median_filter(&match_level(a, b, &flow, params), a.width, a.height);
    }

    let mut vectors: Vec<[f32; 2]> = flow.iter().map(|&[dx, dy]| [dx as f32, dy as f32]).collect();
    for _ in 0..params.smoothing_passes {
        vectors = box_smooth(&vectors, width, height);
    }
    FlowField::new(width as u32, height as u32, vectors)
}

/// Serializes a field in Middlebury `.flo` layout.
pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.vectors.len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for [dx, dy] in &flow.vectors {
        out.extend_from_slice(&dx.to_le_bytes());
        out.extend_from_slice(&dy.to_le_bytes());
    }
    out
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let word = |i: usize| <[u8; 4]>::try_from(&bytes[i..i + 4]).unwrap();
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let width = i32::from_le_bytes(word(4));
    let height = i32::from_le_bytes(word(8));
    if width <= 0 || height <= 0 {
        return Err(Error::InvalidParameter(format!(
            "flow header declares {width}x{height}"
        )));
    }
    let count = width as usize * height as usize;
    let expected = 12 + count * 8;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::InvalidParameter(format!(
            "{} trailing bytes after flow payload",
            bytes.len() - expected
        )));
    }
    let vectors = bytes[12..]
        .chunks_exact(8)
        .map(|c| {
            [
                f32::from_le_bytes(c[0..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..8].try_into().unwrap()),
            ]
        })
        .collect();
    FlowField::new(width as u32, height as u32, vectors)
}

pub fn export_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flow(flow)).map_err(|e| Error::io(path, e))
}

/// Reads a `.flo` file and checks it is `expected_dims = (width, height)`.
pub fn import_flow(path: impl AsRef<Path>, expected_dims: (u32, u32)) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let flow = decode_flow(&bytes)?;
    if flow.dims() != expected_dims {
        return Err(Error::dims(
            format!("{}x{}", expected_dims.0, expected_dims.1),
            format!("{}x{}", flow.width, flow.height),
        ));
    }
    Ok(flow)
}

/// Flow for every consecutive pair of `frames`, in order.
pub fn estimate_sequence_flow(frames: &[Frame], params: &FlowParams) -> Result<Vec<FlowField>> {
    frames
        .par_windows(2)
        .map(|pair| estimate_flow(&pair[0], &pair[1], params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn region(x: u32, y: u32, w: u32, h: u32) -> PatchRegion {
        PatchRegion::new(0, x, y, w, h).unwrap()
    }

    #[test]
    fn uniform_three_four_field_scores_five_per_pixel() {
        let flow = FlowField::uniform(20, 20, [3.0, 4.0]);
        let m = patch_flow_magnitude(&flow, &region(5, 5, 10, 10), MagnitudeMode::PixelMagnitude).unwrap();
        assert_eq!(m, 500.0);
        let v = patch_flow_magnitude(&flow, &region(5, 5, 10, 10), MagnitudeMode::VectorSum).unwrap();
        assert_eq!(v, 500.0);
    }

    #[test]
    fn zero_field_scores_zero() {
        let flow = FlowField::zeros(8, 8);
        for mode in [MagnitudeMode::PixelMagnitude, MagnitudeMode::VectorSum] {
            assert_eq!(patch_flow_magnitude(&flow, &region(0, 0, 8, 8), mode).unwrap(), 0.0);
        }
    }

    #[test]
    fn opposing_motion_cancels_only_in_vector_mode() {
        let mut v = vec![[1.0f32, 0.0]; 4];
        v[1] = [-1.0, 0.0];
        v[3] = [-1.0, 0.0];
        let flow = FlowField::new(2, 2, v).unwrap();
        let r = region(0, 0, 2, 2);
        assert_eq!(patch_flow_magnitude(&flow, &r, MagnitudeMode::PixelMagnitude).unwrap(), 4.0);
        assert_eq!(patch_flow_magnitude(&flow, &r, MagnitudeMode::VectorSum).unwrap(), 0.0);
    }

    #[test]
    fn random_field_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vectors: Vec<[f32; 2]> = (0..64)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
        let flow = FlowField::new(8, 8, vectors.clone()).unwrap();
        let mut expected = 0.0f64;
        for y in 0..8 {
            for x in 0..8 {
                let [dx, dy] = vectors[y * 8 + x];
                expected += ((dx as f64) * (dx as f64) + (dy as f64) * (dy as f64)).sqrt();
            }
        }
        let got = patch_flow_magnitude(&flow, &region(0, 0, 8, 8), MagnitudeMode::PixelMagnitude).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn region_outside_field_is_rejected() {
        let flow = FlowField::zeros(8, 8);
        assert!(matches!(
            patch_flow_magnitude(&flow, &region(4, 4, 5, 4), MagnitudeMode::PixelMagnitude),
            Err(Error::OutOfBounds(_))
        ));
    }

    #[test]
    fn decode_rejects_wrong_magic_and_truncation() {
        let flow = FlowField::uniform(4, 4, [1.0, 0.0]);
        let mut bytes = encode_flow(&flow);
        assert_eq!(decode_flow(&bytes).unwrap(), flow);
        assert!(matches!(decode_flow(&bytes[..40]), Err(Error::Truncated { .. })));
        bytes[0] ^= 0xff;
        let err = decode_flow(&bytes).unwrap_err();
        assert!(err.to_string().contains("not a flow file"));
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pixels: Vec<u8> = (0..48 * 40 * 3).map(|_| rng.random()).collect();
        let f = Frame::new(0, 48, 40, pixels).unwrap();
        let flow = estimate_flow(&f, &f.clone().with_id(1), &FlowParams::default()).unwrap();
        assert!(flow.vectors().iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn mismatched_frames_are_rejected() {
        let a = Frame::filled(0, 8, 8, [0; 3]).unwrap();
        let b = Frame::filled(1, 8, 9, [0; 3]).unwrap();
        assert!(matches!(
            estimate_flow(&a, &b, &FlowParams::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
