use serde::{Deserialize, Serialize};

use super::kernel::{gaussian_kernel, MotionKernel};
use crate::error::Result;
use crate::types::{Frame, PatchRegion};

/// What is done to a selected patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    None,
    BinaryMask,
    GaussianBlur,
    #[default]
    MotionBlur,
}

impl std::str::FromStr for EffectKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(EffectKind::None),
            "binary_mask" => Ok(EffectKind::BinaryMask),
            "gaussian_blur" => Ok(EffectKind::GaussianBlur),
            "motion_blur" => Ok(EffectKind::MotionBlur),
            other => Err(crate::error::Error::InvalidParameter(format!(
                "unknown effect `{other}` (none | binary_mask | gaussian_blur | motion_blur)"
            ))),
        }
    }
}

/// A fully parameterised effect.
#[derive(Debug, Clone, PartialEq)]
pub enum PatchEffect {
    None,
    BinaryMask,
    GaussianBlur { sigma: f64 },
    MotionBlur(MotionKernel),
}

/// Applies `effect` to `region` and returns the new frame; pixels outside
/// the region are copied unchanged.
pub fn apply_patch_effect(frame: &Frame, region: &PatchRegion, effect: &PatchEffect) -> Result<Frame> {
    let mut out = frame.clone();
    apply_patch_effect_in_place(&mut out, region, effect)?;
    Ok(out)
}

pub fn apply_patch_effect_in_place(frame: &mut Frame, region: &PatchRegion, effect: &PatchEffect) -> Result<()> {
    region.check_within(frame.width(), frame.height())?;
    match effect {
        PatchEffect::None => {}
        PatchEffect::BinaryMask => {
            for y in region.y..region.y + region.h {
                for x in region.x..region.x + region.w {
                    frame.set_pixel(x, y, [0, 0, 0]);
                }
            }
        }
        PatchEffect::GaussianBlur { sigma } => {
            let (size, weights) = gaussian_kernel(*sigma)?;
            convolve_region(frame, region, size, &weights);
        }
        PatchEffect::MotionBlur(kernel) => convolve_region(frame, region, kernel.size(), kernel.weights()),
    }
    Ok(())
}

/// Convolves the pixels of `region` with a `size × size` kernel, treating
/// the region as an image of its own whose border pixels are replicated
/// into the apron. Channels are filtered independently and rounded once,
/// half away from zero.
///
/// `region` must lie inside `frame`.
pub(crate) fn convolve_region(frame: &mut Frame, region: &PatchRegion, size: usize, weights: &[f64]) {
    let half = (size / 2) as isize;
    let (rw, rh) = (region.w as usize, region.h as usize);

    // Nonzero taps in row-major kernel order, as source offsets.
    let taps: Vec<(isize, isize, f64)> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w != 0.0)
        .map(|(i, &w)| (half - (i % size) as isize, half - (i / size) as isize, w))
        .collect();

    let mut src = Vec::with_capacity(rw * rh * 3);
    for y in region.y..region.y + region.h {
        let start = (y as usize * frame.width() as usize + region.x as usize) * 3;
        src.extend_from_slice(&frame.pixels()[start..start + rw * 3]);
    }

    let stride = frame.width() as usize;
    let pixels = frame.pixels_mut();
    for oy in 0..rh {
        for ox in 0..rw {
            let mut acc = [0.0f64; 3];
            for &(dx, dy, w) in &taps {
                let sx = (ox as isize + dx).clamp(0, rw as isize - 1) as usize;
                let sy = (oy as isize + dy).clamp(0, rh as isize - 1) as usize;
                let s = &src[(sy * rw + sx) * 3..][..3];
                acc[0] += w * s[0] as f64;
                acc[1] += w * s[1] as f64;
                acc[2] += w * s[2] as f64;
            }
            let dst = ((region.y as usize + oy) * stride + region.x as usize + ox) * 3;
            for c in 0..3 {
                pixels[dst + c] = round_to_u8(acc[c]);
            }
        }
    }
}

#[inline]
pub fn round_to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blur::kernel::build_motion_kernel;

    fn gradient_frame() -> Frame {
        let mut f = Frame::filled(0, 16, 12, [0; 3]).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                f.set_pixel(x, y, [(x * 15) as u8, (y * 20) as u8, ((x + y) * 7) as u8]);
            }
        }
        f
    }

    #[test]
    fn constant_region_is_unchanged_by_motion_blur() {
        let f = Frame::filled(0, 40, 40, [128; 3]).unwrap();
        let region = PatchRegion::new(0, 5, 5, 30, 30).unwrap();
        for (size, angle, scale) in [(5, 0.0, 1.0), (9, 0.7, 1.2), (15, 2.1, 0.8)] {
            let k = build_motion_kernel(size, angle, scale).unwrap();
            let out = apply_patch_effect(&f, &region, &PatchEffect::MotionBlur(k)).unwrap();
            assert!(out.pixels().iter().all(|&p| p == 128));
        }
    }

    #[test]
    fn binary_mask_blackens_only_the_region() {
        let f = gradient_frame();
        let region = PatchRegion::new(0, 3, 2, 5, 4).unwrap();
        let out = apply_patch_effect(&f, &region, &PatchEffect::BinaryMask).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                let inside = (3..8).contains(&x) && (2..6).contains(&y);
                if inside {
                    assert_eq!(out.pixel(x, y), [0, 0, 0]);
                } else {
                    assert_eq!(out.pixel(x, y), f.pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn none_is_identity() {
        let f = gradient_frame();
        let region = PatchRegion::new(0, 0, 0, 16, 12).unwrap();
        assert_eq!(apply_patch_effect(&f, &region, &PatchEffect::None).unwrap(), f);
    }

    #[test]
    fn gaussian_blur_keeps_outside_pixels() {
        let f = gradient_frame();
        let region = PatchRegion::new(0, 4, 4, 6, 6).unwrap();
        let out = apply_patch_effect(&f, &region, &PatchEffect::GaussianBlur { sigma: 1.0 }).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                if !((4..10).contains(&x) && (4..10).contains(&y)) {
                    assert_eq!(out.pixel(x, y), f.pixel(x, y));
                }
            }
        }
        assert_ne!(out, f);
    }

    #[test]
    fn out_of_bounds_region_is_rejected() {
        let f = gradient_frame();
        let region = PatchRegion::new(0, 10, 10, 8, 8).unwrap();
        assert!(apply_patch_effect(&f, &region, &PatchEffect::BinaryMask).is_err());
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_to_u8(127.5), 128);
        assert_eq!(round_to_u8(127.49999), 127);
        assert_eq!(round_to_u8(-0.2), 0);
        assert_eq!(round_to_u8(300.0), 255);
    }
}
