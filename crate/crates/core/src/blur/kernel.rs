//! Oriented motion-blur kernels.
//!
//! A kernel starts as a one-pixel horizontal line of ones through the centre
//! row of a `k × k` grid. The line is rotated by `angle` and scaled by
//! `scale` about the centre `(k/2, k/2)` with bilinear resampling (zero
//! outside the grid), then normalised to unit sum so that blurring keeps the
//! patch intensity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which affine map warps the base line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelWarp {
    /// Rotation and scale about the kernel centre.
    #[default]
    Centered,
    /// The matrix whose second-row translation is
    /// `c·(1 − s·cos ω) − c·s·cos ω`; it shifts the line off centre.
    Uncentered,
}

/// Unit-sum, non-negative `size × size` blur filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionKernel {
    size: usize,
    angle: f64,
    scale: f64,
    warp: KernelWarp,
    weights: Vec<f64>,
}

impl MotionKernel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn warp(&self) -> KernelWarp {
        self.warp
    }

    /// Row-major weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }
}

// Quarter turns should give exact axis-aligned lines.
fn snap(v: f64) -> f64 {
    const EPS: f64 = 1e-12;
    if v.abs() < EPS {
        0.0
    } else if (v - 1.0).abs() < EPS {
        1.0
    } else if (v + 1.0).abs() < EPS {
        -1.0
    } else {
        v
    }
}

/// Forward 2×3 affine map taking base-line coordinates to kernel
/// coordinates, as `[[a, b, tx], [c, d, ty]]`.
pub fn warp_matrix(size: usize, angle: f64, scale: f64, warp: KernelWarp) -> [[f64; 3]; 2] {
    let half = (size / 2) as f64;
    let (sin, cos) = (snap(angle.sin()), snap(angle.cos()));
    let (sc, ss) = (cos * scale, sin * scale);
    let tx = half * (1.0 - sc) + half * ss;
    let ty = match warp {
        KernelWarp::Centered => half * (1.0 - sc) - half * ss,
        KernelWarp::Uncentered => half * (1.0 - sc) - half * sc,
    };
    [[sc, -ss, tx], [ss, sc, ty]]
}

fn check_params(size: usize, scale: f64) -> Result<()> {
    if size < 3 || size % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "kernel size must be odd and >= 3, got {size}"
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "kernel scale must be positive, got {scale}"
        )));
    }
    Ok(())
}

pub fn build_motion_kernel(size: usize, angle: f64, scale: f64) -> Result<MotionKernel> {
    build_motion_kernel_with(size, angle, scale, KernelWarp::Centered)
}

pub fn build_motion_kernel_with(size: usize, angle: f64, scale: f64, warp: KernelWarp) -> Result<MotionKernel> {
    check_params(size, scale)?;
    if !angle.is_finite() {
        return Err(Error::InvalidParameter(format!("kernel angle must be finite, got {angle}")));
    }
    let [[a, b, tx], [c, d, ty]] = warp_matrix(size, angle, scale, warp);
    let det = a * d - b * c;
    let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
    let centre_row = (size / 2) as isize;
    let base = |x: isize, y: isize| -> f64 {
        if y == centre_row && (0..size as isize).contains(&x) {
            1.0
        } else {
            0.0
        }
    };

    let mut weights = vec![0.0f64; size * size];
    for (i, w) in weights.iter_mut().enumerate() {
        let (x, y) = ((i % size) as f64 - tx, (i / size) as f64 - ty);
        let sx = ia * x + ib * y;
        let sy = ic * x + id * y;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let v = base(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + base(x0 + 1, y0) * fx * (1.0 - fy)
            + base(x0, y0 + 1) * (1.0 - fx) * fy
            + base(x0 + 1, y0 + 1) * fx * fy;
        *w = if v < 1e-12 { 0.0 } else { v };
    }

    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "kernel (size {size}, angle {angle}, scale {scale}) warps entirely outside its grid"
        )));
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(MotionKernel {
        size,
        angle,
        scale,
        warp,
        weights,
    })
}

/// Normalised isotropic Gaussian of radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Result<(usize, Vec<f64>)> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let size = (2 * radius + 1) as usize;
    let denom = 2.0 * sigma * sigma;
    let mut weights = Vec::with_capacity(size * size);
    for y in -radius..=radius {
        for x in -radius..=radius {
            weights.push((-((x * x + y * y) as f64) / denom).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((size, weights))
}
