use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{patch_flow_magnitude, FlowField, MagnitudeMode};
use crate::types::PatchRegion;

/// How a frame is cut into candidate patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PatchMode {
    /// `rows × cols` equal cells; the last row and column absorb the
    /// remainder.
    Grid { rows: u32, cols: u32 },
    /// Square tiles of `size` pixels; tiles at the right and bottom edges are
    /// clipped.
    Fixed { size: u32 },
}

impl Default for PatchMode {
    fn default() -> Self {
        PatchMode::Fixed { size: 30 }
    }
}

impl fmt::Display for PatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatchMode::Grid { rows, cols } => write!(f, "grid:{rows}x{cols}"),
            PatchMode::Fixed { size } => write!(f, "fixed:{size}"),
        }
    }
}

impl FromStr for PatchMode {
    type Err = Error;

    /// Parses `grid:RxC` or `fixed:S`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("patch mode `{s}` is not grid:RxC or fixed:S"));
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind.trim() {
            "grid" => {
                let (r, c) = arg.split_once(['x', 'X']).ok_or_else(bad)?;
                Ok(PatchMode::Grid {
                    rows: r.trim().parse().map_err(|_| bad())?,
                    cols: c.trim().parse().map_err(|_| bad())?,
                })
            }
            "fixed" => Ok(PatchMode::Fixed {
                size: arg.trim().parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for PatchMode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PatchMode> for String {
    fn from(m: PatchMode) -> String {
        m.to_string()
    }
}

impl PatchMode {
    /// Number of patches `init_patches` yields for a frame of this size.
    pub fn patch_count(&self, width: u32, height: u32) -> usize {
        match *self {
            PatchMode::Grid { rows, cols } => rows as usize * cols as usize,
            PatchMode::Fixed { size } if size > 0 => {
                width.div_ceil(size) as usize * height.div_ceil(size) as usize
            }
            PatchMode::Fixed { .. } => 0,
        }
    }
}

fn cuts(extent: u32, parts: u32) -> impl Iterator<Item = (u32, u32)> {
    let base = extent / parts;
    (0..parts).map(move |i| {
        let start = i * base;
        let len = if i + 1 == parts { extent - start } else { base };
        (start, len)
    })
}

/// Non-overlapping patches covering the whole frame, in row-major order.
pub fn init_patches(frame_dims: (u32, u32), mode: PatchMode) -> Result<Vec<PatchRegion>> {
    let (width, height) = frame_dims;
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!(
            "frame dimensions must be positive, got {width}x{height}"
        )));
    }
    let mut regions = Vec::with_capacity(mode.patch_count(width, height));
    match mode {
        PatchMode::Grid { rows, cols } => {
            if rows == 0 || cols == 0 || rows > height || cols > width {
                return Err(Error::InvalidParameter(format!(
                    "grid {rows}x{cols} does not fit a {width}x{height} frame"
                )));
            }
            for (y, h) in cuts(height, rows) {
                for (x, w) in cuts(width, cols) {
                    regions.push(PatchRegion::new(regions.len(), x, y, w, h)?);
                }
            }
        }
        PatchMode::Fixed { size } => {
            if size == 0 || size > width || size > height {
                return Err(Error::InvalidParameter(format!(
                    "patch size {size} does not fit a {width}x{height} frame"
                )));
            }
            for y in (0..height).step_by(size as usize) {
                for x in (0..width).step_by(size as usize) {
                    let (w, h) = (size.min(width - x), size.min(height - y));
                    regions.push(PatchRegion::new(regions.len(), x, y, w, h)?);
                }
            }
        }
    }
    Ok(regions)
}

/// A patch together with its flow score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPatch {
    pub region: PatchRegion,
    pub magnitude: f64,
}

fn ranking(a: &ScoredPatch, b: &ScoredPatch) -> std::cmp::Ordering {
    b.magnitude
        .total_cmp(&a.magnitude)
        .then(a.region.index.cmp(&b.region.index))
}

/// The `n` highest-scoring patches, highest first; equal scores keep
/// ascending region index.
pub fn top_patches(mut scored: Vec<ScoredPatch>, n: usize) -> Result<Vec<ScoredPatch>> {
    if n > scored.len() {
        return Err(Error::TooManyPatches {
            requested: n,
            available: scored.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if n < scored.len() {
        scored.select_nth_unstable_by(n - 1, ranking);
        scored.truncate(n);
    }
    scored.sort_by(ranking);
    Ok(scored)
}

/// Scores every region on `flow` and keeps the `n` most moving ones.
pub fn select_patches(
    regions: &[PatchRegion],
    flow: &FlowField,
    n: usize,
    mode: MagnitudeMode,
) -> Result<Vec<ScoredPatch>> {
    if n > regions.len() {
        return Err(Error::TooManyPatches {
            requested: n,
            available: regions.len(),
        });
    }
    let scored = regions
        .iter()
        .map(|r| {
            Ok(ScoredPatch {
                region: *r,
                magnitude: patch_flow_magnitude(flow, r, mode)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    top_patches(scored, n)
}
