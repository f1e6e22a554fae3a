//! Frame ↔ ground-truth pose synchronisation.
//!
//! Poses estimated on the video are matched to the ground-truth track by a
//! one-to-one monotone alignment: every pose of the shorter track is paired
//! with a distinct pose of the longer one, pairs strictly increase in both
//! indices, and the sum of pair costs is minimal. Plain DTW would allow
//! many-to-one warping, which the annotation data cannot support.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FrameSequence, Pose, PoseTrack};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncWeights {
    pub spatial: f64,
    pub temporal: f64,
}

impl Default for SyncWeights {
    fn default() -> Self {
        Self {
            spatial: 1.0,
            temporal: 1.0,
        }
    }
}

impl SyncWeights {
    pub fn new(spatial: f64, temporal: f64) -> Result<Self> {
        let w = Self { spatial, temporal };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.spatial) || !ok(self.temporal) || self.spatial + self.temporal <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sync weights must be non-negative with a positive sum, got ({}, {})",
                self.spatial, self.temporal
            )));
        }
        Ok(())
    }
}

/// `g_s · mean_j ‖gt_j − pred_j‖² + g_t · (1 − cos(gt, pred))` with both
/// poses flattened for the cosine. A zero vector has cosine 0 with anything.
pub fn pose_pair_cost(gt: &Pose, pred: &Pose, w: &SyncWeights) -> Result<f64> {
    gt.check_compatible(pred)?;
    Ok(pair_cost_unchecked(gt.coords(), pred.coords(), gt.joint_count(), w))
}

fn pair_cost_unchecked(gt: &[f64], pred: &[f64], joints: usize, w: &SyncWeights) -> f64 {
    let mut sq = 0.0;
    let mut dot = 0.0;
    let mut ng = 0.0;
    let mut np = 0.0;
    for (&g, &p) in gt.iter().zip(pred) {
        let d = g - p;
        sq += d * d;
        dot += g * p;
        ng += g * g;
        np += p * p;
    }
    let cosine = if ng == 0.0 || np == 0.0 {
        0.0
    } else if sq == 0.0 {
        1.0
    } else {
        (dot / (ng.sqrt() * np.sqrt())).clamp(-1.0, 1.0)
    };
    w.spatial * (sq / joints as f64) + w.temporal * (1.0 - cosine)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `(gt_index, pred_index)` positions within the two tracks.
    pub pairs: Vec<(usize, usize)>,
    /// Cost of each pair, parallel to `pairs`.
    pub costs: Vec<f64>,
    pub total_cost: f64,
}

impl Alignment {
    pub fn is_monotone_injective(&self) -> bool {
        self.pairs.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1)
    }

    /// `gt_index,pred_index,pair_cost` lines and a `# total_cost,<v>`
    /// trailer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gt_index,pred_index,pair_cost\n");
        for (&(g, p), c) in self.pairs.iter().zip(&self.costs) {
            let _ = writeln!(out, "{g},{p},{c}");
        }
        let _ = writeln!(out, "# total_cost,{}", self.total_cost);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Minimum-cost one-to-one monotone alignment of two tracks.
///
/// Skips happen only on the longer track. Among equal-cost alignments the
/// lexicographically smallest pair list wins.
pub fn align_sequences(gt_track: &PoseTrack, pred_track: &PoseTrack, w: &SyncWeights) -> Result<Alignment> {
    w.validate()?;
    if gt_track.is_empty() || pred_track.is_empty() {
        return Err(Error::EmptyTrack);
    }
    gt_track.check_compatible(pred_track)?;
    let joints = gt_track.joint_count();
    let (n, m) = (gt_track.len(), pred_track.len());
    let mut cost = vec![0.0f64; n * m];
    for (i, g) in gt_track.poses().iter().enumerate() {
        for (j, p) in pred_track.poses().iter().enumerate() {
            cost[i * m + j] = pair_cost_unchecked(g.coords(), p.coords(), joints, w);
        }
    }
    let gt_is_short = n <= m;
    let (a, b) = if gt_is_short { (n, m) } else { (m, n) };
    let c = |s: usize, l: usize| if gt_is_short { cost[s * m + l] } else { cost[l * m + s] };

    // best[s][l]: cheapest way to place short[s..] into long[l..].
    let width = b + 1;
    let mut best = vec![f64::INFINITY; (a + 1) * width];
    for l in 0..=b {
        best[a * width + l] = 0.0;
    }
    for s in (0..a).rev() {
        for l in (0..b).rev() {
            if b - l < a - s {
                continue;
            }
            let take = c(s, l) + best[(s + 1) * width + l + 1];
            let skip = best[s * width + l + 1];
            best[s * width + l] = take.min(skip);
        }
    }

    let mut pairs = Vec::with_capacity(a);
    let mut costs = Vec::with_capacity(a);
    let (mut s, mut l) = (0, 0);
    while s < a {
        let take = c(s, l) + best[(s + 1) * width + l + 1];
        let skip = best[s * width + l + 1];
        if take <= skip {
            pairs.push(if gt_is_short { (s, l) } else { (l, s) });
            costs.push(c(s, l));
            s += 1;
        }
        l += 1;
    }
    let total_cost = costs.iter().sum();
    Ok(Alignment {
        pairs,
        costs,
        total_cost,
    })
}

/// Keeps the frames whose positions appear as prediction indices.
pub fn trim_unannotated(seq: &FrameSequence, alignment: &Alignment) -> Result<FrameSequence> {
    if alignment.pairs.is_empty() {
        return Err(Error::EmptyAlignment);
    }
    let frames = seq.frames();
    let kept = alignment
        .pairs
        .iter()
        .map(|&(_, p)| {
            frames.get(p).cloned().ok_or_else(|| {
                Error::OutOfBounds(format!("alignment index {p} but sequence has {} frames", frames.len()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(kept, seq.source())
}

/// Equal-width histogram of pair costs, for eyeballing an alignment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostHistogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<usize>,
}

pub fn cost_histogram(alignment: &Alignment, bins: usize) -> CostHistogram {
    let bins = bins.max(1);
    let min = alignment.costs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = alignment.costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0; bins];
    if alignment.costs.is_empty() {
        return CostHistogram {
            min: 0.0,
            max: 0.0,
            counts,
        };
    }
    let span = max - min;
    for &c in &alignment.costs {
        let bin = if span > 0.0 {
            (((c - min) / span) * bins as f64) as usize
        } else {
            0
        };
        counts[bin.min(bins - 1)] += 1;
    }
    CostHistogram { min, max, counts }
}
