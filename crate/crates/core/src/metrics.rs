//! Mean per-joint position error between pose tracks.
//!
//! No root alignment or Procrustes fit is applied: the error is the raw
//! Euclidean distance in whatever units the tracks use.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PoseTrack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLoss {
    pub frame_id: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_frame: Vec<FrameLoss>,
    pub aggregate: f64,
    pub frame_count: usize,
    pub joint_count: usize,
    pub dims: usize,
    /// Frames present in only one of the tracks.
    pub skipped: Vec<u64>,
}

impl EvalReport {
    /// `frame_id,loss` rows followed by a `# mean,<aggregate>` trailer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_id,loss\n");
        for f in &self.per_frame {
            let _ = writeln!(out, "{},{}", f.frame_id, f.loss);
        }
        let _ = writeln!(out, "# mean,{}", self.aggregate);
        out
    }
}

/// Per-frame `(1/J) Σ_j ‖pred_j − gt_j‖₂` on frames present in both tracks,
/// averaged over those frames.
pub fn mpjpe(pred: &PoseTrack, gt: &PoseTrack) -> Result<EvalReport> {
    pred.check_compatible(gt)?;
    let joints = gt.joint_count();
    let mut per_frame = Vec::new();
    let mut skipped = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (p, g) = (pred.poses(), gt.poses());
    while i < p.len() || j < g.len() {
        match (p.get(i), g.get(j)) {
            (Some(a), Some(b)) if a.frame_id() == b.frame_id() => {
                let total: f64 = a
                    .joints()
                    .zip(b.joints())
                    .map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
                    .sum();
                per_frame.push(FrameLoss {
                    frame_id: a.frame_id(),
                    loss: total / joints as f64,
                });
                i += 1;
                j += 1;
            }
            (Some(a), Some(b)) if a.frame_id() < b.frame_id() => {
                skipped.push(a.frame_id());
                i += 1;
            }
            (Some(_), Some(b)) => {
                skipped.push(b.frame_id());
                j += 1;
            }
            (Some(a), None) => {
                skipped.push(a.frame_id());
                i += 1;
            }
            (None, Some(b)) => {
                skipped.push(b.frame_id());
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    if per_frame.is_empty() {
        return Err(Error::NoOverlap);
    }
    let aggregate = per_frame.iter().map(|f| f.loss).sum::<f64>() / per_frame.len() as f64;
    Ok(EvalReport {
        frame_count: per_frame.len(),
        per_frame,
        aggregate,
        joint_count: joints,
        dims: gt.dims(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub loss: f64,
}

/// Runs sorted by ascending aggregate loss.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,loss\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{}", r.label, r.loss);
        }
        out
    }
}

pub fn compare_runs(reports: &[EvalReport], labels: &[impl AsRef<str>]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::InvalidParameter("no reports to compare".into()));
    }
    if reports.len() != labels.len() {
        return Err(Error::dims(format!("{} labels", reports.len()), labels.len()));
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .zip(labels)
        .map(|(r, l)| ComparisonRow {
            label: l.as_ref().to_string(),
            loss: r.aggregate,
        })
        .collect();
    rows.sort_by(|a, b| a.loss.total_cmp(&b.loss));
    Ok(ComparisonTable { rows })
}
