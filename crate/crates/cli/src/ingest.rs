//! Turns an in-the-wild clip with external pseudo-labels into a training
//! shard: blurred frames, the untouched keypoints and the blur manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pitchblur::blur::{augment_sequence, BlurConfig};
use pitchblur::flow::{estimate_sequence_flow, FlowParams};
use pitchblur::io::{load_frame_sequence, load_pose_track, save_frame_sequence, save_pose_track};
use pitchblur::{FrameSequence, SourceTag};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShardSummary {
    pub frames: usize,
    /// Frame ids dropped for lack of pseudo-labels.
    pub excluded: Vec<u64>,
    pub augmented: usize,
    pub config_digest: String,
}

pub struct IngestInputs<'a> {
    pub frames_dir: &'a Path,
    pub pseudo_gt: &'a Path,
    /// Coordinate dimensionality of the keypoint file.
    pub dims: usize,
    pub blur: &'a BlurConfig,
    pub flow: &'a FlowParams,
}

/// Writes `frames/`, `keypoints.csv`, `manifest.jsonl` and `shard.json`
/// into `out`.
pub fn ingest_itw(inputs: &IngestInputs<'_>, out: &Path) -> anyhow::Result<ShardSummary> {
    inputs.blur.validate()?;
    let seq = load_frame_sequence(inputs.frames_dir, SourceTag::InTheWild)?;
    let labels = load_pose_track(inputs.pseudo_gt, inputs.dims)
        .with_context(|| format!("pseudo-labels {}", inputs.pseudo_gt.display()))?
        .track;

    let have: std::collections::HashSet<u64> = seq.frames().iter().map(|f| f.id()).collect();
    let orphans: Vec<u64> = labels.poses().iter().map(|p| p.frame_id()).filter(|id| !have.contains(id)).collect();
    if !orphans.is_empty() {
        bail!("pseudo-labels reference {} frame(s) not in the clip, first {}", orphans.len(), orphans[0]);
    }

    let (kept, excluded): (Vec<_>, Vec<_>) = seq.into_frames().into_iter().partition(|f| labels.get(f.id()).is_some());
    let excluded: Vec<u64> = excluded.iter().map(|f| f.id()).collect();
    for id in &excluded {
        log::warn!("frame {id} has no pseudo-label, excluded from the shard");
    }
    if kept.is_empty() {
        bail!("no frame of the clip has a pseudo-label");
    }
    let kept = FrameSequence::new(kept, SourceTag::InTheWild)?;
    let flows = estimate_sequence_flow(kept.frames(), inputs.flow)?;
    let (blurred, manifest) = augment_sequence(&kept, &flows, inputs.blur)?;

    fs::create_dir_all(out)?;
    save_frame_sequence(out.join("frames"), &blurred)?;
    save_pose_track(out.join("keypoints.csv"), &labels)?;
    manifest.save(out.join("manifest.jsonl"))?;
    let summary = ShardSummary {
        frames: blurred.len(),
        excluded,
        augmented: manifest.len(),
        config_digest: inputs.blur.digest(),
    };
    let path: PathBuf = out.join("shard.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}
