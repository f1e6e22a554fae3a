//! Runs the enabled stages in order and records a run manifest.
//!
//! Stage order is enhance → flow → augment → sync → calibrate → eval. Each
//! stage reads only the configured inputs (augment reuses the flow stage's
//! fields when it ran, and estimates identical ones itself otherwise), so
//! switching one stage off never changes what another writes. The manifest
//! holds the config digest, the seed and a SHA-256 of every output file; it
//! carries no timestamps, so identical runs give identical manifests.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use pitchblur::blur::augment_sequence;
use pitchblur::camera::{optimize_focal, parse_extrinsics, CalibrationFrame, CameraModel, IDENTITY};
use pitchblur::enhance::enhance_frame;
use pitchblur::flow::{estimate_sequence_flow, export_flow, FlowField};
use pitchblur::io::{frame_file_name, load_boxes, load_frame_sequence, load_pose_track, save_frame, save_frame_sequence};
use pitchblur::metrics::mpjpe;
use pitchblur::split::{validate_split, SplitReport};
use pitchblur::sync::align_sequences;
use pitchblur::{BoundingBox, FrameSequence, SourceTag};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Enhance,
    Flow,
    Augment,
    Sync,
    Calibrate,
    Eval,
}

impl Stage {
    pub const ORDER: [Stage; 6] = [
        Stage::Enhance,
        Stage::Flow,
        Stage::Augment,
        Stage::Sync,
        Stage::Calibrate,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Enhance => "enhance",
            Stage::Flow => "flow",
            Stage::Augment => "augment",
            Stage::Sync => "sync",
            Stage::Calibrate => "calibrate",
            Stage::Eval => "eval",
        }
    }

    fn enabled(self, cfg: &PipelineConfig) -> bool {
        let s = &cfg.stages;
        match self {
            Stage::Enhance => s.enhance,
            Stage::Flow => s.flow,
            Stage::Augment => s.augment,
            Stage::Sync => s.sync,
            Stage::Calibrate => s.calibrate,
            Stage::Eval => s.eval,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// Output path relative to the run folder → hex SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// One-line result, e.g. the final loss.
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub split_check: String,
    /// Set when a stage failed; outputs of that stage may be incomplete.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

#[derive(Debug)]
pub struct StageError {
    /// `None` when the run manifest itself could not be written.
    pub stage: Option<Stage>,
    pub source: anyhow::Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stage {
            Some(stage) => write!(f, "stage `{stage}` failed: {:#}", self.source),
            None => write!(f, "run manifest: {:#}", self.source),
        }
    }
}

impl std::error::Error for StageError {}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: &'a Path,
    frames: Option<FrameSequence>,
    flows: Option<Vec<FlowField>>,
}

/// Executes the enabled stages of a validated config, writing into `out`.
///
/// On failure the manifest is still written, with `failed_stage` set.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<RunManifest, StageError> {
    let mut manifest = RunManifest {
        config_digest: cfg.digest(),
        seed: cfg.seed,
        stages: Vec::new(),
        split_check: String::new(),
        failed_stage: None,
    };
    let report = match &cfg.split.observed {
        Some(observed) => validate_split(observed, Some(&cfg.split.expected)),
        None => SplitReport::Skipped,
    };
    manifest.split_check = report.to_string();

    let mut run = Run {
        cfg,
        out,
        frames: None,
        flows: None,
    };
    let mut failure = None;
    for stage in Stage::ORDER.into_iter().filter(|s| s.enabled(cfg)) {
        log::info!("stage {stage}");
        match run.stage(stage) {
            Ok(record) => manifest.stages.push(record),
            Err(source) => {
                manifest.failed_stage = Some(stage);
                failure = Some(StageError {
                    stage: Some(stage),
                    source,
                });
                break;
            }
        }
    }
    let written = fs::create_dir_all(out).and_then(|_| fs::write(out.join(MANIFEST_NAME), manifest.to_json()));
    if let Some(e) = failure {
        if let Err(w) = written {
            log::warn!("could not write the run manifest: {w}");
        }
        return Err(e);
    }
    written.map_err(|e| StageError {
        stage: None,
        source: anyhow::anyhow!("writing {}: {e}", out.join(MANIFEST_NAME).display()),
    })?;
    Ok(manifest)
}

impl Run<'_> {
    fn stage(&mut self, stage: Stage) -> anyhow::Result<StageRecord> {
        let dir = self.out.join(stage.name());
        fs::create_dir_all(&dir)?;
        let (files, summary) = match stage {
            Stage::Enhance => self.enhance(&dir)?,
            Stage::Flow => self.flow(&dir)?,
            Stage::Augment => self.augment(&dir)?,
            Stage::Sync => self.sync(&dir)?,
            Stage::Calibrate => self.calibrate(&dir)?,
            Stage::Eval => self.eval(&dir)?,
        };
        let mut outputs = BTreeMap::new();
        for f in files {
            let rel = f.strip_prefix(self.out).unwrap_or(&f).to_string_lossy().replace('\\', "/");
            outputs.insert(rel, hash_file(&f)?);
        }
        Ok(StageRecord {
            stage,
            outputs,
            summary,
        })
    }

    fn frames(&mut self) -> anyhow::Result<&FrameSequence> {
        if self.frames.is_none() {
            let dir = self.cfg.paths.frames.as_ref().ok_or_else(|| anyhow::anyhow!("paths.frames is not set"))?;
            self.frames = Some(load_frame_sequence(dir, SourceTag::Dataset)?);
        }
        Ok(self.frames.as_ref().unwrap())
    }

    fn flows(&mut self) -> anyhow::Result<&[FlowField]> {
        if self.flows.is_none() {
            let params = self.cfg.flow;
            let flows = estimate_sequence_flow(self.frames()?.frames(), &params)?;
            self.flows = Some(flows);
        }
        Ok(self.flows.as_deref().unwrap())
    }

    fn enhance(&mut self, dir: &Path) -> anyhow::Result<(Vec<PathBuf>, String)> {
        let boxes: Option<HashMap<u64, BoundingBox>> = match &self.cfg.paths.boxes {
            Some(p) => Some(load_boxes(p)?.into_iter().map(|b| (b.frame_id, b)).collect()),
            None => None,
        };
        let cfg = self.cfg.enhance;
        let mut files = Vec::new();
        let mut skipped = 0;
        for frame in self.frames()?.frames() {
            let bbox = match &boxes {
                Some(map) => match map.get(&frame.id()) {
                    Some(b) => *b,
                    None => {
                        log::warn!("enhance: no box for frame {}, skipped", frame.id());
                        skipped += 1;
                        continue;
                    }
                },
                None => BoundingBox::new(frame.id(), 0.0, 0.0, frame.width() as f64, frame.height() as f64)?,
            };
            let path = dir.join(frame_file_name(frame.id()));
            save_frame(&path, &enhance_frame(frame, &bbox, &cfg)?)?;
            files.push(path);
        }
        Ok((files.clone(), format!("{} frames enhanced, {skipped} without a box", files.len())))
    }

    fn flow(&mut self, dir: &Path) -> anyhow::Result<(Vec<PathBuf>, String)> {
        let ids: Vec<u64> = self.frames()?.frames().iter().map(|f| f.id()).collect();
        let flows = self.flows()?;
        let mut files = Vec::new();
        for (id, flow) in ids.iter().zip(flows) {
            let path = dir.join(format!("{id:06}.flo"));
            export_flow(&path, flow)?;
            files.push(path);
        }
        Ok((files, format!("{} flow fields", flows.len())))
    }

    fn augment(&mut self, dir: &Path) -> anyhow::Result<(Vec<PathBuf>, String)> {
        let blur = self.cfg.blur_config();
        self.flows()?;
        let (seq, flows) = (self.frames.as_ref().unwrap(), self.flows.as_ref().unwrap());
        let (out, manifest) = augment_sequence(seq, flows, &blur)?;
        let mut files = save_frame_sequence(dir.join("frames"), &out)?;
        let path = dir.join("manifest.jsonl");
        manifest.save(&path)?;
        files.push(path);
        Ok((files, format!("{} frames, {} augmented", out.len(), manifest.len())))
    }

    fn sync(&mut self, dir: &Path) -> anyhow::Result<(Vec<PathBuf>, String)> {
        let p = &self.cfg.paths;
        let dims = self.cfg.sync.dims;
        let gt = load_pose_track(p.ground_truth.as_ref().unwrap(), dims)?.track;
        let pred = load_pose_track(p.predictions.as_ref().unwrap(), dims)?.track;
        let alignment = align_sequences(&gt, &pred, &self.cfg.sync.weights())?;
        let path = dir.join("alignment.csv");
        alignment.save(&path)?;
        Ok((
            vec![path],
            format!("{} pairs, total cost {}", alignment.pairs.len(), alignment.total_cost),
        ))
    }

    fn calibrate(&mut self, dir: &Path) -> anyhow::Result<(Vec<PathBuf>, String)> {
        let cfg = &self.cfg.calibrate;
        let p = &self.cfg.paths;
        let points = load_pose_track(p.points3d.as_ref().unwrap(), 3)?.track;
        let annotated = load_pose_track(p.annotations2d.as_ref().unwrap(), 2)?.track;
        let frames = points
            .poses()
            .iter()
            .filter_map(|p3| annotated.get(p3.frame_id()).map(|p2| (p3, p2)))
            .map(|(p3, p2)| CalibrationFrame::new(p3.clone(), p2.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        if frames.is_empty() {
            anyhow::bail!("3D points and 2D annotations share no frame ids");
        }
        let (rotation, translation) = match &p.extrinsics {
            Some(path) => parse_extrinsics(&fs::read_to_string(path)?)?,
            None => (IDENTITY, [0.0; 3]),
        };
        let (cx, cy) = match (cfg.cx, cfg.cy) {
            (Some(cx), Some(cy)) => (cx, cy),
            _ => {
                let (w, h) = self.frames()?.dims().unwrap_or((0, 0));
                (w as f64 / 2.0, h as f64 / 2.0)
            }
        };
        let cam = CameraModel::new(cfg.initial_focal, cx, cy, rotation, translation)?;
        let result = optimize_focal(&cam, &frames, &cfg.optimizer())?;
        let camera = dir.join("camera.txt");
        fs::write(&camera, result.camera.to_text())?;
        let trace = dir.join("trace.csv");
        fs::write(&trace, result.trace_csv())?;
        Ok((
            vec![camera, trace],
            format!(
                "focal {} after {} iterations, loss {}",
                result.camera.focal,
                result.iterations(),
                result.final_loss()
            ),
        ))
    }

    fn eval(&mut self, dir: &Path) -> anyhow::Result<(Vec<PathBuf>, String)> {
        let p = &self.cfg.paths;
        let dims = self.cfg.eval.dims;
        let gt = load_pose_track(p.ground_truth.as_ref().unwrap(), dims)?.track;
        let pred = load_pose_track(p.predictions.as_ref().unwrap(), dims)?.track;
        let report = mpjpe(&pred, &gt)?;
        if !report.skipped.is_empty() {
            log::warn!("eval: {} frame(s) present in only one track", report.skipped.len());
        }
        let path = dir.join("report.csv");
        fs::write(&path, report.to_csv())?;
        Ok((
            vec![path],
            format!("mpjpe {} over {} frames", report.aggregate, report.frame_count),
        ))
    }
}

pub fn hash_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}
