//! Seeded, flow-guided patch augmentation of whole sequences.
//!
//! For every frame that has a successor the frame is cut into patches, the
//! patches are ranked by their score on the forward flow, the top `N` are
//! selected and each receives the configured effect. Motion-blur kernels are
//! drawn from a generator seeded by `(seed, frame_id)` alone, so frames can be
//! processed in any order and on any number of threads with identical
//! results. Every choice is written to an [`AugmentationManifest`] that
//! [`replay_manifest`] can re-apply bit for bit.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::effect::{apply_patch_effect_in_place, EffectKind, PatchEffect};
use super::kernel::{build_motion_kernel_with, KernelWarp, MotionKernel};
use super::patches::{init_patches, select_patches, PatchMode};
use crate::error::{Error, Result};
use crate::flow::{FlowField, MagnitudeMode};
use crate::types::{Frame, FrameSequence, PatchRegion};

/// Redraws allowed when a sampled kernel warps entirely off its grid (only
/// possible with [`KernelWarp::Uncentered`]).
const MAX_KERNEL_REDRAWS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlurConfig {
    pub patch_mode: PatchMode,
    /// Patches blurred per frame.
    pub n_patches: usize,
    /// Kernels drawn per frame and shared round-robin by the selected
    /// patches; 0 draws one kernel per patch.
    pub n_filters: usize,
    /// Inclusive range of odd kernel sizes.
    pub kernel_size_range: (usize, usize),
    /// Radians, sampled uniformly from `[min, max)`.
    pub angle_range: (f64, f64),
    pub scale_range: (f64, f64),
    pub effect: EffectKind,
    pub gaussian_sigma: f64,
    pub magnitude_mode: MagnitudeMode,
    pub kernel_warp: KernelWarp,
    pub seed: u64,
}

impl Default for BlurConfig {
    fn default() -> Self {
        Self {
            patch_mode: PatchMode::Fixed { size: 30 },
            n_patches: 3,
            n_filters: 2,
            kernel_size_range: (5, 15),
            angle_range: (0.0, TAU),
            scale_range: (0.8, 1.2),
            effect: EffectKind::MotionBlur,
            gaussian_sigma: 2.0,
            magnitude_mode: MagnitudeMode::PixelMagnitude,
            kernel_warp: KernelWarp::Centered,
            seed: 0,
        }
    }
}

impl BlurConfig {
    /// Every violated invariant, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_patches == 0 {
            out.push("n_patches must be >= 1".to_string());
        }
        let (kmin, kmax) = self.kernel_size_range;
        if kmin > kmax {
            out.push(format!("kernel_size_range {kmin}:{kmax} is empty"));
        }
        if kmin < 3 || kmin % 2 == 0 || kmax % 2 == 0 {
            out.push(format!("kernel_size_range {kmin}:{kmax} must hold odd sizes >= 3"));
        }
        let (amin, amax) = self.angle_range;
        if !(amin.is_finite() && amax.is_finite()) || amin > amax {
            out.push(format!("angle_range {amin}:{amax} is empty"));
        }
        let (smin, smax) = self.scale_range;
        if !(smin > 0.0 && smax.is_finite()) || smin > smax {
            out.push(format!("scale_range {smin}:{smax} must be positive and non-empty"));
        }
        if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
            out.push(format!("gaussian_sigma must be positive, got {}", self.gaussian_sigma));
        }
        match self.patch_mode {
            PatchMode::Grid { rows, cols } => {
                if rows == 0 || cols == 0 {
                    out.push(format!("grid {rows}x{cols} must have positive dimensions"));
                } else if self.n_patches > (rows * cols) as usize {
                    out.push(format!(
                        "N exceeds patch count ({} > {})",
                        self.n_patches,
                        rows * cols
                    ));
                }
            }
            PatchMode::Fixed { size: 0 } => out.push("patch size must be >= 1".to_string()),
            PatchMode::Fixed { .. } => {}
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().as_slice() {
            [] => Ok(()),
            problems => Err(Error::InvalidParameter(problems.join("; "))),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn effect_for(&self, kernel: Option<&MotionKernel>) -> EffectParams {
        match self.effect {
            EffectKind::None => EffectParams::None,
            EffectKind::BinaryMask => EffectParams::BinaryMask,
            EffectKind::GaussianBlur => EffectParams::GaussianBlur {
                sigma: self.gaussian_sigma,
            },
            EffectKind::MotionBlur => {
                let k = kernel.expect("motion blur draws kernels");
                EffectParams::MotionBlur {
                    kernel_size: k.size(),
                    angle: k.angle(),
                    scale: k.scale(),
                    warp: k.warp(),
                }
            }
        }
    }
}

/// Recorded parameters of one applied effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectParams {
    None,
    BinaryMask,
    GaussianBlur {
        sigma: f64,
    },
    MotionBlur {
        kernel_size: usize,
        angle: f64,
        scale: f64,
        warp: KernelWarp,
    },
}

impl EffectParams {
    pub fn instantiate(&self) -> Result<PatchEffect> {
        Ok(match *self {
            EffectParams::None => PatchEffect::None,
            EffectParams::BinaryMask => PatchEffect::BinaryMask,
            EffectParams::GaussianBlur { sigma } => PatchEffect::GaussianBlur { sigma },
            EffectParams::MotionBlur {
                kernel_size,
                angle,
                scale,
                warp,
            } => PatchEffect::MotionBlur(build_motion_kernel_with(kernel_size, angle, scale, warp)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub region: PatchRegion,
    pub magnitude: f64,
    pub effect: EffectParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub seed: u64,
    pub config_digest: String,
    /// Selected regions in descending score order.
    pub regions: Vec<RegionRecord>,
}

/// One record per augmented frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationManifest {
    pub records: Vec<FrameRecord>,
}

impl AugmentationManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Newline-delimited JSON, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<FrameRecord>, _>>()?;
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_jsonl(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Generator for one frame; depends only on the seed and frame id.
pub fn frame_rng(seed: u64, frame_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_id);
    rng
}

fn sample(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws `count` kernels from the configured ranges.
pub fn draw_kernels(rng: &mut ChaCha8Rng, cfg: &BlurConfig, count: usize) -> Result<Vec<MotionKernel>> {
    let (kmin, kmax) = cfg.kernel_size_range;
    let sizes = (kmax - kmin) / 2 + 1;
    let mut kernels = Vec::with_capacity(count);
    for _ in 0..count {
        let mut attempt = 0;
        loop {
            let size = kmin + 2 * rng.random_range(0..sizes);
            let angle = sample(rng, cfg.angle_range);
            let scale = sample(rng, cfg.scale_range);
            match build_motion_kernel_with(size, angle, scale, cfg.kernel_warp) {
                Ok(k) => {
                    kernels.push(k);
                    break;
                }
                Err(e) if attempt + 1 >= MAX_KERNEL_REDRAWS => return Err(e),
                Err(_) => attempt += 1,
            }
        }
    }
    Ok(kernels)
}

fn augment_frame(
    frame: &Frame,
    flow: &FlowField,
    regions: &[PatchRegion],
    cfg: &BlurConfig,
    digest: &str,
) -> Result<(Frame, FrameRecord)> {
    let selected = select_patches(regions, flow, cfg.n_patches, cfg.magnitude_mode)?;
    let kernels = if cfg.effect == EffectKind::MotionBlur {
        let mut rng = frame_rng(cfg.seed, frame.id());
        let count = if cfg.n_filters == 0 {
            selected.len()
        } else {
            cfg.n_filters
        };
        draw_kernels(&mut rng, cfg, count)?
    } else {
        Vec::new()
    };

    let mut out = frame.clone();
    let mut records = Vec::with_capacity(selected.len());
    for (i, patch) in selected.iter().enumerate() {
        let kernel = (!kernels.is_empty()).then(|| &kernels[i % kernels.len()]);
        let effect = match kernel {
            Some(k) => PatchEffect::MotionBlur(k.clone()),
            None => cfg.effect_for(None).instantiate()?,
        };
        apply_patch_effect_in_place(&mut out, &patch.region, &effect)?;
        records.push(RegionRecord {
            region: patch.region,
            magnitude: patch.magnitude,
            effect: cfg.effect_for(kernel),
        });
    }
    Ok((
        out,
        FrameRecord {
            frame_id: frame.id(),
            seed: cfg.seed,
            config_digest: digest.to_string(),
            regions: records,
        },
    ))
}

/// Augments every frame except the last using `flows[t]` (pair `t → t+1`).
pub fn augment_sequence(
    seq: &FrameSequence,
    flows: &[FlowField],
    cfg: &BlurConfig,
) -> Result<(FrameSequence, AugmentationManifest)> {
    cfg.validate()?;
    let expected = seq.len().saturating_sub(1);
    if flows.len() != expected {
        return Err(Error::FlowCountMismatch {
            frames: seq.len(),
            expected,
            found: flows.len(),
        });
    }
    let Some(dims) = seq.dims() else {
        return Ok((seq.clone(), AugmentationManifest::default()));
    };
    if let Some(f) = flows.iter().find(|f| f.dims() != dims) {
        return Err(Error::dims(
            format!("{}x{} flow", dims.0, dims.1),
            format!("{}x{}", f.width(), f.height()),
        ));
    }
    let regions = if expected > 0 {
        init_patches(dims, cfg.patch_mode)?
    } else {
        Vec::new()
    };
    let digest = cfg.digest();

    let frames = seq.frames();
    let results: Vec<(Frame, FrameRecord)> = frames[..expected]
        .par_iter()
        .zip(flows.par_iter())
        .map(|(frame, flow)| augment_frame(frame, flow, &regions, cfg, &digest))
        .collect::<Result<_>>()?;

    let mut out_frames = Vec::with_capacity(frames.len());
    let mut records = Vec::with_capacity(results.len());
    for (frame, record) in results {
        out_frames.push(frame);
        records.push(record);
    }
    out_frames.extend(frames[expected..].iter().cloned());
    Ok((
        FrameSequence::new(out_frames, seq.source())?,
        AugmentationManifest { records },
    ))
}

/// Re-applies recorded effects to the original frames.
pub fn replay_manifest(seq: &FrameSequence, manifest: &AugmentationManifest) -> Result<FrameSequence> {
    let frames: Vec<Frame> = seq
        .frames()
        .par_iter()
        .map(|frame| {
            let mut out = frame.clone();
            if let Some(record) = manifest.records.iter().find(|r| r.frame_id == frame.id()) {
                for r in &record.regions {
                    apply_patch_effect_in_place(&mut out, &r.region, &r.effect.instantiate()?)?;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    FrameSequence::new(frames, seq.source())
}
