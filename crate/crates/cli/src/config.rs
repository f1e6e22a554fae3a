//! The declarative pipeline configuration file (TOML).
//!
//! Every section is optional and falls back to its defaults, so an empty
//! file is a complete configuration. Unknown keys are rejected. Validation
//! collects every problem it finds instead of stopping at the first one.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use pitchblur::blur::{BlurConfig, EffectKind, KernelWarp, PatchMode};
use pitchblur::camera::{GradientMode, OptimizerConfig};
use pitchblur::enhance::EnhanceConfig;
use pitchblur::flow::{FlowParams, MagnitudeMode};
use pitchblur::split::SplitManifest;
use pitchblur::sync::SyncWeights;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub enhance: bool,
    pub flow: bool,
    pub augment: bool,
    pub sync: bool,
    pub calibrate: bool,
    pub eval: bool,
}

/// Inputs. Relative paths are resolved against the config file's folder.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Folder of numbered PNG frames.
    pub frames: Option<PathBuf>,
    /// Pitcher boxes for enhancement; without them whole frames are enhanced.
    pub boxes: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    /// 3D reference joints for calibration.
    pub points3d: Option<PathBuf>,
    /// Hand-annotated 2D joints matching `points3d`.
    pub annotations2d: Option<PathBuf>,
    /// Rotation and translation, 12 numbers.
    pub extrinsics: Option<PathBuf>,
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.frames,
            &mut self.boxes,
            &mut self.ground_truth,
            &mut self.predictions,
            &mut self.points3d,
            &mut self.annotations2d,
            &mut self.extrinsics,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// User-facing blur settings; angles are in degrees here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub patch_mode: PatchMode,
    pub patches: usize,
    pub filters: usize,
    pub kernel_size: (usize, usize),
    pub angle_deg: (f64, f64),
    pub scale: (f64, f64),
    pub effect: EffectKind,
    pub gaussian_sigma: f64,
    pub magnitude: MagnitudeMode,
    /// Warp kernels with the legacy uncentered matrix.
    pub legacy_matrix: bool,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let b = BlurConfig::default();
        Self {
            patch_mode: b.patch_mode,
            patches: b.n_patches,
            filters: b.n_filters,
            kernel_size: b.kernel_size_range,
            angle_deg: (b.angle_range.0.to_degrees(), b.angle_range.1.to_degrees()),
            scale: b.scale_range,
            effect: b.effect,
            gaussian_sigma: b.gaussian_sigma,
            magnitude: b.magnitude_mode,
            legacy_matrix: false,
        }
    }
}

impl AugmentSection {
    pub fn blur_config(&self, seed: u64) -> BlurConfig {
        BlurConfig {
            patch_mode: self.patch_mode,
            n_patches: self.patches,
            n_filters: self.filters,
            kernel_size_range: self.kernel_size,
            angle_range: (self.angle_deg.0.to_radians(), self.angle_deg.1.to_radians()),
            scale_range: self.scale,
            effect: self.effect,
            gaussian_sigma: self.gaussian_sigma,
            magnitude_mode: self.magnitude,
            kernel_warp: if self.legacy_matrix {
                KernelWarp::Uncentered
            } else {
                KernelWarp::Centered
            },
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncSection {
    pub spatial: f64,
    pub temporal: f64,
    /// Coordinate dimensionality of both tracks.
    pub dims: usize,
}

impl Default for SyncSection {
    fn default() -> Self {
        let w = SyncWeights::default();
        Self {
            spatial: w.spatial,
            temporal: w.temporal,
            dims: 2,
        }
    }
}

impl SyncSection {
    pub fn weights(&self) -> SyncWeights {
        SyncWeights {
            spatial: self.spatial,
            temporal: self.temporal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub initial_focal: f64,
    /// Principal point; defaults to the centre of the first frame.
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub gradient: GradientMode,
    pub backtracking: bool,
    pub refine_translation: bool,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        let o = OptimizerConfig::default();
        Self {
            initial_focal: 1000.0,
            cx: None,
            cy: None,
            learning_rate: o.learning_rate,
            max_iters: o.max_iters,
            tolerance: o.tolerance,
            gradient: o.gradient_mode,
            backtracking: o.backtracking,
            refine_translation: o.refine_translation,
        }
    }
}

impl CalibrateSection {
    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            max_iters: self.max_iters,
            tolerance: self.tolerance,
            gradient_mode: self.gradient,
            backtracking: self.backtracking,
            refine_translation: self.refine_translation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub dims: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { dims: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub expected: SplitManifest,
    /// Counts of the dataset at hand; the check is skipped without them.
    pub observed: Option<SplitManifest>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            expected: SplitManifest::REFERENCE,
            observed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub stages: Stages,
    pub paths: Paths,
    pub enhance: EnhanceConfig,
    pub flow: FlowParams,
    pub augment: AugmentSection,
    pub sync: SyncSection,
    pub calibrate: CalibrateSection,
    pub eval: EvalSection,
    pub split: SplitSection,
}

/// Every problem found in a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} configuration error(s):", self.0.len())?;
        for e in &self.0 {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl PipelineConfig {
    pub fn blur_config(&self) -> BlurConfig {
        self.augment.blur_config(self.seed)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Module invariants of every block plus the inputs each enabled stage
    /// needs.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let prefixed = |section: &'static str, errs: Vec<String>| errs.into_iter().map(move |e| format!("{section}: {e}"));
        out.extend(prefixed("enhance", self.enhance.problems()));
        if let Err(e) = self.flow.validate() {
            out.push(format!("flow: {e}"));
        }
        out.extend(prefixed("augment", self.blur_config().problems()));
        if let Err(e) = self.sync.weights().validate() {
            out.push(format!("sync: {e}"));
        }
        for (section, dims) in [("sync", self.sync.dims), ("eval", self.eval.dims)] {
            if dims != 2 && dims != 3 {
                out.push(format!("{section}: dims must be 2 or 3, got {dims}"));
            }
        }
        if !(self.calibrate.initial_focal > 0.0 && self.calibrate.initial_focal < pitchblur::camera::MAX_FOCAL) {
            out.push(format!(
                "calibrate: initial_focal must be in (0, 1e6), got {}",
                self.calibrate.initial_focal
            ));
        }
        if let Err(e) = self.calibrate.optimizer().validate() {
            out.push(format!("calibrate: {e}"));
        }

        let p = &self.paths;
        let s = &self.stages;
        let mut need = |enabled: bool, stage: &str, key: &str, path: &Option<PathBuf>| {
            if enabled && path.is_none() {
                out.push(format!("{stage}: stage enabled but paths.{key} is not set"));
            }
        };
        need(s.enhance || s.flow || s.augment, "frames", "frames", &p.frames);
        need(s.sync, "sync", "ground_truth", &p.ground_truth);
        need(s.sync, "sync", "predictions", &p.predictions);
        need(s.eval, "eval", "ground_truth", &p.ground_truth);
        need(s.eval, "eval", "predictions", &p.predictions);
        need(s.calibrate, "calibrate", "points3d", &p.points3d);
        need(s.calibrate, "calibrate", "annotations2d", &p.annotations2d);
        if s.calibrate && (self.calibrate.cx.is_none() || self.calibrate.cy.is_none()) && p.frames.is_none() {
            out.push("calibrate: set cx and cy or paths.frames to derive the principal point".into());
        }
        for (key, path) in [
            ("frames", &p.frames),
            ("boxes", &p.boxes),
            ("ground_truth", &p.ground_truth),
            ("predictions", &p.predictions),
            ("points3d", &p.points3d),
            ("annotations2d", &p.annotations2d),
            ("extrinsics", &p.extrinsics),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    out.push(format!("paths.{key}: {} does not exist", path.display()));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigErrors> {
        match self.problems() {
            p if p.is_empty() => Ok(()),
            p => Err(ConfigErrors(p)),
        }
    }

    /// Parses TOML text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigErrors> {
        let mut errors = Vec::new();
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigErrors(vec![e.to_string()]))?;
        let schema = toml::Table::try_from(Self::schema()).expect("schema serializes");
        unknown_keys(&mut table, &schema, "", &mut errors);

        let mut cfg = Self::default();
        if let Some(v) = table.remove("seed") {
            match v.try_into::<u64>() {
                Ok(seed) => cfg.seed = seed,
                Err(e) => errors.push(format!("seed: {e}")),
            }
        }
        section(&mut table, "stages", &mut cfg.stages, &mut errors);
        section(&mut table, "paths", &mut cfg.paths, &mut errors);
        section(&mut table, "enhance", &mut cfg.enhance, &mut errors);
        section(&mut table, "flow", &mut cfg.flow, &mut errors);
        section(&mut table, "augment", &mut cfg.augment, &mut errors);
        section(&mut table, "sync", &mut cfg.sync, &mut errors);
        section(&mut table, "calibrate", &mut cfg.calibrate, &mut errors);
        section(&mut table, "eval", &mut cfg.eval, &mut errors);
        section(&mut table, "split", &mut cfg.split, &mut errors);
        cfg.paths.resolve(base);
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigErrors(errors))
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigErrors> {
        let text = fs::read_to_string(path).map_err(|e| ConfigErrors(vec![format!("{}: {e}", path.display())]))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses, then checks invariants; both stages report every problem.
    pub fn load_validated(path: &Path) -> Result<Self, ConfigErrors> {
        let cfg = Self::load(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    // A configuration with every optional key present, used to recognise
    // unknown keys.
    fn schema() -> Self {
        let some = Some(PathBuf::from("."));
        let mut cfg = Self::default();
        cfg.paths = Paths {
            frames: some.clone(),
            boxes: some.clone(),
            ground_truth: some.clone(),
            predictions: some.clone(),
            points3d: some.clone(),
            annotations2d: some.clone(),
            extrinsics: some,
        };
        cfg.calibrate.cx = Some(0.0);
        cfg.calibrate.cy = Some(0.0);
        cfg.split.observed = Some(SplitManifest::REFERENCE);
        cfg
    }
}

fn section<T: DeserializeOwned>(table: &mut toml::Table, key: &str, slot: &mut T, errors: &mut Vec<String>) {
    if let Some(v) = table.remove(key) {
        match v.try_into::<T>() {
            Ok(t) => *slot = t,
            Err(e) => errors.push(format!("{key}: {}", e.message().trim())),
        }
    }
}

// Removes and reports keys absent from `schema`, recursing into tables.
fn unknown_keys(table: &mut toml::Table, schema: &toml::Table, prefix: &str, errors: &mut Vec<String>) {
    let mut drop = Vec::new();
    for (key, value) in table.iter_mut() {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match schema.get(key) {
            None => {
                errors.push(format!("unknown key `{path}`"));
                drop.push(key.clone());
            }
            Some(toml::Value::Table(sub)) => {
                if let toml::Value::Table(inner) = value {
                    unknown_keys(inner, sub, &path, errors);
                }
            }
            Some(_) => {}
        }
    }
    for key in drop {
        table.remove(&key);
    }
}
