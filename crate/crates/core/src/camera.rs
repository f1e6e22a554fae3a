//! Pinhole projection and focal-length recovery.
//!
//! The 3D ground truth lives in a world frame and the 2D training targets
//! need pixels, but the camera intrinsics are unknown. With extrinsics given
//! (or the world frame already aligned to the camera) the focal length is
//! recovered by gradient descent, `f ← f − α·dL/df`, on the mean per-joint
//! reprojection error against a hand-annotated reference frame. Each step is
//! wrapped in a halving line search so a fixed `α` cannot make the loss
//! grow.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Pose;

/// Accepted focal lengths lie strictly inside `(0, MAX_FOCAL)`.
pub const MAX_FOCAL: f64 = 1e6;
const MAX_HALVINGS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    /// World → camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// World → camera translation.
    pub translation: [f64; 3],
}

pub const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl CameraModel {
    pub fn new(focal: f64, cx: f64, cy: f64, rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let cam = Self {
            focal,
            cx,
            cy,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Identity extrinsics with the principal point at the image centre.
    pub fn for_image(width: u32, height: u32, focal: f64) -> Result<Self> {
        Self::new(focal, width as f64 / 2.0, height as f64 / 2.0, IDENTITY, [0.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::InvalidParameter(format!("focal length must be positive, got {}", self.focal)));
        }
        let finite = self.cx.is_finite()
            && self.cy.is_finite()
            && self.rotation.iter().flatten().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("camera has non-finite parameters".into()));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-9 {
                    return Err(Error::InvalidParameter("rotation is not orthonormal".into()));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("rotation determinant is {det}, not +1")));
        }
        Ok(())
    }

    pub fn with_focal(mut self, focal: f64) -> Self {
        self.focal = focal;
        self
    }

    fn to_camera(&self, p: &[f64]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// Normalised image coordinates `(X/Z, Y/Z)` of every joint.
    fn normalised(&self, points3d: &Pose) -> Result<Vec<[f64; 2]>> {
        if points3d.dims() != 3 {
            return Err(Error::dims("gamma 3", format!("gamma {}", points3d.dims())));
        }
        points3d
            .joints()
            .enumerate()
            .map(|(j, p)| {
                let [x, y, z] = self.to_camera(p);
                if z <= 0.0 {
                    return Err(Error::BehindCamera { joint: j, depth: z });
                }
                Ok([x / z, y / z])
            })
            .collect()
    }

    /// Text form: `f`, `cx`, `cy`, `R` (9 values, row-major) and `t` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "f {}", self.focal);
        let _ = writeln!(out, "cx {}", self.cx);
        let _ = writeln!(out, "cy {}", self.cy);
        let r: Vec<String> = self.rotation.iter().flatten().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "R {}", r.join(" "));
        let t: Vec<String> = self.translation.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "t {}", t.join(" "));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidParameter(format!("camera file: {m}"));
        let mut focal = None;
        let mut cx = None;
        let mut cy = None;
        let mut rotation = None;
        let mut translation = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let values: Vec<f64> = parts
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad number `{v}`"))))
                .collect::<Result<_>>()?;
            match (key, values.as_slice()) {
                ("f", [v]) => focal = Some(*v),
                ("cx", [v]) => cx = Some(*v),
                ("cy", [v]) => cy = Some(*v),
                ("R", v) if v.len() == 9 => {
                    rotation = Some([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
                }
                ("t", [a, b, c]) => translation = Some([*a, *b, *c]),
                _ => return Err(bad(format!("unexpected line `{line}`"))),
            }
        }
        Self::new(
            focal.ok_or_else(|| bad("missing f".into()))?,
            cx.ok_or_else(|| bad("missing cx".into()))?,
            cy.ok_or_else(|| bad("missing cy".into()))?,
            rotation.unwrap_or(IDENTITY),
            translation.unwrap_or([0.0; 3]),
        )
    }
}

/// Reads 12 reals (rotation row-major, then translation) separated by
/// whitespace or commas.
pub fn parse_extrinsics(text: &str) -> Result<([[f64; 3]; 3], [f64; 3])> {
    let values: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("extrinsics: bad number `{s}`")))
        })
        .collect::<Result<_>>()?;
    if values.len() != 12 {
        return Err(Error::InvalidParameter(format!(
            "extrinsics need 12 values, found {}",
            values.len()
        )));
    }
    let v = &values;
    Ok((
        [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]],
        [v[9], v[10], v[11]],
    ))
}

/// `(u, v) = (f·X/Z + cx, f·Y/Z + cy)` with `X = R·X_w + t`, per joint.
pub fn project(points3d: &Pose, cam: &CameraModel) -> Result<Pose> {
    let coords = cam
        .normalised(points3d)?
        .into_iter()
        .flat_map(|[x, y]| [cam.focal * x + cam.cx, cam.focal * y + cam.cy])
        .collect();
    Pose::new(points3d.frame_id(), 2, coords)
}

/// A 3D reference pose and its hand-annotated 2D counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFrame {
    pub points3d: Pose,
    pub annotated: Pose,
}

impl CalibrationFrame {
    pub fn new(points3d: Pose, annotated: Pose) -> Result<Self> {
        if points3d.dims() != 3 || annotated.dims() != 2 {
            return Err(Error::dims(
                "3D points with 2D annotation",
                format!("gamma {} with gamma {}", points3d.dims(), annotated.dims()),
            ));
        }
        if points3d.joint_count() != annotated.joint_count() {
            return Err(Error::InconsistentJoints {
                expected: points3d.joint_count(),
                found: annotated.joint_count(),
            });
        }
        Ok(Self { points3d, annotated })
    }
}

/// Per-frame normalised coordinates and annotation offsets from the
/// principal point; the loss is then a function of `f` alone.
struct Prepared {
    frames: Vec<Vec<([f64; 2], [f64; 2])>>,
}

impl Prepared {
    fn new(cam: &CameraModel, frames: &[CalibrationFrame]) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidParameter("no calibration frames".into()));
        }
        let frames = frames
            .iter()
            .map(|fr| {
                let norm = cam.normalised(&fr.points3d)?;
                Ok(norm
                    .into_iter()
                    .zip(fr.annotated.joints())
                    .map(|(n, a)| (n, [a[0] - cam.cx, a[1] - cam.cy]))
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self { frames })
    }

    fn loss(&self, focal: f64) -> f64 {
        let per_frame = self.frames.iter().map(|joints| {
            let sum: f64 = joints
                .iter()
                .map(|([x, y], [ax, ay])| (focal * x - ax).hypot(focal * y - ay))
                .sum();
            sum / joints.len() as f64
        });
        per_frame.sum::<f64>() / self.frames.len() as f64
    }

    fn gradient(&self, focal: f64) -> f64 {
        let per_frame = self.frames.iter().map(|joints| {
            let sum: f64 = joints
                .iter()
                .map(|([x, y], [ax, ay])| {
                    let (rx, ry) = (focal * x - ax, focal * y - ay);
                    let norm = rx.hypot(ry);
                    if norm == 0.0 {
                        0.0
                    } else {
                        (rx * x + ry * y) / norm
                    }
                })
                .sum();
            sum / joints.len() as f64
        });
        per_frame.sum::<f64>() / self.frames.len() as f64
    }
}

/// Mean per-joint pixel distance between projected and annotated joints.
pub fn reprojection_loss(cam: &CameraModel, points3d: &Pose, annotated2d: &Pose) -> Result<f64> {
    let frame = CalibrationFrame::new(points3d.clone(), annotated2d.clone())?;
    mean_reprojection_loss(cam, std::slice::from_ref(&frame))
}

/// Reprojection loss averaged over several reference frames.
pub fn mean_reprojection_loss(cam: &CameraModel, frames: &[CalibrationFrame]) -> Result<f64> {
    Ok(Prepared::new(cam, frames)?.loss(cam.focal))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Closed form; a joint with zero residual contributes 0.
    #[default]
    Analytic,
    /// Central difference with step `max(1e-6·f, 1e-3)`.
    FiniteDifference,
}

pub fn finite_difference_step(focal: f64) -> f64 {
    (1e-6 * focal).max(1e-3)
}

/// `dL/df` over the reference frames.
pub fn loss_gradient(cam: &CameraModel, frames: &[CalibrationFrame], mode: GradientMode) -> Result<f64> {
    let prepared = Prepared::new(cam, frames)?;
    Ok(gradient_of(&prepared, cam.focal, mode))
}

fn gradient_of(prepared: &Prepared, focal: f64, mode: GradientMode) -> f64 {
    match mode {
        GradientMode::Analytic => prepared.gradient(focal),
        GradientMode::FiniteDifference => {
            let h = finite_difference_step(focal);
            (prepared.loss(focal + h) - prepared.loss(focal - h)) / (2.0 * h)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once an accepted step changes the loss by less than this.
    pub tolerance: f64,
    pub gradient_mode: GradientMode,
    /// Halve rejected steps instead of taking the raw update.
    pub backtracking: bool,
    /// Also refine the translation after each focal step.
    pub refine_translation: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e4,
            max_iters: 500,
            tolerance: 1e-8,
            gradient_mode: GradientMode::Analytic,
            backtracking: true,
            refine_translation: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidParameter(format!("tolerance must be >= 0, got {}", self.tolerance)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub focal: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub camera: CameraModel,
    /// Entry 0 is the starting point; one entry per accepted step follows.
    pub trace: Vec<TraceEntry>,
}

impl Calibration {
    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }

    pub fn final_loss(&self) -> f64 {
        self.trace.last().map(|t| t.loss).unwrap_or(f64::NAN)
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,focal,loss\n");
        for t in &self.trace {
            let _ = writeln!(out, "{},{},{}", t.iteration, t.focal, t.loss);
        }
        out
    }
}

fn in_range(f: f64) -> bool {
    f > 0.0 && f < MAX_FOCAL
}

/// Descends `f ← f − α·dL/df` until the loss change drops below the
/// tolerance, the gradient vanishes, no descent step exists, or `max_iters`
/// steps were taken.
pub fn optimize_focal(cam0: &CameraModel, frames: &[CalibrationFrame], opt: &OptimizerConfig) -> Result<Calibration> {
    cam0.validate()?;
    opt.validate()?;
    let mut cam = *cam0;
    let mut prepared = Prepared::new(&cam, frames)?;
    let mut loss = prepared.loss(cam.focal);
    let mut trace = vec![TraceEntry {
        iteration: 0,
        focal: cam.focal,
        loss,
    }];

    for iteration in 1..=opt.max_iters {
        let grad = gradient_of(&prepared, cam.focal, opt.gradient_mode);
        if grad == 0.0 {
            break;
        }
        let mut step = opt.learning_rate * grad;
        let accepted = if opt.backtracking {
            let mut found = None;
            for _ in 0..MAX_HALVINGS {
                let trial = cam.focal - step;
                if in_range(trial) {
                    let trial_loss = prepared.loss(trial);
                    if trial_loss < loss {
                        found = Some((trial, trial_loss));
                        break;
                    }
                }
                step *= 0.5;
            }
            found
        } else {
            let trial = cam.focal - step;
            if !in_range(trial) || !trial.is_finite() {
                return Err(Error::Diverged {
                    focal: trial,
                    iteration,
                });
            }
            Some((trial, prepared.loss(trial)))
        };
        let Some((focal, mut new_loss)) = accepted else {
            break;
        };
        cam.focal = focal;
        if opt.refine_translation {
            if let Some((t, l)) = refine_translation_step(&cam, frames, opt.learning_rate, new_loss)? {
                cam.translation = t;
                prepared = Prepared::new(&cam, frames)?;
                new_loss = l;
            }
        }
        let change = loss - new_loss;
        loss = new_loss;
        trace.push(TraceEntry {
            iteration,
            focal: cam.focal,
            loss,
        });
        if change.abs() < opt.tolerance {
            break;
        }
    }
    Ok(Calibration { camera: cam, trace })
}

/// One backtracking descent step on the translation using central
/// differences. Returns `None` when no step lowers the loss or a trial puts
/// a joint behind the camera.
fn refine_translation_step(
    cam: &CameraModel,
    frames: &[CalibrationFrame],
    learning_rate: f64,
    loss: f64,
) -> Result<Option<([f64; 3], f64)>> {
    let eval = |t: [f64; 3]| -> Option<f64> {
        let trial = CameraModel { translation: t, ..*cam };
        Prepared::new(&trial, frames).ok().map(|p| p.loss(cam.focal))
    };
    let mut grad = [0.0; 3];
    for (k, g) in grad.iter_mut().enumerate() {
        let h = (1e-6 * cam.translation[k].abs()).max(1e-6);
        let (mut plus, mut minus) = (cam.translation, cam.translation);
        plus[k] += h;
        minus[k] -= h;
        match (eval(plus), eval(minus)) {
            (Some(a), Some(b)) => *g = (a - b) / (2.0 * h),
            _ => return Ok(None),
        }
    }
    // Translation is in world units, far smaller than pixels; scale the
    // focal learning rate down by f² so steps are comparable.
    let mut scale = learning_rate / (cam.focal * cam.focal);
    for _ in 0..MAX_HALVINGS {
        let t = [
            cam.translation[0] - scale * grad[0],
            cam.translation[1] - scale * grad[1],
            cam.translation[2] - scale * grad[2],
        ];
        if let Some(l) = eval(t) {
            if l < loss {
                return Ok(Some((t, l)));
            }
        }
        scale *= 0.5;
    }
    Ok(None)
}
