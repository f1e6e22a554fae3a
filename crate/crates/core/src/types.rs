//! Domain types shared by every stage: frames, pose tracks and boxes.
//!
//! Constructors validate their invariants, so a value that exists is
//! structurally sound. All types are plain data and `Send + Sync`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One RGB video frame, 8 bits per channel, row-major and interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    id: u64,
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(id: u64, width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::dims(
                format!("{expected} bytes"),
                format!("{} bytes", pixels.len()),
            ));
        }
        Ok(Self {
            id,
            width,
            height,
            pixels,
        })
    }

    /// A frame filled with a single colour.
    pub fn filled(id: u64, width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        let pixels = rgb.iter().copied().cycle().take(n * 3).collect();
        Self::new(id, width, height, pixels)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.id = id;
        self
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luma in `[0, 255]`, one value per pixel.
    pub fn luma(&self) -> Vec<f32> {
        self.pixels
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
            .collect()
    }
}

/// Where a sequence came from. In-the-wild clips carry pseudo ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    #[default]
    Dataset,
    InTheWild,
}

/// An ordered pitch clip. Frame ids strictly increase and all frames share
/// one resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    source: SourceTag,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, source: SourceTag) -> Result<Self> {
        if let Some(first) = frames.first() {
            for pair in frames.windows(2) {
                if pair[1].id <= pair[0].id {
                    return Err(Error::NonMonotoneFrameIds {
                        previous: pair[0].id,
                        next: pair[1].id,
                    });
                }
            }
            if let Some(other) = frames.iter().find(|f| f.dims() != first.dims()) {
                return Err(Error::MixedResolutions {
                    first_w: first.width,
                    first_h: first.height,
                    other_w: other.width,
                    other_h: other.height,
                });
            }
        }
        Ok(Self { frames, source })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(width, height)` shared by all frames, `None` when empty.
    pub fn dims(&self) -> Option<(u32, u32)> {
        self.frames.first().map(Frame::dims)
    }
}

/// Keypoints of one frame: `joint_count × dims` coordinates, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    frame_id: u64,
    dims: usize,
    coords: Vec<f64>,
}

impl Pose {
    pub fn new(frame_id: u64, dims: usize, coords: Vec<f64>) -> Result<Self> {
        if dims != 2 && dims != 3 {
            return Err(Error::InvalidParameter(format!(
                "pose dimension must be 2 or 3, got {dims}"
            )));
        }
        if coords.is_empty() || coords.len() % dims != 0 {
            return Err(Error::dims(
                format!("a positive multiple of {dims} coordinates"),
                coords.len(),
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite { frame_id });
        }
        Ok(Self {
            frame_id,
            dims,
            coords,
        })
    }

    /// Builds a pose from per-joint points.
    pub fn from_joints<const D: usize>(frame_id: u64, joints: &[[f64; D]]) -> Result<Self> {
        Self::new(frame_id, D, joints.iter().flatten().copied().collect())
    }

    pub fn frame_id(&self) -> u64 {
        self.frame_id
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn joint_count(&self) -> usize {
        self.coords.len() / self.dims
    }

    /// Flattened coordinates, `joint_count * dims` long.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn joint(&self, j: usize) -> &[f64] {
        &self.coords[j * self.dims..(j + 1) * self.dims]
    }

    pub fn joints(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dims)
    }

    pub fn with_frame_id(mut self, frame_id: u64) -> Self {
        self.frame_id = frame_id;
        self
    }

    pub(crate) fn check_compatible(&self, other: &Pose) -> Result<()> {
        if self.dims != other.dims || self.coords.len() != other.coords.len() {
            return Err(Error::dims(
                format!("{}x{}", self.joint_count(), self.dims),
                format!("{}x{}", other.joint_count(), other.dims),
            ));
        }
        Ok(())
    }
}

/// Per-frame keypoints for one subject. Frames without annotation are
/// absent; there are no sentinel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTrack {
    dims: usize,
    joint_names: Vec<String>,
    poses: Vec<Pose>,
}

/// Joint count of the pitching dataset skeleton.
pub const DEFAULT_JOINT_COUNT: usize = 18;

impl PoseTrack {
    pub fn new(dims: usize, joint_names: Vec<String>, poses: Vec<Pose>) -> Result<Self> {
        if dims != 2 && dims != 3 {
            return Err(Error::InvalidParameter(format!(
                "track dimension must be 2 or 3, got {dims}"
            )));
        }
        if joint_names.is_empty() {
            return Err(Error::InvalidParameter("track needs at least one joint".into()));
        }
        let joints = joint_names.len();
        let mut previous: Option<u64> = None;
        for pose in &poses {
            if pose.dims != dims {
                return Err(Error::dims(format!("gamma {dims}"), format!("gamma {}", pose.dims)));
            }
            if pose.joint_count() != joints {
                return Err(Error::InconsistentJoints {
                    expected: joints,
                    found: pose.joint_count(),
                });
            }
            if let Some(prev) = previous {
                if pose.frame_id <= prev {
                    return Err(Error::NonMonotoneFrameIds {
                        previous: prev,
                        next: pose.frame_id,
                    });
                }
            }
            previous = Some(pose.frame_id);
        }
        Ok(Self {
            dims,
            joint_names,
            poses,
        })
    }

    /// Names `joint_0 .. joint_{J-1}`.
    pub fn default_joint_names(joints: usize) -> Vec<String> {
        (0..joints).map(|j| format!("joint_{j}")).collect()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn get(&self, frame_id: u64) -> Option<&Pose> {
        self.poses
            .binary_search_by_key(&frame_id, |p| p.frame_id)
            .ok()
            .map(|i| &self.poses[i])
    }

    /// Keeps only poses whose frame id satisfies `keep`.
    pub fn filter(&self, mut keep: impl FnMut(u64) -> bool) -> PoseTrack {
        PoseTrack {
            dims: self.dims,
            joint_names: self.joint_names.clone(),
            poses: self
                .poses
                .iter()
                .filter(|p| keep(p.frame_id))
                .cloned()
                .collect(),
        }
    }

    pub(crate) fn check_compatible(&self, other: &PoseTrack) -> Result<()> {
        if self.dims != other.dims || self.joint_count() != other.joint_count() {
            return Err(Error::dims(
                format!("J={} gamma={}", self.joint_count(), self.dims),
                format!("J={} gamma={}", other.joint_count(), other.dims),
            ));
        }
        Ok(())
    }
}

/// Axis-aligned pitcher box supplied by an external detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub frame_id: u64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(frame_id: u64, x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::NonFinite { frame_id });
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "box for frame {frame_id} has non-positive size {w}x{h}"
            )));
        }
        Ok(Self { frame_id, x, y, w, h })
    }

    pub fn intersects_frame(&self, width: u32, height: u32) -> bool {
        self.x < width as f64 && self.y < height as f64 && self.x + self.w > 0.0 && self.y + self.h > 0.0
    }
}

/// A rectangular patch of a frame. `index` is the row-major position in the
/// patch layout it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRegion {
    pub index: usize,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PatchRegion {
    pub fn new(index: usize, x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::InvalidParameter(format!(
                "patch {index} has empty extent {w}x{h}"
            )));
        }
        Ok(Self { index, x, y, w, h })
    }

    pub fn area(&self) -> usize {
        self.w as usize * self.h as usize
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.w > 0
            && self.h > 0
            && self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64
    }

    pub(crate) fn check_within(&self, width: u32, height: u32) -> Result<()> {
        if self.fits(width, height) {
            Ok(())
        } else {
            Err(Error::OutOfBounds(format!(
                "patch {} at ({}, {}) size {}x{} outside {width}x{height}",
                self.index, self.x, self.y, self.w, self.h
            )))
        }
    }
}
