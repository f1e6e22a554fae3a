//! Dataset preparation and augmentation for pitcher pose estimation.
//!
//! * [`flow`]: dense motion between frame pairs and per-patch motion scores.
//! * [`blur`]: selective, flow-guided motion blur of the most moving patches.
//! * [`sync`]: one-to-one alignment of video poses to ground-truth tracks.
//! * [`camera`]: pinhole projection and focal-length recovery.
//! * [`enhance`]: pitcher crops and luminosity contrast enhancement.
//! * [`metrics`]: mean per-joint position error reports.
//!
//! File formats live in [`io`]; shared value types in [`types`].

pub mod blur;
pub mod camera;
pub mod enhance;
pub mod error;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod split;
pub mod sync;
pub mod types;

pub use error::{Error, Result};
pub use types::{BoundingBox, Frame, FrameSequence, PatchRegion, Pose, PoseTrack, SourceTag};
