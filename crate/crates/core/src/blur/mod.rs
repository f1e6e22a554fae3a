//! Flow-guided partial motion blur: patch layout, patch ranking, oriented
//! kernels, per-patch effects and the seeded sequence driver.

mod augment;
mod effect;
mod kernel;
mod patches;

pub use augment::{
    augment_sequence, draw_kernels, frame_rng, replay_manifest, AugmentationManifest, BlurConfig,
    EffectParams, FrameRecord, RegionRecord,
};
pub use effect::{apply_patch_effect, apply_patch_effect_in_place, round_to_u8, EffectKind, PatchEffect};
pub use kernel::{build_motion_kernel, build_motion_kernel_with, gaussian_kernel, warp_matrix, KernelWarp, MotionKernel};
pub use patches::{init_patches, select_patches, top_patches, PatchMode, ScoredPatch};
