use pitchblur::blur::{
    apply_patch_effect, augment_sequence, build_motion_kernel, replay_manifest, BlurConfig, PatchEffect, PatchMode,
};
use pitchblur::camera::{project, CameraModel, IDENTITY};
use pitchblur::flow::{estimate_flow, FlowField, FlowParams};
use pitchblur::metrics::mpjpe;
use pitchblur::sync::{align_sequences, pose_pair_cost, SyncWeights};
use pitchblur::{Frame, FrameSequence, PatchRegion, Pose, PoseTrack, SourceTag};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn textured(seed: u64, w: u32, h: u32, id: u64) -> Frame {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut f = Frame::filled(id, w, h, [0; 3]).unwrap();
    for y in 0..h {
        for x in 0..w {
            let base = 128.0 + 50.0 * (x as f64 * 0.37).sin() + 40.0 * (y as f64 * 0.23).cos();
            let v = (base + r.random_range(-20.0..20.0)).clamp(0.0, 255.0) as u8;
            f.set_pixel(x, y, [v, v.wrapping_add(17), 255 - v]);
        }
    }
    f
}

// Stationary texture: the edge-replicated apron can only shift the mean
// by a fraction of the noise level, not by a systematic edge gradient.
fn stationary_patch(seed: u64, size: u32) -> Frame {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let level = r.random_range(60.0..190.0);
    let phase = r.random_range(0.0..6.3);
    let mut f = Frame::filled(0, size, size, [0; 3]).unwrap();
    for y in 0..size {
        for x in 0..size {
            let v = level + 20.0 * (0.9 * x as f64 + 1.3 * y as f64 + phase).sin() + r.random_range(-30.0..30.0);
            let v = v.round() as u8;
            f.set_pixel(x, y, [v, v / 2, 255 - v]);
        }
    }
    f
}

fn laplacian_variance(f: &Frame, r: &PatchRegion) -> f64 {
    let g = |x: u32, y: u32| f.pixel(x, y)[0] as f64;
    let mut vals = Vec::new();
    for y in r.y + 1..r.y + r.h - 1 {
        for x in r.x + 1..r.x + r.w - 1 {
            vals.push(g(x - 1, y) + g(x + 1, y) + g(x, y - 1) + g(x, y + 1) - 4.0 * g(x, y));
        }
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernels_are_normalised(half in 1usize..8, angle in 0.0f64..std::f64::consts::TAU, scale in 0.5f64..1.5) {
        let k = build_motion_kernel(2 * half + 1, angle, scale).unwrap();
        let sum: f64 = k.weights().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        prop_assert!(k.weights().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn blur_only_touches_its_region(
        seed in any::<u64>(), x in 0u32..20, y in 0u32..20, w in 1u32..20, h in 1u32..20, half in 1usize..7,
    ) {
        let frame = textured(seed, 40, 40, 0);
        let region = PatchRegion::new(0, x, y, w, h).unwrap();
        let k = build_motion_kernel(2 * half + 1, seed as f64 * 1e-3, 1.0).unwrap();
        let out = apply_patch_effect(&frame, &region, &PatchEffect::MotionBlur(k)).unwrap();
        for py in 0..40 {
            for px in 0..40 {
                let inside = px >= x && px < x + w && py >= y && py < y + h;
                if !inside {
                    prop_assert_eq!(out.pixel(px, py), frame.pixel(px, py));
                }
            }
        }
    }

    #[test]
    fn blur_keeps_mean_and_lowers_laplacian_variance(seed in any::<u64>(), half in 2usize..8, angle in 0.0f64..6.28) {
        let frame = stationary_patch(seed, 30);
        let region = PatchRegion::new(0, 0, 0, 30, 30).unwrap();
        let k = build_motion_kernel(2 * half + 1, angle, 1.0).unwrap();
        let out = apply_patch_effect(&frame, &region, &PatchEffect::MotionBlur(k)).unwrap();
        let mean = |f: &Frame| {
            let mut s = 0.0;
            for y in 0..30 { for x in 0..30 { s += f.pixel(x, y)[0] as f64; } }
            s / 900.0
        };
        prop_assert!((mean(&out) - mean(&frame)).abs() <= 1.0);
        prop_assert!(laplacian_variance(&out, &region) < laplacian_variance(&frame, &region));
    }

    #[test]
    fn pair_cost_scales_with_weights(seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut pose = || Pose::new(0, 2, (0..36).map(|_| r.random_range(-10.0..10.0)).collect()).unwrap();
        let (g, p) = (pose(), pose());
        let w = SyncWeights::new(0.7, 1.3).unwrap();
        let scaled = SyncWeights::new(0.7 * c, 1.3 * c).unwrap();
        let a = pose_pair_cost(&g, &p, &w).unwrap();
        let b = pose_pair_cost(&g, &p, &scaled).unwrap();
        prop_assert!((b - c * a).abs() <= 1e-12 * (c * a).abs());
    }

    #[test]
    fn projection_scales_about_principal_point(f in 100.0f64..3000.0, c in 0.5f64..2.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in 1.0f64..10.0) {
        let p = Pose::from_joints(0, &[[x, y, z]]).unwrap();
        let a = project(&p, &CameraModel::new(f, 320.0, 240.0, IDENTITY, [0.0; 3]).unwrap()).unwrap();
        let b = project(&p, &CameraModel::new(f * c, 320.0, 240.0, IDENTITY, [0.0; 3]).unwrap()).unwrap();
        for axis in 0..2 {
            let centre = [320.0, 240.0][axis];
            let want = c * (a.joint(0)[axis] - centre);
            prop_assert!((b.joint(0)[axis] - centre - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn mpjpe_is_symmetric(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut track = || {
            let poses = (0..5).map(|i| Pose::new(i, 3, (0..54).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()).collect();
            PoseTrack::new(3, PoseTrack::default_joint_names(18), poses).unwrap()
        };
        let (a, b) = (track(), track());
        prop_assert_eq!(mpjpe(&a, &b).unwrap().aggregate, mpjpe(&b, &a).unwrap().aggregate);
    }
}

#[test]
fn scaled_weights_keep_the_alignment() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let mut track = |len: usize| {
            let poses = (0..len)
                .map(|i| Pose::new(i as u64, 2, (0..8).map(|_| r.random_range(-5.0..5.0)).collect()).unwrap())
                .collect();
            PoseTrack::new(2, PoseTrack::default_joint_names(4), poses).unwrap()
        };
        let (gt, pred) = (track(6), track(9));
        let w = SyncWeights::new(1.0, 2.0).unwrap();
        let a = align_sequences(&gt, &pred, &w).unwrap();
        let b = align_sequences(&gt, &pred, &SyncWeights::new(4.0, 8.0).unwrap()).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert!((b.total_cost - 4.0 * a.total_cost).abs() <= 1e-9 * b.total_cost);
    }
}

fn shifted(base: &Frame, dx: i64, dy: i64) -> Frame {
    let (w, h) = base.dims();
    let mut f = base.clone();
    for y in 0..h {
        for x in 0..w {
            let sx = (x as i64 - dx).clamp(0, w as i64 - 1) as u32;
            let sy = (y as i64 - dy).clamp(0, h as i64 - 1) as u32;
            f.set_pixel(x, y, base.pixel(sx, sy));
        }
    }
    f
}

fn interior_error(flow: &FlowField, want: [f32; 2], margin: u32) -> f64 {
    let (w, h) = flow.dims();
    let mut sum = 0.0;
    let mut n = 0;
    for y in margin..h - margin {
        for x in margin..w - margin {
            let [u, v] = flow.get(x, y);
            sum += ((u - want[0]) as f64).hypot((v - want[1]) as f64);
            n += 1;
        }
    }
    sum / n as f64
}

#[test]
fn flow_recovers_simple_shifts() {
    let base = textured(9, 96, 96, 0);
    for (dx, dy) in [(2, 0), (0, -3), (4, 5)] {
        let flow = estimate_flow(&base, &shifted(&base, dx, dy), &FlowParams::default()).unwrap();
        let epe = interior_error(&flow, [dx as f32, dy as f32], 12);
        assert!(epe < 0.5, "shift ({dx}, {dy}): epe {epe}");
    }
}

fn toy_sequence(len: u64) -> FrameSequence {
    let base = textured(4, 80, 60, 0);
    let frames = (0..len).map(|t| shifted(&base, 2 * t as i64, 0).with_id(t)).collect();
    FrameSequence::new(frames, SourceTag::Dataset).unwrap()
}

#[test]
fn augmentation_is_thread_count_independent() {
    let seq = toy_sequence(5);
    let flows: Vec<FlowField> = (0..4).map(|_| FlowField::uniform(80, 60, [2.0, 0.0])).collect();
    let cfg = BlurConfig {
        patch_mode: PatchMode::Grid { rows: 3, cols: 4 },
        n_filters: 0,
        seed: 17,
        ..BlurConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| augment_sequence(&seq, &flows, &cfg).unwrap())
    };
    let (a, ma) = run(1);
    let (b, mb) = run(8);
    assert_eq!(a.frames(), b.frames());
    assert_eq!(ma.to_jsonl(), mb.to_jsonl());
    assert_eq!(replay_manifest(&seq, &ma).unwrap().frames(), a.frames());
}

#[test]
fn different_seeds_draw_different_kernels() {
    let seq = toy_sequence(3);
    let flows: Vec<FlowField> = (0..2).map(|_| FlowField::uniform(80, 60, [2.0, 0.0])).collect();
    let a = augment_sequence(&seq, &flows, &BlurConfig { seed: 1, ..BlurConfig::default() }).unwrap().1;
    let b = augment_sequence(&seq, &flows, &BlurConfig { seed: 2, ..BlurConfig::default() }).unwrap().1;
    assert_ne!(a.records[0].regions[0].effect, b.records[0].regions[0].effect);
}
