use std::fs;

use pitchblur::blur::{augment_sequence, AugmentationManifest, BlurConfig};
use pitchblur::flow::{decode_flow, encode_flow, export_flow, import_flow, FlowField};
use pitchblur::io::{
    load_frame_sequence, load_pose_track, parse_pose_track, save_frame_sequence, save_pose_track,
};
use pitchblur::{Error, Frame, FrameSequence, Pose, PoseTrack, SourceTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_flow(seed: u64, w: u32, h: u32) -> FlowField {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    FlowField::new(w, h, (0..w * h).map(|_| [r.random::<f32>() * 20.0 - 10.0, r.random::<f32>()]).collect()).unwrap()
}

#[test]
fn flow_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.flo");
    let flow = random_flow(1, 33, 17);
    export_flow(&path, &flow).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 12 + 33 * 17 * 8);
    assert_eq!(&bytes[..4], &202021.25f32.to_le_bytes());
    let back = import_flow(&path, (33, 17)).unwrap();
    assert_eq!(encode_flow(&back), bytes);
}

#[test]
fn flow_import_checks_dimensions_and_magic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.flo");
    export_flow(&path, &random_flow(2, 8, 6)).unwrap();
    assert!(matches!(import_flow(&path, (6, 8)), Err(Error::DimensionMismatch { .. })));
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    assert!(matches!(decode_flow(&bytes), Err(Error::BadMagic { .. })));
    assert!(matches!(decode_flow(&encode_flow(&random_flow(3, 4, 4))[..40]), Err(Error::Truncated { .. })));
}

#[test]
fn keypoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kp.csv");
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let poses = [0u64, 3, 4, 10]
        .iter()
        .map(|&id| Pose::new(id, 3, (0..9).map(|_| r.random_range(-1e3..1e3)).collect()).unwrap())
        .collect();
    let names = vec!["head".to_string(), "hip".to_string(), "ankle".to_string()];
    let track = PoseTrack::new(3, names, poses).unwrap();
    save_pose_track(&path, &track).unwrap();
    let first = fs::read(&path).unwrap();
    let loaded = load_pose_track(&path, 3).unwrap();
    assert_eq!(loaded.track, track);
    save_pose_track(&path, &loaded.track).unwrap();
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn keypoint_parser_rejects_bad_input() {
    let origin = std::path::Path::new("kp.csv");
    let header = "#keypoints,2,2\n";
    let nan = format!("{header}0,1,2,NaN,4\n");
    assert!(matches!(parse_pose_track(&nan, 2, origin), Err(Error::NonFinite { frame_id: 0 })));
    let short = format!("{header}0,1,2,3\n");
    assert!(matches!(parse_pose_track(&short, 2, origin), Err(Error::InconsistentJoints { .. })));
    let backwards = format!("{header}5,1,2,3,4\n2,1,2,3,4\n");
    assert!(matches!(parse_pose_track(&backwards, 2, origin), Err(Error::NonMonotoneFrameIds { .. })));
    let junk = format!("{header}0,1,2,3,4\nx,1,2,3,4\n// note\n1,1,2,3,4\n");
    let loaded = parse_pose_track(&junk, 2, origin).unwrap();
    assert_eq!(loaded.track.len(), 2);
    assert_eq!(loaded.skipped_rows, vec![3]);
}

fn checker(id: u64) -> Frame {
    let mut f = Frame::filled(id, 24, 16, [0; 3]).unwrap();
    for y in 0..16 {
        for x in 0..24 {
            let v = if (x / 4 + y / 4 + id as u32) % 2 == 0 { 30 } else { 220 };
            f.set_pixel(x, y, [v, 255 - v, (x * 10) as u8]);
        }
    }
    f
}

#[test]
fn frame_folder_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seq = FrameSequence::new((0..4).map(|i| checker(i * 2)).collect(), SourceTag::Dataset).unwrap();
    save_frame_sequence(dir.path(), &seq).unwrap();
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let back = load_frame_sequence(dir.path(), SourceTag::Dataset).unwrap();
    assert_eq!(back, seq);
}

#[test]
fn empty_or_mixed_folders_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_frame_sequence(dir.path(), SourceTag::InTheWild), Err(Error::NoFrames { .. })));
    let small = Frame::filled(1, 8, 8, [1; 3]).unwrap();
    let one = FrameSequence::new(vec![checker(0)], SourceTag::Dataset).unwrap();
    save_frame_sequence(dir.path(), &one).unwrap();
    save_frame_sequence(dir.path(), &FrameSequence::new(vec![small], SourceTag::Dataset).unwrap()).unwrap();
    assert!(matches!(load_frame_sequence(dir.path(), SourceTag::Dataset), Err(Error::MixedResolutions { .. })));
}

#[test]
fn manifest_survives_disk() {
    let dir = tempfile::tempdir().unwrap();
    let seq = FrameSequence::new((0..3).map(checker).collect(), SourceTag::Dataset).unwrap();
    let flows = vec![FlowField::uniform(24, 16, [1.0, 1.0]); 2];
    let cfg = BlurConfig {
        patch_mode: "fixed:8".parse().unwrap(),
        kernel_size_range: (3, 7),
        ..BlurConfig::default()
    };
    let (_, manifest) = augment_sequence(&seq, &flows, &cfg).unwrap();
    let path = dir.path().join("m.jsonl");
    manifest.save(&path).unwrap();
    assert_eq!(AugmentationManifest::load(&path).unwrap(), manifest);
    assert_eq!(manifest.records[0].config_digest, cfg.digest());
}
