//! Dataset file formats: keypoint tracks, bounding boxes and frame folders.
//!
//! Keypoint files are UTF-8, comma-separated, one record per line:
//!
//! ```text
//! #keypoints,<J>,<dims>,<name_1>,...,<name_J>
//! <frame_id>,<x_1>,<y_1>[,<z_1>],...,<x_J>,<y_J>[,<z_J>]
//! ```
//!
//! Reals are written in their shortest round-trip decimal form, so
//! `save_pose_track` after `load_pose_track` reproduces a canonical file
//! byte for byte. Blank lines and lines starting with `//` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{BoundingBox, Frame, FrameSequence, Pose, PoseTrack, SourceTag};

const KEYPOINT_MAGIC: &str = "#keypoints";

/// A parsed track plus the rows that were skipped as malformed.
#[derive(Debug, Clone)]
pub struct LoadedTrack {
    pub track: PoseTrack,
    /// 1-based line numbers of rows that did not parse.
    pub skipped_rows: Vec<usize>,
}

pub fn load_pose_track(path: impl AsRef<Path>, dims: usize) -> Result<LoadedTrack> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose_track(&text, dims, path)
}

/// Parses keypoint text. `origin` is only used in error messages.
pub fn parse_pose_track(text: &str, dims: usize, origin: &Path) -> Result<LoadedTrack> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with("//"));

    let Some((header_line, header)) = lines.next() else {
        return Err(Error::EmptyTrack);
    };
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields.len() < 3 || fields[0] != KEYPOINT_MAGIC {
        return Err(parse_err(
            header_line,
            format!("expected header `{KEYPOINT_MAGIC},<J>,<dims>,<names...>`"),
        ));
    }
    let joints: usize = fields[1]
        .parse()
        .map_err(|_| parse_err(header_line, format!("bad joint count `{}`", fields[1])))?;
    let gamma: usize = fields[2]
        .parse()
        .map_err(|_| parse_err(header_line, format!("bad gamma `{}`", fields[2])))?;
    if gamma != dims {
        return Err(Error::dims(format!("gamma {dims}"), format!("gamma {gamma}")));
    }
    let names: Vec<String> = fields[3..].iter().map(|s| s.to_string()).collect();
    let names = match names.len() {
        0 => PoseTrack::default_joint_names(joints),
        n if n == joints => names,
        n => {
            return Err(parse_err(
                header_line,
                format!("header declares J={joints} but names {n} joints"),
            ))
        }
    };

    let width = 1 + joints * dims;
    let mut poses: Vec<Pose> = Vec::new();
    let mut skipped_rows = Vec::new();
    for (line, row) in lines {
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(Error::InconsistentJoints {
                expected: joints,
                found: (fields.len().saturating_sub(1)) / dims,
            });
        }
        let Ok(frame_id) = fields[0].parse::<u64>() else {
            skipped_rows.push(line);
            continue;
        };
        let coords: Option<Vec<f64>> = fields[1..].iter().map(|f| f.parse::<f64>().ok()).collect();
        let Some(coords) = coords else {
            skipped_rows.push(line);
            continue;
        };
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite { frame_id });
        }
        if let Some(prev) = poses.last() {
            if frame_id <= prev.frame_id() {
                return Err(Error::NonMonotoneFrameIds {
                    previous: prev.frame_id(),
                    next: frame_id,
                });
            }
        }
        poses.push(Pose::new(frame_id, dims, coords)?);
    }
    if poses.is_empty() {
        return Err(Error::EmptyTrack);
    }
    if !skipped_rows.is_empty() {
        log::warn!(
            "{}: skipped {} malformed row(s)",
            origin.display(),
            skipped_rows.len()
        );
    }
    Ok(LoadedTrack {
        track: PoseTrack::new(dims, names, poses)?,
        skipped_rows,
    })
}

/// Canonical text form of a track.
pub fn format_pose_track(track: &PoseTrack) -> String {
    let mut out = String::new();
    let _ = write!(out, "{KEYPOINT_MAGIC},{},{}", track.joint_count(), track.dims());
    for name in track.joint_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for pose in track.poses() {
        let _ = write!(out, "{}", pose.frame_id());
        for c in pose.coords() {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

pub fn save_pose_track(path: impl AsRef<Path>, track: &PoseTrack) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_pose_track(track)).map_err(|e| Error::io(path, e))
}

/// Reads `frame_id,x,y,w,h` rows. A non-numeric first line is treated as a
/// header.
pub fn load_boxes(path: impl AsRef<Path>) -> Result<Vec<BoundingBox>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut boxes = Vec::new();
    for (i, row) in text.lines().enumerate() {
        let row = row.trim();
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if i == 0 && fields[0].parse::<u64>().is_err() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let frame_id = fields[0]
            .parse::<u64>()
            .map_err(|_| err(format!("bad frame id `{}`", fields[0])))?;
        let mut v = [0.0f64; 4];
        for (slot, field) in v.iter_mut().zip(&fields[1..]) {
            *slot = field
                .parse()
                .map_err(|_| err(format!("bad number `{field}`")))?;
        }
        boxes.push(BoundingBox::new(frame_id, v[0], v[1], v[2], v[3])?);
    }
    Ok(boxes)
}

pub fn save_boxes(path: impl AsRef<Path>, boxes: &[BoundingBox]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("frame_id,x,y,w,h\n");
    for b in boxes {
        let _ = writeln!(out, "{},{},{},{},{}", b.frame_id, b.x, b.y, b.w, b.h);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// PNG files in `dir` whose stem is a frame number, sorted by that number.
pub fn list_frame_files(dir: impl AsRef<Path>) -> Result<Vec<(u64, PathBuf)>> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png {
            continue;
        }
        match path.file_stem().and_then(|s| s.to_str()).map(str::parse::<u64>) {
            Some(Ok(id)) => files.push((id, path)),
            _ => log::warn!("ignoring non-numeric frame file {}", path.display()),
        }
    }
    files.sort_by_key(|(id, _)| *id);
    if let Some(pair) = files.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidParameter(format!(
            "duplicate frame id {} ({} and {})",
            pair[0].0,
            pair[0].1.display(),
            pair[1].1.display()
        )));
    }
    Ok(files)
}

pub fn load_frame(path: impl AsRef<Path>, id: u64) -> Result<Frame> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Frame::new(id, w, h, rgb.into_raw())
}

pub fn load_frame_sequence(dir: impl AsRef<Path>, source: SourceTag) -> Result<FrameSequence> {
    let files = list_frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::NoFrames);
    }
    let frames = files
        .par_iter()
        .map(|(id, path)| load_frame(path, *id))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, source)
}

pub fn frame_file_name(id: u64) -> String {
    format!("{id:06}.png")
}

pub fn save_frame(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let path = path.as_ref();
    image::save_buffer(
        path,
        frame.pixels(),
        frame.width(),
        frame.height(),
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes every frame as `<id:06>.png` and returns the written paths.
pub fn save_frame_sequence(dir: impl AsRef<Path>, seq: &FrameSequence) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    seq.frames()
        .par_iter()
        .map(|f| {
            let path = dir.join(frame_file_name(f.id()));
            save_frame(&path, f).map(|_| path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LoadedTrack> {
        parse_pose_track(text, 2, Path::new("mem"))
    }

    #[test]
    fn parses_three_rows_of_eighteen_joints() {
        let joints = 18;
        let mut text = format!("{KEYPOINT_MAGIC},{joints},3\n");
        for f in 0..3 {
            text.push_str(&f.to_string());
            for j in 0..joints * 3 {
                text.push_str(&format!(",{}", j as f64 * 0.5));
            }
            text.push('\n');
        }
        let loaded = parse_pose_track(&text, 3, Path::new("mem")).unwrap();
        assert_eq!(loaded.track.len(), 3);
        assert_eq!(loaded.track.joint_count(), 18);
        assert!(loaded.skipped_rows.is_empty());
    }

    #[test]
    fn rejects_non_monotone_ids() {
        let err = parse("#keypoints,1,2,a\n5,0,0\n3,1,1\n").unwrap_err();
        assert!(err.to_string().contains("non-monotone frame ids"));
    }

    #[test]
    fn empty_input_is_empty_track() {
        assert!(matches!(parse(""), Err(Error::EmptyTrack)));
        assert!(matches!(parse("#keypoints,1,2,a\n"), Err(Error::EmptyTrack)));
    }

    #[test]
    fn malformed_rows_are_skipped_and_reported() {
        let loaded = parse("#keypoints,1,2,a\n0,1,2\nx,1,2\n2,oops,1\n3,4,5\n").unwrap();
        assert_eq!(loaded.track.len(), 2);
        assert_eq!(loaded.skipped_rows, vec![3, 4]);
    }

    #[test]
    fn inconsistent_joint_count_is_an_error() {
        assert!(matches!(
            parse("#keypoints,2,2,a,b\n0,1,2,3,4\n1,1,2\n"),
            Err(Error::InconsistentJoints { expected: 2, .. })
        ));
    }

    #[test]
    fn non_finite_coordinate_is_an_error() {
        assert!(matches!(
            parse("#keypoints,1,2,a\n0,nan,2\n"),
            Err(Error::NonFinite { frame_id: 0 })
        ));
        assert!(matches!(
            parse("#keypoints,1,2,a\n7,1,inf\n"),
            Err(Error::NonFinite { frame_id: 7 })
        ));
    }

    #[test]
    fn gamma_must_match_requested_dims() {
        assert!(matches!(
            parse("#keypoints,1,3,a\n0,1,2,3\n"),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let text = "#keypoints,2,2,hip,knee\n0,1,2.5,-3,0.1\n4,1e-7,123456.789,0,-0.25\n";
        let loaded = parse(text).unwrap();
        let canonical = format_pose_track(&loaded.track);
        let again = format_pose_track(&parse(&canonical).unwrap().track);
        assert_eq!(canonical, again);
        assert_eq!(parse(&canonical).unwrap().track, loaded.track);
    }
}
