use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use pitchblur::blur::{augment_sequence, replay_manifest, AugmentationManifest, EffectKind, PatchMode};
use pitchblur::camera::{optimize_focal, parse_extrinsics, CalibrationFrame, CameraModel, GradientMode, IDENTITY};
use pitchblur::enhance::enhance_frame;
use pitchblur::flow::{estimate_sequence_flow, export_flow, import_flow, FlowParams, MagnitudeMode};
use pitchblur::io::{
    frame_file_name, load_boxes, load_frame_sequence, load_pose_track, save_frame, save_frame_sequence,
};
use pitchblur::metrics::{compare_runs, mpjpe};
use pitchblur::sync::{align_sequences, trim_unannotated, SyncWeights};
use pitchblur::{BoundingBox, SourceTag};
use pitchblur_cli::config::AugmentSection;
use pitchblur_cli::{
    exit_code, ingest_itw, run_pipeline, IngestInputs, InvalidInput, PipelineConfig, EXIT_INVALID, THREADS_ENV,
};

#[derive(Parser, Debug)]
#[command(name = "pitchblur", version, about = "Flow-guided partial motion blur for pitcher pose data")]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dense flow between consecutive frames, one .flo file per pair.
    Flow {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flow: FlowArgs,
    },
    /// Blur the most-moving patches of every frame.
    Augment {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Precomputed .flo files named after the first frame of each pair.
        #[arg(long)]
        flows: Option<PathBuf>,
        /// Re-apply a recorded manifest instead of drawing new effects.
        #[arg(long, conflicts_with = "flows")]
        replay: Option<PathBuf>,
        /// Take the augment block from this config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        blur: BlurArgs,
        #[command(flatten)]
        flow: FlowArgs,
    },
    /// Align predicted poses with the ground-truth track.
    Sync {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Alignment CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        dims: usize,
        #[arg(long, default_value_t = 1.0)]
        spatial: f64,
        #[arg(long, default_value_t = 1.0)]
        temporal: f64,
        /// Frames of the prediction track; with --trimmed, keeps the aligned ones.
        #[arg(long, requires = "trimmed")]
        frames: Option<PathBuf>,
        #[arg(long, requires = "frames")]
        trimmed: Option<PathBuf>,
    },
    /// Fit the focal length to hand-annotated joints.
    Calibrate {
        #[arg(long)]
        points3d: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 1000.0)]
        focal: f64,
        #[arg(long, allow_negative_numbers = true)]
        cx: f64,
        #[arg(long, allow_negative_numbers = true)]
        cy: f64,
        /// 12 numbers: rotation rows then translation.
        #[arg(long)]
        extrinsics: Option<PathBuf>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        finite_difference: bool,
        #[arg(long)]
        no_backtracking: bool,
        #[arg(long)]
        refine_translation: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Crop to the pitcher and equalise luminosity.
    Enhance {
        #[arg(long)]
        frames: PathBuf,
        /// frame_id,x,y,w,h rows; whole frames are used without it.
        #[arg(long)]
        boxes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        clip_limit: Option<f64>,
        /// Tile grid as RxC.
        #[arg(long, value_parser = parse_pair::<u32>)]
        tiles: Option<Pair<u32>>,
    },
    /// Mean per-joint position error of one or more prediction tracks.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        /// One label per --pred; defaults to the file stem.
        #[arg(long)]
        label: Vec<String>,
        #[arg(long, default_value_t = 2)]
        dims: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every enabled stage of a config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        blur: BlurArgs,
    },
    /// Build a training shard from an in-the-wild clip and its pseudo-labels.
    IngestItw {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        pseudo_gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        dims: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        blur: BlurArgs,
        #[command(flatten)]
        flow: FlowArgs,
    },
    /// Check a config file and print it with every default filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Copy)]
struct Pair<T>(T, T);

fn parse_pair<T: FromStr>(s: &str) -> Result<Pair<T>, String> {
    let (a, b) = s
        .split_once([':', 'x', 'X'])
        .ok_or_else(|| format!("`{s}` is not of the form A:B"))?;
    let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("cannot parse `{v}`"));
    Ok(Pair(p(a)?, p(b)?))
}

fn parse_magnitude(s: &str) -> Result<MagnitudeMode, String> {
    match s {
        "pixel" | "pixel_magnitude" => Ok(MagnitudeMode::PixelMagnitude),
        "vector" | "vector_sum" => Ok(MagnitudeMode::VectorSum),
        _ => Err(format!("`{s}` is not pixel or vector")),
    }
}

#[derive(Args, Debug, Default)]
struct BlurArgs {
    /// grid:RxC or fixed:S.
    #[arg(long)]
    patch_mode: Option<PatchMode>,
    /// Patches blurred per frame.
    #[arg(long)]
    patches: Option<usize>,
    /// Kernels per frame; 0 gives every patch its own.
    #[arg(long)]
    filters: Option<usize>,
    /// none, binary_mask, gaussian_blur or motion_blur.
    #[arg(long)]
    effect: Option<EffectKind>,
    /// Odd kernel sizes as MIN:MAX.
    #[arg(long, value_parser = parse_pair::<usize>)]
    kernel_size: Option<Pair<usize>>,
    /// Angle range in degrees as MIN:MAX.
    #[arg(long, value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    angle: Option<Pair<f64>>,
    /// Scale range as MIN:MAX.
    #[arg(long, value_parser = parse_pair::<f64>)]
    scale: Option<Pair<f64>>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Patch score: pixel or vector.
    #[arg(long, value_parser = parse_magnitude)]
    magnitude: Option<MagnitudeMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the legacy uncentered kernel matrix.
    #[arg(long)]
    legacy_matrix: bool,
}

impl BlurArgs {
    fn apply(&self, a: &mut AugmentSection, seed: &mut u64) {
        if let Some(v) = self.patch_mode {
            a.patch_mode = v;
        }
        if let Some(v) = self.patches {
            a.patches = v;
        }
        if let Some(v) = self.filters {
            a.filters = v;
        }
        if let Some(v) = self.effect {
            a.effect = v;
        }
        if let Some(Pair(lo, hi)) = self.kernel_size {
            a.kernel_size = (lo, hi);
        }
        if let Some(Pair(lo, hi)) = self.angle {
            a.angle_deg = (lo, hi);
        }
        if let Some(Pair(lo, hi)) = self.scale {
            a.scale = (lo, hi);
        }
        if let Some(v) = self.sigma {
            a.gaussian_sigma = v;
        }
        if let Some(v) = self.magnitude {
            a.magnitude = v;
        }
        if let Some(v) = self.seed {
            *seed = v;
        }
        if self.legacy_matrix {
            a.legacy_matrix = true;
        }
    }
}

#[derive(Args, Debug, Default)]
struct FlowArgs {
    #[arg(long)]
    levels: Option<u32>,
    #[arg(long)]
    block_radius: Option<u32>,
    #[arg(long)]
    search_radius: Option<u32>,
    #[arg(long)]
    smoothing: Option<u32>,
}

impl FlowArgs {
    fn apply(&self, mut p: FlowParams) -> FlowParams {
        if let Some(v) = self.levels {
            p.pyramid_levels = v;
        }
        if let Some(v) = self.block_radius {
            p.block_radius = v;
        }
        if let Some(v) = self.search_radius {
            p.search_radius = v;
        }
        if let Some(v) = self.smoothing {
            p.smoothing_passes = v;
        }
        p
    }
}

fn base_config(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Flow { frames, out, flow } => {
            let params = flow.apply(FlowParams::default());
            params.validate()?;
            let seq = load_frame_sequence(&frames, SourceTag::Dataset)?;
            fs::create_dir_all(&out)?;
            let flows = estimate_sequence_flow(seq.frames(), &params)?;
            for (frame, f) in seq.frames().iter().zip(&flows) {
                export_flow(out.join(format!("{:06}.flo", frame.id())), f)?;
            }
            println!("{} flow fields written to {}", flows.len(), out.display());
        }
        Command::Augment {
            frames,
            out,
            flows,
            replay,
            config,
            blur,
            flow,
        } => {
            let seq = load_frame_sequence(&frames, SourceTag::Dataset)?;
            let (result, manifest) = if let Some(path) = replay {
                let manifest = AugmentationManifest::load(&path)?;
                (replay_manifest(&seq, &manifest)?, manifest)
            } else {
                let mut cfg = base_config(config.as_deref())?;
                blur.apply(&mut cfg.augment, &mut cfg.seed);
                let blur_cfg = cfg.blur_config();
                blur_cfg.validate()?;
                let params = flow.apply(cfg.flow);
                let fields = match flows {
                    Some(dir) => {
                        let dims = seq.dims().unwrap_or((0, 0));
                        let pairs = seq.len().saturating_sub(1);
                        seq.frames()[..pairs]
                            .iter()
                            .map(|f| import_flow(dir.join(format!("{:06}.flo", f.id())), dims))
                            .collect::<Result<Vec<_>, _>>()?
                    }
                    None => estimate_sequence_flow(seq.frames(), &params)?,
                };
                augment_sequence(&seq, &fields, &blur_cfg)?
            };
            save_frame_sequence(out.join("frames"), &result)?;
            manifest.save(out.join("manifest.jsonl"))?;
            println!("{} frames written, {} augmented", result.len(), manifest.len());
        }
        Command::Sync {
            gt,
            pred,
            out,
            dims,
            spatial,
            temporal,
            frames,
            trimmed,
        } => {
            let weights = SyncWeights::new(spatial, temporal)?;
            let gt = load_pose_track(&gt, dims)?.track;
            let pred = load_pose_track(&pred, dims)?.track;
            let alignment = align_sequences(&gt, &pred, &weights)?;
            alignment.save(&out)?;
            if let (Some(frames), Some(trimmed)) = (frames, trimmed) {
                let seq = load_frame_sequence(&frames, SourceTag::Dataset)?;
                save_frame_sequence(&trimmed, &trim_unannotated(&seq, &alignment)?)?;
            }
            println!("{} pairs, total cost {}", alignment.pairs.len(), alignment.total_cost);
        }
        Command::Calibrate {
            points3d,
            annotations,
            focal,
            cx,
            cy,
            extrinsics,
            learning_rate,
            iters,
            tolerance,
            finite_difference,
            no_backtracking,
            refine_translation,
            out,
        } => {
            let mut opt = pitchblur::camera::OptimizerConfig::default();
            if let Some(v) = learning_rate {
                opt.learning_rate = v;
            }
            if let Some(v) = iters {
                opt.max_iters = v;
            }
            if let Some(v) = tolerance {
                opt.tolerance = v;
            }
            if finite_difference {
                opt.gradient_mode = GradientMode::FiniteDifference;
            }
            opt.backtracking = !no_backtracking;
            opt.refine_translation = refine_translation;
            opt.validate()?;
            let (rotation, translation) = match extrinsics {
                Some(p) => parse_extrinsics(&fs::read_to_string(&p).with_context(|| p.display().to_string())?)?,
                None => (IDENTITY, [0.0; 3]),
            };
            let cam = CameraModel::new(focal, cx, cy, rotation, translation)?;
            let p3 = load_pose_track(&points3d, 3)?.track;
            let p2 = load_pose_track(&annotations, 2)?.track;
            let frames = p3
                .poses()
                .iter()
                .filter_map(|a| p2.get(a.frame_id()).map(|b| CalibrationFrame::new(a.clone(), b.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            if frames.is_empty() {
                return Err(InvalidInput("3D points and annotations share no frame ids".into()).into());
            }
            let result = optimize_focal(&cam, &frames, &opt)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("camera.txt"), result.camera.to_text())?;
            fs::write(out.join("trace.csv"), result.trace_csv())?;
            println!(
                "focal {} after {} iterations, loss {}",
                result.camera.focal,
                result.iterations(),
                result.final_loss()
            );
        }
        Command::Enhance {
            frames,
            boxes,
            out,
            margin,
            clip_limit,
            tiles,
        } => {
            let mut cfg = pitchblur::enhance::EnhanceConfig::default();
            if let Some(v) = margin {
                cfg.margin = v;
            }
            if let Some(v) = clip_limit {
                cfg.clip_limit = v;
            }
            if let Some(Pair(r, c)) = tiles {
                cfg.tile_grid = (r, c);
            }
            cfg.validate()?;
            let seq = load_frame_sequence(&frames, SourceTag::Dataset)?;
            let boxes = boxes.map(load_boxes).transpose()?;
            fs::create_dir_all(&out)?;
            let mut written = 0;
            for frame in seq.frames() {
                let bbox = match &boxes {
                    Some(list) => match list.iter().find(|b| b.frame_id == frame.id()) {
                        Some(b) => *b,
                        None => {
                            log::warn!("no box for frame {}, skipped", frame.id());
                            continue;
                        }
                    },
                    None => BoundingBox::new(frame.id(), 0.0, 0.0, frame.width() as f64, frame.height() as f64)?,
                };
                save_frame(out.join(frame_file_name(frame.id())), &enhance_frame(frame, &bbox, &cfg)?)?;
                written += 1;
            }
            println!("{written} frames enhanced");
        }
        Command::Eval {
            gt,
            pred,
            label,
            dims,
            out,
        } => {
            if !label.is_empty() && label.len() != pred.len() {
                return Err(InvalidInput(format!("{} labels for {} prediction files", label.len(), pred.len())).into());
            }
            let gt = load_pose_track(&gt, dims)?.track;
            let labels: Vec<String> = if label.is_empty() {
                pred.iter()
                    .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned())
                    .collect()
            } else {
                label
            };
            fs::create_dir_all(&out)?;
            let mut reports = Vec::new();
            for (path, name) in pred.iter().zip(&labels) {
                let report = mpjpe(&load_pose_track(path, dims)?.track, &gt)?;
                if !report.skipped.is_empty() {
                    log::warn!("{name}: {} frame(s) present in only one track", report.skipped.len());
                }
                fs::write(out.join(format!("{name}.csv")), report.to_csv())?;
                reports.push(report);
            }
            let table = compare_runs(&reports, &labels)?;
            fs::write(out.join("comparison.csv"), table.to_csv())?;
            print!("{}", table.to_csv());
        }
        Command::Pipeline { config, out, blur } => {
            let mut cfg = PipelineConfig::load(&config)?;
            blur.apply(&mut cfg.augment, &mut cfg.seed);
            cfg.validate()?;
            let manifest = run_pipeline(&cfg, &out)?;
            for s in &manifest.stages {
                println!("{}: {}", s.stage, s.summary);
            }
            println!("split check: {}", manifest.split_check);
        }
        Command::IngestItw {
            frames,
            pseudo_gt,
            out,
            dims,
            config,
            blur,
            flow,
        } => {
            let mut cfg = base_config(config.as_deref())?;
            blur.apply(&mut cfg.augment, &mut cfg.seed);
            let blur_cfg = cfg.blur_config();
            blur_cfg.validate()?;
            let params = flow.apply(cfg.flow);
            let summary = ingest_itw(
                &IngestInputs {
                    frames_dir: &frames,
                    pseudo_gt: &pseudo_gt,
                    dims,
                    blur: &blur_cfg,
                    flow: &params,
                },
                &out,
            )?;
            println!(
                "shard of {} frames ({} excluded, {} augmented)",
                summary.frames,
                summary.excluded.len(),
                summary.augmented
            );
        }
        Command::Validate { config } => {
            let cfg = PipelineConfig::load_validated(&config)?;
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID as u8 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
