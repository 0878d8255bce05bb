//! Command-line surface tying the toolkit together for batch use.
//!
//! Exit codes: 0 on success, 1 for validation or configuration problems
//! (including usage errors), 2 for I/O failures. Every command is
//! deterministic given identical flags and inputs, for any `--workers` value.
//!
//! A `--config` file holds `key = value` lines (`#` comments allowed).
//! Precedence: command-line flag, then config file, then built-in default.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{ArgAction, Args, Parser, Subcommand};

use crate::assign::{ppm_gate, PpmSchedule, Thresholds};
use crate::augment::{augment_image, replay_augment, AppliedParams, AugmentSpec, Raster};
use crate::dataset::{load_dataset, save_dataset};
use crate::error::{Error, Result};
use crate::eval::{coco_iou_thresholds, evaluate_ap_with, load_detections, Interpolation};
use crate::geometry::BBox;
use crate::merge::MergeConfig;
use crate::sim::{
    build_sim_instance, evaluate_instance, render_overlays, DetectorNoise, SceneSpec,
};
use crate::splits::{
    generate_split, make_ssl_saod, split_stats, Split4Level, SplitKind, SplitSpec,
};

#[derive(Parser, Debug)]
#[command(
    name = "saod",
    version,
    about = "Sparse-annotation toolkit: split generation, proposal mining, evaluation"
)]
pub struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,

    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    /// Key=value config file consulted for flags not given on the command line.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a sparsified training set plus its removal manifest.
    SplitGen(SplitGenArgs),
    /// Combine a labeled dataset with a pool of unlabeled images.
    SslSaod(SslSaodArgs),
    /// Score a detection results file against a ground-truth dataset.
    Evaluate(EvaluateArgs),
    /// Run the synthetic mining experiment.
    PpmSim(PpmSimArgs),
    /// Apply (or replay) the photometric augmentation cascade to a PPM image.
    Augment(AugmentArgs),
    /// Report sparsity statistics of a split against its source dataset.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
pub struct SplitGenArgs {
    /// Source annotation file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory (created if absent); writes dataset.json and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = SplitKind::from_str)]
    pub kind: SplitKind,
    /// Removal fraction in [0, 1].
    #[arg(long)]
    pub p: Option<f64>,
    /// Severity for split4: easy|hard|extreme.
    #[arg(long, value_parser = Split4Level::from_str)]
    pub level: Option<Split4Level>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SslSaodArgs {
    /// Sparsely labeled dataset.
    #[arg(long)]
    pub labeled: PathBuf,
    /// Dataset whose images join as the unlabeled pool.
    #[arg(long)]
    pub unlabeled: PathBuf,
    /// Output annotation file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Ground-truth annotation file.
    #[arg(long)]
    pub gt: PathBuf,
    /// Detection results file (array of {image_id, category_id, bbox, score}).
    #[arg(long)]
    pub results: PathBuf,
    /// Machine-readable report destination.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated IoU thresholds (default 0.50:0.05:0.95).
    #[arg(long, value_delimiter = ',')]
    pub iou_thresholds: Option<Vec<f64>>,
    /// Interpolation grid: 101 or 11 points.
    #[arg(long, default_value = "101", value_parser = parse_interp)]
    pub interp: Interpolation,
}

#[derive(Args, Debug)]
pub struct PpmSimArgs {
    /// Output directory for recovery.json (and sweep.json / overlays).
    #[arg(long)]
    pub out: PathBuf,

    // Scene.
    #[arg(long)]
    pub images: Option<u32>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub categories: Option<u32>,
    /// Objects per image, "lo,hi".
    #[arg(long, value_parser = parse_pair_u32)]
    pub objects: Option<[u32; 2]>,
    /// Object side length range, "lo,hi" pixels.
    #[arg(long, value_parser = parse_pair_u32)]
    pub object_size: Option<[u32; 2]>,
    #[arg(long)]
    pub max_overlap: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,

    // Split.
    #[arg(long, value_parser = SplitKind::from_str, default_value = "split3")]
    pub split_kind: SplitKind,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, value_parser = Split4Level::from_str)]
    pub level: Option<Split4Level>,

    // Detector noise.
    #[arg(long)]
    pub loc_sigma: Option<f64>,
    #[arg(long)]
    pub fg_mean: Option<f64>,
    #[arg(long)]
    pub bg_mean: Option<f64>,
    #[arg(long)]
    pub obj_sigma: Option<f64>,
    #[arg(long)]
    pub fp_rate: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,

    // Thresholds.
    #[arg(long)]
    pub tau_fg: Option<f64>,
    #[arg(long)]
    pub tau_bg: Option<f64>,
    #[arg(long)]
    pub tau_obj: Option<f64>,
    #[arg(long)]
    pub tau_ppm: Option<f64>,
    #[arg(long)]
    pub tau_m: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,

    // Mining schedule; mining is active when iteration >= warmup.
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub iteration: Option<u64>,

    /// Comma-separated tau_ppm grid; writes sweep.json with one row per value.
    #[arg(long, value_delimiter = ',')]
    pub sweep_tau_ppm: Option<Vec<f64>>,

    /// Also write per-image overlay rasters (ground truth red, mined white).
    #[arg(long)]
    pub overlays: bool,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Input raster (binary PPM).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output raster (binary PPM).
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth boxes as "x,y,w,h;x,y,w,h;...".
    #[arg(long, value_parser = parse_boxes)]
    pub boxes: Option<BoxList>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Factor range "lo,hi".
    #[arg(long, value_parser = parse_pair_f64)]
    pub contrast: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_pair_f64)]
    pub brightness: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_pair_f64)]
    pub saturation: Option<[f64; 2]>,
    #[arg(long)]
    pub lighting_scale: Option<f64>,
    /// Erased area fraction range "lo,hi".
    #[arg(long, value_parser = parse_pair_f64)]
    pub erase_area: Option<[f64; 2]>,
    /// Erase aspect ratio range "lo,hi".
    #[arg(long, value_parser = parse_pair_f64)]
    pub erase_aspect: Option<[f64; 2]>,
    #[arg(long)]
    pub erase_prob: Option<f64>,
    /// Record the sampled parameters here.
    #[arg(long)]
    pub params_out: Option<PathBuf>,
    /// Replay a recorded parameter file instead of sampling.
    #[arg(long)]
    pub replay: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub sparse: PathBuf,
    /// Optional machine-readable report destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_pair<T: FromStr>(s: &str) -> std::result::Result<[T; 2], String>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected \"lo,hi\", got '{s}'"));
    }
    let lo = parts[0].trim().parse::<T>().map_err(|e| e.to_string())?;
    let hi = parts[1].trim().parse::<T>().map_err(|e| e.to_string())?;
    Ok([lo, hi])
}

fn parse_pair_f64(s: &str) -> std::result::Result<[f64; 2], String> {
    parse_pair::<f64>(s)
}

fn parse_pair_u32(s: &str) -> std::result::Result<[u32; 2], String> {
    parse_pair::<u32>(s)
}

fn parse_interp(s: &str) -> std::result::Result<Interpolation, String> {
    match s {
        "101" => Ok(Interpolation::Points101),
        "11" => Ok(Interpolation::Points11),
        _ => Err(format!("expected 101 or 11, got '{s}'")),
    }
}

/// Semicolon-separated box list, one clap value.
#[derive(Clone, Debug)]
pub struct BoxList(pub Vec<BBox>);

fn parse_boxes(s: &str) -> std::result::Result<BoxList, String> {
    s.split(';')
        .filter(|part| !part.trim().is_empty())
        .map(|part| {
            let vals: Vec<f64> = part
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| e.to_string()))
                .collect::<std::result::Result<_, String>>()?;
            if vals.len() != 4 {
                return Err(format!("box '{part}' needs 4 values x,y,w,h"));
            }
            Ok(BBox::from_xywh(vals[0], vals[1], vals[2], vals[3]))
        })
        .collect::<std::result::Result<Vec<BBox>, String>>()
        .map(BoxList)
}

/// Key=value file used as a fallback for unset flags.
#[derive(Debug, Default)]
pub struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::domain(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    n + 1
                )));
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::domain(format!("config key '{key}' = '{raw}': {e}"))),
        }
    }
}

fn resolve<T: FromStr>(flag: Option<T>, cfg: &FileConfig, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(v),
        None => Ok(cfg.get(key)?.unwrap_or(default)),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Parse and dispatch, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };

    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();

    if cli.workers > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
    }

    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::SplitGen(args) => cmd_split_gen(args, &cfg),
        Command::SslSaod(args) => cmd_ssl_saod(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::PpmSim(args) => cmd_ppm_sim(args, &cfg),
        Command::Augment(args) => cmd_augment(args, &cfg),
        Command::Stats(args) => cmd_stats(args),
    }
}

fn cmd_split_gen(args: SplitGenArgs, cfg: &FileConfig) -> Result<()> {
    let dataset = load_dataset(&args.input)?;
    log::info!(
        "loaded {} images, {} annotations",
        dataset.images.len(),
        dataset.annotations.len()
    );
    let spec = SplitSpec::new(
        args.kind,
        resolve(args.p, cfg, "p", 0.0)?,
        args.level,
        resolve(args.seed, cfg, "seed", 0)?,
    );
    let (sparse, manifest) = generate_split(&dataset, &spec)?;
    ensure_dir(&args.out)?;
    save_dataset(&sparse, args.out.join("dataset.json"))?;
    manifest.save(args.out.join("manifest.json"))?;
    let report = split_stats(&dataset, &sparse)?;
    println!("{report}");
    Ok(())
}

fn cmd_ssl_saod(args: SslSaodArgs) -> Result<()> {
    let labeled = load_dataset(&args.labeled)?;
    let unlabeled = load_dataset(&args.unlabeled)?;
    let combined = make_ssl_saod(&labeled, &unlabeled)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    save_dataset(&combined, &args.out)?;
    println!(
        "combined dataset: {} images ({} unlabeled), {} annotations",
        combined.images.len(),
        combined.unlabeled_image_ids.len(),
        combined.annotations.len()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let gt = load_dataset(&args.gt)?;
    let dets = load_detections(&args.results)?;
    let thresholds = args.iou_thresholds.unwrap_or_else(coco_iou_thresholds);
    let report = evaluate_ap_with(&gt, &dets, &thresholds, args.interp)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    report.save(&args.out)?;
    print!("{report}");
    Ok(())
}

fn cmd_ppm_sim(args: PpmSimArgs, cfg: &FileConfig) -> Result<()> {
    let scene_defaults = SceneSpec::default();
    let seed = resolve(args.seed, cfg, "seed", scene_defaults.seed)?;
    let scene = SceneSpec {
        image_count: resolve(args.images, cfg, "images", scene_defaults.image_count)?,
        width: resolve(args.width, cfg, "width", scene_defaults.width)?,
        height: resolve(args.height, cfg, "height", scene_defaults.height)?,
        categories: resolve(
            args.categories,
            cfg,
            "categories",
            scene_defaults.categories,
        )?,
        objects_per_image: args.objects.unwrap_or(scene_defaults.objects_per_image),
        object_size: args.object_size.unwrap_or(scene_defaults.object_size),
        max_overlap: resolve(
            args.max_overlap,
            cfg,
            "max_overlap",
            scene_defaults.max_overlap,
        )?,
        seed,
    };
    let split = SplitSpec::new(
        args.split_kind,
        resolve(args.p, cfg, "p", 0.5)?,
        args.level,
        seed,
    );
    let noise_defaults = DetectorNoise::default();
    let noise = DetectorNoise {
        localization_sigma: resolve(
            args.loc_sigma,
            cfg,
            "loc_sigma",
            noise_defaults.localization_sigma,
        )?,
        fg_objectness_mean: resolve(
            args.fg_mean,
            cfg,
            "fg_mean",
            noise_defaults.fg_objectness_mean,
        )?,
        bg_objectness_mean: resolve(
            args.bg_mean,
            cfg,
            "bg_mean",
            noise_defaults.bg_objectness_mean,
        )?,
        objectness_sigma: resolve(
            args.obj_sigma,
            cfg,
            "obj_sigma",
            noise_defaults.objectness_sigma,
        )?,
        false_positive_rate: resolve(
            args.fp_rate,
            cfg,
            "fp_rate",
            noise_defaults.false_positive_rate,
        )?,
        dropout_rate: resolve(args.dropout, cfg, "dropout", noise_defaults.dropout_rate)?,
        seed,
    };
    let t = Thresholds {
        tau_fg: resolve(args.tau_fg, cfg, "tau_fg", 0.4)?,
        tau_bg: resolve(args.tau_bg, cfg, "tau_bg", 0.2)?,
        tau_obj: resolve(args.tau_obj, cfg, "tau_obj", 0.5)?,
        tau_ppm: resolve(args.tau_ppm, cfg, "tau_ppm", 0.8)?,
    };
    let merge = MergeConfig {
        tau_m: resolve(args.tau_m, cfg, "tau_m", 0.9)?,
        nms_iou: resolve(args.nms_iou, cfg, "nms_iou", 0.5)?,
    };
    let schedule = PpmSchedule {
        warmup_iterations: resolve(args.warmup, cfg, "warmup", 0)?,
        current_iteration: resolve(args.iteration, cfg, "iteration", 0)?,
    };
    let active = ppm_gate(&schedule);
    if !active {
        println!(
            "mining inactive: iteration {} < warmup {}",
            schedule.current_iteration, schedule.warmup_iterations
        );
    }

    ensure_dir(&args.out)?;
    let inst = build_sim_instance(&scene, &split, &noise)?;

    if let Some(grid) = &args.sweep_tau_ppm {
        let mut rows = Vec::with_capacity(grid.len());
        println!("tau_ppm  selected  mined  precision  recall");
        for &tau_ppm in grid {
            let t = Thresholds { tau_ppm, ..t };
            let report = evaluate_instance(&inst, &t, &merge, active)?;
            println!(
                "{tau_ppm:>7.2}  {:>8}  {:>5}  {:>9.4}  {:>6.4}",
                report.selected_count,
                report.mined_count,
                report.mined_precision,
                report.mined_recall
            );
            rows.push(report);
        }
        let mut text = serde_json::to_string(&rows).expect("report serialization cannot fail");
        text.push('\n');
        let path = args.out.join("sweep.json");
        fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    } else {
        let report = evaluate_instance(&inst, &t, &merge, active)?;
        report.save(args.out.join("recovery.json"))?;
        print!("{report}");
    }

    if args.overlays {
        let dir = args.out.join("overlays");
        ensure_dir(&dir)?;
        for (image_id, raster) in render_overlays(&scene, &inst, &t, &merge)? {
            raster.write_ppm(dir.join(format!("scene_{image_id:05}.ppm")))?;
        }
    }
    Ok(())
}

fn cmd_augment(args: AugmentArgs, cfg: &FileConfig) -> Result<()> {
    let img = Raster::read_ppm(&args.input)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }

    if let Some(params_path) = &args.replay {
        let params = AppliedParams::load(params_path)?;
        let out = replay_augment(&img, &params)?;
        out.write_ppm(&args.out)?;
        println!(
            "replayed {} onto {}",
            params_path.display(),
            args.out.display()
        );
        return Ok(());
    }

    let defaults = AugmentSpec::default();
    let spec = AugmentSpec {
        contrast_range: args.contrast.unwrap_or(defaults.contrast_range),
        brightness_range: args.brightness.unwrap_or(defaults.brightness_range),
        saturation_range: args.saturation.unwrap_or(defaults.saturation_range),
        lighting_scale: resolve(
            args.lighting_scale,
            cfg,
            "lighting_scale",
            defaults.lighting_scale,
        )?,
        lighting_basis: defaults.lighting_basis,
        erase_area_range: args.erase_area.unwrap_or(defaults.erase_area_range),
        erase_aspect_range: args.erase_aspect.unwrap_or(defaults.erase_aspect_range),
        erase_probability: resolve(
            args.erase_prob,
            cfg,
            "erase_prob",
            defaults.erase_probability,
        )?,
        seed: resolve(args.seed, cfg, "seed", 0)?,
    };
    let boxes = args.boxes.map(|b| b.0).unwrap_or_default();
    let (out, params) = augment_image(&img, &boxes, &spec)?;
    out.write_ppm(&args.out)?;
    if let Some(path) = &args.params_out {
        params.save(path)?;
    }
    println!(
        "augmented {}x{} image: contrast {:.3}, brightness {:.3}, saturation {:.3}, {} erases",
        img.width(),
        img.height(),
        params.contrast_factor,
        params.brightness_factor,
        params.saturation_factor,
        params.erases.iter().flatten().count()
    );
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let original = load_dataset(&args.original)?;
    let sparse = load_dataset(&args.sparse)?;
    let report = split_stats(&original, &sparse)?;
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        let mut text = serde_json::to_string(&report).expect("report serialization cannot fail");
        text.push('\n');
        fs::write(out, text).map_err(|e| Error::io(out, e))?;
    }
    println!("{report}");
    Ok(())
}
