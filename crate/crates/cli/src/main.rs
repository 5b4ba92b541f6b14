mod config;
mod depth_spec;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use endofusion::dataset::{
    depth_range, format_poses, plan_manifest, plan_sequences, read_frame, read_manifest,
    read_poses, write_frame, write_manifest, write_poses, SequenceInfo, DEFAULT_VAL_FRACTION,
};
use endofusion::eval::{
    ate, depth_metrics, sequence_depth_metrics, surface_error, SurfaceError, TrajectoryError,
};
use endofusion::fusion::{export_ply, read_ply, FrameTelemetry, Pipeline, SurfelMap};
use endofusion::{CameraIntrinsics, DepthMetrics, Difficulty, Error, Frame};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use config::RunConfig;
use depth_spec::{DepthSpec, ResolvedDepth};

#[derive(Parser)]
#[command(
    name = "endofusion",
    version,
    about = "Synthetic colonoscopy surfel fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Generate(GenerateArgs),
    /// Track and fuse one sequence of a dataset.
    Fuse(FuseArgs),
    /// Score a fuse run against the dataset's ground truth.
    Eval(EvalArgs),
    /// Print the effective configuration as flat dotted keys.
    Config(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON file of dotted keys, e.g. {"tracking.w_rgb": 0.1}.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. --set tracking.pyramid_levels=2. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for pair in &self.set {
            config.set_pair(pair)?;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    difficulty: Option<Difficulty>,
    /// Number of consecutive scene seeds.
    #[arg(long)]
    scenes: Option<usize>,
    /// Appearance renderings per scene.
    #[arg(long)]
    variants: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    /// Camera advance per frame (m).
    #[arg(long)]
    advance: Option<f64>,
    #[arg(long)]
    jitter_seed: Option<u64>,
    #[arg(long, default_value = "synthetic")]
    name: String,
    /// Replace an existing dataset in `--out`.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct FuseArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// gt | corrupted:rms=X | corrupted:sigma=X | external:DIR
    #[arg(long)]
    depth: Option<String>,
    /// Which sequence of the dataset to fuse.
    #[arg(long, default_value_t = 0)]
    sequence: usize,
    /// Export unstable surfels too.
    #[arg(long)]
    all_surfels: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory of `fuse`.
    #[arg(long)]
    run: PathBuf,
    /// Metrics JSON path (default RUN/metrics.json).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-frame errors as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Depth metrics in meters instead of normalised depth.
    #[arg(long)]
    absolute: bool,
}

/// Everything `eval` needs to know about a fuse run.
#[derive(Serialize, Deserialize)]
struct RunRecord {
    data: PathBuf,
    sequence: usize,
    start: usize,
    requested_frames: usize,
    processed_frames: usize,
    depth: ResolvedDepth,
    converged_fraction: f64,
    /// Set when the run stopped early.
    aborted: Option<String>,
    last_good_frame: Option<usize>,
    seconds: f64,
    config: serde_json::Map<String, Value>,
}

#[derive(Serialize)]
struct Metrics {
    frames: usize,
    tracked_frames: usize,
    depth_source: String,
    normalized_depth: bool,
    depth: DepthMetrics,
    ate_rmse: f64,
    surface: Option<SurfaceError>,
    surfels: usize,
    converged_fraction: f64,
    aborted: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
        Command::Config(a) => a.load().and_then(|c| {
            c.validate()?;
            println!("{}", serde_json::to_string_pretty(&c.to_flat())?);
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

const DATASET_ENTRIES: [&str; 4] = ["rgb", "depth", "poses.txt", "manifest.json"];

fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let non_empty = fs::read_dir(out)
            .with_context(|| format!("reading {}", out.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            bail!(
                "{} is not empty; pass --force to replace the dataset in it",
                out.display()
            );
        }
        if force {
            for entry in DATASET_ENTRIES {
                let p = out.join(entry);
                if p.is_dir() {
                    fs::remove_dir_all(&p).with_context(|| format!("removing {}", p.display()))?;
                } else if p.exists() {
                    fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
                }
            }
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut config = args.config.load()?;
    if let Some(v) = args.seed {
        config.scene.seed = v;
    }
    if let Some(v) = args.difficulty {
        config.scene.difficulty = v;
    }
    if let Some(v) = args.scenes {
        config.scene.count = v;
    }
    if let Some(v) = args.variants {
        config.scene.variants = v;
    }
    if let Some(v) = args.frames {
        config.trajectory.frames = v;
    }
    if let Some(v) = args.advance {
        config.trajectory.advance = v;
    }
    if args.jitter_seed.is_some() {
        config.trajectory.jitter_seed = args.jitter_seed;
    }
    config.validate()?;
    prepare_out_dir(&args.out, args.force)?;

    let intr = CameraIntrinsics::default();
    let seeds: Vec<u64> = (0..config.scene.count as u64)
        .map(|k| config.scene.seed + k)
        .collect();
    let mut template = SequenceInfo::new(
        config.scene.seed,
        config.scene.difficulty,
        config.trajectory.frames,
        config.trajectory.advance,
    );
    template.jitter_seed = config.trajectory.jitter_seed;
    // A single rendering keeps the scene's own appearance.
    let sequences = if config.scene.variants == 1 {
        seeds
            .iter()
            .enumerate()
            .map(|(k, &seed)| SequenceInfo {
                scene_seed: seed,
                start: k * template.len,
                ..template.clone()
            })
            .collect()
    } else {
        plan_sequences(&seeds, config.scene.variants, &template)
    };
    let mut manifest = plan_manifest(&args.name, intr, sequences, DEFAULT_VAL_FRACTION)?;

    let mut poses = Vec::with_capacity(manifest.n_frames);
    let mut range = [f64::INFINITY, 0.0f64];
    for info in &manifest.sequences {
        let (frames, seq_poses) = info
            .render(&intr)
            .with_context(|| format!("rendering scene {}", info.scene_seed))?;
        frames
            .par_iter()
            .try_for_each(|f| write_frame(&args.out, f.frame_index, f))?;
        let r = depth_range(&frames);
        if r[1] > 0.0 {
            range = [range[0].min(r[0]), range[1].max(r[1])];
        }
        poses.extend(seq_poses);
    }
    manifest.depth_range = if range[1] > 0.0 { range } else { [0.0, 0.0] };
    write_poses(&args.out.join("poses.txt"), &poses)?;
    write_manifest(&args.out, &manifest)?;
    println!(
        "wrote {} frames ({} sequences) to {}",
        manifest.n_frames,
        manifest.sequences.len(),
        args.out.display()
    );
    Ok(())
}

fn fuse(args: FuseArgs) -> Result<()> {
    let mut config = args.config.load()?;
    if let Some(d) = &args.depth {
        config.depth.source = d.clone();
    }
    if args.all_surfels {
        config.fusion.export_all = true;
    }
    config.validate()?;
    let spec: DepthSpec = config.depth.source.parse()?;

    let manifest = read_manifest(&args.data)?;
    let info = manifest.sequences.get(args.sequence).with_context(|| {
        format!(
            "dataset has {} sequences, asked for {}",
            manifest.sequences.len(),
            args.sequence
        )
    })?;
    let gt_poses = read_poses(&args.data.join("poses.txt"))?;
    let frames: Vec<Frame> = (info.start..info.start + info.len)
        .into_par_iter()
        .map(|i| read_frame(&args.data, i, &manifest.intrinsics))
        .collect::<endofusion::Result<_>>()?;
    let gt_depth: Vec<_> = frames.iter().map(|f| f.depth.clone()).collect();
    let depth = spec.resolve(&gt_depth)?;
    let source = depth.source();

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let telemetry_path = args.out.join("telemetry.jsonl");
    let mut telemetry = std::io::BufWriter::new(
        fs::File::create(&telemetry_path)
            .with_context(|| format!("creating {}", telemetry_path.display()))?,
    );

    let start = std::time::Instant::now();
    let mut pipeline = Pipeline::new(manifest.intrinsics, config.pipeline());
    let first_pose = gt_poses[info.start];
    let mut aborted = None;
    for frame in &frames {
        let mut input = frame.clone();
        input.depth = source.provide(frame.frame_index, &frame.depth)?;
        match pipeline.process(&input, &first_pose) {
            Ok(t) => write_telemetry(&mut telemetry, t)?,
            Err(e @ Error::TrackingLost { .. }) => {
                if let Some(t) = pipeline.telemetry.last() {
                    write_telemetry(&mut telemetry, t)?;
                }
                aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    telemetry.flush()?;

    export_ply(
        &pipeline.map,
        &args.out.join("map.ply"),
        config.fusion.export_all,
    )?;
    fs::write(
        args.out.join("trajectory.txt"),
        format_poses(&pipeline.trajectory),
    )?;
    let record = RunRecord {
        data: args.data.clone(),
        sequence: args.sequence,
        start: info.start,
        requested_frames: info.len,
        processed_frames: pipeline.trajectory.len(),
        depth,
        converged_fraction: pipeline.converged_fraction(),
        aborted: aborted.clone(),
        last_good_frame: pipeline.last_good_frame(),
        seconds: start.elapsed().as_secs_f64(),
        config: config.to_flat(),
    };
    fs::write(
        args.out.join("run.json"),
        serde_json::to_string_pretty(&record)?,
    )?;

    if let Some(reason) = aborted {
        bail!("{reason}; partial results in {}", args.out.display());
    }
    println!(
        "fused {} frames, {} surfels ({} stable), converged {:.1}%",
        record.processed_frames,
        pipeline.map.len(),
        pipeline.map.stable().count(),
        100.0 * record.converged_fraction
    );
    Ok(())
}

fn write_telemetry(w: &mut impl Write, t: &FrameTelemetry) -> Result<()> {
    serde_json::to_writer(&mut *w, t)?;
    writeln!(w)?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let required = [
        args.data.join("manifest.json"),
        args.data.join("poses.txt"),
        args.run.join("run.json"),
        args.run.join("trajectory.txt"),
        args.run.join("map.ply"),
    ];
    let missing: Vec<String> = required
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        bail!("missing inputs: {}", missing.join(", "));
    }

    let manifest = read_manifest(&args.data)?;
    let record: RunRecord = serde_json::from_str(&fs::read_to_string(args.run.join("run.json"))?)
        .context("parsing run.json")?;
    let info = manifest.sequences.get(record.sequence).with_context(|| {
        format!(
            "run refers to sequence {} missing from the dataset",
            record.sequence
        )
    })?;
    let gt_poses = read_poses(&args.data.join("poses.txt"))?;
    let est = read_poses(&args.run.join("trajectory.txt"))?;
    if est.len() > info.len {
        bail!(
            "trajectory has {} poses, sequence has {} frames",
            est.len(),
            info.len
        );
    }
    let gt = &gt_poses[info.start..info.start + est.len()];
    let trajectory = if est.len() >= 2 {
        ate(&est, gt)?
    } else {
        TrajectoryError {
            ate_rmse: 0.0,
            per_frame_errors: vec![0.0; est.len()],
        }
    };

    // Depth is scored over the whole sequence, whether or not tracking got through it.
    let normalize = !args.absolute;
    let source = record.depth.source();
    let pairs: Vec<_> = (info.start..info.start + info.len)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let frame = read_frame(&args.data, i, &manifest.intrinsics)?;
            let pred = source.provide(i, &frame.depth)?;
            Ok((pred, frame.depth))
        })
        .collect::<Result<_>>()?;
    let (preds, gts): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let depth = sequence_depth_metrics(&preds, &gts, normalize)?;

    let threshold = record
        .config
        .get("fusion.stability_threshold")
        .and_then(Value::as_f64)
        .unwrap_or(0.0);
    let mut map = SurfelMap::new(threshold, usize::MAX);
    map.surfels = read_ply(&args.run.join("map.ply"))?;
    let surface = match surface_error(&map, &info.scene()) {
        Ok(s) => Some(s),
        Err(Error::EmptyMap) => None,
        Err(e) => return Err(e.into()),
    };

    let metrics = Metrics {
        frames: info.len,
        tracked_frames: est.len(),
        depth_source: config_depth_label(&record.depth),
        normalized_depth: normalize,
        depth,
        ate_rmse: trajectory.ate_rmse,
        surface,
        surfels: map.len(),
        converged_fraction: record.converged_fraction,
        aborted: record.aborted.clone(),
    };
    let json = serde_json::to_string_pretty(&metrics)?;
    let out = args.out.unwrap_or_else(|| args.run.join("metrics.json"));
    fs::write(&out, &json).with_context(|| format!("writing {}", out.display()))?;
    println!("{json}");

    if let Some(csv) = &args.csv {
        let mut text = String::from("frame,position_error,depth_rel,depth_log10,depth_rms\n");
        for (k, (p, g)) in preds.iter().zip(&gts).enumerate() {
            let m = depth_metrics(p, g, normalize)?;
            let position = trajectory
                .per_frame_errors
                .get(k)
                .map_or(String::new(), |e| format!("{e:.9}"));
            text.push_str(&format!(
                "{},{position},{:.9},{:.9},{:.9}\n",
                info.start + k,
                m.rel,
                m.log10,
                m.rms
            ));
        }
        fs::write(csv, text).with_context(|| format!("writing {}", csv.display()))?;
    }
    Ok(())
}

fn config_depth_label(d: &ResolvedDepth) -> String {
    match d {
        ResolvedDepth::Gt => "gt".into(),
        ResolvedDepth::Corrupted { noise, .. } => {
            format!("corrupted:sigma={}", noise.multiplicative_sigma)
        }
        ResolvedDepth::External { dir } => format!("external:{}", dir.display()),
    }
}
