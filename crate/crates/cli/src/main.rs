mod config;
mod scenes;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use lcc_core::discriminator::CameraStrategy;
use lcc_core::dpcm::write_correspondence_csv;
use lcc_core::experiment::{run_sweep, sweep_csv, SweepSpec};
use lcc_core::geometry::error_metrics;
use lcc_core::pipeline::{run_calibration, VirtualMasks};
use lcc_core::report::{parse_pose_block, pose_block, render_report};
use lcc_core::synthetic::{
    generate, random_extrinsic, random_scene, LidarModel, NoiseSpec, SceneSpec,
};
use lcc_core::{Intrinsics, PipelineConfig, Pose};
use serde::{Deserialize, Serialize};

use config::FileConfig;
use scenes::{write_scene, write_text};

#[derive(Parser)]
#[command(
    name = "lcc",
    version,
    about = "Targetless LiDAR-camera extrinsic calibration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate from the scenes listed in a config file.
    Calibrate(CalibrateArgs),
    /// Generate synthetic scenes, a ground truth and a ready-to-run config.
    Synth(SynthArgs),
    /// Run a seeded parameter sweep and write one CSV row per cell.
    Experiment(ExperimentArgs),
    /// Compare a report's pose against a ground-truth pose.
    Eval(EvalArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    config: PathBuf,
    #[arg(long)]
    camera_strategy: Option<CameraStrategy>,
    /// Skip the joint refinement and report the best single scene.
    #[arg(long)]
    single_scene: bool,
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write LiDAR-on-image overlay PNGs.
    #[arg(long)]
    overlay: bool,
    /// Pose file to evaluate against; overrides `ground_truth` in the config.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    primitives: usize,
    /// Generate a single scene from this spec instead of random ones.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// `solid-state` or `spinning-<lines>`.
    #[arg(long, default_value = "solid-state")]
    lidar: String,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0.0)]
    pixel_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    point_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    dropout_rate: f64,
    #[arg(long, default_value_t = 2.0)]
    max_rotation_deg: f64,
    #[arg(long, default_value_t = 0.3)]
    max_offset_m: f64,
    /// Virtual-mask source written into the generated config.
    #[arg(long, default_value = "oracle")]
    virtual_masks: String,
}

#[derive(Args)]
struct ExperimentArgs {
    sweep: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    report: PathBuf,
    /// Defaults to the report's own ground-truth section.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Synth(a) => synth(a).map(|_| ExitCode::SUCCESS),
        Command::Experiment(a) => experiment(a).map(|_| ExitCode::SUCCESS),
        Command::Eval(a) => eval(a).map(|_| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}

fn jobs(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .max(1)
}

fn read_pose(path: &Path) -> anyhow::Result<Pose> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_pose_block(&text).with_context(|| format!("parsing {}", path.display()))
}

fn calibrate(a: CalibrateArgs) -> anyhow::Result<ExitCode> {
    let file = FileConfig::load(&a.config)?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let mut run = file.resolve(base)?;
    if let Some(s) = a.camera_strategy {
        run.pipeline.plan.strategy = s;
    }
    if a.single_scene {
        run.pipeline.single_scene = true;
    }
    if let Some(seed) = a.seed {
        run.pipeline.solve.seed = seed;
    }
    if let Some(p) = &a.ground_truth {
        run.ground_truth = Some(read_pose(p)?);
    }
    let out = a
        .out
        .or(run.output)
        .unwrap_or_else(|| PathBuf::from("lcc-out"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    // Load failures keep their scene index so the report lists them in order.
    let mut inputs = Vec::new();
    let mut positions = Vec::new();
    let mut load_failures = Vec::new();
    for (i, files) in run.scenes.iter().enumerate() {
        match files.load(&run.pipeline) {
            Ok(input) => {
                positions.push(i);
                inputs.push(input);
            }
            Err(e) => {
                log::warn!("scene {i} ({}) could not be loaded: {e}", files.name);
                load_failures.push((i, files.name.clone(), format!("{}: {e}", e.kind())));
            }
        }
    }
    let total = run.scenes.len();
    if inputs.is_empty() {
        for (i, name, reason) in &load_failures {
            eprintln!("scene {i} {name}: {reason}");
        }
        bail!("no scene could be loaded");
    }
    let mut result = match run_calibration(&inputs, &run.intrinsics, &run.pipeline, jobs(a.jobs)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: every scene failed: {e}");
            return Ok(ExitCode::from(1));
        }
    };
    for s in &mut result.scenes {
        s.index = positions[s.index];
    }
    for s in &mut result.skipped {
        s.0 = positions[s.0];
    }
    result.skipped.extend(load_failures);
    result.skipped.sort_by_key(|s| s.0);

    let report = render_report(
        &result,
        &run.intrinsics,
        &run.pipeline.solve,
        run.ground_truth.as_ref(),
    );
    write_text(&out.join("report.txt"), &report)?;
    let dumps = out.join("correspondences");
    std::fs::create_dir_all(&dumps)?;
    for s in &result.scenes {
        write_correspondence_csv(
            &s.bundle.correspondences,
            dumps.join(format!("{:03}_{}.csv", s.index, s.name)),
        )?;
    }
    if a.overlay {
        let dir = out.join("overlays");
        std::fs::create_dir_all(&dir)?;
        for (input, &i) in inputs.iter().zip(&positions) {
            write_overlay(
                input,
                &result.pose,
                &run.intrinsics,
                &dir.join(format!("{i:03}_{}.png", input.name)),
            )?;
        }
    }
    print!("{report}");
    Ok(if result.scenes.len() == total {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

/// LiDAR points drawn onto the camera image, colored near (blue) to far (red).
fn write_overlay(
    input: &lcc_core::SceneInput,
    pose: &Pose,
    k: &Intrinsics,
    path: &Path,
) -> anyhow::Result<()> {
    let mut dots = Vec::new();
    for p in input.cloud.points() {
        let c = pose.transform_point(p);
        if c.z <= 0.0 {
            continue;
        }
        if let Ok(px) = k.project(&c) {
            if k.contains(&px, 0.0) {
                dots.push((px, c.z));
            }
        }
    }
    let (near, far) = dots.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
        (lo.min(d.1), hi.max(d.1))
    });
    let span = (far - near).max(1e-9);
    for d in &mut dots {
        d.1 = (d.1 - near) / span;
    }
    input.image.save_overlay(&dots, path)?;
    Ok(())
}

#[derive(Serialize)]
struct SynthConfig<'a> {
    scenes: Vec<String>,
    ground_truth: &'a str,
    output: &'a str,
    intrinsics: Intrinsics,
    pipeline: PipelineConfig,
}

fn parse_lidar(name: &str, samples: usize) -> anyhow::Result<LidarModel> {
    if name == "solid-state" {
        return Ok(LidarModel::solid_state(samples));
    }
    if let Some(lines) = name.strip_prefix("spinning-") {
        let lines: usize = lines
            .parse()
            .with_context(|| format!("bad line count in `{name}`"))?;
        return Ok(LidarModel::spinning(lines));
    }
    bail!("unknown LiDAR model `{name}` (solid-state, spinning-<lines>)")
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let specs: Vec<SceneSpec> = match &a.spec {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            vec![SceneSpec::from_toml(&text)?]
        }
        None => {
            let lidar = parse_lidar(&a.lidar, a.samples)?;
            let noise = NoiseSpec {
                pixel_sigma: a.pixel_sigma,
                point_sigma: a.point_sigma,
                outlier_rate: a.outlier_rate,
                dropout_rate: a.dropout_rate,
            };
            let truth = random_extrinsic(a.seed, a.max_rotation_deg, a.max_offset_m);
            (0..a.scenes as u64)
                .map(|i| {
                    let seed = a.seed.wrapping_mul(1000).wrapping_add(i);
                    random_scene(seed, a.primitives, truth, lidar, noise)
                })
                .collect()
        }
    };
    let mut names = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let scene = generate(spec).with_context(|| format!("generating scene {i}"))?;
        let name = format!("scene{i}");
        write_scene(&a.out.join(&name), &scene)?;
        log::info!(
            "{name}: {} points, {} masks",
            scene.cloud.len(),
            scene.masks.len()
        );
        names.push(name);
    }
    write_text(
        &a.out.join("ground_truth.txt"),
        &pose_block(&specs[0].true_extrinsic),
    )?;
    let pipeline = PipelineConfig {
        virtual_masks: match a.virtual_masks.as_str() {
            "oracle" => VirtualMasks::Oracle,
            "segment" => VirtualMasks::Segment,
            other => bail!("unknown virtual-mask source `{other}` (oracle, segment)"),
        },
        ..Default::default()
    };
    let cfg = SynthConfig {
        scenes: names,
        ground_truth: "ground_truth.txt",
        output: "out",
        intrinsics: specs[0].intrinsics,
        pipeline,
    };
    write_text(&a.out.join("config.toml"), &toml::to_string(&cfg)?)?;
    Ok(())
}

#[derive(Deserialize)]
struct ExperimentFile {
    #[serde(flatten)]
    sweep: SweepSpec,
    #[serde(default)]
    pipeline: PipelineConfig,
}

fn experiment(a: ExperimentArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.sweep)
        .with_context(|| format!("reading {}", a.sweep.display()))?;
    let mut file: ExperimentFile =
        toml::from_str(&text).with_context(|| format!("parsing {}", a.sweep.display()))?;
    if let Some(t) = a.trials {
        file.sweep.trials = t;
    }
    if let Some(s) = a.seed {
        file.sweep.first_seed = s;
    }
    let rows = run_sweep(&file.sweep, &file.pipeline, jobs(a.jobs))?;
    let csv = sweep_csv(&rows);
    write_text(&a.out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.report)
        .with_context(|| format!("reading {}", a.report.display()))?;
    let estimate =
        parse_pose_block(&text).with_context(|| format!("parsing {}", a.report.display()))?;
    let truth = match &a.ground_truth {
        Some(p) => read_pose(p)?,
        None => {
            let section = text
                .split_once("\nGround truth\n")
                .map(|(_, rest)| rest)
                .context("the report has no ground-truth section; pass --ground-truth")?;
            parse_pose_block(section)?
        }
    };
    let e = error_metrics(&estimate, &truth);
    println!("e_r = {:.9} deg", e.rotation_deg);
    println!("e_t = {:.9} m", e.translation_m);
    println!(
        "euler error (yaw pitch roll) = {:.6} {:.6} {:.6} deg",
        e.euler_deg[0], e.euler_deg[1], e.euler_deg[2]
    );
    Ok(())
}
