use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use gr3dkit::camera::{normalize_intrinsics, CameraIntrinsics};
use gr3dkit::datagen::{self, GenConfig, GenKind};
use gr3dkit::error::{Error, Result};
use gr3dkit::eval::{self, ApInterpolation, EvalConfig, GCoTRecord};
use gr3dkit::geom2d::DEFAULT_SEED;
use gr3dkit::ground_text::format_number;
use gr3dkit::io::{self, Located};
use gr3dkit::region_protocol::{replay, skeleton, ReplayStep};

#[derive(Parser)]
#[command(name = "gr3dkit", version, about = "Grounded 3D perception toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detection AP with oriented 3D boxes.
    Eval3d(EvalArgs),
    /// Detection AP with 2D boxes.
    Eval2d(EvalArgs),
    /// Answer, grounding and consistency accuracy.
    EvalGcot {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build training records from a scene manifest.
    Gen(GenArgs),
    /// Replay a scripted decode through the region-insertion protocol.
    SimulateStream {
        #[arg(long)]
        replay: PathBuf,
    },
    /// Rescale image dimensions to a 1000 px focal length.
    Normalize {
        #[arg(long)]
        fx: f64,
        #[arg(long)]
        fy: f64,
        #[arg(long)]
        width: u32,
        #[arg(long)]
        height: u32,
        /// Principal point; defaults to the image center.
        #[arg(long)]
        cx: Option<f64>,
        #[arg(long)]
        cy: Option<f64>,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// `start:end:step` or a comma-separated list.
    #[arg(long, default_value = "0.05:0.50:0.05")]
    thresholds: String,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Integrate every recall change instead of 101 recall points.
    #[arg(long)]
    all_points: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Cot,
    Detect,
    Points,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Region jitter as `center_frac,size_frac`.
    #[arg(long)]
    jitter: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = datagen::DEFAULT_MAX_OBJECTS)]
    max_objects: usize,
    #[arg(long, default_value_t = datagen::DEFAULT_POINTS)]
    points: usize,
    /// Group each scene's records into conversations of at most this many turns.
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn parse_jitter(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidConfig(format!("--jitter expects c,s; got {s:?}"));
    let (c, sz) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        c.trim().parse().map_err(|_| bad())?,
        sz.trim().parse().map_err(|_| bad())?,
    ))
}

fn emit_report(text: String, json: String, out: Option<&Path>) -> Result<()> {
    print!("{text}");
    if let Some(p) = out {
        io::write_text(p, &json)?;
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn eval_config(a: &EvalArgs) -> Result<EvalConfig> {
    Ok(EvalConfig {
        thresholds: eval::parse_thresholds(&a.thresholds)?,
        interpolation: if a.all_points {
            ApInterpolation::AllPoints
        } else {
            ApInterpolation::Point101
        },
        jobs: a.jobs.max(1),
    })
}

fn cmd_eval3d(a: &EvalArgs) -> Result<()> {
    let cfg = eval_config(a)?;
    let r = eval::evaluate_3d(
        &io::read_predictions_3d(&a.pred)?,
        &io::read_ground_truth_3d(&a.gt)?,
        &cfg,
    )?;
    emit_report(r.to_text(), r.to_json(), a.out.as_deref())
}

fn cmd_eval2d(a: &EvalArgs) -> Result<()> {
    let cfg = eval_config(a)?;
    let r = eval::evaluate_2d(
        &io::read_predictions_2d(&a.pred)?,
        &io::read_ground_truth_2d(&a.gt)?,
        &cfg,
    )?;
    emit_report(r.to_text(), r.to_json(), a.out.as_deref())
}

fn cmd_eval_gcot(records: &Path, out: Option<&Path>) -> Result<()> {
    let recs: Vec<GCoTRecord> = io::read_values(records)?;
    let r = eval::evaluate_gcot(&recs)?;
    let mut json = serde_json::to_string_pretty(&r).map_err(|e| Error::Serialize(e.to_string()))?;
    json.push('\n');
    emit_report(r.to_text(), json, out)
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let located = datagen::load_manifest_located(&a.manifest)?;
    let scenes: Vec<_> = located.iter().map(|l| l.value.clone()).collect();
    let kind = match a.kind {
        KindArg::Cot => GenKind::Cot,
        KindArg::Detect => GenKind::Detect,
        KindArg::Points => GenKind::Points,
    };
    let mut cfg = GenConfig::new(kind, a.seed);
    cfg.jitter = a.jitter.as_deref().map(parse_jitter).transpose()?;
    cfg.max_objects = a.max_objects;
    cfg.points = a.points;
    cfg.jobs = a.jobs.max(1);
    let records = datagen::generate(&scenes, &cfg).map_err(|e| {
        let at = match &e {
            Error::Scene { image_id, .. } => located.iter().find(|l| &l.value.image_id == image_id),
            _ => None,
        };
        Error::Record {
            path: a.manifest.display().to_string(),
            line: at.map_or(0, |l| l.line),
            offset: at.map_or(0, |l| l.offset),
            message: e.to_string(),
        }
    })?;
    match a.rounds {
        None => io::write_jsonl(&a.out, &records)?,
        Some(rounds) => {
            let mut conversations = Vec::new();
            for group in records.chunk_by(|x, y| x.metadata.get("image_id") == y.metadata.get("image_id")) {
                conversations.extend(datagen::assemble_conversation(group, rounds));
            }
            io::write_jsonl(&a.out, &conversations)?;
        }
    }
    println!("{} records written to {}", records.len(), a.out.display());
    Ok(())
}

fn cmd_simulate_stream(path: &Path) -> Result<()> {
    let steps: Vec<Located<ReplayStep>> = io::read_jsonl(path)?;
    let plain: Vec<ReplayStep> = steps.iter().map(|l| l.value.clone()).collect();
    let segments = replay(&plain).map_err(|e| {
        // Messages name the 1-based step; point the diagnostic at that line.
        let step = match &e {
            Error::ProtocolViolation(m) => m
                .strip_prefix("step ")
                .and_then(|r| r.split(':').next())
                .and_then(|n| n.parse::<usize>().ok()),
            _ => None,
        };
        let located = step.and_then(|n| steps.get(n - 1)).or(steps.last());
        Error::Record {
            path: path.display().to_string(),
            line: located.map_or(0, |l| l.line),
            offset: located.map_or(0, |l| l.offset),
            message: e.to_string(),
        }
    })?;
    for s in skeleton(&segments) {
        println!("{s}");
    }
    Ok(())
}

fn cmd_normalize(fx: f64, fy: f64, width: u32, height: u32, cx: Option<f64>, cy: Option<f64>) -> Result<()> {
    let k = CameraIntrinsics::new(
        fx,
        fy,
        cx.unwrap_or(width as f64 / 2.0),
        cy.unwrap_or(height as f64 / 2.0),
        width,
        height,
    )?;
    let n = normalize_intrinsics(&k);
    println!("scale {}", format_number(n.scale));
    println!("width {}", n.width);
    println!("height {}", n.height);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eval3d(a) => cmd_eval3d(&a),
        Command::Eval2d(a) => cmd_eval2d(&a),
        Command::EvalGcot { records, out } => cmd_eval_gcot(&records, out.as_deref()),
        Command::Gen(a) => cmd_gen(&a),
        Command::SimulateStream { replay } => cmd_simulate_stream(&replay),
        Command::Normalize {
            fx,
            fy,
            width,
            height,
            cx,
            cy,
        } => cmd_normalize(fx, fy, width, height, cx, cy),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GR3DKIT_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
