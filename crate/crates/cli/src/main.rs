use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hcral::assign::{atss_assign, eatss_assign};
use hcral::config::ExperimentConfig;
use hcral::curves::{curve_csv, evaluate_curve, unit_grid, CurveKind, CurveSpec};
use hcral::harness::{decode, generate_scene, train, LossKind};
use hcral::report::{assignment_csv, assignment_summary, report_csv, summary_text};
use hcral::verify::{all_required_passed, run_all};
use hcral::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "hcral", version, about = "Hybrid classification-regression loss experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the toy detector on a synthetic scene and write reports.
    Train(RunArgs),
    /// Write sampled weight curves as `param,x,y` rows.
    Curves(CurveArgs),
    /// Run ATSS and EATSS on a synthetic scene and dump per-anchor diagnostics.
    Assign(RunArgs),
    /// Run the numerical self-checks.
    Verify(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Config file of `section.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config loss: hcral, focal_giou or ghmc_giou.
    #[arg(long)]
    loss: Option<String>,
}

#[derive(Debug, Args)]
struct CurveArgs {
    /// omega_neg, t_gamma, rci_gate or rci_reg.
    which: String,
    /// Comma-separated curve parameters (μ, γ, θ or ep); defaults per curve.
    #[arg(long, value_delimiter = ',')]
    params: Option<Vec<f64>>,
    /// Comma-separated x values in [0, 1]; overrides --points.
    #[arg(long, value_delimiter = ',')]
    xs: Option<Vec<f64>>,
    /// Number of intervals of the default x grid.
    #[arg(long, default_value_t = 100)]
    points: usize,
    /// IoU held fixed by rci_gate and rci_reg.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, default_value_t = -0.1, allow_negative_numbers = true)]
    alpha: f64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::OutOfRange { .. }
            | Error::InvalidAnchors(_)
            | Error::CanvasTooSmall { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(loss) = &args.loss {
        cfg.loss = loss.parse::<LossKind>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn cmd_train(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    prepare_out(&args.out)?;
    let started = Instant::now();
    let scene = generate_scene(cfg.seed, &cfg.scene)?;
    let outcome = train(&scene, &cfg.loss_config(), &cfg.assign, &cfg.optim, &cfg.eval)?;
    let elapsed = started.elapsed().as_secs_f64();

    let report = &outcome.report;
    let summary = summary_text(report, cfg.loss.name(), cfg.seed);
    write_file(&args.out.join("report.csv"), &report_csv(report))?;
    write_file(&args.out.join("summary.txt"), &summary)?;
    write_file(
        &args.out.join("effective_config.toml"),
        &cfg.to_flat_string()?,
    )?;
    write_file(
        &args.out.join("timing.txt"),
        &format!("wall_clock_s = {elapsed:.3}\n"),
    )?;
    print!("{summary}");
    println!("wall_clock_s = {elapsed:.3}");
    Ok(())
}

fn cmd_curves(args: &CurveArgs) -> Result<(), Failure> {
    let kind: CurveKind = args.which.parse()?;
    let mut spec = CurveSpec::new(kind, args.points);
    if let Some(params) = &args.params {
        spec.params = params.clone();
    }
    spec.xs = match &args.xs {
        Some(xs) => xs.clone(),
        None => unit_grid(args.points),
    };
    spec.fixed_iou = args.iou;
    spec.alpha = args.alpha;
    let csv = curve_csv(&evaluate_curve(&spec)?);
    match &args.out {
        Some(path) => write_file(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_assign(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    prepare_out(&args.out)?;
    let scene = generate_scene(cfg.seed, &cfg.scene)?;
    let preds = decode(&scene.anchors, &scene.params)?;
    let atss = atss_assign(&scene.anchors, &scene.gts, &cfg.assign)?;
    let eatss = eatss_assign(&scene.anchors, &scene.gts, &cfg.assign, &preds)?;
    let summary = assignment_summary(&atss, &eatss, cfg.assign.l);
    write_file(
        &args.out.join("assignment.csv"),
        &assignment_csv(&scene.anchors, &scene.gts, &atss, &eatss),
    )?;
    write_file(&args.out.join("assign_summary.txt"), &summary)?;
    write_file(
        &args.out.join("effective_config.toml"),
        &cfg.to_flat_string()?,
    )?;
    print!("{summary}");
    Ok(())
}

fn cmd_verify(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let outcomes = run_all(&cfg)?;
    for o in &outcomes {
        println!("{o}");
    }
    if all_required_passed(&outcomes) {
        Ok(())
    } else {
        Err(Failure::Numerical("one or more checks failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Curves(args) => cmd_curves(args),
        Command::Assign(args) => cmd_assign(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
