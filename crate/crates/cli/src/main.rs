use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use spherecal::config::{ConfigError, RunConfig};
use spherecal::pipeline::{
    evaluation_row, format_csv, format_table, load_dataset, load_truth, process_scenes, solve_scenes,
    CalibrationReport, PipelineError, ReportSummary,
};
use spherecal::sim::{generate_dataset, Manifest, SimError};

#[derive(Parser)]
#[command(name = "spherecal", version, about = "Spherical-target LiDAR-camera extrinsic calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set solver.kernel=cauchy`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Random seed; wins over `sim.seed` from the file and `--set`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (clouds, masks, truth, manifest).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the extrinsic from a dataset manifest.
    Calibrate {
        /// Manifest file, or a directory containing `manifest.json`.
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Report file (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare calibration reports with the ground truth.
    Evaluate {
        /// One or more report files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Dataset truth file; defaults to the truth of each report's manifest.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// CSV output; printed after the table when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Machine-readable failure written to stderr as one JSON line.
#[derive(Debug, Serialize)]
struct Failure {
    error: &'static str,
    message: String,
    exit_code: u8,
}

impl Failure {
    fn io(message: impl Into<String>) -> Self {
        Self {
            error: "IoFailure",
            message: message.into(),
            exit_code: 2,
        }
    }

    fn schema(message: impl Into<String>) -> Self {
        Self {
            error: "SchemaMismatch",
            message: message.into(),
            exit_code: 2,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => Failure::io(e.to_string()),
            _ => Self {
                error: "ConfigError",
                message: e.to_string(),
                exit_code: 2,
            },
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::IoFailure(_) => Failure::io(e.to_string()),
            _ => Self {
                error: "InvalidSpec",
                message: e.to_string(),
                exit_code: 2,
            },
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let message = e.to_string();
        match e {
            PipelineError::Io(_) => Failure::io(message),
            PipelineError::SchemaMismatch(_) => Failure::schema(message),
            PipelineError::TooFewPairs { .. } => Self {
                error: "TooFewPairs",
                message,
                exit_code: 1,
            },
            PipelineError::Solver(_) => Self {
                error: "SolverFailure",
                message,
                exit_code: 1,
            },
            PipelineError::ThreadPool(_) => Self {
                error: "ConfigError",
                message,
                exit_code: 2,
            },
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for assignment in &common.set {
        cfg.apply_override(assignment)?;
    }
    if let Some(seed) = common.seed {
        cfg.sim.seed = seed;
    }
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn simulate(common: &Common, out: &Path) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let specs = cfg.sim.scene_specs()?;
    let pool = rayon_pool(common.jobs)?;
    let (manifest, path) = pool.install(|| generate_dataset(&specs, out))?;
    println!("wrote {} scenes to {}", manifest.scenes.len(), path.display());
    Ok(())
}

fn rayon_pool(jobs: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::from(PipelineError::ThreadPool(e.to_string())))
}

fn manifest_path(dataset: &Path) -> PathBuf {
    if dataset.is_dir() {
        dataset.join("manifest.json")
    } else {
        dataset.to_path_buf()
    }
}

fn calibrate(dataset: &Path, common: &Common, out: &Path) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let manifest = manifest_path(dataset);
    let (_, inputs) = load_dataset(&manifest)?;
    let k = inputs
        .first()
        .map(|s| s.intrinsics)
        .ok_or_else(|| Failure::from(PipelineError::TooFewPairs {
            got: 0,
            need: cfg.solver.min_pairs,
        }))?;
    let scenes = process_scenes(&inputs, &cfg, common.jobs)?;
    for scene in &scenes {
        for skip in &scene.skipped {
            eprintln!("skipped scene {}: {:?}: {}", scene.scene_id, skip.side, skip.message);
        }
    }
    let manifest_name = std::fs::canonicalize(&manifest)
        .unwrap_or(manifest)
        .display()
        .to_string();
    let (report, failure) = match solve_scenes(scenes, &k, &cfg) {
        Ok(run) => {
            let failure = (!run.result.converged).then(|| Failure {
                error: "NotConverged",
                message: format!("solver stopped after {} iterations", run.result.iterations),
                exit_code: 1,
            });
            let report = CalibrationReport {
                config: cfg,
                manifest: manifest_name,
                scenes: run.scenes,
                pairs: run.pairs,
                result: Some(run.result),
                error: failure.as_ref().map(|f| f.message.clone()),
            };
            (report, failure)
        }
        Err((scenes, e)) => {
            let pairs = scenes.iter().filter_map(|s| s.pair()).collect();
            let report = CalibrationReport {
                config: cfg,
                manifest: manifest_name,
                scenes,
                pairs,
                result: None,
                error: Some(e.to_string()),
            };
            (report, Some(Failure::from(e)))
        }
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_file(out, &text)?;
    match failure {
        Some(f) => Err(f),
        None => {
            let r = report.result.as_ref().expect("solved");
            println!(
                "solved on {} pairs ({} rejected), rms {:.3} px",
                r.per_pair_residual.len() - r.rejected_ids.len(),
                r.rejected_ids.len(),
                r.rms_reprojection
            );
            Ok(())
        }
    }
}

fn truth_for(summary: &ReportSummary, report: &Path) -> Result<PathBuf, Failure> {
    let manifest = summary
        .manifest
        .as_ref()
        .ok_or_else(|| Failure::schema(format!("{}: no manifest recorded and no --truth given", report.display())))?;
    let manifest = PathBuf::from(manifest);
    let truth = Manifest::load(&manifest)
        .map_err(|e| Failure::schema(format!("truth lookup via {}: {e}", manifest.display())))?
        .truth
        .ok_or_else(|| Failure::schema(format!("{} lists no truth file", manifest.display())))?;
    Ok(manifest.parent().unwrap_or(Path::new(".")).join(truth))
}

fn evaluate(reports: &[PathBuf], truth: Option<&Path>, out: Option<&Path>) -> Result<(), Failure> {
    let mut rows = Vec::with_capacity(reports.len());
    for path in reports {
        let summary = ReportSummary::load(path)?;
        let truth_path = match truth {
            Some(p) => p.to_path_buf(),
            None => truth_for(&summary, path)?,
        };
        let t_gt = load_truth(&truth_path)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        rows.push(evaluation_row(&name, &summary, &t_gt)?);
    }
    print!("{}", format_table(&rows));
    let csv = format_csv(&rows);
    match out {
        Some(p) => write_file(p, &csv),
        None => {
            print!("\n{csv}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate { common, out } => simulate(common, out),
        Command::Calibrate { dataset, common, out } => calibrate(dataset, common, out),
        Command::Evaluate {
            reports,
            common,
            truth,
            out,
        } => load_config(common).and_then(|_| evaluate(reports, truth.as_deref(), out.as_deref())),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::to_string(&f).expect("failure serializes"));
            ExitCode::from(f.exit_code)
        }
    }
}
