//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 numerical failure. Failures print one JSON object on stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::Error;
use crate::fitter::{fit_params, FitConfig};
use crate::geometry::{normalize_disparity, PointCloud, ProjectionParams, Tag, ViewConfig};
use crate::io::{self, CloudFormat};
use crate::metrics::evaluate;
use crate::pipeline::{refine, RefineOptions, DEFAULT_TAU};
use crate::projection::{project_disparity, project_feasible, PixelSet};
use crate::synth::{make_synthetic_scene, sweep_init, sweep_noise, SceneSpec, SweepReport};
use crate::visibility::split_visibility;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "dispfit",
    version,
    about = "Lift disparity maps into point clouds against a prior shape"
)]
struct Cli {
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Treat pixels with non-positive inverse depth as errors instead of
    /// dropping them.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lift a disparity map with given parameters.
    Project {
        disparity: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, value_parser = parse_format, default_value = "ply-binary")]
        format: CloudFormat,
    },
    /// Fit projection parameters against a prior cloud.
    Fit { disparity: PathBuf, prior: PathBuf },
    /// Fit, lift, cull and merge into a refined cloud.
    Refine {
        disparity: PathBuf,
        prior: PathBuf,
        /// Use these parameters instead of fitting.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Ground truth for before/after scores in the report.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, value_parser = parse_format, default_value = "ply-binary")]
        format: CloudFormat,
    },
    /// Split a cloud into visible and occluded parts.
    Split {
        cloud: PathBuf,
        #[arg(long, value_parser = parse_format, default_value = "ply-binary")]
        format: CloudFormat,
    },
    /// Chamfer distance and f-score of a prediction against ground truth.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
    },
    /// Generate a synthetic scene from a scene spec.
    Synth { spec: Option<PathBuf> },
    /// Fit quality versus disparity noise.
    SweepNoise,
    /// Fit quality versus initialization distance.
    SweepInit,
}

fn parse_format(s: &str) -> std::result::Result<CloudFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Settings shared by the single-scene commands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub view: ViewConfig,
    pub refine: RefineOptions,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct SweepFile {
    values: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
    scene: SceneSpec,
    fit: FitConfig,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            return report_failure(Failure::Usage(e.render().to_string()));
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => report_failure(f),
    }
}

fn report_failure(failure: Failure) -> i32 {
    let (kind, message, code) = match failure {
        Failure::Usage(m) => ("Usage", m, EXIT_USAGE),
        Failure::Lib(e) => {
            let code = if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_DATA
            };
            (e.kind(), e.to_string(), code)
        }
    };
    eprintln!(
        "{}",
        json!({ "error": kind, "message": message.trim_end(), "exit_code": code })
    );
    code
}

fn warn(message: &str) {
    eprintln!("{}", json!({ "warning": message }));
}

fn load_cloud(path: &Path) -> CliResult<PointCloud> {
    let (cloud, warnings) = io::read_pointcloud_with_warnings(path)?;
    for w in warnings {
        warn(&format!("{}: {w}", path.display()));
    }
    Ok(cloud)
}

fn run_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config: RunConfig = match &cli.config {
        Some(p) => io::read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.fit.seed = seed;
    }
    config.fit.validate()?;
    config.view.validate()?;
    Ok(config)
}

fn emit(value: &serde_json::Value, path: &Path) -> CliResult<()> {
    io::write_json(value, path)?;
    println!(
        "{}",
        serde_json::to_string_pretty(value).map_err(Error::from)?
    );
    Ok(())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn execute(cli: &Cli) -> CliResult<()> {
    fs::create_dir_all(&cli.out_dir)?;
    let out = |name: &str| cli.out_dir.join(name);
    let cloud_out = |stem: &str, format: &CloudFormat| {
        cli.out_dir.join(format!("{stem}.{}", format.extension()))
    };
    match &cli.command {
        Command::Project {
            disparity,
            params,
            format,
        } => {
            let map = normalize_disparity(&io::read_disparity(disparity)?)?;
            let params: ProjectionParams = io::read_json(params)?;
            params.validate()?;
            let cloud = if cli.strict {
                project_disparity(&map, &params)?
            } else {
                let pixels = PixelSet::from_map(&map)?;
                let (points, _) = project_feasible(&pixels, &params)?;
                let dropped = pixels.pixels.len() - points.len();
                if dropped > 0 {
                    warn(&format!(
                        "dropped {dropped} pixel(s) with non-positive inverse depth"
                    ));
                }
                if points.is_empty() {
                    return Err(Error::NonPositiveDepth { count: dropped }.into());
                }
                PointCloud::uniformly_tagged(points, Tag::Projected)?
            };
            io::write_pointcloud(&cloud, &cloud_out("projected", format), *format)?;
        }
        Command::Fit { disparity, prior } => {
            let config = run_config(cli)?;
            let map = io::read_disparity(disparity)?;
            let prior_cloud = load_cloud(prior)?;
            let (visible, _) = split_visibility(&prior_cloud, &config.view)?;
            if visible.len() < config.refine.min_visible {
                return Err(Error::DegenerateVisible {
                    count: visible.len(),
                    floor: config.refine.min_visible,
                }
                .into());
            }
            let fit = fit_params(&map, &visible, &config.fit)?;
            if cli.strict {
                project_disparity(&normalize_disparity(&map)?, &fit.params)?;
            }
            io::write_json(&fit.params, &out("params.json"))?;
            let report = json!({
                "params": fit.params,
                "loss": fit.loss,
                "best_restart": fit.best_restart,
                "restart_losses": fit.restart_losses,
                "restart_feasible": fit.restart_feasible,
                "restart_inits": fit.restart_inits,
                "trace": fit.trace,
                "visible_prior_points": visible.len(),
                "seed": fit.seed,
                "config": config,
                "inputs": { "disparity": path_str(disparity), "prior": path_str(prior) },
            });
            emit(&report, &out("fit.json"))?;
        }
        Command::Refine {
            disparity,
            prior,
            params,
            gt,
            format,
        } => {
            let mut config = run_config(cli)?;
            if let Some(p) = params {
                config.refine.params = Some(io::read_json(p)?);
            }
            let map = io::read_disparity(disparity)?;
            let prior_cloud = load_cloud(prior)?;
            let gt_cloud = gt.as_deref().map(load_cloud).transpose()?;
            let (merged, report) = refine(
                &prior_cloud,
                &map,
                &config.fit,
                &config.view,
                &config.refine,
                gt_cloud.as_ref(),
            )?;
            io::write_pointcloud(&merged, &cloud_out("refined", format), *format)?;
            let report = json!({
                "report": report,
                "seed": config.fit.seed,
                "config": config,
                "inputs": {
                    "disparity": path_str(disparity),
                    "prior": path_str(prior),
                    "gt": gt.as_deref().map(path_str),
                },
            });
            emit(&report, &out("refine_report.json"))?;
        }
        Command::Split { cloud, format } => {
            let config = run_config(cli)?;
            let cloud_data = load_cloud(cloud)?;
            let (visible, occluded) = split_visibility(&cloud_data, &config.view)?;
            io::write_pointcloud(&visible, &cloud_out("visible", format), *format)?;
            io::write_pointcloud(&occluded, &cloud_out("occluded", format), *format)?;
            let report = json!({
                "visible": visible.len(),
                "occluded": occluded.len(),
                "seed": config.fit.seed,
                "config": config,
                "inputs": { "cloud": path_str(cloud) },
            });
            emit(&report, &out("split.json"))?;
        }
        Command::Eval { pred, gt, tau } => {
            let config = run_config(cli)?;
            let e = evaluate(&load_cloud(pred)?, &load_cloud(gt)?, *tau)?;
            let report = json!({
                "chamfer": e.chamfer,
                "precision": e.precision,
                "recall": e.recall,
                "fscore": e.fscore,
                "tau": e.tau,
                "seed": config.fit.seed,
                "config": config,
                "inputs": { "pred": path_str(pred), "gt": path_str(gt) },
            });
            emit(&report, &out("eval.json"))?;
        }
        Command::Synth { spec } => {
            let mut spec: SceneSpec = match spec.as_ref().or(cli.config.as_ref()) {
                Some(p) => io::read_json(p)?,
                None => SceneSpec::default(),
            };
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let scene = make_synthetic_scene(&spec)?;
            io::write_pointcloud(&scene.gt_cloud, &out("gt.ply"), CloudFormat::PlyBinary)?;
            io::write_pointcloud(
                &scene.visible_points,
                &out("visible.ply"),
                CloudFormat::PlyBinary,
            )?;
            io::write_disparity(&scene.disparity, &out("disparity.pfm"))?;
            io::write_json(&scene.true_params, &out("params.json"))?;
            let report = json!({
                "true_params": scene.true_params,
                "gt_points": scene.gt_cloud.len(),
                "visible_points": scene.visible_points.len(),
                "masked_pixels": scene.disparity.masked_count(),
                "seed": spec.seed,
                "config": spec,
            });
            emit(&report, &out("scene.json"))?;
        }
        Command::SweepNoise | Command::SweepInit => {
            let file: SweepFile = match &cli.config {
                Some(p) => io::read_json(p)?,
                None => SweepFile::default(),
            };
            let mut scene = file.scene;
            if let Some(seed) = cli.seed {
                scene.seed = seed;
            }
            let seeds = file.seeds.unwrap_or_else(|| (0..10).collect());
            let (name, report): (&str, SweepReport) = if matches!(cli.command, Command::SweepNoise)
            {
                let levels = file
                    .values
                    .unwrap_or_else(|| vec![0.0, 0.01, 0.02, 0.05, 0.1]);
                (
                    "sweep_noise",
                    sweep_noise(&levels, &scene, &file.fit, &seeds)?,
                )
            } else {
                let distances = file.values.unwrap_or_else(|| vec![0.1, 0.5, 1.0, 2.0]);
                (
                    "sweep_init",
                    sweep_init(&distances, &scene, &file.fit, &seeds)?,
                )
            };
            report.write_json(&out(&format!("{name}.json")))?;
            report.write_csv(&out(&format!("{name}.csv")))?;
            println!(
                "{}",
                json!({ "sweep": report.sweep, "metric": report.metric, "medians": report.medians })
            );
        }
    }
    Ok(())
}
