//! Command-line front end: `fit`, `simulate`, `sweep` and `generate`.
//!
//! Settings resolve as flags, then the JSON config file, then defaults.
//! Errors go to stderr as one JSON object; exit code 2 marks bad input and 3 a
//! failed fit.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimator::{
    estimate_abundance, write_surface_csv, AbundanceReport, EstimatorConfig, PlotCount,
    VarianceKind,
};
use crate::fit::{fit_model, FitConfig, FitStatus};
use crate::geometry::{
    prediction_grid_labeled, Point2, Polygon, PredictionGrid, RectPlot, StudyRegion,
    DEFAULT_GRID_POINTS,
};
use crate::knots::KnotSet;
use crate::sim::{self, ExperimentSpec};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_FIT: i32 = 3;

/// Failure reported to the user, with its exit code.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    pub exit_code: i32,
}

impl CliError {
    pub fn input(code: &str, message: impl Into<String>) -> Self {
        CliError {
            code: code.into(),
            message: message.into(),
            exit_code: EXIT_INPUT,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{{\"code\":\"{}\"}}", self.code))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let exit_code = match e {
            Error::NoSignal
            | Error::FitFailure(_)
            | Error::SingularSystem { .. }
            | Error::NotConverged { .. }
            | Error::NumericOverflow(_)
            | Error::InsufficientDof { .. } => EXIT_FIT,
            _ => EXIT_INPUT,
        };
        CliError {
            code: e.code().into(),
            message: e.to_string(),
            exit_code,
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::input("IoError", format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "ipp-abundance", version, about = "Realized abundance from plot counts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the intensity surface to a survey and report the abundance estimate.
    Fit(FitArgs),
    /// Run a simulation experiment and tabulate bias, RMSPE, coverage and failures.
    Simulate(SimArgs),
    /// Coverage of the trimmed estimators across trim proportions.
    Sweep(SweepArgs),
    /// Write a survey data set (plots CSV and region JSON).
    Generate(GenerateArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// JSON file with default settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub knots_coarse: Option<usize>,
    #[arg(long)]
    pub knots_fine: Option<usize>,
    #[arg(long)]
    pub knot_seed: Option<u64>,
    #[arg(long)]
    pub trim_p: Option<f64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with columns id,x,y,side_x,side_y,count.
    #[arg(long)]
    pub plots: PathBuf,
    /// Region polygon as JSON: {"outer": [[x,y],...], "holes": [...]}.
    #[arg(long)]
    pub region: PathBuf,
    /// Confidence level; repeat for several.
    #[arg(long)]
    pub ci_level: Vec<f64>,
    #[arg(long)]
    pub units: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub experiment: u8,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Use the full 1000 replicates.
    #[arg(long)]
    pub full: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Knot configurations as `KC:KF` pairs, comma separated.
    #[arg(long)]
    pub knots: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub experiment: u8,
    /// Trim proportions, comma separated.
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub p_list: String,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub full: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Simulation experiment 1-4; omit for the large synthetic aerial survey.
    #[arg(long)]
    pub experiment: Option<u8>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Settings file contents. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub knots_coarse: Option<usize>,
    pub knots_fine: Option<usize>,
    pub knot_seed: Option<u64>,
    pub trim_p: Option<f64>,
    pub grid_points: Option<usize>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub ci_levels: Option<Vec<f64>>,
    pub nm_tol: Option<f64>,
    pub nm_max_eval: Option<usize>,
    pub units: Option<String>,
}

pub fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::input(
            "ConfigError",
            format!("{}: line {}: {e}", path.display(), e.line()),
        )
    })
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub fit: FitConfig,
    pub trim_p: f64,
    pub grid_points: usize,
    pub ci_levels: Vec<f64>,
    pub units: String,
}

pub fn resolve(common: &CommonArgs, file: &FileConfig) -> Settings {
    let mut fit = FitConfig::default();
    fit.k_coarse = common.knots_coarse.or(file.knots_coarse).unwrap_or(fit.k_coarse);
    fit.k_fine = common.knots_fine.or(file.knots_fine).unwrap_or(fit.k_fine);
    fit.knot_seed = common.knot_seed.or(file.knot_seed).unwrap_or(fit.knot_seed);
    fit.nm_tol = file.nm_tol.unwrap_or(fit.nm_tol);
    fit.nm_max_eval = file.nm_max_eval.unwrap_or(fit.nm_max_eval);
    Settings {
        fit,
        trim_p: common
            .trim_p
            .or(file.trim_p)
            .unwrap_or(EstimatorConfig::default().trim_p),
        grid_points: common
            .grid_points
            .or(file.grid_points)
            .unwrap_or(DEFAULT_GRID_POINTS),
        ci_levels: file
            .ci_levels
            .clone()
            .unwrap_or_else(|| EstimatorConfig::default().ci_levels),
        units: file.units.clone().unwrap_or_else(|| "region units".into()),
    }
}

/// Plots, their ids and the region.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyDataset {
    pub ids: Vec<String>,
    pub plots: Vec<PlotCount>,
    pub region: StudyRegion,
    pub units: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct PlotRow {
    id: String,
    x: f64,
    y: f64,
    side_x: f64,
    side_y: f64,
    count: u64,
}

pub fn read_plots_csv<R: std::io::Read>(input: R) -> Result<(Vec<String>, Vec<PlotCount>), CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::input("ParseError", format!("header: {e}")))?
        .clone();
    for col in ["id", "x", "y", "side_x", "side_y", "count"] {
        if !headers.iter().any(|h| h == col) {
            return Err(CliError::input(
                "ParseError",
                format!("line 1: missing column `{col}`"),
            ));
        }
    }
    let mut ids = Vec::new();
    let mut plots = Vec::new();
    for rec in rdr.deserialize::<PlotRow>() {
        let row = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::input("ParseError", format!("line {line}: {e}"))
        })?;
        let line = ids.len() + 2;
        let plot = RectPlot::new(Point2::new(row.x, row.y), row.side_x, row.side_y)
            .map_err(|e| CliError::input("ParseError", format!("line {line}: {e}")))?;
        ids.push(row.id);
        plots.push(PlotCount::new(plot, row.count));
    }
    if plots.is_empty() {
        return Err(CliError::input("ParseError", "no plot rows"));
    }
    Ok((ids, plots))
}

pub fn write_plots_csv<W: Write>(ids: &[String], plots: &[PlotCount], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| CliError::input("IoError", e.to_string());
    for (id, p) in ids.iter().zip(plots) {
        w.serialize(PlotRow {
            id: id.clone(),
            x: p.plot.centroid.x,
            y: p.plot.centroid.y,
            side_x: p.plot.side_x,
            side_y: p.plot.side_y,
            count: p.count,
        })
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::input("IoError", e.to_string()))
}

pub fn load_dataset(plots: &Path, region: &Path, units: &str) -> Result<SurveyDataset, CliError> {
    let file = File::open(plots).map_err(|e| io_error(plots, e))?;
    let (ids, plots) = read_plots_csv(file).map_err(|mut e| {
        e.message = format!("{}: {}", plots.display(), e.message);
        e
    })?;
    let text = fs::read_to_string(region).map_err(|e| io_error(region, e))?;
    let poly: Polygon = serde_json::from_str(&text).map_err(|e| {
        CliError::input(
            "ParseError",
            format!("{}: line {}: {e}", region.display(), e.line()),
        )
    })?;
    let region = StudyRegion::new(poly)?;
    Ok(SurveyDataset {
        ids,
        plots,
        region,
        units: units.to_string(),
    })
}

/// What `fit` writes to `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct FitOutput {
    pub units: String,
    pub settings: Settings,
    pub knots: KnotSet,
    pub report: AbundanceReport,
}

/// Knots, fit and report for a data set. A full census skips the grid.
pub fn analyze(ds: &SurveyDataset, s: &Settings) -> Result<(FitOutput, PredictionGrid, crate::fit::ModelFit), CliError> {
    let grid = match prediction_grid_labeled(&ds.region, &rects(&ds.plots), Some(&ds.ids), s.grid_points) {
        Ok(g) => g,
        Err(Error::EmptyUnsampledRegion) => PredictionGrid::empty(),
        Err(e) => return Err(e.into()),
    };
    let fit = fit_model(&ds.plots, &ds.region, &s.fit)?;
    let report = estimate_abundance(
        &ds.plots,
        &fit,
        &grid,
        &EstimatorConfig {
            trim_p: s.trim_p,
            ci_levels: s.ci_levels.clone(),
        },
    )?;
    Ok((
        FitOutput {
            units: ds.units.clone(),
            settings: s.clone(),
            knots: fit.knots.clone(),
            report,
        },
        grid,
        fit,
    ))
}

fn rects(plots: &[PlotCount]) -> Vec<RectPlot> {
    plots.iter().map(|p| p.plot).collect()
}

pub fn summary_text(out: &FitOutput) -> String {
    let r = &out.report;
    let mut s = String::new();
    s.push_str(&format!("plots: {}  units: {}\n", r.n_plots, out.units));
    s.push_str(&format!(
        "knots: {} coarse, {} fine  ranges: coarse {:.4}, fine {:.4}\n",
        out.knots.n_coarse(),
        out.knots.n_fine(),
        r.fit.rho.coarse,
        r.fit.rho.fine
    ));
    s.push_str(&format!("fit status: {}\n", r.fit.status));
    s.push_str(&format!(
        "observed {:.0}  predicted unsampled {:.2}  total {:.2}\n",
        r.observed, r.predicted_u, r.total
    ));
    s.push_str(&format!(
        "MSPE {:.4} = mu(U) {:.4} + c'Sc {:.4}\n",
        r.mspe, r.components.mu_u, r.components.quad
    ));
    for kind in VarianceKind::ALL {
        let omega = r.omega.get(&kind).copied().unwrap_or(1.0);
        s.push_str(&format!("{:>4}  omega {:>8.4}  se {:>10.4}", kind.label(), omega, r.se[&kind]));
        for c in r.ci.iter().filter(|c| c.kind == kind) {
            s.push_str(&format!("  {:.0}% ({:.2}, {:.2})", c.level * 100.0, c.lower, c.upper));
        }
        s.push('\n');
    }
    if r.components.trimmed_fallback {
        s.push_str("note: trimmed covariance unavailable; TL uses the full covariance\n");
    }
    s
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

pub fn cmd_fit(args: &FitArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let file = load_config(args.common.config.as_deref())?;
    let mut s = resolve(&args.common, &file);
    if !args.ci_level.is_empty() {
        s.ci_levels = args.ci_level.clone();
    }
    if let Some(u) = &args.units {
        s.units = u.clone();
    }
    let ds = load_dataset(&args.plots, &args.region, &s.units)?;
    let (out, grid, fit) = analyze(&ds, &s)?;
    create_out_dir(&args.common.out_dir)?;
    let report_path = args.common.out_dir.join("report.json");
    let mut w = create(&report_path)?;
    serde_json::to_writer_pretty(&mut w, &out).map_err(|e| io_error(&report_path, e))?;
    writeln!(w).map_err(|e| io_error(&report_path, e))?;
    let surface_path = args.common.out_dir.join("surface.csv");
    write_surface_csv(&fit, &grid, create(&surface_path)?)?;
    let text = summary_text(&out);
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::input("IoError", e.to_string()))?;
    if let FitStatus::Failed(reason) = &fit.status {
        return Err(CliError {
            code: "FitFailure".into(),
            message: reason.clone(),
            exit_code: EXIT_FIT,
        });
    }
    Ok(())
}

pub fn parse_knot_configs(text: &str) -> Result<Vec<(usize, usize)>, CliError> {
    text.split(',')
        .map(|pair| {
            let (a, b) = pair.trim().split_once(':').ok_or_else(|| {
                CliError::input("InvalidArgument", format!("knot pair `{pair}` is not KC:KF"))
            })?;
            let parse = |v: &str| {
                v.trim().parse::<usize>().map_err(|_| {
                    CliError::input("InvalidArgument", format!("bad knot count in `{pair}`"))
                })
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

pub fn parse_p_list(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| {
                CliError::input("InvalidArgument", format!("bad trim proportion `{v}`"))
            })
        })
        .collect()
}

fn harness_spec(
    experiment: u8,
    replicates: Option<usize>,
    full: bool,
    seed: Option<u64>,
    knots: Vec<(usize, usize)>,
    common: &CommonArgs,
    file: &FileConfig,
) -> ExperimentSpec {
    let s = resolve(common, file);
    let reps = if full {
        1000
    } else {
        replicates.or(file.replicates).unwrap_or(200)
    };
    ExperimentSpec {
        knot_configs: knots,
        trim_p: s.trim_p,
        grid_points: s.grid_points,
        knot_seed: s.fit.knot_seed,
        ..ExperimentSpec::new(experiment, reps, seed.or(file.seed).unwrap_or(1))
    }
}

fn default_knots(common: &CommonArgs, file: &FileConfig, fallback: (usize, usize)) -> Vec<(usize, usize)> {
    match (
        common.knots_coarse.or(file.knots_coarse),
        common.knots_fine.or(file.knots_fine),
    ) {
        (Some(c), Some(f)) => vec![(c, f)],
        (Some(c), None) => vec![(c, fallback.1)],
        (None, Some(f)) => vec![(fallback.0, f)],
        (None, None) => vec![fallback],
    }
}

pub fn cmd_simulate(args: &SimArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let file = load_config(args.common.config.as_deref())?;
    let knots = match &args.knots {
        Some(t) => parse_knot_configs(t)?,
        None => default_knots(&args.common, &file, (3, 8)),
    };
    let spec = harness_spec(args.experiment, args.replicates, args.full, args.seed, knots, &args.common, &file);
    let run = sim::run_harness(&spec)?;
    create_out_dir(&args.common.out_dir)?;
    sim::write_table_csv(&run, create(&args.common.out_dir.join("results.csv"))?)?;
    sim::write_replicate_log(&run, create(&args.common.out_dir.join("replicates.jsonl"))?)?;
    sim::write_table_csv(&run, &mut *stdout)?;
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let file = load_config(args.common.config.as_deref())?;
    let ps = parse_p_list(&args.p_list)?;
    let knots = default_knots(&args.common, &file, (5, 16));
    let spec = harness_spec(args.experiment, args.replicates, args.full, args.seed, knots, &args.common, &file);
    let (points, _) = sim::trim_sweep(&spec, &ps)?;
    create_out_dir(&args.common.out_dir)?;
    sim::write_sweep_csv(&points, create(&args.common.out_dir.join("sweep.csv"))?)?;
    sim::write_sweep_csv(&points, &mut *stdout)?;
    Ok(())
}

pub fn cmd_generate(args: &GenerateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (region, plots) = match args.experiment {
        Some(e) => {
            let rep = sim::generate(e, args.seed)?;
            (sim::study_square(), rep.plots)
        }
        None => sim::synthetic_survey(args.seed),
    };
    let ids: Vec<String> = (1..=plots.len()).map(|i| format!("p{i}")).collect();
    create_out_dir(&args.out_dir)?;
    write_plots_csv(&ids, &plots, create(&args.out_dir.join("plots.csv"))?)?;
    let region_path = args.out_dir.join("region.json");
    let mut w = create(&region_path)?;
    serde_json::to_writer(&mut w, region.boundary()).map_err(|e| io_error(&region_path, e))?;
    writeln!(w).map_err(|e| io_error(&region_path, e))?;
    writeln!(
        stdout,
        "wrote {} plots ({} counted) to {}",
        plots.len(),
        plots.iter().map(|p| p.count).sum::<u64>(),
        args.out_dir.display()
    )
    .map_err(|e| CliError::input("IoError", e.to_string()))?;
    Ok(())
}

/// Parses arguments and runs the command. Help and version requests come back
/// as an error with exit code 0.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError {
        code: "UsageError".into(),
        message: e.to_string(),
        exit_code: if e.use_stderr() { EXIT_INPUT } else { 0 },
    })?;
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, stdout),
        Command::Simulate(a) => cmd_simulate(a, stdout),
        Command::Sweep(a) => cmd_sweep(a, stdout),
        Command::Generate(a) => cmd_generate(a, stdout),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knot_pairs() {
        assert_eq!(parse_knot_configs("3:8, 9:32").unwrap(), vec![(3, 8), (9, 32)]);
        assert!(parse_knot_configs("3-8").is_err());
    }

    #[test]
    fn flags_beat_file() {
        let common = CommonArgs {
            knots_coarse: Some(4),
            ..Default::default()
        };
        let file = FileConfig {
            knots_coarse: Some(7),
            knots_fine: Some(15),
            trim_p: Some(0.5),
            ..Default::default()
        };
        let s = resolve(&common, &file);
        assert_eq!((s.fit.k_coarse, s.fit.k_fine, s.trim_p), (4, 15, 0.5));
        let d = resolve(&CommonArgs::default(), &FileConfig::default());
        assert_eq!((d.fit.k_coarse, d.fit.k_fine, d.trim_p), (3, 8, 0.75));
    }

    #[test]
    fn csv_needs_header_columns() {
        let e = read_plots_csv("id,x,y,count\na,1,1,0\n".as_bytes()).unwrap_err();
        assert!(e.message.contains("side_x"), "{}", e.message);
    }

    #[test]
    fn csv_reports_line_numbers() {
        let text = "id,x,y,side_x,side_y,count\na,1,1,0.5,0.5,3\nb,2,2,0.5,0.5,oops\n";
        let e = read_plots_csv(text.as_bytes()).unwrap_err();
        assert!(e.message.contains("line 3"), "{}", e.message);
        assert_eq!(e.exit_code, EXIT_INPUT);
    }
}
