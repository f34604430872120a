//! Simulation experiments and the evaluation harness.
//!
//! Four generators on the square `[0,10]²`: linear-trend rejection sampling
//! with a balanced (1) or unbalanced (2) plot layout, and double cluster
//! processes on one (3) or two (4) random inner rectangles. Every replicate
//! draws from its own ChaCha stream keyed by `(seed, replicate)`, so serial and
//! parallel runs agree exactly.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    confidence_interval_z, observed_total, GridSurface, PlotCount, VarianceInputs, VarianceKind,
};
use crate::fit::{fit_model, FitConfig, FitStatus};
use crate::geometry::{prediction_grid, PlotIndex, Point2, PredictionGrid, RectPlot, StudyRegion};

/// Normal quantile used for every harness interval.
pub const Z90: f64 = 1.645;
pub const SIDE: f64 = 10.0;

/// Retention probability `(x + y)/20`, clamped to `[0, 1]`.
pub fn retention(p: &Point2) -> f64 {
    ((p.x + p.y) / 20.0).clamp(0.0, 1.0)
}

pub fn thin_linear(points: &[Point2], seed: u64) -> Vec<Point2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    thin_linear_with(points, &mut rng)
}

pub fn thin_linear_with<R: Rng>(points: &[Point2], rng: &mut R) -> Vec<Point2> {
    points
        .iter()
        .copied()
        .filter(|p| rng.random::<f64>() < retention(p))
        .collect()
}

pub fn study_square() -> StudyRegion {
    StudyRegion::rectangle(0.0, 0.0, SIDE, SIDE).expect("square region")
}

/// `n × n` square plots centred on a regular lattice over the study square,
/// minus the listed column and row indices. Plot order is row-major from the
/// lower-left.
pub fn grid_layout(n: usize, side: f64, drop_cols: &[usize], drop_rows: &[usize]) -> Vec<RectPlot> {
    let step = SIDE / n as f64;
    let mut plots = Vec::with_capacity(n * n);
    for row in (0..n).filter(|r| !drop_rows.contains(r)) {
        for col in (0..n).filter(|c| !drop_cols.contains(c)) {
            let c = Point2::new((col as f64 + 0.5) * step, (row as f64 + 0.5) * step);
            plots.push(RectPlot::square(c, side).expect("positive side"));
        }
    }
    plots
}

pub fn layout_experiment1() -> Vec<RectPlot> {
    grid_layout(16, 0.3, &[], &[])
}

/// 16×16 layout without column 2 and rows 1 and 2: 210 plots. Dropping
/// low-intensity plots near the origin unbalances the sample.
pub fn layout_experiment2() -> Vec<RectPlot> {
    grid_layout(16, 0.3, &[2], &[1, 2])
}

/// 26×26 layout of 0.14 plots without the first column and rows 0 and 6: 600 plots.
pub fn layout_experiment4() -> Vec<RectPlot> {
    grid_layout(26, 0.14, &[0], &[0, 6])
}

pub fn layout(experiment: u8) -> Result<Vec<RectPlot>> {
    match experiment {
        1 => Ok(layout_experiment1()),
        2 | 3 => Ok(layout_experiment2()),
        4 => Ok(layout_experiment4()),
        _ => Err(unknown(experiment)),
    }
}

fn unknown(experiment: u8) -> Error {
    Error::InvalidArgument(format!("experiment must be 1-4, got {experiment}"))
}

/// One simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReplicate {
    /// Every retained location, including cluster children outside `A`.
    pub points: Vec<Point2>,
    pub plots: Vec<PlotCount>,
    /// Points inside `A`.
    pub true_total: u64,
}

/// Counts points per plot and inside the region.
pub fn tally(points: Vec<Point2>, layout: &[RectPlot], region: &StudyRegion) -> SimReplicate {
    let index = PlotIndex::new(layout);
    let mut counts = vec![0u64; layout.len()];
    let mut inside = 0u64;
    for p in &points {
        if region.contains(p) {
            inside += 1;
        }
        if let Some(i) = index.locate(p) {
            counts[i] += 1;
        }
    }
    SimReplicate {
        points,
        plots: layout
            .iter()
            .zip(counts)
            .map(|(&plot, count)| PlotCount::new(plot, count))
            .collect(),
        true_total: inside,
    }
}

/// Rejection sampling of the linear trend from 2000 uniform proposals.
pub fn linear_trend_points<R: Rng>(rng: &mut R) -> Vec<Point2> {
    let mut pts = Vec::with_capacity(1100);
    for _ in 0..2000 {
        let p = Point2::new(rng.random::<f64>() * SIDE, rng.random::<f64>() * SIDE);
        let z: f64 = rng.random();
        if z < retention(&p) {
            pts.push(p);
        }
    }
    pts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    fn random<R: Rng>(rng: &mut R, lo_x: (f64, f64), hi_x: (f64, f64), lo_y: (f64, f64), hi_y: (f64, f64)) -> Self {
        let x0 = rng.random_range(lo_x.0..lo_x.1);
        let y0 = rng.random_range(lo_y.0..lo_y.1);
        let x1 = rng.random_range(hi_x.0..hi_x.1);
        let y1 = rng.random_range(hi_y.0..hi_y.1);
        Rect { x0, y0, x1, y1 }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Point2 {
        Point2::new(
            rng.random_range(self.x0..self.x1),
            rng.random_range(self.y0..self.y1),
        )
    }
}

/// Parents uniform on `rect`, each with `Poi(mean)` children uniform on a
/// square of side `box_side` centred on the parent.
pub fn cluster_points<R: Rng>(
    rng: &mut R,
    rect: &Rect,
    parents: usize,
    mean: f64,
    box_side: f64,
    out: &mut Vec<Point2>,
) {
    let poi = Poisson::new(mean).expect("positive mean");
    let h = box_side / 2.0;
    for _ in 0..parents {
        let c = rect.sample(rng);
        let k = poi.sample(rng) as usize;
        for _ in 0..k {
            out.push(Point2::new(
                c.x + rng.random_range(-h..h),
                c.y + rng.random_range(-h..h),
            ));
        }
    }
}

fn experiment3_points<R: Rng>(rng: &mut R) -> (Vec<Point2>, Rect) {
    let rect = Rect::random(rng, (3.5, 4.5), (7.5, 8.5), (3.5, 4.5), (7.5, 8.5));
    let mut pts = Vec::with_capacity(1800);
    cluster_points(rng, &rect, 100, 15.0, 2.0, &mut pts);
    cluster_points(rng, &rect, 25, 9.0, 0.4, &mut pts);
    (thin_linear_with(&pts, rng), rect)
}

fn experiment4_points<R: Rng>(rng: &mut R) -> Vec<Point2> {
    let r1 = Rect::random(rng, (5.8, 6.2), (7.8, 8.2), (5.8, 6.2), (7.8, 8.2));
    let r2 = Rect::random(rng, (0.8, 1.2), (3.8, 4.2), (4.8, 5.2), (7.8, 8.2));
    let mut pts = Vec::with_capacity(1800);
    cluster_points(rng, &r1, 75, 14.0, 2.0, &mut pts);
    cluster_points(rng, &r1, 25, 8.0, 0.4, &mut pts);
    cluster_points(rng, &r2, 25, 14.0, 1.0, &mut pts);
    cluster_points(rng, &r2, 10, 8.0, 0.4, &mut pts);
    thin_linear_with(&pts, rng)
}

/// Simulated points for one replicate of an experiment.
pub fn experiment_points<R: Rng>(experiment: u8, rng: &mut R) -> Result<Vec<Point2>> {
    match experiment {
        1 | 2 => Ok(linear_trend_points(rng)),
        3 => Ok(experiment3_points(rng).0),
        4 => Ok(experiment4_points(rng)),
        _ => Err(unknown(experiment)),
    }
}

/// Stream for replicate `index` under `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn generate(experiment: u8, seed: u64) -> Result<SimReplicate> {
    generate_replicate(experiment, seed, 0)
}

pub fn generate_replicate(experiment: u8, seed: u64, index: u64) -> Result<SimReplicate> {
    let mut rng = replicate_rng(seed, index);
    let pts = experiment_points(experiment, &mut rng)?;
    Ok(tally(pts, &layout(experiment)?, &study_square()))
}

pub fn gen_experiment1(seed: u64) -> SimReplicate {
    generate(1, seed).expect("valid experiment")
}

pub fn gen_experiment2(seed: u64) -> SimReplicate {
    generate(2, seed).expect("valid experiment")
}

pub fn gen_experiment3(seed: u64) -> SimReplicate {
    generate(3, seed).expect("valid experiment")
}

pub fn gen_experiment4(seed: u64) -> SimReplicate {
    generate(4, seed).expect("valid experiment")
}

/// Inner rectangle drawn for an experiment-3 replicate (for checks on parents).
pub fn experiment3_with_rect(seed: u64) -> (Vec<Point2>, Rect) {
    experiment3_points(&mut replicate_rng(seed, 0))
}

/// Simple-random-sampling expansion estimate `(T̂, var)`.
pub fn srs_estimate(plots: &[PlotCount], region: &StudyRegion) -> Result<(f64, f64)> {
    let n = plots.len();
    if n < 2 {
        return Err(Error::InvalidArgument("SRS needs at least two plots".into()));
    }
    let a = plots[0].area();
    if plots.iter().any(|p| (p.area() - a).abs() > 1e-12 * a) {
        return Err(Error::UnsupportedForSRS);
    }
    let sum_y = observed_total(plots);
    let total = region.area() * sum_y / (a * n as f64);
    let mean = sum_y / n as f64;
    let s2 = plots
        .iter()
        .map(|p| (p.count as f64 - mean).powi(2))
        .sum::<f64>()
        / (n - 1) as f64;
    let big_n = region.area() / a;
    let fpc = (1.0 - n as f64 / big_n).max(0.0);
    Ok((total, big_n * big_n * s2 / n as f64 * fpc))
}

/// Thresholds that flag a replicate as failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCriteria {
    /// Largest allowed `T̂ / T̂_SRS`.
    pub max_expansion_ratio: f64,
    /// Largest allowed `se_k / T̂`.
    pub max_se_ratio: f64,
    /// Estimators whose standard error is checked against `max_se_ratio`.
    pub se_kinds: Vec<VarianceKind>,
}

impl Default for FailureCriteria {
    fn default() -> Self {
        FailureCriteria {
            max_expansion_ratio: 10.0,
            max_se_ratio: 1.0,
            se_kinds: vec![
                VarianceKind::Base,
                VarianceKind::OD,
                VarianceKind::WR,
                VarianceKind::TG,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: u8,
    pub replicates: usize,
    pub seed: u64,
    pub knot_configs: Vec<(usize, usize)>,
    pub trim_p: f64,
    pub grid_points: usize,
    pub knot_seed: u64,
    pub failure: FailureCriteria,
}

impl ExperimentSpec {
    pub fn new(id: u8, replicates: usize, seed: u64) -> Self {
        ExperimentSpec {
            id,
            replicates,
            seed,
            knot_configs: vec![(3, 8)],
            trim_p: 0.75,
            grid_points: crate::geometry::DEFAULT_GRID_POINTS,
            knot_seed: 1,
            failure: FailureCriteria::default(),
        }
    }

    pub fn with_knots(mut self, configs: &[(usize, usize)]) -> Self {
        self.knot_configs = configs.to_vec();
        self
    }

    fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.id) {
            return Err(unknown(self.id));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("replicates must be >= 1".into()));
        }
        if self.knot_configs.is_empty() {
            return Err(Error::InvalidArgument("no knot configurations".into()));
        }
        Ok(())
    }
}

/// One replicate under one knot configuration and trim proportion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateLog {
    pub replicate: usize,
    pub k_coarse: usize,
    pub k_fine: usize,
    pub trim_p: f64,
    pub true_total: u64,
    pub observed: f64,
    pub estimate: Option<f64>,
    pub se: BTreeMap<VarianceKind, f64>,
    pub covered: BTreeMap<VarianceKind, bool>,
    pub failed: bool,
    pub reason: Option<String>,
    pub rho: Option<(f64, f64)>,
    pub nm_evals: usize,
    pub trimmed_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrsLog {
    pub replicate: usize,
    pub true_total: u64,
    pub estimate: f64,
    pub se: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessResult {
    pub experiment: u8,
    pub k_coarse: usize,
    pub k_fine: usize,
    pub trim_p: f64,
    pub replicates: usize,
    pub n_used: usize,
    pub bias: f64,
    pub rmspe: f64,
    pub ci90: BTreeMap<VarianceKind, f64>,
    pub fail_rate: f64,
    pub log: Vec<ReplicateLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrsResult {
    pub bias: f64,
    pub rmspe: f64,
    pub ci90: f64,
    pub log: Vec<SrsLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessRun {
    pub experiment: u8,
    pub replicates: usize,
    pub seed: u64,
    pub mean_true_total: f64,
    pub srs: SrsResult,
    pub results: Vec<HarnessResult>,
}

/// Estimate and standard errors produced for one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub estimate: f64,
    pub se: BTreeMap<VarianceKind, f64>,
    pub fit_failed: Option<String>,
    pub rho: Option<(f64, f64)>,
    pub nm_evals: usize,
    pub trimmed_fallback: bool,
}

struct Context {
    region: StudyRegion,
    layout: Vec<RectPlot>,
    grid: PredictionGrid,
}

impl Context {
    fn new(spec: &ExperimentSpec) -> Result<Self> {
        let region = study_square();
        let layout = layout(spec.id)?;
        let grid = prediction_grid(&region, &layout, spec.grid_points)?;
        Ok(Context {
            region,
            layout,
            grid,
        })
    }
}

/// Fits the model once and evaluates the variance estimators at every `p`.
fn model_predictions(
    rep: &SimReplicate,
    ctx: &Context,
    cfg: &FitConfig,
    trim_ps: &[f64],
) -> std::result::Result<Vec<Prediction>, String> {
    let fit = fit_model(&rep.plots, &ctx.region, cfg).map_err(|e| e.to_string())?;
    let surface = GridSurface::new(&fit, &ctx.grid);
    let inputs = VarianceInputs::new(&rep.plots, &fit, Some(&surface)).map_err(|e| e.to_string())?;
    let estimate = observed_total(&rep.plots) + inputs.mu_u;
    let fit_failed = match &fit.status {
        FitStatus::Converged => None,
        FitStatus::Failed(r) => Some(r.clone()),
    };
    trim_ps
        .iter()
        .map(|&p| {
            let trimmed = inputs.trimmed(&fit, p).map_err(|e| e.to_string())?;
            Ok(Prediction {
                estimate,
                se: inputs
                    .variances(&trimmed)
                    .into_iter()
                    .map(|(k, v)| (k, v.sqrt()))
                    .collect(),
                fit_failed: fit_failed.clone(),
                rho: Some((fit.rho.coarse, fit.rho.fine)),
                nm_evals: fit.nm_evals,
                trimmed_fallback: trimmed.fallback,
            })
        })
        .collect()
}

fn judge(
    index: usize,
    rep: &SimReplicate,
    region: &StudyRegion,
    (kc, kf): (usize, usize),
    p: f64,
    pred: std::result::Result<Prediction, String>,
    crit: &FailureCriteria,
) -> ReplicateLog {
    let t = rep.true_total as f64;
    let mut log = ReplicateLog {
        replicate: index,
        k_coarse: kc,
        k_fine: kf,
        trim_p: p,
        true_total: rep.true_total,
        observed: observed_total(&rep.plots),
        estimate: None,
        se: BTreeMap::new(),
        covered: BTreeMap::new(),
        failed: true,
        reason: None,
        rho: None,
        nm_evals: 0,
        trimmed_fallback: false,
    };
    let pred = match pred {
        Ok(p) => p,
        Err(reason) => {
            log.reason = Some(reason);
            return log;
        }
    };
    log.estimate = Some(pred.estimate);
    log.rho = pred.rho;
    log.nm_evals = pred.nm_evals;
    log.trimmed_fallback = pred.trimmed_fallback;
    for (&k, &se) in &pred.se {
        if let Ok(iv) = confidence_interval_z(pred.estimate, se * se, Z90) {
            log.covered.insert(k, iv.covers(t));
        }
    }
    log.se = pred.se;
    let expansion = srs_estimate(&rep.plots, region).map(|e| e.0).unwrap_or(f64::INFINITY);
    log.reason = if let Some(r) = pred.fit_failed {
        Some(r)
    } else if !pred.estimate.is_finite() || pred.estimate > crit.max_expansion_ratio * expansion {
        Some(format!("estimate {} exceeds {}x the expansion estimate", pred.estimate, crit.max_expansion_ratio))
    } else if let Some((k, se)) = log
        .se
        .iter()
        .filter(|(k, _)| crit.se_kinds.contains(k))
        .find(|(_, &se)| !se.is_finite() || se > crit.max_se_ratio * pred.estimate)
    {
        Some(format!("{} standard error {se} exceeds the estimate", k.label()))
    } else {
        None
    };
    log.failed = log.reason.is_some();
    log
}

/// Bias, RMSPE, coverage and failure rate over a replicate log.
pub fn summarize(experiment: u8, (kc, kf): (usize, usize), p: f64, log: Vec<ReplicateLog>) -> HarnessResult {
    let used: Vec<&ReplicateLog> = log.iter().filter(|r| !r.failed).collect();
    let m = used.len() as f64;
    let errs: Vec<f64> = used
        .iter()
        .map(|r| r.estimate.unwrap_or(f64::NAN) - r.true_total as f64)
        .collect();
    let (bias, rmspe) = if used.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            errs.iter().sum::<f64>() / m,
            (errs.iter().map(|e| e * e).sum::<f64>() / m).sqrt(),
        )
    };
    let ci90 = VarianceKind::ALL
        .iter()
        .map(|&k| {
            let hits = used
                .iter()
                .filter(|r| r.covered.get(&k).copied().unwrap_or(false))
                .count();
            (k, if used.is_empty() { f64::NAN } else { hits as f64 / m })
        })
        .collect();
    HarnessResult {
        experiment,
        k_coarse: kc,
        k_fine: kf,
        trim_p: p,
        replicates: log.len(),
        n_used: used.len(),
        bias,
        rmspe,
        ci90,
        fail_rate: (log.len() - used.len()) as f64 / log.len().max(1) as f64,
        log,
    }
}

fn srs_summary(logs: Vec<SrsLog>) -> SrsResult {
    let m = logs.len() as f64;
    let errs: Vec<f64> = logs.iter().map(|r| r.estimate - r.true_total as f64).collect();
    SrsResult {
        bias: errs.iter().sum::<f64>() / m,
        rmspe: (errs.iter().map(|e| e * e).sum::<f64>() / m).sqrt(),
        ci90: logs.iter().filter(|r| r.covered).count() as f64 / m,
        log: logs,
    }
}

fn srs_log(index: usize, rep: &SimReplicate, region: &StudyRegion) -> SrsLog {
    let (estimate, var) = srs_estimate(&rep.plots, region).unwrap_or((f64::NAN, f64::NAN));
    let se = var.sqrt();
    let t = rep.true_total as f64;
    SrsLog {
        replicate: index,
        true_total: rep.true_total,
        estimate,
        se,
        covered: estimate - Z90 * se < t && t < estimate + Z90 * se,
    }
}

/// Per-replicate predictor: the fitted model or a substitute used for checks.
pub type Predictor<'a> = dyn Fn(&SimReplicate, (usize, usize), &[f64]) -> std::result::Result<Vec<Prediction>, String>
    + Sync
    + 'a;

/// Runs every replicate once per knot configuration and trim proportion.
/// The returned results are ordered by knot configuration, then by `p`.
pub fn run_with(spec: &ExperimentSpec, trim_ps: &[f64], predictor: Option<&Predictor>) -> Result<HarnessRun> {
    spec.validate()?;
    for &p in trim_ps {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("trim proportion {p} outside [0, 1)")));
        }
    }
    let ctx = Context::new(spec)?;
    let nc = spec.knot_configs.len();
    let np = trim_ps.len();

    let per_rep: Vec<(u64, SrsLog, Vec<ReplicateLog>)> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(spec.seed, r as u64);
            let pts = experiment_points(spec.id, &mut rng).expect("validated experiment");
            let rep = tally(pts, &ctx.layout, &ctx.region);
            let mut logs = Vec::with_capacity(nc * np);
            for &(kc, kf) in &spec.knot_configs {
                let preds = match predictor {
                    Some(f) => f(&rep, (kc, kf), trim_ps),
                    None => {
                        let cfg = FitConfig {
                            knot_seed: spec.knot_seed,
                            ..FitConfig::with_knots(kc, kf)
                        };
                        model_predictions(&rep, &ctx, &cfg, trim_ps)
                    }
                };
                for (j, &p) in trim_ps.iter().enumerate() {
                    let pred = match &preds {
                        Ok(v) => Ok(v[j].clone()),
                        Err(e) => Err(e.clone()),
                    };
                    logs.push(judge(r, &rep, &ctx.region, (kc, kf), p, pred, &spec.failure));
                }
            }
            (rep.true_total, srs_log(r, &rep, &ctx.region), logs)
        })
        .collect();

    let mean_true_total =
        per_rep.iter().map(|(t, _, _)| *t as f64).sum::<f64>() / spec.replicates as f64;
    let mut buckets: Vec<Vec<ReplicateLog>> = vec![Vec::with_capacity(spec.replicates); nc * np];
    let mut srs = Vec::with_capacity(spec.replicates);
    for (_, s, logs) in per_rep {
        srs.push(s);
        for (slot, log) in logs.into_iter().enumerate() {
            buckets[slot].push(log);
        }
    }
    let results = buckets
        .into_iter()
        .enumerate()
        .map(|(slot, log)| summarize(spec.id, spec.knot_configs[slot / np], trim_ps[slot % np], log))
        .collect();
    Ok(HarnessRun {
        experiment: spec.id,
        replicates: spec.replicates,
        seed: spec.seed,
        mean_true_total,
        srs: srs_summary(srs),
        results,
    })
}

pub fn run_harness(spec: &ExperimentSpec) -> Result<HarnessRun> {
    run_with(spec, &[spec.trim_p], None)
}

/// Coverage of the trimmed estimators against the trim proportion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k_coarse: usize,
    pub k_fine: usize,
    pub p: f64,
    pub ci90_tg: f64,
    pub ci90_tl: f64,
    pub fail_rate: f64,
    pub n_used: usize,
}

/// One harness result per `p`; each replicate is fitted once and reused.
pub fn trim_sweep(spec: &ExperimentSpec, p_values: &[f64]) -> Result<(Vec<SweepPoint>, HarnessRun)> {
    if p_values.is_empty() {
        return Err(Error::InvalidArgument("empty trim proportion list".into()));
    }
    let run = run_with(spec, p_values, None)?;
    let points = run
        .results
        .iter()
        .map(|r| SweepPoint {
            k_coarse: r.k_coarse,
            k_fine: r.k_fine,
            p: r.trim_p,
            ci90_tg: r.ci90[&VarianceKind::TG],
            ci90_tl: r.ci90[&VarianceKind::TL],
            fail_rate: r.fail_rate,
            n_used: r.n_used,
        })
        .collect();
    Ok((points, run))
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("writing CSV: {e}"))
}

/// One row per estimator column, shaped like the published result tables.
pub fn write_table_csv<W: Write>(run: &HarnessRun, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["metric".to_string(), "SRS".to_string()];
    for r in &run.results {
        header.push(format!("KC={} KF={} p={}", r.k_coarse, r.k_fine, r.trim_p));
    }
    w.write_record(&header).map_err(csv_err)?;
    let fmt = |v: f64| format!("{v:.3}");
    let mut row = |name: &str, srs: Option<f64>, f: &dyn Fn(&HarnessResult) -> f64| -> Result<()> {
        let mut rec = vec![name.to_string(), srs.map(fmt).unwrap_or_default()];
        rec.extend(run.results.iter().map(|r| fmt(f(r))));
        w.write_record(&rec).map_err(csv_err)
    };
    row("bias", Some(run.srs.bias), &|r| r.bias)?;
    row("rmspe", Some(run.srs.rmspe), &|r| r.rmspe)?;
    row("ci90", Some(run.srs.ci90), &|r| r.ci90[&VarianceKind::Base])?;
    for k in [VarianceKind::OD, VarianceKind::WR, VarianceKind::TG, VarianceKind::TL] {
        row(&format!("ci90_{}", k.label()), None, &|r| r.ci90[&k])?;
    }
    row("fail_rate", Some(0.0), &|r| r.fail_rate)?;
    w.flush().map_err(csv_err)
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k_coarse", "k_fine", "p", "ci90_tg", "ci90_tl", "fail_rate", "n_used"])
        .map_err(csv_err)?;
    for s in points {
        w.write_record([
            s.k_coarse.to_string(),
            s.k_fine.to_string(),
            s.p.to_string(),
            format!("{:.4}", s.ci90_tg),
            format!("{:.4}", s.ci90_tl),
            format!("{:.4}", s.fail_rate),
            s.n_used.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// Per-replicate logs as JSON lines, in configuration then replicate order.
pub fn write_replicate_log<W: Write>(run: &HarnessRun, mut out: W) -> Result<()> {
    let io = |e: std::io::Error| Error::InvalidArgument(format!("writing log: {e}"));
    for r in &run.results {
        for rec in &r.log {
            let line = serde_json::to_string(rec).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            writeln!(out, "{line}").map_err(io)?;
        }
    }
    Ok(())
}

/// Synthetic survey at the scale of a large aerial photo survey: an irregular
/// region of about 80 square units with an open-water hole, 2080
/// non-overlapping 0.08×0.12 frames along transects (about 25% coverage), and
/// counts drawn from a clustered, overdispersed intensity with many zeros.
pub fn synthetic_survey(seed: u64) -> (StudyRegion, Vec<PlotCount>) {
    use crate::geometry::Polygon;
    let ring = |pts: &[(f64, f64)]| pts.iter().map(|&(x, y)| Point2::new(x, y)).collect::<Vec<_>>();
    let outer = ring(&[
        (0.0, 0.0),
        (9.24, 0.0),
        (10.12, 3.52),
        (9.46, 7.92),
        (5.72, 8.8),
        (0.88, 8.14),
        (-0.44, 3.96),
    ]);
    let hole = ring(&[(6.16, 2.2), (7.48, 2.2), (7.48, 3.3), (6.16, 3.3)]);
    let region = StudyRegion::new(Polygon::new(outer, vec![hole]).expect("valid polygon"))
        .expect("valid region");

    let (sx, sy) = (0.08, 0.12);
    let mut frames = Vec::new();
    // east-west transects every 0.32, frames every 0.1 along each
    let mut y = 0.1;
    while y < 8.8 {
        let mut x = -0.4;
        while x < 10.2 {
            if let Ok(p) = RectPlot::new(Point2::new(x, y), sx, sy) {
                if region.contains_plot(&p) {
                    frames.push(p);
                }
            }
            x += 0.1;
        }
        y += 0.32;
    }
    let mut rng = replicate_rng(seed, 0);
    while frames.len() > 2080 {
        let i = rng.random_range(0..frames.len());
        frames.remove(i);
    }
    // (x, y, spread, peak intensity)
    let bumps = [(2.6, 5.7, 0.8, 500.0), (7.9, 5.9, 0.6, 500.0), (4.4, 2.6, 1.2, 80.0)];
    let plots = frames
        .into_iter()
        .map(|f| {
            let c = f.centroid;
            let lam: f64 = 0.2
                + bumps
                    .iter()
                    .map(|&(x, y, s, h)| {
                        h * (-((c.x - x).powi(2) + (c.y - y).powi(2)) / (2.0 * s * s)).exp()
                    })
                    .sum::<f64>();
            // patchy extra-Poisson variation
            let g: f64 = rng.random_range(0.2..1.8);
            let count = Poisson::new(lam * g * f.area())
                .map(|d| d.sample(&mut rng) as u64)
                .unwrap_or(0);
            PlotCount::new(f, count)
        })
        .collect();
    (region, plots)
}
