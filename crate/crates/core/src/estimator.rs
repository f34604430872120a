//! Realized-abundance prediction and its uncertainty.
//!
//! The total in `A` is the observed count in the plots plus the integral of
//! the fitted intensity over the unsampled area `U`:
//!
//! ```text
//! T̂(A) = T(B) + |U|/n_p Σ_j exp(x(u_j)'θ̂)
//! ```
//!
//! Its mean-squared prediction error is `μ̂(U) + c'Σ̂c`, where `μ̂(U)` is the
//! Poisson variance of the unobserved count, `c = ∂T̂(U)/∂θ` and `Σ̂` is the
//! inverse Poisson information over the plots. Only unsampled area
//! contributes, so the error vanishes as the plots approach a census.
//!
//! Overdispersion multipliers (all floored at 1) inflate this error:
//! the classical Pearson estimator (OD), a zero-intercept weighted regression
//! of squared residuals on fitted values (WR), and a trimmed mean of squared
//! Pearson residuals that ignores the plots with the smallest fitted values
//! (TG). TL pairs TG with a covariance recomputed from the untrimmed plots only.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::{basis_row, KnotDistances, RangePair};
use crate::error::{Error, Result};
use crate::fit::ModelFit;
use crate::geometry::{Point2, PredictionGrid, RectPlot};
use crate::glm::{self, fisher_information, fisher_information_rows, IwlsConfig};

/// One surveyed plot and its count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotCount {
    pub plot: RectPlot,
    pub count: u64,
}

impl PlotCount {
    pub fn new(plot: RectPlot, count: u64) -> Self {
        PlotCount { plot, count }
    }

    pub fn centroid(&self) -> Point2 {
        self.plot.centroid
    }

    pub fn area(&self) -> f64 {
        self.plot.area()
    }
}

/// Variance estimator variants. `Base` carries no overdispersion correction.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum VarianceKind {
    #[serde(rename = "base")]
    Base,
    OD,
    WR,
    TG,
    TL,
}

impl VarianceKind {
    pub const ALL: [VarianceKind; 5] = [
        VarianceKind::Base,
        VarianceKind::OD,
        VarianceKind::WR,
        VarianceKind::TG,
        VarianceKind::TL,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            VarianceKind::Base => "base",
            VarianceKind::OD => "OD",
            VarianceKind::WR => "WR",
            VarianceKind::TG => "TG",
            VarianceKind::TL => "TL",
        }
    }
}

/// Fitted intensity `exp(x(u)'θ̂)` in counts per unit area.
pub fn intensity_at(fit: &ModelFit, u: &Point2) -> f64 {
    basis_row(u, &fit.knots, fit.rho).dot(fit.theta()).exp()
}

/// Fitted intensities at every node of the prediction grid, with the grid design.
#[derive(Debug, Clone)]
pub struct GridSurface {
    pub design: DMatrix<f64>,
    pub intensity: DVector<f64>,
    pub cell_area: f64,
}

impl GridSurface {
    pub fn new(fit: &ModelFit, grid: &PredictionGrid) -> Self {
        Self::from_parts(&fit.knots, fit.rho, fit.theta(), grid)
    }

    fn from_parts(
        knots: &crate::knots::KnotSet,
        rho: RangePair,
        theta: &DVector<f64>,
        grid: &PredictionGrid,
    ) -> Self {
        let design = KnotDistances::new(&grid.points, knots).design(rho);
        let x = design.matrix().clone();
        let intensity = (&x * theta).map(f64::exp);
        GridSurface {
            design: x,
            intensity,
            cell_area: grid.cell_area,
        }
    }

    /// `T̂(U)`, which is also `μ̂(U)`.
    pub fn total(&self) -> f64 {
        if self.intensity.is_empty() {
            return 0.0;
        }
        self.cell_area * self.intensity.sum()
    }

    /// Sensitivity `c_i = |U|/n_p Σ_j x_i(u_j) λ(u_j)`.
    pub fn c_vector(&self) -> DVector<f64> {
        if self.intensity.is_empty() {
            return DVector::zeros(self.design.ncols());
        }
        self.design.tr_mul(&self.intensity) * self.cell_area
    }
}

pub fn predict_total_u(fit: &ModelFit, grid: &PredictionGrid) -> f64 {
    if grid.is_empty() {
        return 0.0;
    }
    GridSurface::new(fit, grid).total()
}

pub fn c_vector(fit: &ModelFit, grid: &PredictionGrid) -> DVector<f64> {
    if grid.is_empty() {
        return DVector::zeros(fit.design.n_cols());
    }
    GridSurface::new(fit, grid).c_vector()
}

/// Point estimate pieces: `(T(B), T̂(U), T̂(A))`.
pub fn estimate_total(plots: &[PlotCount], fit: &ModelFit, grid: &PredictionGrid) -> (f64, f64, f64) {
    let observed = observed_total(plots);
    let predicted = predict_total_u(fit, grid);
    (observed, predicted, observed + predicted)
}

pub fn observed_total(plots: &[PlotCount]) -> f64 {
    plots.iter().map(|p| p.count as f64).sum()
}

/// Inverse Poisson information `[Σ_i x_i x_i' μ̂_i]^{-1}`.
pub fn sigma_hat(fit: &ModelFit) -> Result<DMatrix<f64>> {
    let info = fisher_information(fit.design.matrix(), &fit.poisson.mu_hat);
    glm::invert_information(&info, IwlsConfig::default().max_condition)
}

/// Indices kept after dropping the `⌊np⌋` plots with the smallest fitted
/// values; ties are ordered by input position.
pub fn untrimmed_indices(phi: &[f64], p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..phi.len()).collect();
    order.sort_by(|&a, &b| phi[a].total_cmp(&phi[b]).then(a.cmp(&b)));
    let cut = trim_count(phi.len(), p);
    order.split_off(cut)
}

fn trim_count(n: usize, p: f64) -> usize {
    ((n as f64) * p).floor() as usize
}

/// Covariance from the untrimmed plots only.
pub fn sigma_tilde(fit: &ModelFit, p: f64) -> Result<DMatrix<f64>> {
    check_trim(p)?;
    let mu = &fit.poisson.mu_hat;
    let phi: Vec<f64> = mu.iter().copied().collect();
    let kept = untrimmed_indices(&phi, p);
    if kept.len() == phi.len() {
        return sigma_hat(fit);
    }
    let q = fit.design.n_cols();
    if kept.len() < q {
        return Err(Error::InsufficientDataAfterTrim {
            kept: kept.len(),
            needed: q,
        });
    }
    let info = fisher_information_rows(fit.design.matrix(), mu, &kept);
    glm::invert_information(&info, IwlsConfig::default().max_condition)
}

fn check_trim(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "trim proportion must be in [0, 1), got {p}"
        )))
    }
}

fn check_phi(y: &[f64], phi: &[f64]) -> Result<()> {
    if y.len() != phi.len() || y.is_empty() {
        return Err(Error::InvalidArgument(
            "counts and fitted values must be non-empty and equal length".into(),
        ));
    }
    if phi.iter().any(|&f| !(f >= 0.0) || !f.is_finite()) {
        return Err(Error::InvalidArgument(
            "fitted values must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Squared Pearson residual. A zero count contributes exactly `φ`, which
/// stays finite when a fitted mean underflows to zero.
fn pearson_sq(y: f64, phi: f64) -> f64 {
    if y == 0.0 {
        phi
    } else {
        (y - phi).powi(2) / phi
    }
}

pub fn omega_od(y: &[f64], phi: &[f64], q_rank: usize) -> Result<f64> {
    check_phi(y, phi)?;
    let n = y.len();
    if n <= q_rank {
        return Err(Error::InsufficientDof { n, rank: q_rank });
    }
    let chi2: f64 = y
        .iter()
        .zip(phi)
        .map(|(&yi, &f)| pearson_sq(yi, f))
        .sum();
    Ok((chi2 / (n - q_rank) as f64).max(1.0))
}

/// Weighted zero-intercept regression of `(y - φ)²` on `φ` with weights `√φ`.
pub fn omega_wr(y: &[f64], phi: &[f64]) -> Result<f64> {
    check_phi(y, phi)?;
    let (num, den) = y.iter().zip(phi).fold((0.0, 0.0), |(n, d), (&yi, &f)| {
        let w = f.sqrt();
        (n + w * f * (yi - f).powi(2), d + w * f * f)
    });
    Ok((num / den).max(1.0))
}

pub fn omega_tg(y: &[f64], phi: &[f64], p: f64) -> Result<f64> {
    check_phi(y, phi)?;
    check_trim(p)?;
    let kept = untrimmed_indices(phi, p);
    let mean = kept
        .iter()
        .map(|&i| pearson_sq(y[i], phi[i]))
        .sum::<f64>()
        / kept.len() as f64;
    Ok(mean.max(1.0))
}

/// Log-scale interval `exp(log T̂ ± z √v / T̂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    /// Set when `T̂ = 0` and the log-scale form is undefined.
    pub degenerate: bool,
}

impl Interval {
    pub fn covers(&self, value: f64) -> bool {
        self.lower < value && value < self.upper
    }
}

pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must be in (0, 1), got {level}"
        )));
    }
    let n = Normal::standard();
    Ok(n.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

pub fn confidence_interval(total: f64, variance: f64, level: f64) -> Result<Interval> {
    let z = normal_quantile(level)?;
    confidence_interval_z(total, variance, z)
}

pub fn confidence_interval_z(total: f64, variance: f64, z: f64) -> Result<Interval> {
    if !(variance >= 0.0) || !(total >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need total >= 0 and variance >= 0, got {total} and {variance}"
        )));
    }
    let half = z * variance.sqrt();
    if half == 0.0 {
        return Ok(Interval {
            lower: total,
            upper: total,
            degenerate: total == 0.0,
        });
    }
    if total == 0.0 {
        return Ok(Interval {
            lower: 0.0,
            upper: half,
            degenerate: true,
        });
    }
    let r = half / total;
    Ok(Interval {
        lower: (total.ln() - r).exp(),
        upper: (total.ln() + r).exp(),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    /// `μ̂(U)`.
    pub mu_u: f64,
    /// `c'Σ̂c`.
    pub quad: f64,
    /// `c'Σ̃c`.
    pub quad_trimmed: f64,
    /// Σ̃ could not be formed and Σ̂ was used instead.
    pub trimmed_fallback: bool,
    pub sigma: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

/// `M̂ = μ̂(U) + c'Σ̂c`.
pub fn mspe(components: &VarianceComponents) -> f64 {
    components.mu_u + components.quad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub trim_p: f64,
    pub ci_levels: Vec<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            trim_p: 0.75,
            ci_levels: vec![0.95],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiEntry {
    pub kind: VarianceKind,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub rho: RangePair,
    pub theta: Vec<f64>,
    pub nll: f64,
    pub rank: usize,
    pub nm_evals: usize,
    pub converged: bool,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbundanceReport {
    pub observed: f64,
    pub predicted_u: f64,
    pub total: f64,
    pub mspe: f64,
    pub components: VarianceComponents,
    pub omega: BTreeMap<VarianceKind, f64>,
    pub trim_p: f64,
    pub variance: BTreeMap<VarianceKind, f64>,
    pub se: BTreeMap<VarianceKind, f64>,
    pub ci: Vec<CiEntry>,
    pub n_plots: usize,
    pub n_grid: usize,
    pub unsampled_area: f64,
    pub fit: FitSummary,
}

impl AbundanceReport {
    pub fn interval(&self, kind: VarianceKind, level: f64) -> Option<&CiEntry> {
        self.ci
            .iter()
            .find(|c| c.kind == kind && (c.level - level).abs() < 1e-12)
    }
}

/// Overdispersion and variance pieces that depend on the trim proportion.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimmedVariance {
    pub omega_tg: f64,
    pub quad_trimmed: f64,
    pub fallback: bool,
}

/// Everything needed to evaluate variances for several trim proportions from one fit.
#[derive(Debug, Clone)]
pub struct VarianceInputs {
    pub y: Vec<f64>,
    pub phi: Vec<f64>,
    pub c: DVector<f64>,
    pub mu_u: f64,
    pub quad: f64,
    pub sigma: DMatrix<f64>,
    pub omega_od: f64,
    pub omega_wr: f64,
}

impl VarianceInputs {
    pub fn new(plots: &[PlotCount], fit: &ModelFit, surface: Option<&GridSurface>) -> Result<Self> {
        let y: Vec<f64> = plots.iter().map(|p| p.count as f64).collect();
        let phi: Vec<f64> = fit.poisson.mu_hat.iter().copied().collect();
        let q = fit.design.n_cols();
        let (mu_u, c) = match surface {
            Some(s) => (s.total(), s.c_vector()),
            None => (0.0, DVector::zeros(q)),
        };
        let (sigma, quad) = if c.iter().all(|&v| v == 0.0) {
            // full census: the quadratic form vanishes whatever Σ̂ is
            (sigma_hat(fit).unwrap_or_else(|_| DMatrix::zeros(q, q)), 0.0)
        } else {
            let s = sigma_hat(fit)?;
            let quad = quad_form(&s, &c);
            (s, quad)
        };
        Ok(VarianceInputs {
            omega_od: omega_od(&y, &phi, fit.poisson.rank)?,
            omega_wr: omega_wr(&y, &phi)?,
            y,
            phi,
            c,
            mu_u,
            quad,
            sigma,
        })
    }

    pub fn mspe(&self) -> f64 {
        self.mu_u + self.quad
    }

    pub fn trimmed(&self, fit: &ModelFit, p: f64) -> Result<TrimmedVariance> {
        let omega = omega_tg(&self.y, &self.phi, p)?;
        if self.c.iter().all(|&v| v == 0.0) {
            return Ok(TrimmedVariance {
                omega_tg: omega,
                quad_trimmed: 0.0,
                fallback: false,
            });
        }
        let (quad_trimmed, fallback) = match sigma_tilde(fit, p) {
            Ok(s) => (quad_form(&s, &self.c), false),
            Err(Error::InsufficientDataAfterTrim { .. }) | Err(Error::SingularSystem { .. }) => {
                (self.quad, true)
            }
            Err(e) => return Err(e),
        };
        Ok(TrimmedVariance {
            omega_tg: omega,
            quad_trimmed,
            fallback,
        })
    }

    /// Variance of `T̂(A)` for every estimator kind.
    pub fn variances(&self, trimmed: &TrimmedVariance) -> BTreeMap<VarianceKind, f64> {
        let m = self.mspe();
        BTreeMap::from([
            (VarianceKind::Base, m),
            (VarianceKind::OD, self.omega_od * m),
            (VarianceKind::WR, self.omega_wr * m),
            (VarianceKind::TG, trimmed.omega_tg * m),
            (
                VarianceKind::TL,
                trimmed.omega_tg * (self.mu_u + trimmed.quad_trimmed),
            ),
        ])
    }
}

fn quad_form(m: &DMatrix<f64>, c: &DVector<f64>) -> f64 {
    (m * c).dot(c).max(0.0)
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Full report: point estimate, variance components, overdispersion, intervals.
pub fn estimate_abundance(
    plots: &[PlotCount],
    fit: &ModelFit,
    grid: &PredictionGrid,
    cfg: &EstimatorConfig,
) -> Result<AbundanceReport> {
    check_trim(cfg.trim_p)?;
    if plots.len() != fit.design.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "{} plots but the fit has {} rows",
            plots.len(),
            fit.design.n_rows()
        )));
    }
    let surface = (!grid.is_empty()).then(|| GridSurface::new(fit, grid));
    let inputs = VarianceInputs::new(plots, fit, surface.as_ref())?;
    let trimmed = inputs.trimmed(fit, cfg.trim_p)?;
    let variance = inputs.variances(&trimmed);

    let observed = observed_total(plots);
    let predicted_u = inputs.mu_u;
    let total = observed + predicted_u;

    let mut ci = Vec::new();
    for &level in &cfg.ci_levels {
        for (&kind, &v) in &variance {
            let iv = confidence_interval(total, v, level)?;
            ci.push(CiEntry {
                kind,
                level,
                lower: iv.lower,
                upper: iv.upper,
                degenerate: iv.degenerate,
            });
        }
    }
    let omega = BTreeMap::from([
        (VarianceKind::OD, inputs.omega_od),
        (VarianceKind::WR, inputs.omega_wr),
        (VarianceKind::TG, trimmed.omega_tg),
        (VarianceKind::TL, trimmed.omega_tg),
    ]);
    let se = variance.iter().map(|(&k, &v)| (k, v.sqrt())).collect();

    Ok(AbundanceReport {
        observed,
        predicted_u,
        total,
        mspe: inputs.mspe(),
        components: VarianceComponents {
            mu_u: inputs.mu_u,
            quad: inputs.quad,
            quad_trimmed: trimmed.quad_trimmed,
            trimmed_fallback: trimmed.fallback,
            sigma: matrix_rows(&inputs.sigma),
            c: inputs.c.iter().copied().collect(),
        },
        omega,
        trim_p: cfg.trim_p,
        variance,
        se,
        ci,
        n_plots: plots.len(),
        n_grid: grid.n_points(),
        unsampled_area: grid.unsampled_area,
        fit: FitSummary {
            rho: fit.rho,
            theta: fit.theta().iter().copied().collect(),
            nll: fit.nll,
            rank: fit.poisson.rank,
            nm_evals: fit.nm_evals,
            converged: fit.is_converged(),
            status: match &fit.status {
                crate::fit::FitStatus::Converged => "converged".into(),
                crate::fit::FitStatus::Failed(r) => format!("failed: {r}"),
            },
        },
    })
}

/// Writes `x,y,expected` rows: fitted expected count per prediction cell.
pub fn write_surface_csv<W: Write>(fit: &ModelFit, grid: &PredictionGrid, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::InvalidArgument(format!("writing surface: {e}"));
    w.write_record(["x", "y", "expected"]).map_err(io)?;
    if !grid.is_empty() {
        let s = GridSurface::new(fit, grid);
        for (p, lam) in grid.points.iter().zip(s.intensity.iter()) {
            w.write_record([
                p.x.to_string(),
                p.y.to_string(),
                (lam * grid.cell_area).to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()
        .map_err(|e| Error::InvalidArgument(format!("writing surface: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_floors_at_one() {
        let phi = [0.5, 2.0, 3.0];
        assert_eq!(omega_od(&phi, &phi, 1).unwrap(), 1.0);
        assert_eq!(omega_wr(&phi, &phi).unwrap(), 1.0);
        assert_eq!(omega_tg(&phi, &phi, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn omega_od_small_case() {
        assert_eq!(omega_od(&[0.0, 4.0], &[1.0, 2.0], 1).unwrap(), 3.0);
    }

    #[test]
    fn omega_od_needs_dof() {
        assert_eq!(
            omega_od(&[1.0, 2.0], &[1.0, 2.0], 2),
            Err(Error::InsufficientDof { n: 2, rank: 2 })
        );
    }

    #[test]
    fn omega_tg_without_trim_is_mean_pearson() {
        let y = [0.0, 5.0, 1.0, 9.0];
        let phi = [0.5, 2.0, 1.5, 3.0];
        let mean = y
            .iter()
            .zip(&phi)
            .map(|(a, b)| (a - b) * (a - b) / b)
            .sum::<f64>()
            / 4.0;
        assert_eq!(omega_tg(&y, &phi, 0.0).unwrap(), mean.max(1.0));
    }

    #[test]
    fn trim_uses_stable_ties() {
        let phi = [1.0, 0.5, 1.0, 0.5, 2.0];
        assert_eq!(untrimmed_indices(&phi, 0.4), vec![0, 2, 4]);
        assert_eq!(untrimmed_indices(&phi, 0.6), vec![2, 4]);
        assert_eq!(untrimmed_indices(&phi, 0.0), vec![1, 3, 0, 2, 4]);
    }

    #[test]
    fn bad_trim_rejected() {
        assert!(omega_tg(&[1.0], &[1.0], 1.0).is_err());
        assert!(omega_tg(&[1.0], &[1.0], -0.1).is_err());
    }

    #[test]
    fn ci_zero_variance() {
        let iv = confidence_interval(250.0, 0.0, 0.9).unwrap();
        assert_eq!((iv.lower, iv.upper), (250.0, 250.0));
    }

    #[test]
    fn ci_zero_total_flagged() {
        let iv = confidence_interval_z(0.0, 4.0, 1.645).unwrap();
        assert!(iv.degenerate);
        assert_eq!((iv.lower, iv.upper), (0.0, 3.29));
    }

    #[test]
    fn ci_lower_bound_positive() {
        let iv = confidence_interval(10.0, 1e6, 0.99).unwrap();
        assert!(iv.lower > 0.0);
    }

    #[test]
    fn quantile_ninety() {
        assert!((normal_quantile(0.9).unwrap() - 1.6448536269514722).abs() < 1e-9);
    }
}
