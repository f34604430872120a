//! Joint estimation of the range parameters and regression coefficients.
//!
//! The range pair is optimised by Nelder-Mead in logit-transformed
//! coordinates; every objective evaluation rebuilds the design matrix at the
//! candidate ranges and profiles out the coefficients with IWLS. The fine
//! range lives in `[0.5 d_F, 3 d_F]`; the coarse range slides between the
//! current fine range and `3 d_C`, where `d_*` is the minimum inter-knot
//! distance at that scale.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::{DesignMatrix, KnotDistances, RangePair};
use crate::error::{Error, Result};
use crate::estimator::PlotCount;
use crate::geometry::{Point2, StudyRegion};
use crate::glm::{self, IwlsConfig, PoissonFit};
use crate::knots::{place_knots, KnotSet};
use crate::nelder_mead::{self, NelderMeadOptions};

/// Maps the real line onto the open interval `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitBox {
    pub lo: f64,
    pub hi: f64,
}

impl LogitBox {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "logit box needs lo < hi, got ({lo}, {hi})"
            )));
        }
        Ok(LogitBox { lo, hi })
    }

    pub fn to_bounded(&self, z: f64) -> f64 {
        // exp(z) / (1 + exp(z)) without overflow
        let s = if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        };
        self.lo + (self.hi - self.lo) * s
    }

    pub fn to_unconstrained(&self, v: f64) -> Result<f64> {
        if !(v > self.lo && v < self.hi) {
            return Err(Error::DomainError {
                value: v,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(((v - self.lo) / (self.hi - v)).ln())
    }
}

/// Feasible ranges derived from knot spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoBounds {
    pub fine_lo: f64,
    pub fine_hi: f64,
    /// Upper end of the coarse interval; the lower end is the current fine range.
    pub coarse_hi: f64,
    pub d_fine: f64,
    pub d_coarse: f64,
}

impl RhoBounds {
    pub fn fine_box(&self) -> LogitBox {
        LogitBox {
            lo: self.fine_lo,
            hi: self.fine_hi,
        }
    }

    pub fn coarse_box(&self, rho_fine: f64) -> LogitBox {
        LogitBox {
            lo: rho_fine,
            hi: self.coarse_hi,
        }
    }

    /// Ranges for a point in transformed coordinates.
    pub fn decode(&self, z: &[f64]) -> Result<RangePair> {
        let fine = self.fine_box().to_bounded(z[0]);
        let coarse = self.coarse_box(fine).to_bounded(z[1]);
        RangePair::new(coarse, fine)
    }
}

/// Bounds from minimum knot distances; a scale with one knot uses `region_diameter`.
pub fn rho_bounds(knots: &KnotSet, region_diameter: f64) -> RhoBounds {
    let d_fine = knots.min_dist_fine.unwrap_or(region_diameter);
    let d_coarse = knots.min_dist_coarse.unwrap_or(region_diameter);
    let fine_lo = 0.5 * d_fine;
    let fine_hi = 3.0 * d_fine;
    RhoBounds {
        fine_lo,
        fine_hi,
        coarse_hi: (3.0 * d_coarse).max(1.001 * fine_hi),
        d_fine,
        d_coarse,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k_coarse: usize,
    pub k_fine: usize,
    pub knot_seed: u64,
    /// Simplex NLL spread that ends the range search.
    pub nm_tol: f64,
    pub nm_max_eval: usize,
    /// Starting fine range as a fraction of its interval.
    pub rho_init_frac: f64,
    /// Start each IWLS run from the best coefficients seen so far.
    pub warm_start: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            k_coarse: 3,
            k_fine: 8,
            knot_seed: 1,
            nm_tol: 1e-6,
            nm_max_eval: 500,
            rho_init_frac: 0.5,
            warm_start: true,
        }
    }
}

impl FitConfig {
    pub fn with_knots(k_coarse: usize, k_fine: usize) -> Self {
        FitConfig {
            k_coarse,
            k_fine,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.nm_tol > 0.0) {
            return Err(Error::InvalidArgument("nm_tol must be positive".into()));
        }
        if self.nm_max_eval < 50 {
            return Err(Error::InvalidArgument("nm_max_eval must be >= 50".into()));
        }
        if !(self.rho_init_frac > 0.0 && self.rho_init_frac < 1.0) {
            return Err(Error::InvalidArgument(
                "rho_init_frac must lie in (0, 1)".into(),
            ));
        }
        if self.k_coarse == 0 || self.k_fine == 0 {
            return Err(Error::InvalidArgument("knot counts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct ModelFit {
    pub poisson: PoissonFit,
    pub rho: RangePair,
    pub bounds: RhoBounds,
    pub knots: KnotSet,
    pub design: DesignMatrix,
    pub nll: f64,
    /// NLL at the starting ranges (`+inf` if IWLS failed there).
    pub nll_start: f64,
    pub nm_evals: usize,
    pub status: FitStatus,
}

impl ModelFit {
    pub fn theta(&self) -> &DVector<f64> {
        &self.poisson.theta
    }

    pub fn is_converged(&self) -> bool {
        self.status == FitStatus::Converged
    }
}

/// Counts and log-areas in plot order.
pub fn response(plots: &[PlotCount]) -> (Vec<f64>, Vec<f64>) {
    plots
        .iter()
        .map(|p| (p.count as f64, p.area().ln()))
        .unzip()
}

pub fn fit_model(plots: &[PlotCount], region: &StudyRegion, cfg: &FitConfig) -> Result<ModelFit> {
    cfg.validate()?;
    if plots.is_empty() {
        return Err(Error::InvalidArgument("no plots".into()));
    }
    if plots.iter().all(|p| p.count == 0) {
        return Err(Error::NoSignal);
    }
    let nonzero: Vec<Point2> = plots
        .iter()
        .filter(|p| p.count > 0)
        .map(PlotCount::centroid)
        .collect();
    let pad = plots
        .iter()
        .map(|p| p.plot.side_x.max(p.plot.side_y))
        .fold(0.0, f64::max);
    let knots = place_knots(
        region,
        &nonzero,
        cfg.k_coarse,
        cfg.k_fine,
        cfg.knot_seed,
        Some(pad),
    )?;
    fit_with_knots(plots, region, knots, cfg)
}

/// Range search and IWLS for a fixed knot set.
pub fn fit_with_knots(
    plots: &[PlotCount],
    region: &StudyRegion,
    knots: KnotSet,
    cfg: &FitConfig,
) -> Result<ModelFit> {
    cfg.validate()?;
    let (y, offsets) = response(plots);
    if y.iter().all(|&v| v == 0.0) {
        return Err(Error::NoSignal);
    }
    let q = 1 + knots.n_coarse() + knots.n_fine();
    if plots.len() < q {
        return Err(Error::InvalidArgument(format!(
            "{} plots cannot support {q} coefficients",
            plots.len()
        )));
    }
    let locs: Vec<Point2> = plots.iter().map(PlotCount::centroid).collect();
    let distances = KnotDistances::new(&locs, &knots);
    let bounds = rho_bounds(&knots, region.diameter());
    let iwls_cfg = IwlsConfig::default();
    let cold = glm::default_start(q, &y, &offsets);

    let mut best: Option<(f64, RangePair, PoissonFit)> = None;
    let objective = |z: &[f64], best: &mut Option<(f64, RangePair, PoissonFit)>| -> f64 {
        let Ok(rho) = bounds.decode(z) else {
            return f64::INFINITY;
        };
        let design = distances.design(rho);
        let warm = best.as_ref().filter(|_| cfg.warm_start).map(|b| &b.2.theta);
        let mut result = glm::iwls_with(design.matrix(), &y, &offsets, &iwls_cfg, warm.or(Some(&cold)));
        if result.is_err() && warm.is_some() {
            result = glm::iwls_with(design.matrix(), &y, &offsets, &iwls_cfg, Some(&cold));
        }
        match result {
            Ok(fit) => {
                let v = fit.nll;
                if best.as_ref().map_or(true, |b| v < b.0) {
                    *best = Some((v, rho, fit));
                }
                v
            }
            Err(_) => f64::INFINITY,
        }
    };

    let z0 = [logit(cfg.rho_init_frac), 0.0];
    let opts = NelderMeadOptions {
        f_tol: cfg.nm_tol,
        max_evals: cfg.nm_max_eval,
        ..Default::default()
    };
    let nm = nelder_mead::minimize(|z| objective(z, &mut best), &z0, &[0.5, 0.5], &opts);

    let Some((nll, rho, poisson)) = best else {
        return Err(Error::FitFailure(
            "IWLS failed at every evaluated range pair".into(),
        ));
    };
    let design = distances.design(rho);
    let status = if nm.converged {
        FitStatus::Converged
    } else {
        FitStatus::Failed(format!(
            "range search used {} evaluations without meeting tolerance {}",
            nm.evals, cfg.nm_tol
        ))
    };
    Ok(ModelFit {
        poisson,
        rho,
        bounds,
        knots,
        design,
        nll,
        nll_start: nm.f_start,
        nm_evals: nm.evals,
        status,
    })
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_at_zero() {
        let b = LogitBox::new(2.0, 6.0).unwrap();
        assert_eq!(b.to_bounded(0.0), 4.0);
    }

    #[test]
    fn limits() {
        let b = LogitBox::new(2.0, 6.0).unwrap();
        assert!((b.to_bounded(50.0) - 6.0).abs() < 1e-12);
        assert!((b.to_bounded(-50.0) - 2.0).abs() < 1e-12);
        assert!(b.to_bounded(800.0).is_finite());
        assert!(b.to_bounded(-800.0).is_finite());
    }

    #[test]
    fn inverse_domain() {
        let b = LogitBox::new(0.0, 1.0).unwrap();
        assert!(matches!(b.to_unconstrained(1.0), Err(Error::DomainError { .. })));
        assert!(matches!(b.to_unconstrained(-0.1), Err(Error::DomainError { .. })));
        assert!(LogitBox::new(1.0, 1.0).is_err());
    }

    #[test]
    fn direct_bounds_rule() {
        let knots = KnotSet {
            coarse: vec![],
            fine: vec![],
            min_dist_coarse: Some(4.0),
            min_dist_fine: Some(1.0),
            seed: 0,
        };
        let b = rho_bounds(&knots, 100.0);
        assert_eq!((b.fine_lo, b.fine_hi, b.coarse_hi), (0.5, 3.0, 12.0));
    }

    #[test]
    fn fine_spacing_wider_than_coarse_still_feasible() {
        let knots = KnotSet {
            coarse: vec![],
            fine: vec![],
            min_dist_coarse: Some(1.0),
            min_dist_fine: Some(2.0),
            seed: 0,
        };
        let b = rho_bounds(&knots, 100.0);
        assert!(b.coarse_hi > b.fine_hi);
        for z in [-20.0, 0.0, 20.0] {
            let fine = b.fine_box().to_bounded(z);
            assert!(b.coarse_box(fine).hi > b.coarse_box(fine).lo);
        }
    }

    #[test]
    fn single_knot_uses_diameter() {
        let knots = KnotSet::new(
            vec![Point2::new(0.0, 0.0), Point2::new(3.0, 4.0)],
            vec![Point2::new(1.0, 1.0)],
            0,
        )
        .unwrap();
        let b = rho_bounds(&knots, 14.0);
        assert_eq!(b.d_fine, 14.0);
        assert_eq!(b.d_coarse, 5.0);
    }
}
