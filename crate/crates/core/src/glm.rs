//! Poisson log-linear regression with a log-area offset.
//!
//! The model is `log E[y_i] = log|B_i| + x_i'θ`. Estimation is by iteratively
//! weighted least squares, written in Newton form: each step solves
//! `(X'WX) δ = X'(y - μ)` with `W = diag(μ)`. Steps that would raise the
//! negative log-likelihood are halved.
//!
//! All linear solves go through a symmetric eigendecomposition of the
//! diagonally equilibrated information matrix, so near-singular systems are
//! detected by condition number rather than silently regularised.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IwlsConfig {
    /// Relative NLL change `|Δℓ| / (|ℓ| + 1)` that ends iteration.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Largest condition number accepted for the information matrix.
    pub max_condition: f64,
}

impl Default for IwlsConfig {
    fn default() -> Self {
        IwlsConfig {
            tol: 1e-10,
            max_iter: 50,
            max_halvings: 10,
            max_condition: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonFit {
    pub theta: DVector<f64>,
    pub nll: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Fitted plot means `|B_i| exp(x_i'θ)`.
    pub mu_hat: DVector<f64>,
    /// Numerical rank of the information matrix at the solution.
    pub rank: usize,
}

/// Negative log-likelihood `Σ |B_i| e^{η_i} - y_i log|B_i| - y_i η_i`, `η = Xθ`.
pub fn neg_log_lik(
    x: &DMatrix<f64>,
    y: &[f64],
    offsets: &[f64],
    theta: &DVector<f64>,
) -> Result<f64> {
    check_shapes(x, y, offsets)?;
    if theta.len() != x.ncols() {
        return Err(Error::InvalidArgument(format!(
            "theta has length {}, design has {} columns",
            theta.len(),
            x.ncols()
        )));
    }
    let eta = x * theta;
    let v = nll_from_eta(&eta, y, offsets);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericOverflow("negative log-likelihood"))
    }
}

fn nll_from_eta(eta: &DVector<f64>, y: &[f64], offsets: &[f64]) -> f64 {
    eta.iter()
        .zip(y)
        .zip(offsets)
        .map(|((&e, &yi), &o)| (o + e).exp() - yi * o - yi * e)
        .sum()
}

fn check_shapes(x: &DMatrix<f64>, y: &[f64], offsets: &[f64]) -> Result<()> {
    if x.nrows() != y.len() || y.len() != offsets.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: X has {} rows, y {}, offsets {}",
            x.nrows(),
            y.len(),
            offsets.len()
        )));
    }
    if y.iter().any(|&v| !(v >= 0.0) || v.fract() != 0.0) {
        return Err(Error::InvalidArgument(
            "counts must be non-negative integers".into(),
        ));
    }
    Ok(())
}

/// `X' diag(μ) X`.
pub fn fisher_information(x: &DMatrix<f64>, mu_hat: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, &m) in mu_hat.iter().enumerate() {
        let s = m.sqrt();
        xw.row_mut(i).scale_mut(s);
    }
    xw.tr_mul(&xw)
}

/// Information restricted to the listed rows.
pub fn fisher_information_rows(
    x: &DMatrix<f64>,
    mu_hat: &DVector<f64>,
    rows: &[usize],
) -> DMatrix<f64> {
    let q = x.ncols();
    let mut xw = DMatrix::zeros(rows.len(), q);
    for (r, &i) in rows.iter().enumerate() {
        let s = mu_hat[i].sqrt();
        for j in 0..q {
            xw[(r, j)] = x[(i, j)] * s;
        }
    }
    xw.tr_mul(&xw)
}

/// Eigendecomposition of `D M D` with `D = diag(M)^{-1/2}`.
struct Equilibrated {
    scale: DVector<f64>,
    eigen: SymmetricEigen<f64, nalgebra::Dyn>,
    condition: f64,
}

impl Equilibrated {
    fn new(m: &DMatrix<f64>) -> Result<Self> {
        let q = m.nrows();
        let mut scale = DVector::zeros(q);
        for j in 0..q {
            let d = m[(j, j)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::SingularSystem {
                    condition: f64::INFINITY,
                });
            }
            scale[j] = 1.0 / d.sqrt();
        }
        let mut scaled = m.clone();
        for j in 0..q {
            for i in 0..q {
                scaled[(i, j)] *= scale[i] * scale[j];
            }
        }
        let eigen = SymmetricEigen::new(scaled);
        let raw = m.clone().symmetric_eigenvalues();
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        Ok(Equilibrated {
            scale,
            eigen,
            condition,
        })
    }

    fn rank(&self, max_condition: f64) -> usize {
        let hi = self.eigen.eigenvalues.max();
        self.eigen
            .eigenvalues
            .iter()
            .filter(|&&v| v > hi / max_condition)
            .count()
    }

    fn check(&self, max_condition: f64) -> Result<()> {
        if self.condition.is_finite() && self.condition <= max_condition {
            Ok(())
        } else {
            Err(Error::SingularSystem {
                condition: self.condition,
            })
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let v = &self.eigen.eigenvectors;
        let b = rhs.component_mul(&self.scale);
        let mut t = v.tr_mul(&b);
        for (ti, &l) in t.iter_mut().zip(self.eigen.eigenvalues.iter()) {
            *ti /= l;
        }
        (v * t).component_mul(&self.scale)
    }

    fn inverse(&self) -> DMatrix<f64> {
        let v = &self.eigen.eigenvectors;
        let mut vl = v.clone();
        for (j, &l) in self.eigen.eigenvalues.iter().enumerate() {
            vl.column_mut(j).scale_mut(1.0 / l);
        }
        let mut inv = vl * v.transpose();
        let q = inv.nrows();
        for j in 0..q {
            for i in 0..q {
                inv[(i, j)] *= self.scale[i] * self.scale[j];
            }
        }
        // exact symmetry
        for j in 0..q {
            for i in (j + 1)..q {
                let m = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = m;
                inv[(j, i)] = m;
            }
        }
        inv
    }
}

/// Inverse of a symmetric positive definite information matrix, refusing
/// systems whose equilibrated condition number exceeds `max_condition`.
pub fn invert_information(m: &DMatrix<f64>, max_condition: f64) -> Result<DMatrix<f64>> {
    let eq = Equilibrated::new(m)?;
    eq.check(max_condition)?;
    Ok(eq.inverse())
}

/// Condition number of the equilibrated matrix.
pub fn information_condition(m: &DMatrix<f64>) -> f64 {
    Equilibrated::new(m).map_or(f64::INFINITY, |e| e.condition)
}

pub fn iwls(x: &DMatrix<f64>, y: &[f64], offsets: &[f64]) -> Result<PoissonFit> {
    iwls_with(x, y, offsets, &IwlsConfig::default(), None)
}

/// Default start: intercept at the pooled log-rate, basis coefficients zero.
const POLISH_STEPS: usize = 3;

pub fn default_start(q: usize, y: &[f64], offsets: &[f64]) -> DVector<f64> {
    let total_y: f64 = y.iter().sum();
    let total_area: f64 = offsets.iter().map(|o| o.exp()).sum();
    let mut theta = DVector::zeros(q);
    theta[0] = ((total_y + 0.5) / total_area).ln();
    theta
}

pub fn iwls_with(
    x: &DMatrix<f64>,
    y: &[f64],
    offsets: &[f64],
    cfg: &IwlsConfig,
    start: Option<&DVector<f64>>,
) -> Result<PoissonFit> {
    check_shapes(x, y, offsets)?;
    let (n, q) = x.shape();
    if n < q {
        return Err(Error::InvalidArgument(format!(
            "{n} observations cannot identify {q} coefficients"
        )));
    }
    let y_vec = DVector::from_column_slice(y);
    let total_y: f64 = y.iter().sum();
    let score_tol = 1e-6 * total_y;

    let mut theta = match start {
        Some(s) if s.len() == q => s.clone(),
        _ => default_start(q, y, offsets),
    };
    let mut eta = x * &theta;
    let mut mu = mean_from_eta(&eta, offsets);
    let mut nll = nll_from_eta(&eta, y, offsets);
    if !nll.is_finite() {
        return Err(Error::NumericOverflow("starting negative log-likelihood"));
    }

    for iter in 1..=cfg.max_iter {
        let info = fisher_information(x, &mu);
        let eq = Equilibrated::new(&info)?;
        eq.check(cfg.max_condition)?;
        let score = x.tr_mul(&(&y_vec - &mu));
        let delta = eq.solve(&score);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let cand = &theta + &delta * step;
            let cand_eta = x * &cand;
            let cand_nll = nll_from_eta(&cand_eta, y, offsets);
            if cand_nll.is_finite() && cand_nll <= nll {
                accepted = Some((cand, cand_eta, cand_nll));
                break;
            }
            step *= 0.5;
        }

        let Some((cand, cand_eta, cand_nll)) = accepted else {
            // no descent left: fine if we are already at the optimum
            let score_max = score.amax();
            if score_max <= score_tol {
                return Ok(finish(theta, nll, iter, true, mu, &eq, cfg));
            }
            return Err(Error::NotConverged {
                iterations: iter,
                best_theta: theta.iter().copied().collect(),
            });
        };

        let change = (nll - cand_nll).abs() / (cand_nll.abs() + 1.0);
        theta = cand;
        eta = cand_eta;
        nll = cand_nll;
        mu = mean_from_eta(&eta, offsets);

        if change < cfg.tol {
            let score = x.tr_mul(&(&y_vec - &mu));
            if score.amax() <= score_tol {
                let mut eq = Equilibrated::new(&fisher_information(x, &mu))?;
                eq.check(cfg.max_condition)?;
                // a relative NLL change of tol still leaves θ off by ~sqrt(tol);
                // full Newton steps close the gap, accepted up to NLL rounding
                let mut score = score;
                for _ in 0..POLISH_STEPS {
                    let delta = eq.solve(&score);
                    let cand = &theta + &delta;
                    let cand_eta = x * &cand;
                    let cand_nll = nll_from_eta(&cand_eta, y, offsets);
                    if !(cand_nll.is_finite() && cand_nll <= nll + 1e-13 * (nll.abs() + 1.0)) {
                        break;
                    }
                    let size = delta.amax() / (1.0 + theta.amax());
                    theta = cand;
                    nll = cand_nll;
                    mu = mean_from_eta(&cand_eta, offsets);
                    eq = Equilibrated::new(&fisher_information(x, &mu))?;
                    eq.check(cfg.max_condition)?;
                    if size <= 1e-15 {
                        break;
                    }
                    score = x.tr_mul(&(&y_vec - &mu));
                }
                return Ok(finish(theta, nll, iter, true, mu, &eq, cfg));
            }
        }
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iter,
        best_theta: theta.iter().copied().collect(),
    })
}

fn finish(
    theta: DVector<f64>,
    nll: f64,
    iterations: usize,
    converged: bool,
    mu_hat: DVector<f64>,
    eq: &Equilibrated,
    cfg: &IwlsConfig,
) -> PoissonFit {
    PoissonFit {
        rank: eq.rank(cfg.max_condition),
        theta,
        nll,
        iterations,
        converged,
        mu_hat,
    }
}

fn mean_from_eta(eta: &DVector<f64>, offsets: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        eta.len(),
        eta.iter().zip(offsets).map(|(&e, &o)| (o + e).exp()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn nll_zero_theta_zero_counts() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 1.0, 0.5, 1.0, 0.9]);
        let v = neg_log_lik(&x, &[0.0; 3], &[0.0; 3], &DVector::zeros(2)).unwrap();
        assert_eq!(v, 3.0);
    }

    #[test]
    fn nll_single_observation() {
        let v = neg_log_lik(&ones(1), &[1.0], &[0.0], &DVector::zeros(1)).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn nll_overflow_reported() {
        let v = neg_log_lik(&ones(1), &[1.0], &[0.0], &DVector::from_element(1, 1e6));
        assert_eq!(v, Err(Error::NumericOverflow("negative log-likelihood")));
    }

    #[test]
    fn intercept_only_closed_form() {
        let fit = iwls(&ones(3), &[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
        assert!((fit.theta[0] - 2f64.ln()).abs() < 1e-12);
        assert!(fit.converged);
        assert_eq!(fit.rank, 1);
    }

    #[test]
    fn all_zero_counts_do_not_converge() {
        let r = iwls(&ones(4), &[0.0; 4], &[0.0; 4]);
        assert!(matches!(
            r,
            Err(Error::NotConverged { .. }) | Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn collinear_design_is_singular() {
        let x = DMatrix::from_row_slice(4, 3, &[
            1.0, 0.1, 0.2, //
            1.0, 0.4, 0.8, //
            1.0, 0.3, 0.6, //
            1.0, 0.9, 1.8,
        ]);
        let r = iwls(&x, &[1.0, 2.0, 0.0, 4.0], &[0.0; 4]);
        assert!(matches!(r, Err(Error::SingularSystem { .. })), "{r:?}");
    }

    #[test]
    fn rejects_non_integer_counts() {
        assert!(iwls(&ones(2), &[1.5, 2.0], &[0.0; 2]).is_err());
    }

    #[test]
    fn information_intercept_only_is_sum() {
        let mu = DVector::from_vec(vec![0.5, 1.5, 2.0]);
        let m = fisher_information(&ones(3), &mu);
        assert_eq!(m[(0, 0)], 4.0);
    }

    #[test]
    fn information_is_symmetric() {
        let x = DMatrix::from_fn(7, 4, |i, j| ((i * 3 + j * 5) % 7) as f64 / 7.0 + 0.1);
        let mu = DVector::from_fn(7, |i, _| 0.3 + i as f64);
        let m = fisher_information(&x, &mu);
        assert_eq!(m, m.transpose());
        let all: Vec<usize> = (0..7).collect();
        assert_eq!(fisher_information_rows(&x, &mu, &all), m);
    }
}
