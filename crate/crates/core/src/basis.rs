//! Two-scale Gaussian radial basis and the design matrix `X = [1 | Z_C | Z_F]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::knots::KnotSet;

/// Gaussian kernel `exp(-h² / rho)`.
pub fn gaussian_basis(h: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidRange(format!("rho must be positive, got {rho}")));
    }
    if !(h >= 0.0) {
        return Err(Error::InvalidArgument(format!("distance must be >= 0, got {h}")));
    }
    Ok((-h * h / rho).exp())
}

/// Range parameters for the coarse and fine scales (squared-length units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangePair {
    pub coarse: f64,
    pub fine: f64,
}

impl RangePair {
    pub fn new(coarse: f64, fine: f64) -> Result<Self> {
        if !(fine > 0.0) || !fine.is_finite() || !coarse.is_finite() {
            return Err(Error::InvalidRange(format!(
                "fine range must be positive and finite, got {fine}"
            )));
        }
        if !(coarse > fine) {
            return Err(Error::InvalidRange(format!(
                "coarse range {coarse} must exceed fine range {fine}"
            )));
        }
        Ok(RangePair { coarse, fine })
    }
}

/// Squared distances from each location to every knot. `rho` only enters
/// through `exp`, so these can be reused across range-parameter trials.
#[derive(Debug, Clone)]
pub struct KnotDistances {
    coarse: DMatrix<f64>,
    fine: DMatrix<f64>,
}

impl KnotDistances {
    pub fn new(locs: &[Point2], knots: &KnotSet) -> Self {
        let n = locs.len();
        let coarse =
            DMatrix::from_fn(n, knots.n_coarse(), |i, j| locs[i].distance_sq(&knots.coarse[j]));
        let fine = DMatrix::from_fn(n, knots.n_fine(), |i, j| locs[i].distance_sq(&knots.fine[j]));
        KnotDistances { coarse, fine }
    }

    pub fn n_rows(&self) -> usize {
        self.coarse.nrows()
    }

    pub fn design(&self, rho: RangePair) -> DesignMatrix {
        let n = self.n_rows();
        let (kc, kf) = (self.coarse.ncols(), self.fine.ncols());
        let mut x = DMatrix::zeros(n, 1 + kc + kf);
        x.column_mut(0).fill(1.0);
        for j in 0..kc {
            let src = self.coarse.column(j);
            let mut dst = x.column_mut(1 + j);
            for i in 0..n {
                dst[i] = (-src[i] / rho.coarse).exp();
            }
        }
        for j in 0..kf {
            let src = self.fine.column(j);
            let mut dst = x.column_mut(1 + kc + j);
            for i in 0..n {
                dst[i] = (-src[i] / rho.fine).exp();
            }
        }
        DesignMatrix {
            values: x,
            rho,
            n_coarse: kc,
            n_fine: kf,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    rho: RangePair,
    n_coarse: usize,
    n_fine: usize,
}

impl DesignMatrix {
    /// Wraps an arbitrary model matrix (intercept column first), e.g. for
    /// intercept-only fits.
    pub fn from_matrix(values: DMatrix<f64>, rho: RangePair) -> Self {
        let q = values.ncols();
        DesignMatrix {
            values,
            rho,
            n_coarse: q.saturating_sub(1),
            n_fine: 0,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn rho(&self) -> RangePair {
        self.rho
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }
}

pub fn design_matrix(locs: &[Point2], knots: &KnotSet, rho: RangePair) -> DesignMatrix {
    KnotDistances::new(locs, knots).design(rho)
}

/// Basis row `x(u)` for a single location.
pub fn basis_row(u: &Point2, knots: &KnotSet, rho: RangePair) -> DVector<f64> {
    let q = 1 + knots.n_coarse() + knots.n_fine();
    let mut row = DVector::zeros(q);
    row[0] = 1.0;
    for (j, k) in knots.coarse.iter().enumerate() {
        row[1 + j] = (-u.distance_sq(k) / rho.coarse).exp();
    }
    let off = 1 + knots.n_coarse();
    for (j, k) in knots.fine.iter().enumerate() {
        row[off + j] = (-u.distance_sq(k) / rho.fine).exp();
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knots() -> KnotSet {
        KnotSet::new(
            vec![Point2::new(2.0, 2.0), Point2::new(8.0, 7.0)],
            vec![
                Point2::new(4.0, 4.0),
                Point2::new(5.0, 6.5),
                Point2::new(6.0, 5.0),
            ],
            0,
        )
        .unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(gaussian_basis(0.0, 3.7).unwrap(), 1.0);
        let rho: f64 = 2.5;
        assert!((gaussian_basis(rho.sqrt(), rho).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((gaussian_basis(2.0, 1.0).unwrap() - 0.018_315_638_888_734_18).abs() < 1e-15);
    }

    #[test]
    fn kernel_rejects_bad_range() {
        assert!(matches!(gaussian_basis(1.0, 0.0), Err(Error::InvalidRange(_))));
        assert!(matches!(gaussian_basis(1.0, -2.0), Err(Error::InvalidRange(_))));
    }

    #[test]
    fn range_pair_ordering() {
        assert!(RangePair::new(4.0, 1.0).is_ok());
        assert!(RangePair::new(1.0, 1.0).is_err());
        assert!(RangePair::new(3.0, 0.0).is_err());
    }

    #[test]
    fn knot_coincident_location_gives_one() {
        let k = knots();
        let rho = RangePair::new(9.0, 2.0).unwrap();
        let x = design_matrix(&[k.fine[1]], &k, rho);
        assert_eq!(x.matrix()[(0, 0)], 1.0);
        assert_eq!(x.matrix()[(0, 1 + 2 + 1)], 1.0);
    }

    #[test]
    fn single_knot_shape() {
        let k = KnotSet::new(vec![Point2::new(0.0, 0.0)], vec![Point2::new(1.0, 1.0)], 0).unwrap();
        let x = design_matrix(&[Point2::new(0.5, 0.5)], &k, RangePair::new(2.0, 1.0).unwrap());
        assert_eq!((x.n_rows(), x.n_cols()), (1, 3));
    }

    #[test]
    fn entries_match_hand_distances() {
        let k = knots();
        let rho = RangePair::new(9.0, 2.0).unwrap();
        let locs = [Point2::new(3.3, 1.1), Point2::new(7.25, 6.0)];
        let x = design_matrix(&locs, &k, rho);
        let dx: f64 = 7.25 - 5.0;
        let dy: f64 = 6.0 - 6.5;
        let h = (dx * dx + dy * dy).sqrt();
        let expect = gaussian_basis(h, 2.0).unwrap();
        assert!((x.matrix()[(1, 4)] - expect).abs() < 1e-15);
        let h = ((3.3f64 - 8.0).powi(2) + (1.1f64 - 7.0).powi(2)).sqrt();
        assert!((x.matrix()[(0, 2)] - gaussian_basis(h, 9.0).unwrap()).abs() < 1e-15);
        let row = basis_row(&locs[1], &k, rho);
        assert_eq!(row, x.row(1));
    }

    #[test]
    fn entries_increase_with_range() {
        let k = knots();
        let locs = [Point2::new(1.0, 9.0), Point2::new(5.0, 5.0)];
        let a = design_matrix(&locs, &k, RangePair::new(5.0, 1.0).unwrap());
        let b = design_matrix(&locs, &k, RangePair::new(6.0, 1.5).unwrap());
        for i in 0..2 {
            for j in 1..a.n_cols() {
                assert!(b.matrix()[(i, j)] > a.matrix()[(i, j)]);
            }
        }
    }

    #[test]
    fn permuting_locations_permutes_rows() {
        let k = knots();
        let rho = RangePair::new(7.0, 1.2).unwrap();
        let locs = [
            Point2::new(1.0, 9.0),
            Point2::new(5.0, 5.0),
            Point2::new(9.0, 0.5),
        ];
        let perm = [locs[2], locs[0], locs[1]];
        let a = design_matrix(&locs, &k, rho);
        let b = design_matrix(&perm, &k, rho);
        assert_eq!(a.row(2), b.row(0));
        assert_eq!(a.row(0), b.row(1));
        assert_eq!(a.row(1), b.row(2));
    }
}
