#![allow(dead_code)]

use ipp_abundance::nelder_mead::{minimize, NelderMeadOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

/// Random Poisson regression problem with an intercept column.
pub struct GlmProblem {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub areas: Vec<f64>,
    pub offsets: Vec<f64>,
}

pub fn glm_problem(seed: u64, n: usize, q: usize, equal_areas: bool) -> GlmProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: DMatrix<f64> = DMatrix::from_fn(n, q, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
    let theta: DVector<f64> = DVector::from_fn(q, |j, _| if j == 0 { 1.5 } else { rng.random_range(-0.5..0.5) });
    let common = rng.random_range(0.5..2.0);
    let areas: Vec<f64> = (0..n)
        .map(|_| if equal_areas { common } else { rng.random_range(0.5..2.0) })
        .collect();
    let eta = &x * &theta;
    let y = (0..n)
        .map(|i| Poisson::new(areas[i] * eta[i].exp()).unwrap().sample(&mut rng))
        .collect();
    let offsets = areas.iter().map(|a| a.ln()).collect();
    GlmProblem { x, y, areas, offsets }
}

/// Poisson NLL written out term by term.
pub fn naive_nll(p: &GlmProblem, theta: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..p.y.len() {
        let mut eta = 0.0;
        for j in 0..theta.len() {
            eta += p.x[(i, j)] * theta[j];
        }
        total += p.areas[i] * eta.exp() - p.y[i] * p.areas[i].ln() - p.y[i] * eta;
    }
    total
}

/// Repeated simplex restarts on the raw NLL until the minimiser stops moving.
pub fn brute_force_mle(p: &GlmProblem) -> Vec<f64> {
    let q = p.x.ncols();
    let mut x = vec![0.0; q];
    let opts = NelderMeadOptions {
        f_tol: 1e-15,
        max_evals: 20_000,
        ..Default::default()
    };
    let mut step = 0.5;
    for _ in 0..60 {
        let r = minimize(|t| naive_nll(p, t), &x, &vec![step; q], &opts);
        let moved = r.x.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = r.x;
        step = (moved * 2.0).clamp(1e-7, 0.5);
        if moved < 1e-10 {
            break;
        }
    }
    x
}

/// `[|B| Σ x_i x_i' exp(x_i'θ)]⁻¹` by triple loop and Gauss-Jordan elimination.
pub fn literal_sigma(x: &DMatrix<f64>, area: f64, theta: &[f64]) -> Vec<Vec<f64>> {
    let (n, q) = x.shape();
    let mut m = vec![vec![0.0; q]; q];
    for i in 0..n {
        let mut eta = 0.0;
        for j in 0..q {
            eta += x[(i, j)] * theta[j];
        }
        let w = area * eta.exp();
        for a in 0..q {
            for b in 0..q {
                m[a][b] += x[(i, a)] * x[(i, b)] * w;
            }
        }
    }
    gauss_jordan_inverse(m)
}

pub fn gauss_jordan_inverse(mut m: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let q = m.len();
    let mut inv: Vec<Vec<f64>> = (0..q)
        .map(|i| (0..q).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..q {
        let pivot = (col..q)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let d = m[col][col];
        for j in 0..q {
            m[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..q {
            if r != col {
                let f = m[r][col];
                for j in 0..q {
                    m[r][j] -= f * m[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

pub fn max_rel_diff(a: &DMatrix<f64>, b: &[Vec<f64>]) -> f64 {
    let scale = b.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - b[i][j]).abs() / scale);
        }
    }
    worst
}
