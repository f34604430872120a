mod common;

use common::{brute_force_mle, glm_problem, literal_sigma, max_rel_diff, naive_nll};
use ipp_abundance::glm::{fisher_information, invert_information, iwls, neg_log_lik};
use nalgebra::{DMatrix, DVector};

#[test]
fn nll_matches_direct_summation() {
    for seed in 0..20 {
        let p = glm_problem(seed, 30, 4, false);
        let theta = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.4]);
        let got = neg_log_lik(&p.x, &p.y, &p.offsets, &theta).unwrap();
        let want = naive_nll(&p, theta.as_slice());
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn fisher_matches_triple_loop() {
    let p = glm_problem(7, 40, 5, false);
    let mu = DVector::from_fn(40, |i, _| 0.5 + i as f64 * 0.1);
    let m = fisher_information(&p.x, &mu);
    for a in 0..5 {
        for b in 0..5 {
            let mut s = 0.0;
            for i in 0..40 {
                s += p.x[(i, a)] * p.x[(i, b)] * mu[i];
            }
            assert!((m[(a, b)] - s).abs() <= 1e-12 * s.abs().max(1.0));
            assert_eq!(m[(a, b)], m[(b, a)]);
        }
    }
}

#[test]
fn score_vanishes_at_convergence() {
    for seed in 0..10 {
        let p = glm_problem(seed, 60, 4, false);
        let fit = iwls(&p.x, &p.y, &p.offsets).unwrap();
        assert!(fit.converged);
        let resid = DVector::from_iterator(60, p.y.iter().zip(fit.mu_hat.iter()).map(|(y, m)| y - m));
        let score = p.x.transpose() * resid;
        let tol = 1e-6 * p.y.iter().sum::<f64>();
        assert!(score.amax() <= tol, "seed {seed}: score {}", score.amax());
    }
}

#[test]
fn iwls_matches_simplex_oracle() {
    for seed in 100..105 {
        let p = glm_problem(seed, 50, 5, false);
        let fit = iwls(&p.x, &p.y, &p.offsets).unwrap();
        let oracle = brute_force_mle(&p);
        for (a, b) in fit.theta.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-6, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn iwls_invariant_to_row_order() {
    let p = glm_problem(3, 50, 4, false);
    let fit = iwls(&p.x, &p.y, &p.offsets).unwrap();
    let order: Vec<usize> = (0..50).map(|i| (i * 17 + 5) % 50).collect();
    let x = DMatrix::from_fn(50, 4, |i, j| p.x[(order[i], j)]);
    let y: Vec<f64> = order.iter().map(|&i| p.y[i]).collect();
    let off: Vec<f64> = order.iter().map(|&i| p.offsets[i]).collect();
    let shuffled = iwls(&x, &y, &off).unwrap();
    for (a, b) in fit.theta.iter().zip(shuffled.theta.iter()) {
        assert!((a - b).abs() <= 1e-8);
    }
}

#[test]
fn inverse_information_matches_literal_formula_equal_areas() {
    for seed in 0..20 {
        let p = glm_problem(seed, 40, 4, true);
        let fit = iwls(&p.x, &p.y, &p.offsets).unwrap();
        let sigma = invert_information(&fisher_information(&p.x, &fit.mu_hat), 1e12).unwrap();
        let want = literal_sigma(&p.x, p.areas[0], fit.theta.as_slice());
        assert!(max_rel_diff(&sigma, &want) <= 1e-10, "seed {seed}");
        let id = &sigma * fisher_information(&p.x, &fit.mu_hat);
        assert!((id - DMatrix::identity(4, 4)).amax() <= 1e-8);
    }
}

#[test]
fn intercept_only_information_is_total_mean() {
    let p = glm_problem(11, 25, 1, false);
    let fit = iwls(&p.x, &p.y, &p.offsets).unwrap();
    let sigma = invert_information(&fisher_information(&p.x, &fit.mu_hat), 1e12).unwrap();
    let total: f64 = fit.mu_hat.iter().sum();
    assert!((sigma[(0, 0)] - 1.0 / total).abs() <= 1e-12 / total);
}
