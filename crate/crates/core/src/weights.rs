//! Selection weighting: propensity model for genetic-subsample inclusion and
//! inverse-propensity analysis weights.
//!
//! The propensity model is a weighted logistic regression fit by iteratively
//! reweighted least squares. Analysis weights are `base_weight / p_hat` for
//! included subjects (zero for excluded), capped at an upper quantile to guard
//! against variance blow-up from tiny fitted probabilities.

use thiserror::Error;

use crate::linalg::{self, LinalgError};

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("feature matrix has {got} entries, expected {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("need more rows than features: n={n}, k={k}")]
    TooFewRows { n: usize, k: usize },
    #[error("inclusion flags are all one class")]
    OneClass,
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("base weight at index {index} is not positive and finite")]
    BadWeight { index: usize },
    #[error("quasi-complete separation: fitted probabilities pinned at 0/1 with diverging coefficients")]
    Separation,
    #[error("singular design matrix")]
    SingularDesign(#[from] LinalgError),
    #[error("propensity model did not converge")]
    NotConverged,
    #[error("truncation quantile must lie in (0, 1], got {0}")]
    BadQuantile(f64),
}

/// Fitted inclusion-propensity model. `coefficients[0]` is the intercept.
#[derive(Debug, Clone)]
pub struct PropensityModel {
    pub coefficients: Vec<f64>,
    pub fitted: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
}

const MAX_ITER: usize = 50;
const SCORE_TOL: f64 = 1e-8;
const REL_LL_TOL: f64 = 1e-10;
/// Coefficient magnitude treated as diverging when probabilities are pinned.
const SEPARATION_BETA: f64 = 30.0;
const SEPARATION_PROB: f64 = 1e-12;

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Weighted Bernoulli log-likelihood written against the linear predictor so
/// that pinned probabilities stay finite: w * (y*eta - ln(1+e^eta)).
fn loglik(eta: &[f64], included: &[bool], base_weights: &[f64]) -> f64 {
    let mut ll = 0.0;
    for i in 0..eta.len() {
        let y = if included[i] { 1.0 } else { 0.0 };
        let log1pe = if eta[i] > 30.0 {
            eta[i]
        } else {
            eta[i].exp().ln_1p()
        };
        ll += base_weights[i] * (y * eta[i] - log1pe);
    }
    ll
}

/// Fit a weighted logit of `included` on `features` (row-major n×k, intercept
/// added internally) by Newton/IRLS.
///
/// Converges when the score max-norm drops below 1e-8 or the relative
/// log-likelihood change drops below 1e-10; hard cap of 50 iterations.
pub fn fit_propensity(
    features: &[f64],
    k: usize,
    included: &[bool],
    base_weights: &[f64],
) -> Result<PropensityModel, WeightError> {
    let n = included.len();
    if features.len() != n * k {
        return Err(WeightError::LengthMismatch { got: features.len(), want: n * k });
    }
    if base_weights.len() != n {
        return Err(WeightError::LengthMismatch { got: base_weights.len(), want: n });
    }
    let p = k + 1;
    if n <= p {
        return Err(WeightError::TooFewRows { n, k });
    }
    for (i, &w) in base_weights.iter().enumerate() {
        if !(w.is_finite() && w > 0.0) {
            return Err(WeightError::BadWeight { index: i });
        }
    }
    for r in 0..n {
        for c in 0..k {
            if !features[r * k + c].is_finite() {
                return Err(WeightError::NonFiniteFeature { row: r, col: c });
            }
        }
    }
    if included.iter().all(|&y| y) || included.iter().all(|&y| !y) {
        return Err(WeightError::OneClass);
    }

    // Design row: [1, x_1, .., x_k].
    let row = |i: usize, j: usize| -> f64 {
        if j == 0 {
            1.0
        } else {
            features[i * k + (j - 1)]
        }
    };

    let mut beta = vec![0.0; p];
    let mut eta = vec![0.0; n];
    let mut ll = loglik(&eta, included, base_weights);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..MAX_ITER {
        iterations = iter + 1;
        // Score g = X' W (y - p) and information H = X' W p(1-p) X.
        let mut g = vec![0.0; p];
        let mut h = vec![0.0; p * p];
        for i in 0..n {
            let pi = sigmoid(eta[i]);
            let y = if included[i] { 1.0 } else { 0.0 };
            let wr = base_weights[i] * (y - pi);
            let wh = base_weights[i] * pi * (1.0 - pi);
            for a in 0..p {
                let xa = row(i, a);
                g[a] += wr * xa;
                for b in a..p {
                    h[a * p + b] += wh * xa * row(i, b);
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[a * p + b] = h[b * p + a];
            }
        }

        let score_max = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if score_max < SCORE_TOL {
            converged = true;
            iterations = iter;
            break;
        }

        let pinned = eta.iter().any(|&e| {
            let pr = sigmoid(e);
            pr < SEPARATION_PROB || pr > 1.0 - SEPARATION_PROB
        });
        let beta_max = beta.iter().fold(0.0_f64, |m, &v: &f64| m.max(v.abs()));
        if pinned && beta_max > SEPARATION_BETA {
            return Err(WeightError::Separation);
        }

        let step = linalg::solve_spd(&h, &g, p)?;

        // Halve the step when the likelihood would decrease; IRLS can
        // overshoot on poorly scaled features.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut eta_new = vec![0.0; n];
            for i in 0..n {
                let mut e = 0.0;
                for a in 0..p {
                    e += (beta[a] + scale * step[a]) * row(i, a);
                }
                eta_new[i] = e;
            }
            let ll_new = loglik(&eta_new, included, base_weights);
            if ll_new.is_finite() && ll_new >= ll {
                let rel = (ll_new - ll).abs() / ll.abs().max(1.0);
                for a in 0..p {
                    beta[a] += scale * step[a];
                }
                eta = eta_new;
                ll = ll_new;
                accepted = true;
                if rel < REL_LL_TOL {
                    converged = true;
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted || converged {
            if !accepted {
                converged = true; // stalled at a maximum the step cannot improve
            }
            break;
        }
    }

    let fitted: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
    Ok(PropensityModel { coefficients: beta, fitted, converged, iterations, loglik: ll })
}

/// Lower empirical quantile: the order statistic with 1-based index
/// ceil(q * m), clamped to the sample. `sorted` must be ascending, non-empty.
pub fn lower_quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let m = sorted.len();
    let idx = ((q * m as f64).ceil() as usize).clamp(1, m) - 1;
    sorted[idx]
}

/// Inverse-propensity analysis weights: `base_i / p_hat_i` for included
/// subjects, zero for excluded. Weights above the `truncation_quantile`
/// (computed over the included subjects' weights) are capped at that value.
pub fn compute_ipw(
    model: &PropensityModel,
    included: &[bool],
    base_weights: &[f64],
    truncation_quantile: f64,
) -> Result<Vec<f64>, WeightError> {
    if !model.converged {
        return Err(WeightError::NotConverged);
    }
    if !(truncation_quantile > 0.0 && truncation_quantile <= 1.0) {
        return Err(WeightError::BadQuantile(truncation_quantile));
    }
    let n = included.len();
    if model.fitted.len() != n {
        return Err(WeightError::LengthMismatch { got: model.fitted.len(), want: n });
    }
    if base_weights.len() != n {
        return Err(WeightError::LengthMismatch { got: base_weights.len(), want: n });
    }
    for (i, &w) in base_weights.iter().enumerate() {
        if !(w.is_finite() && w > 0.0) {
            return Err(WeightError::BadWeight { index: i });
        }
    }

    let mut weights = vec![0.0; n];
    let mut pool = Vec::new();
    for i in 0..n {
        if included[i] {
            weights[i] = base_weights[i] / model.fitted[i];
            pool.push(weights[i]);
        }
    }
    if !pool.is_empty() && truncation_quantile < 1.0 {
        pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cap = lower_quantile(&pool, truncation_quantile);
        for w in weights.iter_mut() {
            if *w > cap {
                *w = cap;
            }
        }
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(state: &mut u64) -> f64 {
        // Constants from Knuth's MMIX generator.
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*state >> 11) as f64) / ((1u64 << 53) as f64)
    }

    #[test]
    fn intercept_only_recovers_inclusion_rate() {
        let n = 100;
        let included: Vec<bool> = (0..n).map(|i| i < 30).collect();
        let w = vec![1.0; n];
        let m = fit_propensity(&[], 0, &included, &w).unwrap();
        assert!(m.converged);
        for &p in &m.fitted {
            assert!((p - 0.30).abs() < 1e-9, "p = {p}");
        }

        let half: Vec<bool> = (0..50).map(|i| i % 2 == 0).collect();
        let m = fit_propensity(&[], 0, &half, &vec![3.5; 50]).unwrap();
        for &p in &m.fitted {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    /// Independent log-likelihood for the oracle: no shared code with the
    /// IRLS path beyond arithmetic.
    fn naive_ll(b0: f64, b1: f64, x: &[f64], y: &[bool], w: &[f64]) -> f64 {
        let mut ll = 0.0;
        for i in 0..x.len() {
            let eta: f64 = b0 + b1 * x[i];
            let p = 1.0 / (1.0 + (-eta).exp());
            ll += w[i] * if y[i] { p.ln() } else { (1.0 - p).ln() };
        }
        ll
    }

    #[test]
    fn single_feature_matches_grid_and_polish_oracle() {
        let mut st = 0x8af1_u64;
        let n = 20;
        let x: Vec<f64> = (0..n).map(|_| lcg(&mut st) * 4.0 - 2.0).collect();
        let y: Vec<bool> = x.iter().map(|&v| lcg(&mut st) < 1.0 / (1.0 + (-(0.4 + 0.9 * v)).exp())).collect();
        let w: Vec<f64> = (0..n).map(|_| 0.5 + lcg(&mut st)).collect();

        let m = fit_propensity(&x, 1, &y, &w).unwrap();
        assert!(m.converged);

        // Dense grid over a plausible box, then coordinate-wise ternary polish.
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..81 {
            for j in 0..81 {
                let b0 = -4.0 + 0.1 * i as f64;
                let b1 = -4.0 + 0.1 * j as f64;
                let ll = naive_ll(b0, b1, &x, &y, &w);
                if ll > best.0 {
                    best = (ll, b0, b1);
                }
            }
        }
        let (_, mut b0, mut b1) = best;
        let mut span = 0.1;
        for _ in 0..200 {
            for dim in 0..2 {
                let eval = |v: f64, dim: usize| {
                    if dim == 0 { naive_ll(v, b1, &x, &y, &w) } else { naive_ll(b0, v, &x, &y, &w) }
                };
                let cur = if dim == 0 { b0 } else { b1 };
                let (mut lo, mut hi) = (cur - span, cur + span);
                for _ in 0..80 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    if eval(m1, dim) < eval(m2, dim) {
                        lo = m1;
                    } else {
                        hi = m2;
                    }
                }
                let v = 0.5 * (lo + hi);
                if dim == 0 { b0 = v } else { b1 = v }
            }
            span *= 0.7;
        }
        assert!((m.coefficients[0] - b0).abs() < 1e-6, "b0 {} vs {}", m.coefficients[0], b0);
        assert!((m.coefficients[1] - b1).abs() < 1e-6, "b1 {} vs {}", m.coefficients[1], b1);
    }

    #[test]
    fn analytic_score_matches_finite_differences() {
        let mut st = 77_u64;
        let n = 40;
        let x: Vec<f64> = (0..n).map(|_| lcg(&mut st) * 2.0 - 1.0).collect();
        let y: Vec<bool> = (0..n).map(|_| lcg(&mut st) < 0.4).collect();
        let w: Vec<f64> = (0..n).map(|_| 0.2 + 2.0 * lcg(&mut st)).collect();
        let beta = [0.3, -0.7];

        // Analytic score at beta.
        let mut g = [0.0; 2];
        for i in 0..n {
            let p = sigmoid(beta[0] + beta[1] * x[i]);
            let r = w[i] * (if y[i] { 1.0 } else { 0.0 } - p);
            g[0] += r;
            g[1] += r * x[i];
        }
        let h = 1e-6;
        for dim in 0..2 {
            let mut bp = beta;
            let mut bm = beta;
            bp[dim] += h;
            bm[dim] -= h;
            let fd = (naive_ll(bp[0], bp[1], &x, &y, &w) - naive_ll(bm[0], bm[1], &x, &y, &w)) / (2.0 * h);
            let rel = (g[dim] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-6, "dim {dim}: analytic {} fd {}", g[dim], fd);
        }
    }

    #[test]
    fn base_weight_rescaling_leaves_propensities_unchanged() {
        let mut st = 5150_u64;
        let n = 60;
        let x: Vec<f64> = (0..n).map(|_| lcg(&mut st) * 2.0 - 1.0).collect();
        let y: Vec<bool> = x.iter().map(|&v| lcg(&mut st) < sigmoid(0.2 + v)).collect();
        let w: Vec<f64> = (0..n).map(|_| 0.5 + lcg(&mut st)).collect();
        let w7: Vec<f64> = w.iter().map(|v| 7.0 * v).collect();

        let m1 = fit_propensity(&x, 1, &y, &w).unwrap();
        let m2 = fit_propensity(&x, 1, &y, &w7).unwrap();
        for i in 0..n {
            assert!((m1.fitted[i] - m2.fitted[i]).abs() < 1e-9);
        }

        let a1 = compute_ipw(&m1, &y, &w, 0.99).unwrap();
        let a2 = compute_ipw(&m2, &y, &w7, 0.99).unwrap();
        for i in 0..n {
            assert!((7.0 * a1[i] - a2[i]).abs() < 1e-7 * a2[i].abs().max(1.0));
        }
    }

    #[test]
    fn ipw_identity_and_arithmetic_cases() {
        let model = PropensityModel {
            coefficients: vec![0.0],
            fitted: vec![1.0; 4],
            converged: true,
            iterations: 0,
            loglik: 0.0,
        };
        let base = vec![1.5, 2.0, 3.0, 0.5];
        let inc = vec![true; 4];
        let w = compute_ipw(&model, &inc, &base, 0.99).unwrap();
        assert_eq!(w, base);

        let model = PropensityModel { fitted: vec![0.5; 4], ..model };
        let w = compute_ipw(&model, &inc, &vec![2.0; 4], 0.99).unwrap();
        assert_eq!(w, vec![4.0; 4]);
    }

    #[test]
    fn extreme_propensity_is_capped_at_quantile() {
        let n = 100;
        let mut fitted = vec![0.5; n];
        fitted[17] = 0.001;
        let model = PropensityModel {
            coefficients: vec![],
            fitted,
            converged: true,
            iterations: 1,
            loglik: 0.0,
        };
        let base = vec![1.0; n];
        let inc = vec![true; n];
        let w = compute_ipw(&model, &inc, &base, 0.99).unwrap();

        // 99 weights of 2.0 and one of 1000; the 99th-percentile order
        // statistic is 2.0, so the extreme weight collapses to it.
        let mut sorted: Vec<f64> = (0..n)
            .map(|i| if i == 17 { 1000.0 } else { 2.0 })
            .collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cap = lower_quantile(&sorted, 0.99);
        assert_eq!(w[17], cap);
        assert_eq!(w[17], 2.0);
        assert!(w.iter().all(|&v| v <= cap));
    }

    #[test]
    fn excluded_subjects_get_zero_weight() {
        let model = PropensityModel {
            coefficients: vec![],
            fitted: vec![0.25, 0.5, 0.8],
            converged: true,
            iterations: 1,
            loglik: 0.0,
        };
        let inc = vec![true, false, true];
        let w = compute_ipw(&model, &inc, &[1.0, 1.0, 2.0], 1.0).unwrap();
        assert_eq!(w[1], 0.0);
        assert!((w[0] - 4.0).abs() < 1e-12);
        assert!((w[2] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn monotone_in_propensity_before_capping() {
        let model = PropensityModel {
            coefficients: vec![],
            fitted: vec![0.2, 0.4, 0.6, 0.9],
            converged: true,
            iterations: 1,
            loglik: 0.0,
        };
        let inc = vec![true; 4];
        let w = compute_ipw(&model, &inc, &vec![1.0; 4], 1.0).unwrap();
        for i in 0..3 {
            assert!(w[i] >= w[i + 1]);
        }
    }

    #[test]
    fn unconverged_model_is_rejected() {
        let model = PropensityModel {
            coefficients: vec![],
            fitted: vec![0.5],
            converged: false,
            iterations: 50,
            loglik: 0.0,
        };
        match compute_ipw(&model, &[true], &[1.0], 0.99) {
            Err(WeightError::NotConverged) => {}
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn one_class_and_shape_errors() {
        match fit_propensity(&[], 0, &[true, true, true], &[1.0; 3]) {
            Err(WeightError::OneClass) => {}
            other => panic!("expected OneClass, got {other:?}"),
        }
        match fit_propensity(&[1.0, 2.0], 1, &[true, false, true], &[1.0; 3]) {
            Err(WeightError::LengthMismatch { .. }) => {}
            other => panic!("expected LengthMismatch, got {other:?}"),
        }
    }

    #[test]
    fn separation_is_detected() {
        // Perfectly separated: y = (x > 0), no overlap.
        let x: Vec<f64> = (0..12).map(|i| i as f64 - 5.5).collect();
        let y: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
        match fit_propensity(&x, 1, &y, &vec![1.0; 12]) {
            Err(WeightError::Separation) => {}
            Ok(m) => panic!("expected Separation, got converged={} beta={:?}", m.converged, m.coefficients),
            Err(other) => panic!("expected Separation, got {other:?}"),
        }
    }

    #[test]
    fn lower_quantile_order_statistic() {
        let xs: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        assert_eq!(lower_quantile(&xs, 0.99), 10.0);
        assert_eq!(lower_quantile(&xs, 0.5), 5.0);
        assert_eq!(lower_quantile(&xs, 0.05), 1.0);
        assert_eq!(lower_quantile(&xs, 1.0), 10.0);
    }
}
