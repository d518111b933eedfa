//! Independent oracles and cohort generators for the acceptance checks.
//!
//! Everything here recomputes its quantity from first principles (explicit
//! risk sets, grid search, direct formulas) so the library is compared
//! against a second route rather than against itself.

use crisk::cohort::{EventKind, Stratum, Subject};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn subject(i: usize, entry: f64, exit: f64, event: EventKind, weight: f64, x: f64) -> Subject {
    Subject {
        id: format!("s{i}"),
        household_id: format!("h{i}"),
        stratum: Stratum::NhwMen,
        entry_age: entry,
        exit_age: exit,
        event,
        covariates: vec![x],
        base_weight: weight,
        analysis_weight: weight,
    }
}

/// Breslow-tie weighted partial log likelihood for the dementia cause,
/// summed over explicit risk sets (at risk at t iff entry < t <= exit).
pub fn brute_partial_loglik(subjects: &[Subject], x: &[f64], beta: f64) -> f64 {
    let mut ages: Vec<f64> = subjects
        .iter()
        .filter(|s| s.event == EventKind::Dementia && s.analysis_weight > 0.0)
        .map(|s| s.exit_age)
        .collect();
    ages.sort_by(f64::total_cmp);
    ages.dedup();
    let mut ll = 0.0;
    for &t in &ages {
        let mut event_lin = 0.0;
        let mut event_w = 0.0;
        let mut risk = 0.0;
        for (i, s) in subjects.iter().enumerate() {
            let w = s.analysis_weight;
            if w <= 0.0 {
                continue;
            }
            if s.event == EventKind::Dementia && s.exit_age == t {
                event_lin += w * beta * x[i];
                event_w += w;
            }
            if s.entry_age < t && t <= s.exit_age {
                risk += w * (beta * x[i]).exp();
            }
        }
        ll += event_lin - event_w * risk.ln();
    }
    ll
}

/// Maximize a concave 1-D function: coarse grid scan, then golden-section
/// refinement of the best bracket down to 1e-11.
pub fn grid_polish_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let steps = 600usize;
    let width = (hi - lo) / steps as f64;
    let mut best_k = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for k in 0..=steps {
        let v = f(lo + width * k as f64);
        if v > best_v {
            best_v = v;
            best_k = k;
        }
    }
    let mut a = lo + width * best_k.saturating_sub(1) as f64;
    let mut b = (lo + width * (best_k + 1) as f64).min(hi);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > 1e-11 {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

/// Small weighted instance with a binary covariate, tied ages, left
/// truncation, and competing deaths. Draws are screened so the fit is well
/// posed: dementia events occur at both covariate levels, some dementia
/// risk set mixes both levels (nonzero information), and a coarse scan of
/// the likelihood puts its maximum well inside [-6, 6] (no separation).
pub fn small_cox_instance(rng: &mut ChaCha8Rng) -> (Vec<Subject>, Vec<f64>) {
    loop {
        let n = rng.random_range(6..=10);
        let mut subjects = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        for i in 0..n {
            let entry: f64 = 50.0 + rng.random_range(0.0..8.0);
            let mut exit = entry + 0.3 + rng.random_range(0.0..12.0);
            if rng.random_bool(0.35) {
                exit = (exit * 2.0).round() / 2.0;
                if exit <= entry {
                    exit = entry + 0.5;
                }
            }
            let event = match rng.random_range(0..10) {
                0..=4 => EventKind::Dementia,
                5..=6 => EventKind::Death,
                _ => EventKind::Censored,
            };
            let weight = rng.random_range(0.5..2.0);
            let xi = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            subjects.push(subject(i, entry, exit, event, weight, xi));
            x.push(xi);
        }
        let pos = subjects
            .iter()
            .zip(&x)
            .any(|(s, &v)| s.event == EventKind::Dementia && v > 0.0);
        let neg = subjects
            .iter()
            .zip(&x)
            .any(|(s, &v)| s.event == EventKind::Dementia && v < 0.0);
        if !(pos && neg) {
            continue;
        }
        let mixed_risk_set = subjects.iter().any(|di| {
            di.event == EventKind::Dementia && {
                let t = di.exit_age;
                let has = |sign: f64| {
                    subjects
                        .iter()
                        .zip(&x)
                        .any(|(s, &v)| s.entry_age < t && t <= s.exit_age && v * sign > 0.0)
                };
                has(1.0) && has(-1.0)
            }
        });
        if !mixed_risk_set {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0.0;
        for k in 0..=48 {
            let b = -6.0 + 0.25 * k as f64;
            let ll = brute_partial_loglik(&subjects, &x, b);
            if ll > best {
                best = ll;
                arg = b;
            }
        }
        if arg.abs() <= 4.5 {
            return (subjects, x);
        }
    }
}

/// Cohort with dementia and censoring only, for the reduction check.
pub fn death_free_cohort(rng: &mut ChaCha8Rng) -> (Vec<Subject>, Vec<f64>) {
    loop {
        let n = rng.random_range(30..=80);
        let mut subjects = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        for i in 0..n {
            let entry: f64 = 50.0 + rng.random_range(0.0..10.0);
            let mut exit = entry + 0.2 + rng.random_range(0.0..20.0);
            if rng.random_bool(0.3) {
                exit = exit.round();
                if exit <= entry {
                    exit = entry + 1.0;
                }
            }
            let event = if rng.random_bool(0.6) {
                EventKind::Dementia
            } else {
                EventKind::Censored
            };
            let weight = rng.random_range(0.5..2.0);
            let xi = rng.random_range(-1.5..1.5);
            subjects.push(subject(i, entry, exit, event, weight, xi));
            x.push(xi);
        }
        let events = subjects.iter().filter(|s| s.event == EventKind::Dementia).count();
        if events >= 5 {
            return (subjects, x);
        }
    }
}

/// Messy cohort for estimator identities: tied ages, staggered entries,
/// competing deaths, and spread-out weights. No covariates.
pub fn random_cohort(rng: &mut ChaCha8Rng, n_max: usize) -> Vec<Subject> {
    loop {
        let n = rng.random_range(20..=n_max);
        let mut subjects = Vec::with_capacity(n);
        for i in 0..n {
            let entry: f64 = 50.0 + rng.random_range(0.0..15.0);
            let mut exit = entry + 0.1 + rng.random_range(0.0..25.0);
            if rng.random_bool(0.4) {
                exit = exit.round();
                if exit <= entry {
                    exit = entry + 1.0;
                }
            }
            let event = match rng.random_range(0..10) {
                0..=3 => EventKind::Dementia,
                4..=6 => EventKind::Death,
                _ => EventKind::Censored,
            };
            let weight = rng.random_range(0.25..3.0);
            subjects.push(subject(i, entry, exit, event, weight, 0.0));
        }
        let has_event = subjects.iter().any(|s| s.event != EventKind::Censored);
        if has_event {
            return subjects;
        }
    }
}
