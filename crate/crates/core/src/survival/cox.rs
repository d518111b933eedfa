//! Weighted Cox partial likelihood, Breslow ties, Newton-Raphson with
//! step-halving. The same engine drives the cause-specific model and the
//! Fine-Gray subdistribution model; the latter keeps competing-event
//! subjects in the risk set after their event with IPCW weight
//! w_i(t) = G(t-)/G(T_i-), G the censoring-distribution Kaplan-Meier.

use crate::cohort::EventKind;
use crate::linalg;

use super::{kaplan_meier, RiskSetIndex, SurvCurve, SurvivalError};

const MAX_ITER: usize = 25;
const REL_TOL: f64 = 1e-10;
const MAX_HALVINGS: usize = 30;

/// Which likelihood to maximize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    CauseSpecific,
    FineGray,
}

impl Model {
    pub fn label(self) -> &'static str {
        match self {
            Model::CauseSpecific => "cause-specific",
            Model::FineGray => "fine-gray",
        }
    }

    pub fn parse(s: &str) -> Option<Model> {
        match s.to_ascii_lowercase().as_str() {
            "cause-specific" | "causespecific" | "cox" => Some(Model::CauseSpecific),
            "fine-gray" | "finegray" | "fg" => Some(Model::FineGray),
            _ => None,
        }
    }
}

/// Single-covariate fit, the shape the bivariate pipeline consumes.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FitResult {
    pub beta: f64,
    pub hr: f64,
    pub robust_se: f64,
    pub ci95: (f64, f64),
    pub n: usize,
    pub n_events: usize,
    pub n_clusters: usize,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Multi-covariate fit (supported, not used by the default pipeline).
#[derive(Debug, Clone)]
pub struct MultiFit {
    pub beta: Vec<f64>,
    pub robust_se: Vec<f64>,
    pub n: usize,
    pub n_events: usize,
    pub n_clusters: usize,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl MultiFit {
    fn into_single(self) -> FitResult {
        let beta = self.beta[0];
        let se = self.robust_se[0];
        FitResult {
            beta,
            hr: beta.exp(),
            robust_se: se,
            ci95: ((beta - 1.96 * se).exp(), (beta + 1.96 * se).exp()),
            n: self.n,
            n_events: self.n_events,
            n_clusters: self.n_clusters,
            loglik: self.loglik,
            converged: self.converged,
            iterations: self.iterations,
        }
    }
}

/// Cause-specific Cox fit with one covariate; other causes censor at exit.
pub fn cox_fit(idx: &RiskSetIndex, x: &[f64], cause: EventKind) -> Result<FitResult, SurvivalError> {
    cox_fit_multi(idx, std::slice::from_ref(&x.to_vec()), cause).map(MultiFit::into_single)
}

pub fn cox_fit_multi(
    idx: &RiskSetIndex,
    columns: &[Vec<f64>],
    cause: EventKind,
) -> Result<MultiFit, SurvivalError> {
    Problem::new(idx, columns, cause, Model::CauseSpecific)?.fit()
}

/// Fine-Gray subdistribution fit with one covariate.
pub fn fine_gray_fit(
    idx: &RiskSetIndex,
    x: &[f64],
    cause: EventKind,
) -> Result<FitResult, SurvivalError> {
    fine_gray_fit_multi(idx, std::slice::from_ref(&x.to_vec()), cause).map(MultiFit::into_single)
}

pub fn fine_gray_fit_multi(
    idx: &RiskSetIndex,
    columns: &[Vec<f64>],
    cause: EventKind,
) -> Result<MultiFit, SurvivalError> {
    Problem::new(idx, columns, cause, Model::FineGray)?.fit()
}

/// Partial log-likelihood and score at a given beta (single covariate),
/// cause-specific model. Exposed so gradients can be checked against finite
/// differences of the same objective.
pub fn cox_partial_loglik(
    idx: &RiskSetIndex,
    x: &[f64],
    cause: EventKind,
    beta: f64,
) -> Result<(f64, f64), SurvivalError> {
    let col = x.to_vec();
    let p = Problem::new(idx, std::slice::from_ref(&col), cause, Model::CauseSpecific)?;
    let (ll, score, _) = p.eval_full(&[beta]);
    Ok((ll, score[0]))
}

/// Same for the Fine-Gray objective.
pub fn fine_gray_partial_loglik(
    idx: &RiskSetIndex,
    x: &[f64],
    cause: EventKind,
    beta: f64,
) -> Result<(f64, f64), SurvivalError> {
    let col = x.to_vec();
    let p = Problem::new(idx, std::slice::from_ref(&col), cause, Model::FineGray)?;
    let (ll, score, _) = p.eval_full(&[beta]);
    Ok((ll, score[0]))
}

/// Cluster-robust sandwich standard errors at a given beta:
/// I^{-1} (sum_h g_h g_h') I^{-1} with g_h the household-summed weighted
/// score residuals. Standalone so it can be exercised independently of the
/// optimizer.
pub fn robust_cluster_variance(
    idx: &RiskSetIndex,
    columns: &[Vec<f64>],
    cause: EventKind,
    model: Model,
    beta: &[f64],
) -> Result<Vec<f64>, SurvivalError> {
    let p = Problem::new(idx, columns, cause, model)?;
    let (_, _, info) = p.eval_full(beta);
    p.robust_se(beta, &info)
}

/// Carried-forward bookkeeping for Fine-Gray.
struct Carry {
    /// floored G(t_j^-) at each cause event age
    gleft: Vec<f64>,
    /// per subject: weight / floored G(T_i^-) if competing event, else 0
    scale: Vec<f64>,
}

struct Problem<'a> {
    idx: &'a RiskSetIndex,
    columns: &'a [Vec<f64>],
    p: usize,
    /// cause event ages, ascending
    te: Vec<f64>,
    /// per event age: subject indices with the cause event there
    events_at: Vec<Vec<usize>>,
    /// weighted cause-event mass per age
    dw: Vec<f64>,
    /// per age, weighted covariate sum over event subjects (E x p)
    sx: Vec<f64>,
    /// conventional risk window [lo, hi) into te, per subject
    lo: Vec<usize>,
    hi: Vec<usize>,
    carry: Option<Carry>,
    n_pos: usize,
    n_events: usize,
    n_clusters: usize,
}

impl<'a> Problem<'a> {
    fn new(
        idx: &'a RiskSetIndex,
        columns: &'a [Vec<f64>],
        cause: EventKind,
        model: Model,
    ) -> Result<Problem<'a>, SurvivalError> {
        let n = idx.len();
        let p = columns.len();
        assert!(p > 0, "at least one covariate column");
        for col in columns {
            if col.len() != n {
                return Err(SurvivalError::LengthMismatch { got: col.len(), want: n });
            }
        }
        // every covariate must vary across positive-weight subjects
        for col in columns {
            let mut first: Option<f64> = None;
            let mut constant = true;
            for (i, s) in idx.subjects().iter().enumerate() {
                if s.weight > 0.0 {
                    let v = col[i];
                    if !v.is_finite() {
                        return Err(SurvivalError::ZeroVariance);
                    }
                    match first {
                        None => first = Some(v),
                        Some(f) => {
                            if v != f {
                                constant = false;
                            }
                        }
                    }
                }
            }
            if constant {
                return Err(SurvivalError::ZeroVariance);
            }
        }

        let mut te = Vec::new();
        let mut events_at = Vec::new();
        let mut dw = Vec::new();
        let mut sx = Vec::new();
        for j in 0..idx.ages().len() {
            let mut mass = 0.0;
            let mut subs = Vec::new();
            for &i in idx.exits_at(j) {
                let s = &idx.subjects()[i];
                if s.event == cause {
                    mass += s.weight;
                    subs.push(i);
                }
            }
            if mass > 0.0 {
                te.push(idx.ages()[j]);
                dw.push(mass);
                let mut row = vec![0.0; p];
                for &i in &subs {
                    let w = idx.subjects()[i].weight;
                    for (a, col) in columns.iter().enumerate() {
                        row[a] += w * col[i];
                    }
                }
                sx.extend_from_slice(&row);
                events_at.push(subs);
            }
        }
        if te.is_empty() {
            return Err(SurvivalError::NoEvents);
        }

        let mut lo = Vec::with_capacity(n);
        let mut hi = Vec::with_capacity(n);
        for s in idx.subjects() {
            lo.push(te.partition_point(|&a| a <= s.entry));
            hi.push(te.partition_point(|&a| a <= s.exit));
        }

        let carry = if model == Model::FineGray {
            let competing = match cause {
                EventKind::Dementia => EventKind::Death,
                EventKind::Death => EventKind::Dementia,
                EventKind::Censored => unreachable!("censoring is not a modeled cause"),
            };
            let ghat = kaplan_meier(idx, &[EventKind::Censored]);
            let (ghat, degenerate) = floor_positive(ghat);
            if degenerate {
                log::warn!(
                    "censoring curve hits zero before the last event age; \
                     carried weights frozen at the last positive value"
                );
            }
            let gleft: Vec<f64> = te.iter().map(|&t| ghat.at_left(t)).collect();
            let scale: Vec<f64> = idx
                .subjects()
                .iter()
                .map(|s| {
                    if s.event == competing && s.weight > 0.0 {
                        s.weight / ghat.at_left(s.exit)
                    } else {
                        0.0
                    }
                })
                .collect();
            Some(Carry { gleft, scale })
        } else {
            None
        };

        let n_pos = idx.subjects().iter().filter(|s| s.weight > 0.0).count();
        let n_events = idx
            .subjects()
            .iter()
            .filter(|s| s.weight > 0.0 && s.event == cause)
            .count();
        let n_clusters = {
            let mut h: Vec<usize> = idx
                .subjects()
                .iter()
                .filter(|s| s.weight > 0.0)
                .map(|s| s.household)
                .collect();
            h.sort_unstable();
            h.dedup();
            h.len()
        };
        Ok(Problem { idx, columns, p, te, events_at, dw, sx, lo, hi, carry, n_pos, n_events, n_clusters })
    }

    fn n_ages(&self) -> usize {
        self.te.len()
    }

    /// Risk-set moment sums per event age via difference arrays:
    /// S0_j, S1_j (and S2_j when `second` is set), including the
    /// carried-forward Fine-Gray terms.
    fn age_sums(&self, beta: &[f64], second: bool) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        let e = self.n_ages();
        let p = self.p;
        let pp = p * p;
        let mut d0 = vec![0.0; e + 1];
        let mut d1 = vec![0.0; (e + 1) * p];
        let mut d2 = if second { vec![0.0; (e + 1) * pp] } else { Vec::new() };
        // carried parts accumulate from hi to the end; separate arrays since
        // they are rescaled by gleft at each age
        let (mut c0, mut c1, mut c2);
        let has_carry = self.carry.is_some();
        if has_carry {
            c0 = vec![0.0; e + 1];
            c1 = vec![0.0; (e + 1) * p];
            c2 = if second { vec![0.0; (e + 1) * pp] } else { Vec::new() };
        } else {
            c0 = Vec::new();
            c1 = Vec::new();
            c2 = Vec::new();
        }

        for (i, s) in self.idx.subjects().iter().enumerate() {
            if s.weight <= 0.0 {
                continue;
            }
            let (lo, hi) = (self.lo[i], self.hi[i]);
            let mut eta = 0.0;
            for (a, col) in self.columns.iter().enumerate() {
                eta += beta[a] * col[i];
            }
            let ex = eta.exp();
            let r = s.weight * ex;
            if lo < hi {
                d0[lo] += r;
                d0[hi] -= r;
                for (a, col) in self.columns.iter().enumerate() {
                    let v = r * col[i];
                    d1[lo * p + a] += v;
                    d1[hi * p + a] -= v;
                }
                if second {
                    for (a, ca) in self.columns.iter().enumerate() {
                        for (b, cb) in self.columns.iter().enumerate().skip(a) {
                            let v = r * ca[i] * cb[i];
                            d2[lo * pp + a * p + b] += v;
                            d2[hi * pp + a * p + b] -= v;
                        }
                    }
                }
            }
            if let Some(carry) = &self.carry {
                let c = carry.scale[i] * ex;
                if c > 0.0 && hi < e {
                    c0[hi] += c;
                    for (a, col) in self.columns.iter().enumerate() {
                        c1[hi * p + a] += c * col[i];
                    }
                    if second {
                        for (a, ca) in self.columns.iter().enumerate() {
                            for (b, cb) in self.columns.iter().enumerate().skip(a) {
                                c2[hi * pp + a * p + b] += c * ca[i] * cb[i];
                            }
                        }
                    }
                }
            }
        }

        // prefix-sum the difference arrays into cumulative risk sums
        let mut s0 = vec![0.0; e];
        let mut s1 = vec![0.0; e * p];
        let mut s2 = if second { vec![0.0; e * pp] } else { Vec::new() };
        let mut acc0 = 0.0;
        let mut acc1 = vec![0.0; p];
        let mut acc2 = vec![0.0; pp];
        let mut carry0 = 0.0;
        let mut carry1 = vec![0.0; p];
        let mut carry2 = vec![0.0; pp];
        for j in 0..e {
            acc0 += d0[j];
            s0[j] = acc0;
            for a in 0..p {
                acc1[a] += d1[j * p + a];
                s1[j * p + a] = acc1[a];
            }
            if second {
                for a in 0..p {
                    for b in a..p {
                        acc2[a * p + b] += d2[j * pp + a * p + b];
                        s2[j * pp + a * p + b] = acc2[a * p + b];
                    }
                }
            }
            if let Some(carry) = &self.carry {
                carry0 += c0[j];
                let g = carry.gleft[j];
                s0[j] += g * carry0;
                for a in 0..p {
                    carry1[a] += c1[j * p + a];
                    s1[j * p + a] += g * carry1[a];
                }
                if second {
                    for a in 0..p {
                        for b in a..p {
                            carry2[a * p + b] += c2[j * pp + a * p + b];
                            s2[j * pp + a * p + b] += g * carry2[a * p + b];
                        }
                    }
                }
            }
        }
        let _ = has_carry;
        (s0, s1, if second { Some(s2) } else { None })
    }

    /// Log-likelihood only (used during step-halving).
    fn eval_ll(&self, beta: &[f64]) -> f64 {
        let (s0, _, _) = self.age_sums(beta, false);
        self.ll_from_s0(beta, &s0)
    }

    fn ll_from_s0(&self, beta: &[f64], s0: &[f64]) -> f64 {
        let mut ll = 0.0;
        for j in 0..self.n_ages() {
            let mut sxb = 0.0;
            for &i in &self.events_at[j] {
                let s = &self.idx.subjects()[i];
                let mut eta = 0.0;
                for (a, col) in self.columns.iter().enumerate() {
                    eta += beta[a] * col[i];
                }
                sxb += s.weight * eta;
            }
            ll += sxb - self.dw[j] * s0[j].ln();
        }
        ll
    }

    /// Log-likelihood, score vector, information matrix.
    fn eval_full(&self, beta: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let p = self.p;
        let pp = p * p;
        let (s0, s1, s2) = self.age_sums(beta, true);
        let s2 = s2.unwrap();
        let ll = self.ll_from_s0(beta, &s0);
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; pp];
        for j in 0..self.n_ages() {
            let d = self.dw[j];
            let inv = 1.0 / s0[j];
            for a in 0..p {
                let xbar_a = s1[j * p + a] * inv;
                score[a] += self.sx[j * p + a] - d * xbar_a;
                for b in a..p {
                    let xbar_b = s1[j * p + b] * inv;
                    info[a * p + b] += d * (s2[j * pp + a * p + b] * inv - xbar_a * xbar_b);
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[a * p + b] = info[b * p + a];
            }
        }
        (ll, score, info)
    }

    /// Household-summed score residuals -> sandwich standard errors.
    fn robust_se(&self, beta: &[f64], info: &[f64]) -> Result<Vec<f64>, SurvivalError> {
        let p = self.p;
        let e = self.n_ages();
        let (s0, s1, _) = self.age_sums(beta, false);

        // prefix sums over event ages of rho_j and rho_j * xbar_j
        // (plus gleft-scaled versions for the carried tail)
        let mut p0 = vec![0.0; e + 1];
        let mut p1 = vec![0.0; (e + 1) * p];
        let (mut pg0, mut pg1) = if self.carry.is_some() {
            (vec![0.0; e + 1], vec![0.0; (e + 1) * p])
        } else {
            (Vec::new(), Vec::new())
        };
        for j in 0..e {
            let rho = self.dw[j] / s0[j];
            p0[j + 1] = p0[j] + rho;
            for a in 0..p {
                let xbar = s1[j * p + a] / s0[j];
                p1[(j + 1) * p + a] = p1[j * p + a] + rho * xbar;
            }
            if let Some(carry) = &self.carry {
                let g = carry.gleft[j];
                pg0[j + 1] = pg0[j] + rho * g;
                for a in 0..p {
                    let xbar = s1[j * p + a] / s0[j];
                    pg1[(j + 1) * p + a] = pg1[j * p + a] + rho * g * xbar;
                }
            }
        }

        let n_house = self.idx.subjects().iter().map(|s| s.household).max().unwrap() + 1;
        let mut g_sum = vec![0.0; n_house * p];
        for (i, s) in self.idx.subjects().iter().enumerate() {
            if s.weight <= 0.0 {
                continue;
            }
            let (lo, hi) = (self.lo[i], self.hi[i]);
            let mut eta = 0.0;
            for (a, col) in self.columns.iter().enumerate() {
                eta += beta[a] * col[i];
            }
            let r = s.weight * eta.exp();
            let own_event = self.events_at.get(hi.wrapping_sub(1)).map_or(false, |subs| {
                hi > 0 && self.te[hi - 1] == s.exit && subs.contains(&i)
            });
            for a in 0..p {
                let x = self.columns[a][i];
                let mut u = 0.0;
                if own_event {
                    let j = hi - 1;
                    let xbar = s1[j * p + a] / s0[j];
                    u += s.weight * (x - xbar);
                }
                if lo < hi {
                    u -= r * (x * (p0[hi] - p0[lo]) - (p1[hi * p + a] - p1[lo * p + a]));
                }
                if let Some(carry) = &self.carry {
                    let c = carry.scale[i] * eta.exp();
                    if c > 0.0 && hi < e {
                        u -= c * (x * (pg0[e] - pg0[hi]) - (pg1[e * p + a] - pg1[hi * p + a]));
                    }
                }
                g_sum[s.household * p + a] += u;
            }
        }

        let mut meat = vec![0.0; p * p];
        for h in 0..n_house {
            for a in 0..p {
                for b in 0..p {
                    meat[a * p + b] += g_sum[h * p + a] * g_sum[h * p + b];
                }
            }
        }
        let iinv =
            linalg::invert_spd(info, p).map_err(|_| SurvivalError::SingularInformation)?;
        let var = linalg::matmul(&iinv, &linalg::matmul(&meat, &iinv, p), p);
        Ok((0..p).map(|a| var[a * p + a].max(0.0).sqrt()).collect())
    }

    fn fit(self) -> Result<MultiFit, SurvivalError> {
        let p = self.p;
        let mut beta = vec![0.0; p];
        let (mut ll, mut score, mut info) = self.eval_full(&beta);
        let mut converged = false;
        let mut iterations = 0;
        for iter in 1..=MAX_ITER {
            iterations = iter;
            let delta = linalg::solve_spd(&info, &score, p)
                .map_err(|_| SurvivalError::SingularInformation)?;
            let mut step = 1.0;
            let mut cand = vec![0.0; p];
            let mut cand_ll = f64::NEG_INFINITY;
            for _ in 0..=MAX_HALVINGS {
                for a in 0..p {
                    cand[a] = beta[a] + step * delta[a];
                }
                cand_ll = self.eval_ll(&cand);
                if cand_ll >= ll {
                    break;
                }
                step *= 0.5;
            }
            if cand_ll < ll {
                // no uphill step exists at any scale: flat to rounding
                converged = (ll - cand_ll).abs() / ll.abs().max(f64::MIN_POSITIVE) < REL_TOL;
                break;
            }
            let rel = (cand_ll - ll) / cand_ll.abs().max(f64::MIN_POSITIVE);
            beta.copy_from_slice(&cand);
            let full = self.eval_full(&beta);
            ll = full.0;
            score = full.1;
            info = full.2;
            if rel.abs() < REL_TOL {
                converged = true;
                break;
            }
        }
        if self.n_clusters == 1 {
            log::warn!("all subjects share one household; robust variance uses a single cluster");
        }
        let robust_se = self.robust_se(&beta, &info)?;
        Ok(MultiFit {
            beta,
            robust_se,
            n: self.n_pos,
            n_events: self.n_events,
            n_clusters: self.n_clusters,
            loglik: ll,
            converged,
            iterations,
        })
    }
}

/// Replace the zero tail of a survival curve with its last positive value.
/// Returns the floored curve and whether flooring happened.
fn floor_positive(mut curve: SurvCurve) -> (SurvCurve, bool) {
    let floor = curve
        .survival
        .iter()
        .rev()
        .find(|v| **v > 0.0)
        .copied()
        .unwrap_or(1.0);
    let mut changed = false;
    for v in &mut curve.survival {
        if *v <= 0.0 {
            *v = floor;
            changed = true;
        }
    }
    (curve, changed)
}

#[cfg(test)]
mod tests {
    use super::super::{build_risk_sets, RiskSetIndex, RiskSubject};
    use super::*;
    use crate::cohort::EventKind;

    fn sub(entry: f64, exit: f64, event: EventKind, weight: f64, household: usize) -> RiskSubject {
        RiskSubject { entry, exit, event, weight, household }
    }

    /// Independent naive evaluation of the cause-specific partial
    /// log-likelihood: explicit risk-set loops, no shared code with the
    /// engine beyond the data.
    fn naive_cox_ll(subs: &[RiskSubject], x: &[f64], cause: EventKind, beta: f64) -> f64 {
        let mut ages: Vec<f64> = subs
            .iter()
            .filter(|s| s.event == cause && s.weight > 0.0)
            .map(|s| s.exit)
            .collect();
        ages.sort_by(f64::total_cmp);
        ages.dedup();
        let mut ll = 0.0;
        for &t in &ages {
            let mut s0 = 0.0;
            for (i, s) in subs.iter().enumerate() {
                if s.entry < t && t <= s.exit {
                    s0 += s.weight * (beta * x[i]).exp();
                }
            }
            for (i, s) in subs.iter().enumerate() {
                if s.exit == t && s.event == cause {
                    ll += s.weight * (beta * x[i] - s0.ln());
                }
            }
        }
        ll
    }

    fn grid_argmax(f: impl Fn(f64) -> f64) -> f64 {
        // coarse grid then golden-section polish
        let mut best = f64::NEG_INFINITY;
        let mut at = 0.0;
        let mut b = -4.0;
        while b <= 4.0 {
            let v = f(b);
            if v > best {
                best = v;
                at = b;
            }
            b += 1e-4;
        }
        let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (at - 2e-4, at + 2e-4);
        let mut c = hi - phi * (hi - lo);
        let mut d = lo + phi * (hi - lo);
        let (mut fc, mut fd) = (f(c), f(d));
        while hi - lo > 1e-10 {
            if fc > fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - phi * (hi - lo);
                fc = f(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + phi * (hi - lo);
                fd = f(d);
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn symmetric_design_gives_zero_beta() {
        // mirrored event times between x=+1 and x=-1 groups
        let mut subs = Vec::new();
        let mut x = Vec::new();
        for (k, t) in [61.0, 64.0, 67.0, 72.0].iter().enumerate() {
            subs.push(sub(55.0, *t, EventKind::Dementia, 1.0, 2 * k));
            x.push(1.0);
            subs.push(sub(55.0, *t, EventKind::Dementia, 1.0, 2 * k + 1));
            x.push(-1.0);
        }
        let idx = RiskSetIndex::from_parts(subs).unwrap();
        let fit = cox_fit(&idx, &x, EventKind::Dementia).unwrap();
        assert!(fit.beta.abs() < 1e-8, "beta = {}", fit.beta);
        assert!(fit.converged);
    }

    #[test]
    fn six_subject_fit_matches_grid_oracle() {
        let subs = vec![
            sub(50.0, 58.0, EventKind::Dementia, 1.0, 0),
            sub(50.0, 61.0, EventKind::Dementia, 1.3, 1),
            sub(50.0, 63.0, EventKind::Censored, 1.0, 2),
            sub(52.0, 65.0, EventKind::Dementia, 0.8, 3),
            sub(50.0, 68.0, EventKind::Dementia, 1.1, 4),
            sub(55.0, 70.0, EventKind::Censored, 1.0, 5),
        ];
        let x = vec![1.0, 1.0, -1.0, -1.0, -1.0, 1.0];
        let idx = RiskSetIndex::from_parts(subs.clone()).unwrap();
        let fit = cox_fit(&idx, &x, EventKind::Dementia).unwrap();
        let oracle = grid_argmax(|b| naive_cox_ll(&subs, &x, EventKind::Dementia, b));
        assert!(
            (fit.beta - oracle).abs() < 1e-6,
            "newton {} vs grid {}",
            fit.beta,
            oracle
        );
    }

    #[test]
    fn analytic_gradient_matches_finite_difference() {
        let subs = vec![
            sub(50.0, 57.0, EventKind::Dementia, 1.2, 0),
            sub(50.0, 59.0, EventKind::Death, 1.0, 1),
            sub(51.0, 62.0, EventKind::Dementia, 0.7, 2),
            sub(50.0, 64.0, EventKind::Censored, 1.0, 3),
            sub(53.0, 66.0, EventKind::Dementia, 1.5, 4),
            sub(50.0, 69.0, EventKind::Dementia, 1.0, 5),
            sub(56.0, 71.0, EventKind::Censored, 0.9, 6),
        ];
        let x = vec![0.3, -1.2, 0.8, 0.1, -0.5, 1.4, -0.9];
        let idx = RiskSetIndex::from_parts(subs).unwrap();
        for &beta in &[-0.7, 0.0, 0.4, 1.1] {
            let (_, score) = cox_partial_loglik(&idx, &x, EventKind::Dementia, beta).unwrap();
            let h = 1e-5;
            let (lp, _) = cox_partial_loglik(&idx, &x, EventKind::Dementia, beta + h).unwrap();
            let (lm, _) = cox_partial_loglik(&idx, &x, EventKind::Dementia, beta - h).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (score - fd).abs() / score.abs().max(1.0);
            assert!(rel < 1e-6, "beta {beta}: analytic {score} fd {fd}");
        }
    }

    #[test]
    fn fine_gray_gradient_matches_finite_difference() {
        let subs = vec![
            sub(50.0, 57.0, EventKind::Dementia, 1.2, 0),
            sub(50.0, 59.0, EventKind::Death, 1.0, 1),
            sub(51.0, 62.0, EventKind::Dementia, 0.7, 2),
            sub(50.0, 64.0, EventKind::Censored, 1.0, 3),
            sub(53.0, 66.0, EventKind::Dementia, 1.5, 4),
            sub(50.0, 69.0, EventKind::Death, 1.0, 5),
            sub(56.0, 71.0, EventKind::Dementia, 0.9, 6),
            sub(50.0, 73.0, EventKind::Censored, 1.0, 7),
        ];
        let x = vec![0.3, -1.2, 0.8, 0.1, -0.5, 1.4, -0.9, 0.6];
        let idx = RiskSetIndex::from_parts(subs).unwrap();
        for &beta in &[-0.5, 0.0, 0.8] {
            let (_, score) = fine_gray_partial_loglik(&idx, &x, EventKind::Dementia, beta).unwrap();
            let h = 1e-5;
            let (lp, _) =
                fine_gray_partial_loglik(&idx, &x, EventKind::Dementia, beta + h).unwrap();
            let (lm, _) =
                fine_gray_partial_loglik(&idx, &x, EventKind::Dementia, beta - h).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (score - fd).abs() / score.abs().max(1.0);
            assert!(rel < 1e-6, "beta {beta}: analytic {score} fd {fd}");
        }
    }

    #[test]
    fn fine_gray_reduces_to_cox_without_deaths() {
        let subs = vec![
            sub(50.0, 58.0, EventKind::Dementia, 1.0, 0),
            sub(50.0, 61.0, EventKind::Censored, 1.3, 1),
            sub(52.0, 63.0, EventKind::Dementia, 0.9, 2),
            sub(50.0, 66.0, EventKind::Dementia, 1.2, 3),
            sub(54.0, 69.0, EventKind::Censored, 1.0, 4),
            sub(50.0, 71.0, EventKind::Dementia, 1.0, 5),
        ];
        let x = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let idx = RiskSetIndex::from_parts(subs).unwrap();
        let cs = cox_fit(&idx, &x, EventKind::Dementia).unwrap();
        let fg = fine_gray_fit(&idx, &x, EventKind::Dementia).unwrap();
        assert!((cs.beta - fg.beta).abs() < 1e-8);
        assert!((cs.hr - fg.hr).abs() < 1e-8);
    }

    #[test]
    fn unique_households_equal_subject_level_sandwich() {
        let subs = vec![
            sub(50.0, 58.0, EventKind::Dementia, 1.0, 0),
            sub(50.0, 61.0, EventKind::Dementia, 1.3, 1),
            sub(52.0, 63.0, EventKind::Censored, 0.9, 2),
            sub(50.0, 66.0, EventKind::Dementia, 1.2, 3),
            sub(54.0, 69.0, EventKind::Dementia, 1.0, 4),
        ];
        let x = vec![0.5, -0.3, 1.1, -0.8, 0.2];
        let idx = RiskSetIndex::from_parts(subs.clone()).unwrap();
        let fit = cox_fit(&idx, &x, EventKind::Dementia).unwrap();
        // same data, explicit one-household-per-subject ids
        let relabeled: Vec<RiskSubject> = subs
            .iter()
            .enumerate()
            .map(|(i, s)| RiskSubject { household: i, ..*s })
            .collect();
        let idx2 = RiskSetIndex::from_parts(relabeled).unwrap();
        let se = robust_cluster_variance(
            &idx2,
            &[x.clone()],
            EventKind::Dementia,
            Model::CauseSpecific,
            &[fit.beta],
        )
        .unwrap();
        assert!((fit.robust_se - se[0]).abs() < 1e-12);
    }

    #[test]
    fn half_weight_duplicates_leave_fit_unchanged() {
        let base = vec![
            sub(50.0, 58.0, EventKind::Dementia, 1.0, 0),
            sub(50.0, 61.0, EventKind::Death, 1.3, 1),
            sub(52.0, 63.0, EventKind::Censored, 0.9, 2),
            sub(50.0, 66.0, EventKind::Dementia, 1.2, 3),
            sub(54.0, 69.0, EventKind::Dementia, 1.0, 4),
            sub(50.0, 72.0, EventKind::Censored, 1.1, 5),
        ];
        let x = vec![0.5, -0.3, 1.1, -0.8, 0.2, -1.0];
        let idx = RiskSetIndex::from_parts(base.clone()).unwrap();
        let fit = cox_fit(&idx, &x, EventKind::Dementia).unwrap();

        let mut doubled = Vec::new();
        let mut x2 = Vec::new();
        for (i, s) in base.iter().enumerate() {
            for _ in 0..2 {
                doubled.push(RiskSubject { weight: s.weight * 0.5, ..*s });
                x2.push(x[i]);
            }
        }
        let idx2 = RiskSetIndex::from_parts(doubled).unwrap();
        let fit2 = cox_fit(&idx2, &x2, EventKind::Dementia).unwrap();
        // both runs converge to the same optimum within the 1e-10 relative
        // loglik tolerance; compare at a slightly looser scale
        assert!((fit.beta - fit2.beta).abs() < 1e-8, "{} {}", fit.beta, fit2.beta);
        assert!(
            (fit.robust_se - fit2.robust_se).abs() < 1e-8,
            "{} {}",
            fit.robust_se,
            fit2.robust_se
        );
    }

    #[test]
    fn single_household_reports_one_cluster() {
        let subs = vec![
            sub(50.0, 58.0, EventKind::Dementia, 1.0, 7),
            sub(50.0, 61.0, EventKind::Dementia, 1.0, 7),
            sub(50.0, 66.0, EventKind::Censored, 1.0, 7),
            sub(50.0, 68.0, EventKind::Dementia, 1.0, 7),
        ];
        let x = vec![1.0, -1.0, 1.0, -1.0];
        let idx = RiskSetIndex::from_parts(subs).unwrap();
        let fit = cox_fit(&idx, &x, EventKind::Dementia).unwrap();
        assert_eq!(fit.n_clusters, 1);
    }

    #[test]
    fn weight_scaling_invariance() {
        let base = vec![
            sub(50.0, 58.0, EventKind::Dementia, 1.0, 0),
            sub(50.0, 61.0, EventKind::Death, 1.3, 0),
            sub(52.0, 63.0, EventKind::Censored, 0.9, 1),
            sub(50.0, 66.0, EventKind::Dementia, 1.2, 1),
            sub(54.0, 69.0, EventKind::Dementia, 1.0, 2),
        ];
        let x = vec![0.5, -0.3, 1.1, -0.8, 0.2];
        let idx = RiskSetIndex::from_parts(base.clone()).unwrap();
        let fit = cox_fit(&idx, &x, EventKind::Dementia).unwrap();
        let scaled: Vec<RiskSubject> = base
            .iter()
            .map(|s| RiskSubject { weight: s.weight * 3.7, ..*s })
            .collect();
        let idx2 = RiskSetIndex::from_parts(scaled).unwrap();
        let fit2 = cox_fit(&idx2, &x, EventKind::Dementia).unwrap();
        assert!((fit.beta - fit2.beta).abs() < 1e-9);
        assert!((fit.robust_se - fit2.robust_se).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_and_no_events_errors() {
        let subs = vec![
            sub(50.0, 58.0, EventKind::Dementia, 1.0, 0),
            sub(50.0, 61.0, EventKind::Censored, 1.0, 1),
        ];
        let idx = RiskSetIndex::from_parts(subs).unwrap();
        assert!(matches!(
            cox_fit(&idx, &[1.0, 1.0], EventKind::Dementia),
            Err(SurvivalError::ZeroVariance)
        ));
        assert!(matches!(
            cox_fit(&idx, &[1.0, -1.0], EventKind::Death),
            Err(SurvivalError::NoEvents)
        ));
    }

    #[test]
    fn left_truncation_extra_early_subject_only_touches_early_risk_sets() {
        // an extra subject exiting before every event age leaves the fit as
        // if absent except through early risk sets; with exit before ALL
        // event ages the fit is bit-identical
        let base = vec![
            sub(50.0, 60.0, EventKind::Dementia, 1.0, 0),
            sub(50.0, 64.0, EventKind::Dementia, 1.0, 1),
            sub(50.0, 67.0, EventKind::Censored, 1.0, 2),
            sub(50.0, 70.0, EventKind::Dementia, 1.0, 3),
        ];
        let x = vec![1.0, -1.0, 1.0, -1.0];
        let idx = RiskSetIndex::from_parts(base.clone()).unwrap();
        let fit = cox_fit(&idx, &x, EventKind::Dementia).unwrap();

        let mut extended = base;
        extended.push(sub(51.0, 55.0, EventKind::Censored, 2.0, 4));
        let mut x2 = x;
        x2.push(0.7);
        let idx2 = RiskSetIndex::from_parts(extended).unwrap();
        let fit2 = cox_fit(&idx2, &x2, EventKind::Dementia).unwrap();
        assert_eq!(fit.beta.to_bits(), fit2.beta.to_bits());
    }

    #[test]
    fn build_risk_sets_uses_analysis_weights() {
        use crate::cohort::{Stratum, Subject};
        let subjects = vec![
            Subject {
                id: "a".into(),
                household_id: "h1".into(),
                stratum: Stratum::NhwMen,
                entry_age: 50.0,
                exit_age: 60.0,
                event: EventKind::Dementia,
                covariates: vec![1.0],
                base_weight: 1.0,
                analysis_weight: 2.0,
            },
            Subject {
                id: "b".into(),
                household_id: "h2".into(),
                stratum: Stratum::NhwMen,
                entry_age: 50.0,
                exit_age: 65.0,
                event: EventKind::Censored,
                covariates: vec![-1.0],
                base_weight: 1.0,
                analysis_weight: 1.0,
            },
        ];
        let idx = build_risk_sets(&subjects).unwrap();
        assert_eq!(idx.weight_at_risk(55.0), 3.0);
    }
}
