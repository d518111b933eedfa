//! Weighted survival estimators on the age timescale with left truncation.
//!
//! A subject is at risk at age t iff entry_age < t <= exit_age. All
//! estimators share that convention through `RiskSetIndex`. Risk-set sums
//! are computed by direct summation in subject order so small instances are
//! reproducible against brute-force recomputation bit for bit.

mod cox;

pub use cox::{
    cox_fit, cox_fit_multi, cox_partial_loglik, fine_gray_fit, fine_gray_partial_loglik,
    robust_cluster_variance, FitResult, Model, MultiFit,
};

use crate::cohort::{EventKind, Subject};

#[derive(Debug, thiserror::Error)]
pub enum SurvivalError {
    #[error("no subjects")]
    EmptyCohort,
    #[error("covariate has zero weighted variance")]
    ZeroVariance,
    #[error("no events of the requested cause with positive weight")]
    NoEvents,
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("covariate vector length {got} != subject count {want}")]
    LengthMismatch { got: usize, want: usize },
}

/// One subject as seen by the estimators. `weight` is whatever the caller
/// says it is: an analysis weight, or a bootstrap multiplicity inside a
/// forest. Zero-weight subjects are legal and contribute nothing.
#[derive(Debug, Clone, Copy)]
pub struct RiskSubject {
    pub entry: f64,
    pub exit: f64,
    pub event: EventKind,
    pub weight: f64,
    pub household: usize,
}

/// Immutable index over subjects: distinct exit ages with grouped ties,
/// plus entry/exit orderings for sweep algorithms and O(log n) at-risk
/// queries.
pub struct RiskSetIndex {
    subjects: Vec<RiskSubject>,
    ages: Vec<f64>,
    /// subject indices exiting at ages[j], ascending subject order
    exits_at: Vec<Vec<usize>>,
    /// subject indices sorted by entry age
    by_entry: Vec<usize>,
    /// subject indices sorted by exit age
    by_exit: Vec<usize>,
    /// prefix sums of weight along by_entry / by_exit
    entry_weight_prefix: Vec<f64>,
    exit_weight_prefix: Vec<f64>,
    n_households: usize,
}

impl RiskSetIndex {
    pub fn from_parts(subjects: Vec<RiskSubject>) -> Result<RiskSetIndex, SurvivalError> {
        if subjects.is_empty() {
            return Err(SurvivalError::EmptyCohort);
        }
        let n = subjects.len();
        let mut by_exit: Vec<usize> = (0..n).collect();
        by_exit.sort_by(|&a, &b| subjects[a].exit.total_cmp(&subjects[b].exit));
        let mut by_entry: Vec<usize> = (0..n).collect();
        by_entry.sort_by(|&a, &b| subjects[a].entry.total_cmp(&subjects[b].entry));

        let mut ages: Vec<f64> = Vec::new();
        let mut exits_at: Vec<Vec<usize>> = Vec::new();
        for &i in &by_exit {
            let t = subjects[i].exit;
            if ages.last() != Some(&t) {
                ages.push(t);
                exits_at.push(Vec::new());
            }
            exits_at.last_mut().unwrap().push(i);
        }
        for group in &mut exits_at {
            group.sort_unstable();
        }
        let mut entry_weight_prefix = Vec::with_capacity(n + 1);
        entry_weight_prefix.push(0.0);
        for &i in &by_entry {
            entry_weight_prefix.push(entry_weight_prefix.last().unwrap() + subjects[i].weight);
        }
        let mut exit_weight_prefix = Vec::with_capacity(n + 1);
        exit_weight_prefix.push(0.0);
        for &i in &by_exit {
            exit_weight_prefix.push(exit_weight_prefix.last().unwrap() + subjects[i].weight);
        }
        let n_households = {
            let mut h: Vec<usize> = subjects.iter().map(|s| s.household).collect();
            h.sort_unstable();
            h.dedup();
            h.len()
        };
        Ok(RiskSetIndex {
            subjects,
            ages,
            exits_at,
            by_entry,
            by_exit,
            entry_weight_prefix,
            exit_weight_prefix,
            n_households,
        })
    }

    pub fn subjects(&self) -> &[RiskSubject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Distinct exit ages, ascending (events and censorings alike).
    pub fn ages(&self) -> &[f64] {
        &self.ages
    }

    pub fn exits_at(&self, j: usize) -> &[usize] {
        &self.exits_at[j]
    }

    pub fn by_entry(&self) -> &[usize] {
        &self.by_entry
    }

    pub fn by_exit(&self) -> &[usize] {
        &self.by_exit
    }

    pub fn n_households(&self) -> usize {
        self.n_households
    }

    pub fn at_risk(&self, subject: usize, t: f64) -> bool {
        let s = &self.subjects[subject];
        s.entry < t && t <= s.exit
    }

    /// Weighted size of the risk set at age t, O(log n).
    pub fn weight_at_risk(&self, t: f64) -> f64 {
        let entered = self.by_entry.partition_point(|&i| self.subjects[i].entry < t);
        let gone = self.by_exit.partition_point(|&i| self.subjects[i].exit < t);
        self.entry_weight_prefix[entered] - self.exit_weight_prefix[gone]
    }

    /// Number of subjects at risk at age t, O(log n).
    pub fn n_at_risk(&self, t: f64) -> usize {
        let entered = self.by_entry.partition_point(|&i| self.subjects[i].entry < t);
        let gone = self.by_exit.partition_point(|&i| self.subjects[i].exit < t);
        entered - gone
    }

    /// Direct weighted risk-set sum at ages[j]: exact, subject order.
    fn direct_at_risk_weight(&self, j: usize) -> f64 {
        let t = self.ages[j];
        let mut y = 0.0;
        for s in &self.subjects {
            if s.entry < t && t <= s.exit {
                y += s.weight;
            }
        }
        y
    }
}

/// Build the index over subjects using their analysis weights and a dense
/// household numbering.
pub fn build_risk_sets(subjects: &[Subject]) -> Result<RiskSetIndex, SurvivalError> {
    let mut house_ids: Vec<&str> = subjects.iter().map(|s| s.household_id.as_str()).collect();
    house_ids.sort_unstable();
    house_ids.dedup();
    let lookup = |id: &str| house_ids.binary_search(&id).unwrap();
    let rows: Vec<RiskSubject> = subjects
        .iter()
        .map(|s| RiskSubject {
            entry: s.entry_age,
            exit: s.exit_age,
            event: s.event,
            weight: s.analysis_weight,
            household: lookup(&s.household_id),
        })
        .collect();
    RiskSetIndex::from_parts(rows)
}

/// Right-continuous step function dropping from 1.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct SurvCurve {
    pub ages: Vec<f64>,
    pub survival: Vec<f64>,
}

impl SurvCurve {
    /// S(t): value at the last jump age <= t.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.ages.partition_point(|&a| a <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    /// S(t-): value just before t.
    pub fn at_left(&self, t: f64) -> f64 {
        let k = self.ages.partition_point(|&a| a < t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }
}

/// Weighted product-limit estimator. `targets` selects which event kinds
/// count as events; everything else leaves the risk set silently. Jump ages
/// are exactly the target ages carrying positive weight.
pub fn kaplan_meier(idx: &RiskSetIndex, targets: &[EventKind]) -> SurvCurve {
    let mut ages = Vec::new();
    let mut survival = Vec::new();
    let mut s = 1.0;
    for j in 0..idx.ages().len() {
        let mut d = 0.0;
        for &i in idx.exits_at(j) {
            let sub = &idx.subjects[i];
            if targets.contains(&sub.event) {
                d += sub.weight;
            }
        }
        if d <= 0.0 {
            continue;
        }
        let y = idx.direct_at_risk_weight(j);
        s *= 1.0 - d / y;
        ages.push(idx.ages()[j]);
        survival.push(s);
    }
    SurvCurve { ages, survival }
}

/// Aalen-Johansen cumulative incidence for the two competing causes.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct CifCurve {
    pub ages: Vec<f64>,
    pub dementia: Vec<f64>,
    pub death: Vec<f64>,
}

impl CifCurve {
    pub fn dementia_at(&self, t: f64) -> f64 {
        let k = self.ages.partition_point(|&a| a <= t);
        if k == 0 {
            0.0
        } else {
            self.dementia[k - 1]
        }
    }

    pub fn death_at(&self, t: f64) -> f64 {
        let k = self.ages.partition_point(|&a| a <= t);
        if k == 0 {
            0.0
        } else {
            self.death[k - 1]
        }
    }
}

/// CIF_k(t) = sum over event ages t_j <= t of S_allcause(t_j-) d_kj / Y_j,
/// with the all-cause survival updated inside the same sweep so the
/// conservation identity holds to rounding.
pub fn aalen_johansen(idx: &RiskSetIndex) -> CifCurve {
    let mut out = CifCurve { ages: Vec::new(), dementia: Vec::new(), death: Vec::new() };
    let mut s = 1.0;
    let mut cif_dem = 0.0;
    let mut cif_death = 0.0;
    for j in 0..idx.ages().len() {
        let mut d_dem = 0.0;
        let mut d_death = 0.0;
        for &i in idx.exits_at(j) {
            let sub = &idx.subjects[i];
            match sub.event {
                EventKind::Dementia => d_dem += sub.weight,
                EventKind::Death => d_death += sub.weight,
                EventKind::Censored => {}
            }
        }
        if d_dem <= 0.0 && d_death <= 0.0 {
            continue;
        }
        let y = idx.direct_at_risk_weight(j);
        cif_dem += s * d_dem / y;
        cif_death += s * d_death / y;
        s *= 1.0 - (d_dem + d_death) / y;
        out.ages.push(idx.ages()[j]);
        out.dementia.push(cif_dem);
        out.death.push(cif_death);
    }
    out
}

/// "H.HH (L.LL, U.UU)" with half-even rounding to two decimals.
pub fn format_hr(fit: &FitResult) -> String {
    fn r2(x: f64) -> f64 {
        (x * 100.0).round_ties_even() / 100.0
    }
    format!("{:.2} ({:.2}, {:.2})", r2(fit.hr), r2(fit.ci95.0), r2(fit.ci95.1))
}
