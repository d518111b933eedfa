//! Random survival forests for competing risks.
//!
//! Trees are grown on weight-proportional bootstrap resamples and split by a
//! two-sample log-rank statistic on the primary cause, either on the
//! subdistribution risk set (competing events stay at risk with
//! censoring-weighted mass, the default) or on the cause-specific risk set.
//! Terminal nodes carry Aalen-Johansen incidence curves; ensemble predictions
//! average them. Out-of-bag error is one minus a truncated concordance on the
//! predicted primary-cause incidence at a horizon, and variable importance is
//! the OOB error increase after permuting one predictor at a time.
//!
//! Everything is deterministic given the seed: per-tree and per-permutation
//! RNG streams are derived from (seed, namespace, index), so results do not
//! depend on thread count.

mod cart;
mod split;
mod store;
mod tree;

pub use cart::{grow_cart, predict_row, CartConfig, CartKind, CartTree};
pub use store::{load_forest, save_forest};
pub use tree::grow_tree;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{CovariateSpec, Domain, EventKind, Stratum, Subject};
use crate::rng::{task_rng, NS_SURV_TREE, NS_SURV_VIMP};
use crate::survival::CifCurve;
use crate::weights::lower_quantile;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("no subjects in sample")]
    EmptySample,
    #[error("no primary-cause events with positive weight")]
    NoEvents,
    #[error("dimension mismatch: got {got}, want {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("missing predictor value for subject {subject}, feature {feature}; impute first")]
    MissingPredictor { subject: usize, feature: usize },
    #[error("no usable out-of-bag pairs at the requested horizon")]
    NoUsablePairs,
    #[error("invalid forest configuration: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("persisted forest is corrupt or not a forest file")]
    BadMagic,
    #[error("persisted forest has unsupported version {0}")]
    BadVersion(u16),
    #[error("serialization: {0}")]
    Codec(#[from] bincode::Error),
}

/// Which risk set the split statistic compares on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Subjects with a competing event remain at risk past their event age
    /// with censoring-weighted mass (default).
    SubdistributionLogrank,
    /// Competing events leave the risk set at their event age.
    CausespecificLogrank,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidate features per node; defaults to ceil(sqrt(M)).
    pub mtry: Option<usize>,
    /// Minimum multiplicity-weighted primary events per terminal node.
    pub min_terminal_events: u32,
    pub max_depth: Option<usize>,
    pub seed: u64,
    pub split_rule: SplitRule,
    /// Bootstrap draws as a fraction of n (with replacement).
    pub bootstrap_fraction: f64,
    /// Concordance truncation age; defaults to the 90th percentile of
    /// observed primary-cause event ages.
    pub vimp_horizon: Option<f64>,
    pub vimp_repetitions: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 1000,
            mtry: None,
            min_terminal_events: 3,
            max_depth: None,
            seed: 0,
            split_rule: SplitRule::SubdistributionLogrank,
            bootstrap_fraction: 1.0,
            vimp_horizon: None,
            vimp_repetitions: 1,
        }
    }
}

impl ForestConfig {
    fn validate(&self, n_features: usize) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidConfig("n_trees must be positive".into()));
        }
        if self.min_terminal_events == 0 {
            return Err(ForestError::InvalidConfig("min_terminal_events must be positive".into()));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > n_features {
                return Err(ForestError::InvalidConfig(format!(
                    "mtry must lie in 1..={n_features}, got {m}"
                )));
            }
        }
        if !(self.bootstrap_fraction > 0.0 && self.bootstrap_fraction.is_finite()) {
            return Err(ForestError::InvalidConfig("bootstrap_fraction must be positive".into()));
        }
        if self.vimp_repetitions == 0 {
            return Err(ForestError::InvalidConfig("vimp_repetitions must be positive".into()));
        }
        if let Some(h) = self.vimp_horizon {
            if !(h.is_finite() && h > 0.0) {
                return Err(ForestError::InvalidConfig("vimp_horizon must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Training snapshot in column-major layout. Persisted with the forest so
/// OOB error and importance can be recomputed from the saved file alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestData {
    pub entry: Vec<f64>,
    pub exit: Vec<f64>,
    pub event: Vec<EventKind>,
    pub weight: Vec<f64>,
    /// One vector per feature, each of length n.
    pub columns: Vec<Vec<f64>>,
}

impl ForestData {
    pub fn len(&self) -> usize {
        self.entry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entry.is_empty()
    }

    pub fn from_subjects(subjects: &[Subject], n_features: usize) -> Result<ForestData, ForestError> {
        let n = subjects.len();
        let mut data = ForestData {
            entry: Vec::with_capacity(n),
            exit: Vec::with_capacity(n),
            event: Vec::with_capacity(n),
            weight: Vec::with_capacity(n),
            columns: vec![Vec::with_capacity(n); n_features],
        };
        for (si, s) in subjects.iter().enumerate() {
            if s.covariates.len() != n_features {
                return Err(ForestError::DimensionMismatch {
                    got: s.covariates.len(),
                    want: n_features,
                });
            }
            data.entry.push(s.entry_age);
            data.exit.push(s.exit_age);
            data.event.push(s.event);
            data.weight.push(s.analysis_weight);
            for (f, &v) in s.covariates.iter().enumerate() {
                if !v.is_finite() {
                    return Err(ForestError::MissingPredictor { subject: si, feature: f });
                }
                data.columns[f].push(v);
            }
        }
        Ok(data)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    Leaf { cif: CifCurve },
}

/// One grown tree: node arena rooted at index 0, plus the bootstrap
/// multiplicity per training subject (zero = out of bag).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvTree {
    pub nodes: Vec<Node>,
    pub in_bag: Vec<u32>,
}

impl SurvTree {
    /// Walk from the root with an arbitrary feature accessor.
    fn leaf_for(&self, mut value: impl FnMut(usize) -> f64) -> &CifCurve {
        let mut cur = 0usize;
        loop {
            match &self.nodes[cur] {
                Node::Leaf { cif } => return cif,
                Node::Split { feature, threshold, left, right } => {
                    cur = if value(*feature as usize) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    pub config: ForestConfig,
    pub stratum_label: String,
    pub names: Vec<String>,
    pub domains: Vec<Domain>,
    pub data: ForestData,
    pub trees: Vec<SurvTree>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VimpRow {
    pub predictor: String,
    pub domain: Domain,
    pub importance: f64,
    /// 1 = most important; ranks are a permutation of 1..=M.
    pub rank: usize,
    pub negative: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VimpTable {
    pub stratum_label: String,
    pub horizon: f64,
    pub baseline_error: f64,
    /// Sorted by rank.
    pub rows: Vec<VimpRow>,
}

/// Out-of-bag prediction-error report.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OobReport {
    /// 1 - truncated concordance.
    pub error: f64,
    pub horizon: f64,
    pub n_pairs: u64,
    /// Subjects out of bag in no tree, excluded from scoring.
    pub n_never_oob: usize,
}

/// Grow a forest on weighted subjects. Feature names and domains come from
/// `specs` (order defines the feature indices).
pub fn grow_forest(
    subjects: &[Subject],
    specs: &[CovariateSpec],
    cfg: &ForestConfig,
) -> Result<Forest, ForestError> {
    if subjects.len() < 2 {
        return Err(ForestError::EmptySample);
    }
    if specs.is_empty() {
        return Err(ForestError::InvalidConfig("no predictors".into()));
    }
    cfg.validate(specs.len())?;
    let data = ForestData::from_subjects(subjects, specs.len())?;

    let has_event = (0..data.len())
        .any(|i| data.event[i] == EventKind::Dementia && data.weight[i] > 0.0);
    if !has_event {
        return Err(ForestError::NoEvents);
    }

    // Cumulative weights for the proportional bootstrap.
    let mut cw = Vec::with_capacity(data.len());
    let mut total = 0.0;
    for &w in &data.weight {
        if !(w.is_finite() && w >= 0.0) {
            return Err(ForestError::InvalidConfig("negative or non-finite subject weight".into()));
        }
        total += w;
        cw.push(total);
    }
    if total <= 0.0 {
        return Err(ForestError::EmptySample);
    }
    let draws = ((cfg.bootstrap_fraction * data.len() as f64).round() as usize).max(1);

    let trees: Result<Vec<SurvTree>, ForestError> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = task_rng(cfg.seed, &[NS_SURV_TREE, t as u64]);
            let mut mult = vec![0u32; data.len()];
            for _ in 0..draws {
                let r = rng.random::<f64>() * total;
                let i = cw.partition_point(|&c| c <= r).min(data.len() - 1);
                mult[i] += 1;
            }
            grow_tree(&data, &mult, cfg, &mut rng)
        })
        .collect();

    let stratum_label = stratum_label_of(subjects);
    Ok(Forest {
        config: cfg.clone(),
        stratum_label,
        names: specs.iter().map(|s| s.name.clone()).collect(),
        domains: specs.iter().map(|s| s.domain).collect(),
        data,
        trees: trees?,
    })
}

fn stratum_label_of(subjects: &[Subject]) -> String {
    let first = subjects[0].stratum;
    if subjects.iter().all(|s| s.stratum == first) {
        first.label().to_string()
    } else {
        Stratum::ALL.iter().map(|s| s.label()).collect::<Vec<_>>().join("+")
    }
}

impl Forest {
    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    /// Ensemble incidence curves for a covariate vector: the pointwise mean
    /// of the terminal curves the vector reaches, on the union age grid.
    pub fn predict_cif(&self, x: &[f64]) -> Result<CifCurve, ForestError> {
        if x.len() != self.n_features() {
            return Err(ForestError::DimensionMismatch { got: x.len(), want: self.n_features() });
        }
        let leaves: Vec<&CifCurve> = self.trees.iter().map(|t| t.leaf_for(|f| x[f])).collect();
        let mut ages: Vec<f64> = leaves.iter().flat_map(|c| c.ages.iter().copied()).collect();
        ages.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ages.dedup();
        let inv = 1.0 / leaves.len() as f64;
        let mut dementia = Vec::with_capacity(ages.len());
        let mut death = Vec::with_capacity(ages.len());
        for &a in &ages {
            let mut dm = 0.0;
            let mut dt = 0.0;
            for c in &leaves {
                dm += c.dementia_at(a);
                dt += c.death_at(a);
            }
            dementia.push(dm * inv);
            death.push(dt * inv);
        }
        Ok(CifCurve { ages, dementia, death })
    }

    /// Default concordance horizon: 90th percentile of observed
    /// primary-cause event ages.
    pub fn default_horizon(&self) -> Result<f64, ForestError> {
        if let Some(h) = self.config.vimp_horizon {
            return Ok(h);
        }
        let mut ages: Vec<f64> = (0..self.data.len())
            .filter(|&i| self.data.event[i] == EventKind::Dementia)
            .map(|i| self.data.exit[i])
            .collect();
        if ages.is_empty() {
            return Err(ForestError::NoEvents);
        }
        ages.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(lower_quantile(&ages, 0.9))
    }

    /// Per-subject OOB risk score: mean predicted primary-cause incidence at
    /// `horizon` over the trees where the subject is out of bag. NaN where
    /// the subject is in bag everywhere. `permuted` substitutes one feature
    /// column through an index permutation before routing.
    fn oob_scores(&self, horizon: f64, permuted: Option<(usize, &[usize])>) -> (Vec<f64>, usize) {
        let n = self.data.len();
        let mut acc = vec![0.0; n];
        let mut cnt = vec![0u32; n];
        for tree in &self.trees {
            for i in 0..n {
                if tree.in_bag[i] > 0 {
                    continue;
                }
                let leaf = tree.leaf_for(|f| match permuted {
                    Some((pf, perm)) if pf == f => self.data.columns[f][perm[i]],
                    _ => self.data.columns[f][i],
                });
                acc[i] += leaf.dementia_at(horizon);
                cnt[i] += 1;
            }
        }
        let mut never = 0;
        let scores: Vec<f64> = (0..n)
            .map(|i| {
                if cnt[i] == 0 {
                    never += 1;
                    f64::NAN
                } else {
                    acc[i] / f64::from(cnt[i])
                }
            })
            .collect();
        (scores, never)
    }

    /// 1 - truncated concordance over usable OOB pairs.
    ///
    /// A pair (i, j) is usable when i has a primary-cause event at or before
    /// the horizon, j is under observation at i's event age and exits later,
    /// and both have OOB scores. Higher predicted incidence for the earlier
    /// case counts 1, ties 0.5.
    pub fn oob_error(&self, horizon: Option<f64>) -> Result<OobReport, ForestError> {
        let tau = match horizon {
            Some(h) => h,
            None => self.default_horizon()?,
        };
        let (scores, never) = self.oob_scores(tau, None);
        if never > 0 {
            log::warn!("{never} subject(s) were in bag in every tree; excluded from OOB error");
        }
        let (error, n_pairs) = truncated_error(&self.data, &scores, tau)?;
        Ok(OobReport { error, horizon: tau, n_pairs, n_never_oob: never })
    }

    /// Permutation importance per predictor: mean OOB error with that
    /// predictor's column permuted, minus the baseline OOB error.
    pub fn vimp(&self) -> Result<VimpTable, ForestError> {
        let tau = self.default_horizon()?;
        let (base_scores, never) = self.oob_scores(tau, None);
        if never > 0 {
            log::warn!("{never} subject(s) were in bag in every tree; excluded from importance");
        }
        let (baseline, _) = truncated_error(&self.data, &base_scores, tau)?;

        let n = self.data.len();
        let reps = self.config.vimp_repetitions;
        let importances: Result<Vec<f64>, ForestError> = (0..self.n_features())
            .into_par_iter()
            .map(|f| {
                let mut sum = 0.0;
                for rep in 0..reps {
                    let mut rng =
                        task_rng(self.config.seed, &[NS_SURV_VIMP, f as u64, rep as u64]);
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.shuffle(&mut rng);
                    let (scores, _) = self.oob_scores(tau, Some((f, &perm)));
                    let (err, _) = truncated_error(&self.data, &scores, tau)?;
                    sum += err;
                }
                Ok(sum / reps as f64 - baseline)
            })
            .collect();
        let importances = importances?;

        let mut order: Vec<usize> = (0..importances.len()).collect();
        order.sort_by(|&a, &b| {
            importances[b]
                .partial_cmp(&importances[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut rows: Vec<VimpRow> = Vec::with_capacity(order.len());
        for (pos, &f) in order.iter().enumerate() {
            rows.push(VimpRow {
                predictor: self.names[f].clone(),
                domain: self.domains[f],
                importance: importances[f],
                rank: pos + 1,
                negative: importances[f] < 0.0,
            });
        }
        Ok(VimpTable {
            stratum_label: self.stratum_label.clone(),
            horizon: tau,
            baseline_error: baseline,
            rows,
        })
    }
}

fn truncated_error(data: &ForestData, scores: &[f64], tau: f64) -> Result<(f64, u64), ForestError> {
    let n = data.len();
    let mut concordant = 0.0;
    let mut pairs = 0u64;
    for i in 0..n {
        if data.event[i] != EventKind::Dementia || data.exit[i] > tau || !scores[i].is_finite() {
            continue;
        }
        for j in 0..n {
            if j == i || !scores[j].is_finite() {
                continue;
            }
            if data.exit[j] <= data.exit[i] || data.entry[j] >= data.exit[i] {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                concordant += 1.0;
            } else if scores[i] == scores[j] {
                concordant += 0.5;
            }
        }
    }
    if pairs == 0 {
        return Err(ForestError::NoUsablePairs);
    }
    Ok((1.0 - concordant / pairs as f64, pairs))
}
