//! End-to-end orchestration: stratified model sweeps, descriptive tables,
//! correlation matrices, cross-stratum rank aggregation, synthetic-cohort
//! generation, and file emission.

pub mod config;
pub mod emit;
pub mod run;
pub mod synth;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cohort::{is_missing, CodingKind, CovariateSpec, Domain, EventKind, Stratum, Subject};
use crate::forest::VimpTable;
use crate::survival::{cox_fit, fine_gray_fit, FitResult, Model};
use crate::survival::{build_risk_sets, SurvivalError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stratum {0} has no subjects")]
    EmptyStratum(Stratum),
    #[error("stratum {stratum} is missing predictor {predictor:?} without a sex-specific exemption")]
    InconsistentPredictorSets { stratum: String, predictor: String },
    #[error("rank aggregation needs at least one table")]
    NoTables,
    #[error("covariate count mismatch: subjects have {got}, specs have {want}")]
    SpecMismatch { got: usize, want: usize },
    #[error("need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error(transparent)]
    Forest(#[from] crate::forest::ForestError),
    #[error(transparent)]
    Impute(#[from] crate::impute::ImputeError),
    #[error(transparent)]
    Weights(#[from] crate::weights::WeightError),
    #[error("synthetic cohort configuration infeasible: {0}")]
    InfeasibleConfig(String),
    #[error("malformed input: {0}")]
    Malformed(String),
}

/// One row of the descriptive table: weighted mean (continuous) or weighted
/// proportion on the 0/1 scale (binary), with a household-clustered SE.
#[derive(Debug, Clone, Serialize)]
pub struct DescriptiveRow {
    pub predictor: String,
    pub domain: Domain,
    pub kind: CodingKind,
    pub value: f64,
    pub se: f64,
    pub n_observed: usize,
}

/// Weighted descriptive statistics over observed cells only.
///
/// The SE is the design-based linearization treating households as clusters:
/// with u_h the household sums of w_i (y_i - mean), SE^2 = m/(m-1) * sum u_h^2
/// / (sum w)^2 over the m households contributing observations.
pub fn describe(
    subjects: &[Subject],
    specs: &[CovariateSpec],
) -> Result<Vec<DescriptiveRow>, PipelineError> {
    check_shapes(subjects, specs)?;
    let mut rows = Vec::with_capacity(specs.len());
    for (j, spec) in specs.iter().enumerate() {
        let binary = spec.kind == CodingKind::BinaryPm1;
        // (household, weight, value on reporting scale)
        let mut obs: Vec<(&str, f64, f64)> = Vec::new();
        for s in subjects {
            let v = s.covariates[j];
            if is_missing(v) || s.analysis_weight <= 0.0 {
                continue;
            }
            let y = if binary { 0.5 * (v + 1.0) } else { v };
            obs.push((s.household_id.as_str(), s.analysis_weight, y));
        }
        if obs.is_empty() {
            rows.push(DescriptiveRow {
                predictor: spec.name.clone(),
                domain: spec.domain,
                kind: spec.kind,
                value: f64::NAN,
                se: f64::NAN,
                n_observed: 0,
            });
            continue;
        }
        let wsum: f64 = obs.iter().map(|o| o.1).sum();
        let mean: f64 = obs.iter().map(|o| o.1 * o.2).sum::<f64>() / wsum;

        // Household sums of the linearized residuals, in first-appearance
        // order so the floating-point reduction is reproducible.
        let mut hh: Vec<(&str, f64)> = Vec::new();
        for &(h, w, y) in &obs {
            match hh.iter_mut().find(|(name, _)| *name == h) {
                Some(entry) => entry.1 += w * (y - mean),
                None => hh.push((h, w * (y - mean))),
            }
        }
        let m = hh.len();
        let se = if m > 1 {
            let ss: f64 = hh.iter().map(|(_, u)| u * u).sum();
            (m as f64 / (m as f64 - 1.0) * ss).sqrt() / wsum
        } else {
            f64::NAN
        };
        rows.push(DescriptiveRow {
            predictor: spec.name.clone(),
            domain: spec.domain,
            kind: spec.kind,
            value: mean,
            se,
            n_observed: obs.len(),
        });
    }
    Ok(rows)
}

/// Weighted Pearson correlation matrix (row-major M x M) over
/// pairwise-complete observations. Diagonal is exactly 1; entries involving
/// a zero-variance side are NaN (emitted as empty cells).
pub fn correlations(
    subjects: &[Subject],
    specs: &[CovariateSpec],
) -> Result<Vec<f64>, PipelineError> {
    check_shapes(subjects, specs)?;
    if subjects.len() < 2 {
        return Err(PipelineError::TooFewSubjects(subjects.len()));
    }
    let m = specs.len();
    let mut out = vec![f64::NAN; m * m];
    for a in 0..m {
        out[a * m + a] = 1.0;
        for b in (a + 1)..m {
            let mut sw = 0.0;
            let mut sx = 0.0;
            let mut sy = 0.0;
            for s in subjects {
                let (x, y, w) = (s.covariates[a], s.covariates[b], s.analysis_weight);
                if is_missing(x) || is_missing(y) || w <= 0.0 {
                    continue;
                }
                sw += w;
                sx += w * x;
                sy += w * y;
            }
            if sw <= 0.0 {
                continue;
            }
            let (mx, my) = (sx / sw, sy / sw);
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            for s in subjects {
                let (x, y, w) = (s.covariates[a], s.covariates[b], s.analysis_weight);
                if is_missing(x) || is_missing(y) || w <= 0.0 {
                    continue;
                }
                sxx += w * (x - mx) * (x - mx);
                syy += w * (y - my) * (y - my);
                sxy += w * (x - mx) * (y - my);
            }
            if sxx > 0.0 && syy > 0.0 {
                let r = sxy / (sxx.sqrt() * syy.sqrt());
                out[a * m + b] = r;
                out[b * m + a] = r;
            }
        }
    }
    Ok(out)
}

/// Outcome of one bivariate fit in a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct PredictorFit {
    pub predictor: String,
    pub domain: Domain,
    pub model: Model,
    /// None when the fit failed; the failure reason is in `status`.
    pub fit: Option<FitResult>,
    pub status: String,
}

/// One bivariate fit per predictor within a stratum's subjects. Sex-specific
/// predictors are skipped entirely (no row) in male strata; numerical
/// failures become per-predictor statuses instead of aborting the sweep.
pub fn run_sweep(
    subjects: &[Subject],
    specs: &[CovariateSpec],
    model: Model,
    stratum: Stratum,
) -> Result<Vec<PredictorFit>, PipelineError> {
    check_shapes(subjects, specs)?;
    if subjects.is_empty() {
        return Err(PipelineError::EmptyStratum(stratum));
    }
    let idx = build_risk_sets(subjects)?;
    let results: Vec<Option<PredictorFit>> = specs
        .par_iter()
        .enumerate()
        .map(|(j, spec)| {
            if spec.female_only && stratum.is_male() {
                return None;
            }
            let column: Vec<f64> = subjects.iter().map(|s| s.covariates[j]).collect();
            let outcome = match model {
                Model::CauseSpecific => cox_fit(&idx, &column, EventKind::Dementia),
                Model::FineGray => fine_gray_fit(&idx, &column, EventKind::Dementia),
            };
            let row = match outcome {
                Ok(fit) => PredictorFit {
                    predictor: spec.name.clone(),
                    domain: spec.domain,
                    model,
                    status: if fit.converged { "ok".into() } else { "max_iterations".into() },
                    fit: Some(fit),
                },
                Err(e) => PredictorFit {
                    predictor: spec.name.clone(),
                    domain: spec.domain,
                    model,
                    fit: None,
                    status: e.to_string(),
                },
            };
            Some(row)
        })
        .collect();
    Ok(results.into_iter().flatten().collect())
}

fn check_shapes(subjects: &[Subject], specs: &[CovariateSpec]) -> Result<(), PipelineError> {
    for s in subjects {
        if s.covariates.len() != specs.len() {
            return Err(PipelineError::SpecMismatch {
                got: s.covariates.len(),
                want: specs.len(),
            });
        }
    }
    Ok(())
}

/// How predictors absent from a stratum's importance table enter the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingRankPolicy {
    /// Absent predictors get the worst possible rank M (the union size).
    WorstRank,
    /// Mean over the strata where the predictor is present.
    MeanAvailable,
}

impl Default for MissingRankPolicy {
    fn default() -> Self {
        MissingRankPolicy::WorstRank
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RankingRow {
    pub predictor: String,
    pub domain: Domain,
    /// Rank used per stratum, in the order the tables were passed; None
    /// where absent under the mean-available policy.
    pub stratum_ranks: Vec<Option<usize>>,
    pub mean_rank: f64,
    pub overall_rank: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OverallRanking {
    pub stratum_labels: Vec<String>,
    pub rows: Vec<RankingRow>,
}

/// Aggregate per-stratum importance tables into an overall ranking: the
/// unweighted mean of per-stratum ranks, sorted ascending. Ties break by the
/// best single-stratum rank, then by name.
///
/// A predictor may be absent from a stratum only with a sex-specific
/// exemption (`female_only` spec in a male stratum); anything else is an
/// InconsistentPredictorSets error.
pub fn rank_aggregate(
    tables: &[(Stratum, &VimpTable)],
    specs: &[CovariateSpec],
    policy: MissingRankPolicy,
) -> Result<OverallRanking, PipelineError> {
    if tables.is_empty() {
        return Err(PipelineError::NoTables);
    }

    // Union predictor set in first-appearance order across tables.
    let mut names: Vec<&str> = Vec::new();
    for (_, table) in tables {
        for row in &table.rows {
            if !names.contains(&row.predictor.as_str()) {
                names.push(&row.predictor);
            }
        }
    }
    let m = names.len();

    let domain_of = |name: &str| -> Domain {
        specs
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.domain)
            .unwrap_or(Domain::Health)
    };
    let exempt = |name: &str, stratum: Stratum| -> bool {
        stratum.is_male()
            && specs
                .iter()
                .find(|s| s.name == name)
                .is_some_and(|s| s.female_only)
    };

    let mut rows: Vec<RankingRow> = Vec::with_capacity(m);
    for &name in &names {
        let mut stratum_ranks: Vec<Option<usize>> = Vec::with_capacity(tables.len());
        let mut sum = 0.0;
        let mut count = 0.0;
        for &(stratum, table) in tables {
            match table.rows.iter().find(|r| r.predictor == name) {
                Some(row) => {
                    stratum_ranks.push(Some(row.rank));
                    sum += row.rank as f64;
                    count += 1.0;
                }
                None => {
                    if !exempt(name, stratum) {
                        return Err(PipelineError::InconsistentPredictorSets {
                            stratum: stratum.label().to_string(),
                            predictor: name.to_string(),
                        });
                    }
                    match policy {
                        MissingRankPolicy::WorstRank => {
                            stratum_ranks.push(Some(m));
                            sum += m as f64;
                            count += 1.0;
                        }
                        MissingRankPolicy::MeanAvailable => stratum_ranks.push(None),
                    }
                }
            }
        }
        let mean_rank = sum / count;
        rows.push(RankingRow {
            predictor: name.to_string(),
            domain: domain_of(name),
            stratum_ranks,
            mean_rank,
            overall_rank: 0,
        });
    }

    rows.sort_by(|a, b| {
        let best = |r: &RankingRow| r.stratum_ranks.iter().flatten().min().copied().unwrap_or(usize::MAX);
        a.mean_rank
            .partial_cmp(&b.mean_rank)
            .unwrap()
            .then_with(|| best(a).cmp(&best(b)))
            .then_with(|| a.predictor.cmp(&b.predictor))
    });
    for (pos, row) in rows.iter_mut().enumerate() {
        row.overall_rank = pos + 1;
    }

    Ok(OverallRanking {
        stratum_labels: tables.iter().map(|(s, _)| s.label().to_string()).collect(),
        rows,
    })
}
