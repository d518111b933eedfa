//! Whole-run orchestration: impute once over the pooled sample, apply
//! selection weights, analyze each demographic stratum, aggregate ranks,
//! and write every output file.
//!
//! A stratum that cannot be analyzed (empty, or no primary events) does not
//! abort the run: it gets header-only output files and a manifest warning,
//! and is reported in `RunOutcome::failed` so the caller can exit nonzero.

use std::collections::HashMap;
use std::path::Path;

use crate::cohort::{is_missing, CovariateSpec, Stratum, Subject, MISSING};
use crate::forest::{grow_forest, ForestConfig, OobReport, VimpTable};
use crate::impute::impute;
use crate::rng::{derive_seed, NS_STRATUM};
use crate::survival::Model;
use crate::weights::{compute_ipw, fit_propensity};

use super::config::RunConfig;
use super::emit::{
    stratum_summary, write_correlations_csv, write_descriptives_csv, write_fits_csv,
    write_manifest, write_ranks_csv, write_vimp_csv, FitStatus, ImputationSummary, RunManifest,
    WeightingSummary,
};
use super::{
    correlations, describe, rank_aggregate, run_sweep, DescriptiveRow, OverallRanking,
    PipelineError, PredictorFit,
};

/// Everything one stratum contributes to the outputs.
#[derive(Debug, Clone)]
pub struct StratumReport {
    pub stratum: Stratum,
    pub n: usize,
    pub fine_gray: Vec<PredictorFit>,
    pub cause_specific: Vec<PredictorFit>,
    pub vimp: VimpTable,
    pub oob: OobReport,
    pub descriptives: Vec<DescriptiveRow>,
    /// Row-major M x M, covariates in `CovariateSpec` list order.
    pub correlations: Vec<f64>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub reports: Vec<StratumReport>,
    pub ranking: Option<OverallRanking>,
    pub manifest: RunManifest,
    /// Labels of strata that produced no report.
    pub failed: Vec<String>,
}

/// Drop columns a stratum cannot use (sex-specific ones in male strata) from
/// both the subjects and the `CovariateSpec` list, keeping indices aligned.
pub fn project_for_forest(
    subjects: &[Subject],
    specs: &[CovariateSpec],
    stratum: Stratum,
) -> (Vec<Subject>, Vec<CovariateSpec>) {
    let keep: Vec<usize> = specs
        .iter()
        .enumerate()
        .filter(|(_, s)| !(s.female_only && stratum.is_male()))
        .map(|(i, _)| i)
        .collect();
    if keep.len() == specs.len() {
        return (subjects.to_vec(), specs.to_vec());
    }
    let specs2: Vec<CovariateSpec> = keep.iter().map(|&i| specs[i].clone()).collect();
    let subjects2: Vec<Subject> = subjects
        .iter()
        .map(|s| {
            let mut t = s.clone();
            t.covariates = keep.iter().map(|&i| s.covariates[i]).collect();
            t
        })
        .collect();
    (subjects2, specs2)
}

/// Fit both model sweeps, grow the forest, and assemble the tables for one
/// stratum. `subjects` must already be restricted to the stratum and free of
/// missing cells except sex-specific exclusions.
pub fn run_stratum(
    subjects: &[Subject],
    specs: &[CovariateSpec],
    forest_cfg: &ForestConfig,
    stratum: Stratum,
) -> Result<StratumReport, PipelineError> {
    if subjects.is_empty() {
        return Err(PipelineError::EmptyStratum(stratum));
    }
    let fine_gray = run_sweep(subjects, specs, Model::FineGray, stratum)?;
    let cause_specific = run_sweep(subjects, specs, Model::CauseSpecific, stratum)?;
    let (fsubs, fspecs) = project_for_forest(subjects, specs, stratum);
    let forest = grow_forest(&fsubs, &fspecs, forest_cfg)?;
    let vimp = forest.vimp()?;
    let oob = forest.oob_error(None)?;
    let descriptives = describe(subjects, specs)?;
    let correlations = correlations(subjects, specs)?;
    Ok(StratumReport {
        stratum,
        n: subjects.len(),
        fine_gray,
        cause_specific,
        vimp,
        oob,
        descriptives,
        correlations,
    })
}

fn empty_vimp(label: &str) -> VimpTable {
    VimpTable {
        stratum_label: label.to_string(),
        horizon: f64::NAN,
        baseline_error: f64::NAN,
        rows: Vec::new(),
    }
}

/// Impute the pooled covariate matrix in place, then restore sex-specific
/// blanks so male strata never carry fabricated female-only values.
/// Returns None when nothing was missing.
pub fn impute_stage(
    cfg: &RunConfig,
    subjects: &mut [Subject],
    specs: &[CovariateSpec],
) -> Result<Option<ImputationSummary>, PipelineError> {
    let n_missing = subjects
        .iter()
        .flat_map(|s| s.covariates.iter())
        .filter(|v| is_missing(**v))
        .count();
    if n_missing == 0 {
        return Ok(None);
    }
    let n = subjects.len();
    let mut columns: Vec<Vec<f64>> = vec![vec![0.0; n]; specs.len()];
    for (i, s) in subjects.iter().enumerate() {
        for (j, &v) in s.covariates.iter().enumerate() {
            columns[j][i] = v;
        }
    }
    let base: Vec<f64>;
    let weights = if cfg.impute.use_weights {
        base = subjects.iter().map(|s| s.base_weight).collect();
        Some(base.as_slice())
    } else {
        None
    };
    let result = impute(&columns, specs, weights, &cfg.impute)?;
    for (i, s) in subjects.iter_mut().enumerate() {
        for j in 0..specs.len() {
            s.covariates[j] = result.columns[j][i];
        }
    }
    for s in subjects.iter_mut() {
        if s.stratum.is_male() {
            for (j, spec) in specs.iter().enumerate() {
                if spec.female_only {
                    s.covariates[j] = MISSING;
                }
            }
        }
    }
    let still_missing = subjects
        .iter()
        .flat_map(|s| s.covariates.iter())
        .filter(|v| is_missing(**v))
        .count();
    Ok(Some(ImputationSummary {
        n_cells: n_missing - still_missing,
        per_iteration_change: result.per_iteration_change,
    }))
}

/// Fit the selection propensity on the configured features and replace
/// analysis weights with capped inverse-probability weights. Subjects
/// outside the included subsample get weight zero. Returns None when no
/// propensity features are configured.
pub fn weights_stage(
    cfg: &RunConfig,
    subjects: &mut [Subject],
    specs: &[CovariateSpec],
) -> Result<Option<WeightingSummary>, PipelineError> {
    if cfg.weights.features.is_empty() {
        return Ok(None);
    }
    let by_name: HashMap<&str, usize> =
        specs.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    let inc_idx = *by_name.get(cfg.weights.included_col.as_str()).ok_or_else(|| {
        PipelineError::Malformed(format!(
            "included_col {:?} is not a covariate",
            cfg.weights.included_col
        ))
    })?;
    let mut feat_idx = Vec::with_capacity(cfg.weights.features.len());
    for f in &cfg.weights.features {
        feat_idx.push(*by_name.get(f.as_str()).ok_or_else(|| {
            PipelineError::Malformed(format!("propensity feature {f:?} is not a covariate"))
        })?);
    }
    let n = subjects.len();
    let k = feat_idx.len();
    let mut features = vec![0.0; n * k];
    let mut included = vec![false; n];
    let base: Vec<f64> = subjects.iter().map(|s| s.base_weight).collect();
    for (i, s) in subjects.iter().enumerate() {
        included[i] = s.covariates[inc_idx] > 0.0;
        for (c, &j) in feat_idx.iter().enumerate() {
            features[i * k + c] = s.covariates[j];
        }
    }
    let model = fit_propensity(&features, k, &included, &base)?;
    let w = compute_ipw(&model, &included, &base, cfg.weights.truncation_quantile)?;
    let max_weight = w.iter().copied().fold(0.0_f64, f64::max);
    for (i, s) in subjects.iter_mut().enumerate() {
        s.analysis_weight = w[i];
    }
    Ok(Some(WeightingSummary {
        n_included: included.iter().filter(|&&b| b).count(),
        n_excluded: included.iter().filter(|&&b| !b).count(),
        propensity_iterations: model.iterations,
        max_weight,
    }))
}

/// The `run-all` entry point: impute, weight, per-stratum analyses, rank
/// aggregation, and file emission into `out_dir`.
pub fn run_all(
    cfg: &RunConfig,
    subjects: &mut Vec<Subject>,
    specs: &[CovariateSpec],
    out_dir: &Path,
) -> Result<RunOutcome, PipelineError> {
    if specs.is_empty() {
        return Err(PipelineError::Malformed("cohort has no covariates".into()));
    }
    for s in subjects.iter() {
        if s.covariates.len() != specs.len() {
            return Err(PipelineError::SpecMismatch {
                got: s.covariates.len(),
                want: specs.len(),
            });
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = RunManifest::new(cfg.seed, cfg.hash());
    manifest.imputation = impute_stage(cfg, subjects, specs)?;
    manifest.weighting = weights_stage(cfg, subjects, specs)?;

    let mut reports: Vec<StratumReport> = Vec::new();
    let mut failed: Vec<String> = Vec::new();
    let mut desc_blocks: Vec<(Stratum, Vec<DescriptiveRow>)> = Vec::new();

    for (si, stratum) in Stratum::ALL.iter().copied().enumerate() {
        let label = stratum.label();
        let subs: Vec<Subject> =
            subjects.iter().filter(|s| s.stratum == stratum).cloned().collect();
        let mut fcfg = cfg.forest.clone();
        fcfg.seed = derive_seed(cfg.forest.seed, &[NS_STRATUM, si as u64]);

        match run_stratum(&subs, specs, &fcfg, stratum) {
            Ok(report) => {
                let mut all = report.fine_gray.clone();
                all.extend(report.cause_specific.iter().cloned());
                write_fits_csv(&out_dir.join(format!("fits_{label}.csv")), stratum, &all)?;
                write_vimp_csv(&out_dir.join(format!("vimp_{label}.csv")), &report.vimp)?;
                write_correlations_csv(
                    &out_dir.join(format!("correlations_{label}.csv")),
                    specs,
                    &report.correlations,
                )?;
                let mut summary = stratum_summary(stratum, &subs);
                summary.oob_error = Some(report.oob.error);
                for row in report.fine_gray.iter().chain(&report.cause_specific) {
                    if row.status != "ok" {
                        summary.fit_issues.push(FitStatus {
                            predictor: row.predictor.clone(),
                            model: row.model.label().to_string(),
                            status: row.status.clone(),
                        });
                    }
                }
                manifest.strata.push(summary);
                desc_blocks.push((stratum, report.descriptives.clone()));
                reports.push(report);
            }
            Err(e @ (PipelineError::Io(_) | PipelineError::Csv(_) | PipelineError::Json(_))) => {
                return Err(e)
            }
            Err(e) => {
                failed.push(label.to_string());
                manifest
                    .warnings
                    .push(format!("stratum {label}: {e}; emitted header-only files"));
                write_fits_csv(&out_dir.join(format!("fits_{label}.csv")), stratum, &[])?;
                write_vimp_csv(&out_dir.join(format!("vimp_{label}.csv")), &empty_vimp(label))?;
                write_correlations_csv(
                    &out_dir.join(format!("correlations_{label}.csv")),
                    &[],
                    &[],
                )?;
            }
        }
    }

    let ranking = if reports.is_empty() {
        None
    } else {
        let tables: Vec<(Stratum, &VimpTable)> =
            reports.iter().map(|r| (r.stratum, &r.vimp)).collect();
        let ranking = rank_aggregate(&tables, specs, cfg.rank.missing_policy)?;
        write_ranks_csv(&out_dir.join("ranks_overall.csv"), &ranking)?;
        Some(ranking)
    };
    write_descriptives_csv(&out_dir.join("descriptives.csv"), &desc_blocks)?;
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;

    Ok(RunOutcome { reports, ranking, manifest, failed })
}
