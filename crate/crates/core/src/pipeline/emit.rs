//! CSV and JSON writers for pipeline outputs.
//!
//! Float cells use the shortest decimal form that parses back to the same
//! bits, so emitted tables round-trip losslessly; NaN becomes an empty cell.
//! The run manifest carries no timestamps, so a rerun with the same inputs
//! produces byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;

use serde::Serialize;

use crate::cohort::{CovariateSpec, Domain, EventKind, Stratum, Subject};
use crate::forest::VimpTable;
use crate::survival::Model;

use super::{DescriptiveRow, OverallRanking, PipelineError, PredictorFit};

/// Shortest round-trip decimal form; NaN is an empty cell.
pub fn fmt_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Inverse of `fmt_cell`.
pub fn parse_cell(s: &str) -> Result<f64, PipelineError> {
    let t = s.trim();
    if t.is_empty() {
        return Ok(f64::NAN);
    }
    t.parse::<f64>()
        .map_err(|_| PipelineError::Malformed(format!("bad numeric cell {t:?}")))
}

pub const FITS_HEADER: [&str; 13] = [
    "stratum",
    "predictor",
    "domain",
    "model",
    "beta",
    "hr",
    "se_robust",
    "ci_lo",
    "ci_hi",
    "n",
    "n_events",
    "n_clusters",
    "converged",
];

/// One emitted row of a fits table, exactly the columns on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FitCsvRow {
    pub stratum: String,
    pub predictor: String,
    pub domain: Domain,
    pub model: Model,
    pub beta: f64,
    pub hr: f64,
    pub se_robust: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
    pub n_events: usize,
    pub n_clusters: usize,
    pub converged: bool,
}

/// Write converged and max-iteration fits; predictors whose fit failed get
/// no row here (their statuses land in the run manifest).
pub fn write_fits_csv(
    path: &Path,
    stratum: Stratum,
    fits: &[PredictorFit],
) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(FITS_HEADER)?;
    for row in fits {
        let Some(fit) = &row.fit else { continue };
        w.write_record([
            stratum.label().to_string(),
            row.predictor.clone(),
            row.domain.label().to_string(),
            row.model.label().to_string(),
            fmt_cell(fit.beta),
            fmt_cell(fit.hr),
            fmt_cell(fit.robust_se),
            fmt_cell(fit.ci95.0),
            fmt_cell(fit.ci95.1),
            fit.n.to_string(),
            fit.n_events.to_string(),
            fit.n_clusters.to_string(),
            fit.converged.to_string(),
        ])?;
    }
    w.flush().map_err(|e| PipelineError::Io(e))?;
    Ok(())
}

pub fn read_fits_csv(path: &Path) -> Result<Vec<FitCsvRow>, PipelineError> {
    let mut r = csv::Reader::from_path(path)?;
    let bad = |what: &str| PipelineError::Malformed(format!("fits csv: bad {what}"));
    let header = r.headers()?.clone();
    if header.iter().ne(FITS_HEADER) {
        return Err(bad("header"));
    }
    let mut out = Vec::new();
    for record in r.records() {
        let rec = record?;
        let cell = |i: usize| rec.get(i).unwrap_or("");
        out.push(FitCsvRow {
            stratum: cell(0).to_string(),
            predictor: cell(1).to_string(),
            domain: Domain::parse(cell(2)).ok_or_else(|| bad("domain"))?,
            model: Model::parse(cell(3)).ok_or_else(|| bad("model"))?,
            beta: parse_cell(cell(4))?,
            hr: parse_cell(cell(5))?,
            se_robust: parse_cell(cell(6))?,
            ci_lo: parse_cell(cell(7))?,
            ci_hi: parse_cell(cell(8))?,
            n: cell(9).parse().map_err(|_| bad("n"))?,
            n_events: cell(10).parse().map_err(|_| bad("n_events"))?,
            n_clusters: cell(11).parse().map_err(|_| bad("n_clusters"))?,
            converged: cell(12).parse().map_err(|_| bad("converged"))?,
        });
    }
    Ok(out)
}

pub const VIMP_HEADER: [&str; 6] =
    ["stratum", "predictor", "domain", "importance", "rank", "negative_flag"];

pub fn write_vimp_csv(path: &Path, table: &VimpTable) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(VIMP_HEADER)?;
    for row in &table.rows {
        w.write_record([
            table.stratum_label.clone(),
            row.predictor.clone(),
            row.domain.label().to_string(),
            fmt_cell(row.importance),
            row.rank.to_string(),
            row.negative.to_string(),
        ])?;
    }
    w.flush().map_err(PipelineError::Io)?;
    Ok(())
}

/// Read a per-stratum importance table back. The horizon and baseline error
/// are not stored in the CSV, so they come back as NaN; rank aggregation
/// needs only the per-row ranks.
pub fn read_vimp_csv(path: &Path) -> Result<VimpTable, PipelineError> {
    let mut r = csv::Reader::from_path(path)?;
    let bad = |what: &str| PipelineError::Malformed(format!("vimp csv: bad {what}"));
    if r.headers()?.iter().ne(VIMP_HEADER) {
        return Err(bad("header"));
    }
    let mut stratum_label: Option<String> = None;
    let mut rows = Vec::new();
    for record in r.records() {
        let rec = record?;
        let cell = |i: usize| rec.get(i).unwrap_or("");
        match &stratum_label {
            None => stratum_label = Some(cell(0).to_string()),
            Some(label) if label != cell(0) => return Err(bad("mixed strata")),
            Some(_) => {}
        }
        rows.push(crate::forest::VimpRow {
            predictor: cell(1).to_string(),
            domain: Domain::parse(cell(2)).ok_or_else(|| bad("domain"))?,
            importance: parse_cell(cell(3))?,
            rank: cell(4).parse().map_err(|_| bad("rank"))?,
            negative: cell(5).parse().map_err(|_| bad("negative_flag"))?,
        });
    }
    let stratum_label = stratum_label.ok_or_else(|| bad("empty table"))?;
    Ok(VimpTable { stratum_label, horizon: f64::NAN, baseline_error: f64::NAN, rows })
}

/// Predictor-by-stratum rank grid with the aggregate columns first.
pub fn write_ranks_csv(path: &Path, ranking: &OverallRanking) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "predictor".to_string(),
        "domain".to_string(),
        "overall_rank".to_string(),
        "mean_rank".to_string(),
    ];
    for label in &ranking.stratum_labels {
        header.push(format!("rank_{label}"));
    }
    w.write_record(&header)?;
    for row in &ranking.rows {
        let mut rec = vec![
            row.predictor.clone(),
            row.domain.label().to_string(),
            row.overall_rank.to_string(),
            fmt_cell(row.mean_rank),
        ];
        for r in &row.stratum_ranks {
            rec.push(r.map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(PipelineError::Io)?;
    Ok(())
}

pub fn write_descriptives_csv(
    path: &Path,
    blocks: &[(Stratum, Vec<DescriptiveRow>)],
) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["stratum", "predictor", "domain", "kind", "value", "se", "n_observed"])?;
    for (stratum, rows) in blocks {
        for row in rows {
            w.write_record([
                stratum.label().to_string(),
                row.predictor.clone(),
                row.domain.label().to_string(),
                row.kind.label().to_string(),
                fmt_cell(row.value),
                fmt_cell(row.se),
                row.n_observed.to_string(),
            ])?;
        }
    }
    w.flush().map_err(PipelineError::Io)?;
    Ok(())
}

/// Square correlation matrix with predictor names on both axes.
pub fn write_correlations_csv(
    path: &Path,
    specs: &[CovariateSpec],
    matrix: &[f64],
) -> Result<(), PipelineError> {
    let m = specs.len();
    if matrix.len() != m * m {
        return Err(PipelineError::Malformed(format!(
            "correlation matrix has {} cells, want {}",
            matrix.len(),
            m * m
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["predictor".to_string()];
    header.extend(specs.iter().map(|s| s.name.clone()));
    w.write_record(&header)?;
    for (i, spec) in specs.iter().enumerate() {
        let mut rec = vec![spec.name.clone()];
        for j in 0..m {
            rec.push(fmt_cell(matrix[i * m + j]));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(PipelineError::Io)?;
    Ok(())
}

/// Per-predictor fit status for the manifest; only non-"ok" entries are kept.
#[derive(Debug, Clone, Serialize)]
pub struct FitStatus {
    pub predictor: String,
    pub model: String,
    pub status: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StratumSummary {
    pub stratum: String,
    pub n_subjects: usize,
    pub n_households: usize,
    pub n_dementia: usize,
    pub n_death: usize,
    pub n_censored: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oob_error: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fit_issues: Vec<FitStatus>,
}

pub fn stratum_summary(stratum: Stratum, subjects: &[Subject]) -> StratumSummary {
    let mut households = std::collections::HashSet::new();
    let mut n_dementia = 0;
    let mut n_death = 0;
    let mut n_censored = 0;
    for s in subjects {
        households.insert(s.household_id.as_str());
        match s.event {
            EventKind::Dementia => n_dementia += 1,
            EventKind::Death => n_death += 1,
            EventKind::Censored => n_censored += 1,
        }
    }
    StratumSummary {
        stratum: stratum.label().to_string(),
        n_subjects: subjects.len(),
        n_households: households.len(),
        n_dementia,
        n_death,
        n_censored,
        oob_error: None,
        fit_issues: Vec::new(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ImputationSummary {
    /// Originally missing cells that were filled.
    pub n_cells: usize,
    pub per_iteration_change: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightingSummary {
    pub n_included: usize,
    pub n_excluded: usize,
    pub propensity_iterations: usize,
    pub max_weight: f64,
}

/// Run-level provenance. Deliberately timestamp-free.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub imputation: Option<ImputationSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighting: Option<WeightingSummary>,
    pub strata: Vec<StratumSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn new(seed: u64, config_hash: String) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash,
            imputation: None,
            weighting: None,
            strata: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), PipelineError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// FNV-1a over a canonical config string; stable across runs and platforms.
pub fn config_hash(canonical: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in canonical.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}
