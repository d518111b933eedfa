//! Iterative forest-based imputation in the missForest style.
//!
//! Missing cells are initialized with column means (continuous) or observed
//! majority signs (binary), then refined over a fixed number of iterations.
//! Each iteration visits columns in ascending-missingness order, fits a small
//! random forest of that column on all the others over the rows where the
//! column was observed, and overwrites only the originally missing cells.
//! Observed cells are never touched.
//!
//! Determinism: per-tree RNG streams are derived from (seed, column, tree),
//! so output is independent of thread scheduling.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cohort::{is_missing, CodingKind, CovariateSpec};
use crate::forest::{grow_cart, predict_row, CartConfig, CartKind, CartTree};
use crate::rng::{task_rng, NS_IMPUTE_TREE};

#[derive(Debug, Error)]
pub enum ImputeError {
    #[error("matrix is empty")]
    EmptyMatrix,
    #[error("column {name:?} has no observed values")]
    AllMissingColumn { name: String },
    #[error("matrix has {got} columns but {want} specs")]
    SpecMismatch { got: usize, want: usize },
    #[error("ragged matrix: column {column} has {got} rows, expected {want}")]
    RaggedMatrix { column: usize, got: usize, want: usize },
    #[error("invalid imputation configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ImputeConfig {
    pub iterations: usize,
    pub trees_per_forest: usize,
    /// Candidate predictors per node; defaults to floor(sqrt(p)).
    pub mtry: Option<usize>,
    pub min_node: usize,
    pub seed: u64,
    /// Draw bootstrap rows proportionally to these weights when set;
    /// unweighted by default.
    pub use_weights: bool,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig {
            iterations: 5,
            trees_per_forest: 500,
            mtry: None,
            min_node: 5,
            seed: 0,
            use_weights: false,
        }
    }
}

/// Completed matrix plus provenance: which cells were imputed and how much
/// the imputed values moved per iteration.
#[derive(Debug, Clone)]
pub struct ImputedMatrix {
    /// Column-major, no missing entries.
    pub columns: Vec<Vec<f64>>,
    /// True where the input cell was missing (column-major, same shape).
    pub mask: Vec<Vec<bool>>,
    /// Root of sum((new-old)^2) / sum(new^2) over imputed cells, one entry
    /// per iteration.
    pub per_iteration_change: Vec<f64>,
}

/// Fill missing cells with the column mean (continuous) or the observed
/// majority sign, ties toward +1 (binary).
pub fn fill_initial(
    columns: &[Vec<f64>],
    specs: &[CovariateSpec],
) -> Result<Vec<Vec<f64>>, ImputeError> {
    validate(columns, specs)?;
    let mut out = columns.to_vec();
    for (c, col) in out.iter_mut().enumerate() {
        let observed: Vec<f64> = col.iter().copied().filter(|v| !is_missing(*v)).collect();
        if observed.is_empty() {
            return Err(ImputeError::AllMissingColumn { name: specs[c].name.clone() });
        }
        let fill = match specs[c].kind {
            CodingKind::BinaryPm1 => {
                let balance: f64 = observed.iter().sum();
                if balance >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            CodingKind::StandardizedContinuous => {
                observed.iter().sum::<f64>() / observed.len() as f64
            }
        };
        for v in col.iter_mut() {
            if is_missing(*v) {
                *v = fill;
            }
        }
    }
    Ok(out)
}

fn validate(columns: &[Vec<f64>], specs: &[CovariateSpec]) -> Result<(), ImputeError> {
    if columns.is_empty() || columns[0].is_empty() {
        return Err(ImputeError::EmptyMatrix);
    }
    if columns.len() != specs.len() {
        return Err(ImputeError::SpecMismatch { got: columns.len(), want: specs.len() });
    }
    let n = columns[0].len();
    for (c, col) in columns.iter().enumerate() {
        if col.len() != n {
            return Err(ImputeError::RaggedMatrix { column: c, got: col.len(), want: n });
        }
    }
    Ok(())
}

/// Iterative forest imputation. `weights` is consulted only when
/// `cfg.use_weights` is set; rows then enter each bootstrap proportionally.
pub fn impute(
    columns: &[Vec<f64>],
    specs: &[CovariateSpec],
    weights: Option<&[f64]>,
    cfg: &ImputeConfig,
) -> Result<ImputedMatrix, ImputeError> {
    validate(columns, specs)?;
    if cfg.iterations == 0 || cfg.trees_per_forest == 0 || cfg.min_node == 0 {
        return Err(ImputeError::InvalidConfig(
            "iterations, trees_per_forest, and min_node must be positive".into(),
        ));
    }
    let p = columns.len();
    if let Some(m) = cfg.mtry {
        if m == 0 || m > p.saturating_sub(1).max(1) {
            return Err(ImputeError::InvalidConfig(format!(
                "mtry must lie in 1..={}, got {m}",
                p.saturating_sub(1).max(1)
            )));
        }
    }
    let n = columns[0].len();
    if n < 2 {
        return Err(ImputeError::EmptyMatrix);
    }

    let mask: Vec<Vec<bool>> = columns
        .iter()
        .map(|col| col.iter().map(|&v| is_missing(v)).collect())
        .collect();
    let missing_count: Vec<usize> =
        mask.iter().map(|m| m.iter().filter(|&&b| b).count()).collect();

    let mut values = fill_initial(columns, specs)?;

    // Ascending missingness; ties by column index.
    let mut visit: Vec<usize> = (0..p).collect();
    visit.sort_by_key(|&c| (missing_count[c], c));

    let total_missing: usize = missing_count.iter().sum();
    let mut per_iteration_change = Vec::with_capacity(cfg.iterations);
    if total_missing == 0 {
        per_iteration_change.resize(cfg.iterations, 0.0);
        return Ok(ImputedMatrix { columns: values, mask, per_iteration_change });
    }

    let mtry = cfg.mtry.unwrap_or_else(|| {
        ((p.saturating_sub(1)) as f64).sqrt().floor().max(1.0) as usize
    });
    let draw_weights: Option<Vec<f64>> = if cfg.use_weights {
        weights.map(|w| w.to_vec())
    } else {
        None
    };

    for _iter in 0..cfg.iterations {
        let mut num = 0.0;
        let mut den = 0.0;
        for &c in &visit {
            if missing_count[c] == 0 {
                continue;
            }
            let train_rows: Vec<usize> = (0..n).filter(|&r| !mask[c][r]).collect();
            let predict_rows: Vec<usize> = (0..n).filter(|&r| mask[c][r]).collect();
            debug_assert!(!train_rows.is_empty());

            // Predictors: every other column, in index order.
            let predictor_cols: Vec<&[f64]> = (0..p)
                .filter(|&f| f != c)
                .map(|f| values[f].as_slice())
                .collect();
            let kind = match specs[c].kind {
                CodingKind::BinaryPm1 => CartKind::Classification,
                CodingKind::StandardizedContinuous => CartKind::Regression,
            };
            let cart_cfg = CartConfig { mtry: mtry.min(predictor_cols.len().max(1)), min_node: cfg.min_node };
            let target = &values[c];

            let trees: Vec<CartTree> = (0..cfg.trees_per_forest)
                .into_par_iter()
                .map(|t| {
                    let mut rng = task_rng(cfg.seed, &[NS_IMPUTE_TREE, c as u64, t as u64]);
                    let rows = bootstrap_rows(&train_rows, draw_weights.as_deref(), &mut rng);
                    grow_cart(&predictor_cols, &rows, target, kind, &cart_cfg, &mut rng)
                })
                .collect();

            // Ensemble prediction for the originally missing rows only.
            let predictions: Vec<f64> = predict_rows
                .par_iter()
                .map(|&r| {
                    let mut sum = 0.0;
                    for tree in &trees {
                        sum += predict_row(tree, |f| {
                            // Feature indices skip the target column.
                            let col = if f < c { f } else { f + 1 };
                            values[col][r]
                        });
                    }
                    let mean = sum / trees.len() as f64;
                    match kind {
                        CartKind::Regression => mean,
                        CartKind::Classification => {
                            if mean >= 0.0 {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                    }
                })
                .collect();

            for (k, &r) in predict_rows.iter().enumerate() {
                let old = values[c][r];
                let new = predictions[k];
                num += (new - old) * (new - old);
                den += new * new;
                values[c][r] = new;
            }
        }
        per_iteration_change.push(if den > 0.0 { (num / den).sqrt() } else { 0.0 });
    }

    Ok(ImputedMatrix { columns: values, mask, per_iteration_change })
}

fn bootstrap_rows(
    train_rows: &[usize],
    weights: Option<&[f64]>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<usize> {
    let k = train_rows.len();
    let mut rows = Vec::with_capacity(k);
    match weights {
        None => {
            for _ in 0..k {
                rows.push(train_rows[rng.random_range(0..k)]);
            }
        }
        Some(w) => {
            let mut cw = Vec::with_capacity(k);
            let mut total = 0.0;
            for &r in train_rows {
                total += w[r].max(0.0);
                cw.push(total);
            }
            if total <= 0.0 {
                for _ in 0..k {
                    rows.push(train_rows[rng.random_range(0..k)]);
                }
                return rows;
            }
            for _ in 0..k {
                let u = rng.random::<f64>() * total;
                let i = cw.partition_point(|&c| c <= u).min(k - 1);
                rows.push(train_rows[i]);
            }
        }
    }
    rows
}
