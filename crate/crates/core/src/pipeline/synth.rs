//! Synthetic cohort generation with known cause-specific hazards.
//!
//! Latent event times for each cause follow lambda_k(t|x) = lambda_0k(t) *
//! exp(beta_k' x) on the age timescale, drawn by inverse-transform sampling
//! of the cumulative hazard conditional on being event-free at the entry age
//! (left truncation). The observed record is the earliest of the two latent
//! cause times, an exponential censoring time, and the administrative
//! horizon. True parameters ride along for estimator scoring.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{CodingKind, CovariateSpec, EventKind, Stratum, Subject, MISSING};
use crate::rng::{task_rng, NS_SYNTH};

use super::PipelineError;

/// Baseline cumulative hazard shape on the age timescale.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    Constant { rate: f64 },
    Weibull { shape: f64, scale: f64 },
}

impl Baseline {
    fn validate(&self, what: &str) -> Result<(), PipelineError> {
        let ok = match *self {
            Baseline::Constant { rate } => rate.is_finite() && rate >= 0.0,
            Baseline::Weibull { shape, scale } => {
                shape.is_finite() && shape > 0.0 && scale.is_finite() && scale > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(PipelineError::InfeasibleConfig(format!("invalid {what} baseline: {self:?}")))
        }
    }

    fn is_positive(&self) -> bool {
        match *self {
            Baseline::Constant { rate } => rate > 0.0,
            Baseline::Weibull { .. } => true,
        }
    }

    /// H0(t) from age zero.
    fn cumulative(&self, t: f64) -> f64 {
        match *self {
            Baseline::Constant { rate } => rate * t,
            Baseline::Weibull { shape, scale } => (t / scale).powf(shape),
        }
    }

    /// Inverse of `cumulative`; infinite when the hazard is zero.
    fn invert(&self, h: f64) -> f64 {
        match *self {
            Baseline::Constant { rate } => {
                if rate > 0.0 {
                    h / rate
                } else {
                    f64::INFINITY
                }
            }
            Baseline::Weibull { shape, scale } => scale * h.powf(1.0 / shape),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    /// Entry ages drawn uniformly from this closed interval.
    pub entry_age: (f64, f64),
    /// Administrative censoring age; may be infinite.
    pub horizon: f64,
    pub baseline_dementia: Baseline,
    pub baseline_death: Baseline,
    pub beta_dementia: Vec<f64>,
    pub beta_death: Vec<f64>,
    /// Constant censoring hazard; zero disables random censoring.
    pub censoring_rate: f64,
    pub covariates: Vec<CovariateSpec>,
    /// Household sizes drawn uniformly from 1..=household_max.
    pub household_max: usize,
    /// Base sampling weights drawn uniformly from this interval.
    pub weight_range: (f64, f64),
    /// Per-cell MCAR missingness injected after event generation.
    pub missing_rate: f64,
    /// Strata assigned to households round-robin.
    pub strata: Vec<Stratum>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 2000,
            entry_age: (50.0, 56.0),
            horizon: 95.0,
            baseline_dementia: Baseline::Constant { rate: 0.012 },
            baseline_death: Baseline::Weibull { shape: 2.0, scale: 100.0 },
            beta_dementia: Vec::new(),
            beta_death: Vec::new(),
            censoring_rate: 0.01,
            covariates: Vec::new(),
            household_max: 3,
            weight_range: (0.5, 1.5),
            missing_rate: 0.0,
            strata: Stratum::ALL.to_vec(),
            seed: 0,
        }
    }
}

/// Generation provenance kept alongside the cohort for scoring estimators.
#[derive(Debug, Clone, Serialize)]
pub struct SynthTruth {
    pub beta_dementia: Vec<f64>,
    pub beta_death: Vec<f64>,
    pub n: usize,
    pub n_dementia: usize,
    pub n_death: usize,
    pub n_censored: usize,
    pub seed: u64,
}

/// Convenience: a default covariate list of `n_binary` ±1 columns followed
/// by `n_continuous` standard-normal columns.
pub fn default_covariates(n_binary: usize, n_continuous: usize) -> Vec<CovariateSpec> {
    let mut specs = Vec::with_capacity(n_binary + n_continuous);
    for i in 0..n_binary {
        specs.push(CovariateSpec {
            name: format!("bin{i}"),
            domain: crate::cohort::Domain::Health,
            kind: CodingKind::BinaryPm1,
            reverse_coded: false,
            missing_fraction: 0.0,
            female_only: false,
            zero_fill_missing: false,
        });
    }
    for i in 0..n_continuous {
        specs.push(CovariateSpec {
            name: format!("cont{i}"),
            domain: crate::cohort::Domain::Economic,
            kind: CodingKind::StandardizedContinuous,
            reverse_coded: false,
            missing_fraction: 0.0,
            female_only: false,
            zero_fill_missing: false,
        });
    }
    specs
}

fn validate(cfg: &SynthConfig) -> Result<(), PipelineError> {
    if cfg.n == 0 {
        return Err(PipelineError::InfeasibleConfig("n must be positive".into()));
    }
    let (lo, hi) = cfg.entry_age;
    if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
        return Err(PipelineError::InfeasibleConfig(format!("bad entry_age ({lo}, {hi})")));
    }
    cfg.baseline_dementia.validate("dementia")?;
    cfg.baseline_death.validate("death")?;
    if !(cfg.censoring_rate.is_finite() && cfg.censoring_rate >= 0.0) {
        return Err(PipelineError::InfeasibleConfig("censoring_rate must be >= 0".into()));
    }
    let m = cfg.covariates.len();
    if cfg.beta_dementia.len() != m || cfg.beta_death.len() != m {
        return Err(PipelineError::InfeasibleConfig(format!(
            "coefficient vectors must have length {m} (got {} and {})",
            cfg.beta_dementia.len(),
            cfg.beta_death.len()
        )));
    }
    let no_exit = !cfg.baseline_dementia.is_positive()
        && !cfg.baseline_death.is_positive()
        && cfg.censoring_rate == 0.0
        && !cfg.horizon.is_finite();
    if no_exit {
        return Err(PipelineError::InfeasibleConfig(
            "all hazards zero with an infinite horizon: subjects never exit".into(),
        ));
    }
    if cfg.horizon <= hi && cfg.horizon.is_finite() {
        return Err(PipelineError::InfeasibleConfig(
            "horizon must exceed the largest entry age".into(),
        ));
    }
    let (wlo, whi) = cfg.weight_range;
    if !(wlo.is_finite() && whi.is_finite() && 0.0 < wlo && wlo <= whi) {
        return Err(PipelineError::InfeasibleConfig(format!("bad weight_range ({wlo}, {whi})")));
    }
    if !(0.0..1.0).contains(&cfg.missing_rate) {
        return Err(PipelineError::InfeasibleConfig("missing_rate must lie in [0, 1)".into()));
    }
    if cfg.household_max == 0 {
        return Err(PipelineError::InfeasibleConfig("household_max must be positive".into()));
    }
    if cfg.strata.is_empty() {
        return Err(PipelineError::InfeasibleConfig("strata must be nonempty".into()));
    }
    Ok(())
}

/// Draw a latent event age conditional on surviving to `entry`:
/// solves H0(t) = H0(entry) + E / exp(eta) for standard-exponential E.
fn latent_age(base: &Baseline, entry: f64, eta: f64, e: f64) -> f64 {
    base.invert(base.cumulative(entry) + e / eta.exp())
}

pub fn synth_cohort(cfg: &SynthConfig) -> Result<(Vec<Subject>, SynthTruth), PipelineError> {
    validate(cfg)?;
    let mut rng = task_rng(cfg.seed, &[NS_SYNTH]);
    let m = cfg.covariates.len();

    let mut subjects = Vec::with_capacity(cfg.n);
    let mut n_dementia = 0;
    let mut n_death = 0;
    let mut n_censored = 0;

    let mut household = 0usize;
    let mut remaining_in_household = 0usize;
    let mut stratum = cfg.strata[0];

    for i in 0..cfg.n {
        if remaining_in_household == 0 {
            remaining_in_household = rng.random_range(1..=cfg.household_max);
            stratum = cfg.strata[household % cfg.strata.len()];
            household += 1;
        }
        remaining_in_household -= 1;

        let mut covs = Vec::with_capacity(m);
        for spec in &cfg.covariates {
            if spec.female_only && stratum.is_male() {
                covs.push(MISSING);
                continue;
            }
            let v = match spec.kind {
                CodingKind::BinaryPm1 => {
                    if rng.random::<f64>() < 0.5 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                CodingKind::StandardizedContinuous => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                }
            };
            covs.push(v);
        }

        // Linear predictors treat injected-missing cells as zero effect;
        // missingness is applied after event generation, so here covariates
        // are complete except for sex-specific columns.
        let eta = |beta: &[f64]| -> f64 {
            let mut s = 0.0;
            for (k, &b) in beta.iter().enumerate() {
                if !covs[k].is_nan() {
                    s += b * covs[k];
                }
            }
            s
        };
        let eta_dem = eta(&cfg.beta_dementia);
        let eta_death = eta(&cfg.beta_death);

        let entry = cfg.entry_age.0 + rng.random::<f64>() * (cfg.entry_age.1 - cfg.entry_age.0);
        let draw_e = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
            let u: f64 = rng.random();
            -(1.0 - u).ln()
        };
        let t_dem = latent_age(&cfg.baseline_dementia, entry, eta_dem, draw_e(&mut rng));
        let t_death = latent_age(&cfg.baseline_death, entry, eta_death, draw_e(&mut rng));
        let t_cens = if cfg.censoring_rate > 0.0 {
            entry + draw_e(&mut rng) / cfg.censoring_rate
        } else {
            f64::INFINITY
        };

        let mut exit = t_dem.min(t_death).min(t_cens).min(cfg.horizon);
        let event = if exit == t_dem {
            n_dementia += 1;
            EventKind::Dementia
        } else if exit == t_death {
            n_death += 1;
            EventKind::Death
        } else {
            n_censored += 1;
            EventKind::Censored
        };
        if exit <= entry {
            exit = entry + 1e-9;
        }

        // MCAR injection on top of the generated values.
        if cfg.missing_rate > 0.0 {
            for v in covs.iter_mut() {
                if !v.is_nan() && rng.random::<f64>() < cfg.missing_rate {
                    *v = MISSING;
                }
            }
        }

        let weight = cfg.weight_range.0
            + rng.random::<f64>() * (cfg.weight_range.1 - cfg.weight_range.0);

        subjects.push(Subject {
            id: format!("s{i:06}"),
            household_id: format!("h{:06}", household - 1),
            stratum,
            entry_age: entry,
            exit_age: exit,
            event,
            covariates: covs,
            base_weight: weight,
            analysis_weight: weight,
        });
    }

    let truth = SynthTruth {
        beta_dementia: cfg.beta_dementia.clone(),
        beta_death: cfg.beta_death.clone(),
        n: cfg.n,
        n_dementia,
        n_death,
        n_censored,
        seed: cfg.seed,
    };
    Ok((subjects, truth))
}
