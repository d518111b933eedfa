//! Command-line front end for the crisk toolkit: cohort construction,
//! imputation, selection weights, hazard-model fits, survival forests,
//! importance tables, rank aggregation, synthetic cohorts, and the
//! all-in-one pipeline run.
//!
//! Covariate metadata travels next to each analysis CSV in a
//! `<stem>.specs.json` sidecar. `cohort build` and `synth` write it;
//! downstream commands read it automatically or from an explicit `--specs`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as IoWrite};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crisk::cohort::{
    build_cohort, is_missing, read_subjects, write_subjects, CodingKind, CovariateSpec, Stratum,
    Subject,
};
use crisk::forest::{grow_forest, load_forest, save_forest, VimpTable};
use crisk::pipeline::config::RunConfig;
use crisk::pipeline::emit::{
    read_vimp_csv, write_correlations_csv, write_descriptives_csv, write_fits_csv,
    write_ranks_csv, write_vimp_csv,
};
use crisk::pipeline::run::{impute_stage, project_for_forest, run_all, weights_stage};
use crisk::pipeline::synth::synth_cohort;
use crisk::pipeline::{correlations, describe, rank_aggregate, run_sweep, MissingRankPolicy};
use crisk::survival::{format_hr, Model};

#[derive(Parser)]
#[command(name = "crisk", version, about = "Competing-risks survival analysis over stratified cohorts")]
struct Cli {
    /// Master RNG seed; overrides the seeds in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML config file; omitted fields keep their documented defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cohort construction from raw interview data.
    Cohort {
        #[command(subcommand)]
        command: CohortCommand,
    },
    /// Fill missing covariate cells with iterative forest imputation.
    Impute(ImputeArgs),
    /// Attach inverse-probability selection weights.
    Weights(WeightsArgs),
    /// Fit one predictor in one stratum with a chosen hazard model.
    Fit(FitArgs),
    /// Random survival forests for competing risks.
    Forest {
        #[command(subcommand)]
        command: ForestCommand,
    },
    /// Aggregate per-stratum importance tables into an overall ranking.
    Rank(RankArgs),
    /// Descriptive statistics and correlation matrices per stratum.
    Describe(DescribeArgs),
    /// Generate a synthetic cohort with known true hazards.
    Synth(SynthArgs),
    /// Run the whole pipeline and emit every output table.
    RunAll(RunAllArgs),
}

#[derive(Subcommand)]
enum CohortCommand {
    /// Derive events, code covariates, and write the wide analysis CSV.
    Build(CohortBuildArgs),
}

#[derive(Args)]
struct CohortBuildArgs {
    /// Long-format raw CSV, one row per interview wave.
    #[arg(long = "in")]
    input: PathBuf,
    /// Analysis CSV to write (specs and coding manifest go next to it).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImputeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sweeps over all incomplete columns before stopping.
    #[arg(long)]
    iterations: Option<usize>,
    /// Trees per per-column forest.
    #[arg(long)]
    trees: Option<usize>,
    /// Covariate spec sidecar (default: <in stem>.specs.json).
    #[arg(long)]
    specs: Option<PathBuf>,
    /// JSON report path (default: <out stem>.report.json).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Inclusion indicator column; positive values mean included.
    #[arg(long = "included-col")]
    included_col: Option<String>,
    /// Comma-separated propensity feature columns.
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    #[arg(long)]
    specs: Option<PathBuf>,
    /// JSON report path (default: <out stem>.report.json).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// finegray or causespecific.
    #[arg(long)]
    model: String,
    /// Primary event; only dementia is supported.
    #[arg(long, default_value = "dementia")]
    cause: String,
    /// Covariate column to fit.
    #[arg(long)]
    predictor: String,
    /// Stratum label: NHW-men, NHW-women, NHB-men, or NHB-women.
    #[arg(long)]
    stratum: String,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    specs: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ForestCommand {
    /// Grow a forest on one stratum and persist it.
    Grow(ForestGrowArgs),
    /// Permutation importance table from a saved forest.
    Vimp(ForestVimpArgs),
}

#[derive(Args)]
struct ForestGrowArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    stratum: String,
    #[arg(long)]
    trees: Option<usize>,
    /// Candidate predictors per node (default: sqrt of predictor count).
    #[arg(long)]
    mtry: Option<usize>,
    /// Forest container to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    specs: Option<PathBuf>,
}

#[derive(Args)]
struct ForestVimpArgs {
    /// Forest container from `forest grow`.
    #[arg(long)]
    forest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    /// Per-stratum importance CSVs from `forest vimp`.
    #[arg(long = "in", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// worst_rank or mean_available; default comes from the config.
    #[arg(long)]
    policy: Option<String>,
    /// Authoritative covariate specs; inferred from the tables when absent.
    #[arg(long)]
    specs: Option<PathBuf>,
}

#[derive(Args)]
struct DescribeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Directory for descriptives.csv and per-stratum correlation CSVs.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[arg(long)]
    specs: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Cohort CSV to write (specs and truth JSON go next to it).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunAllArgs {
    /// Analysis CSV; omitted means synthesize a cohort from the config.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Directory for all emitted tables and the run manifest.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[arg(long)]
    specs: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    match cli.command {
        Command::Cohort { command: CohortCommand::Build(args) } => cohort_build_cmd(&cfg, &args)?,
        Command::Impute(args) => impute_cmd(&mut cfg, &args)?,
        Command::Weights(args) => weights_cmd(&mut cfg, &args)?,
        Command::Fit(args) => fit_cmd(&args)?,
        Command::Forest { command: ForestCommand::Grow(args) } => forest_grow_cmd(&mut cfg, &args)?,
        Command::Forest { command: ForestCommand::Vimp(args) } => forest_vimp_cmd(&args)?,
        Command::Rank(args) => rank_cmd(&cfg, &args)?,
        Command::Describe(args) => describe_cmd(&args)?,
        Command::Synth(args) => synth_cmd(&cfg, &args)?,
        Command::RunAll(args) => return run_all_cmd(&mut cfg, &args),
    }
    Ok(ExitCode::SUCCESS)
}

fn specs_sidecar(data: &Path) -> PathBuf {
    data.with_extension("specs.json")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Load the covariate specs that describe the input CSV's columns and check
/// they agree with the header.
fn load_specs(
    input: &Path,
    explicit: Option<&PathBuf>,
    names: &[String],
) -> Result<Vec<CovariateSpec>> {
    let path = match explicit {
        Some(p) => p.clone(),
        None => specs_sidecar(input),
    };
    let file = File::open(&path).with_context(|| {
        format!(
            "covariate spec file {} not found; `cohort build` and `synth` write it next to \
             their output, or pass --specs",
            path.display()
        )
    })?;
    let specs: Vec<CovariateSpec> = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing {}", path.display()))?;
    if specs.len() != names.len() || specs.iter().zip(names).any(|(s, n)| &s.name != n) {
        bail!(
            "covariate specs in {} do not match the columns of {}",
            path.display(),
            input.display()
        );
    }
    Ok(specs)
}

fn cohort_build_cmd(cfg: &RunConfig, args: &CohortBuildArgs) -> Result<()> {
    if cfg.cohort.columns.is_empty() {
        bail!("no raw columns configured; pass --config with [[cohort.columns]] entries");
    }
    let file = File::open(&args.input)
        .with_context(|| format!("opening {}", args.input.display()))?;
    let output = build_cohort(
        BufReader::new(file),
        &cfg.cohort.columns,
        &cfg.cohort.pc_columns,
        cfg.cohort.missingness_threshold,
    )?;
    let names: Vec<String> = output.specs.iter().map(|s| s.name.clone()).collect();
    write_subjects(&args.out, &output.subjects, &names)?;
    write_json(&specs_sidecar(&args.out), &output.specs)?;
    write_json(&args.out.with_extension("coding.json"), &output.manifest)?;
    for w in &output.manifest.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "built {} subjects from {} raw rows; {} covariates retained, {} excluded for missingness",
        output.manifest.n_subjects,
        output.manifest.n_input_rows,
        output.manifest.retained.len(),
        output.manifest.excluded.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct ColumnMissingness {
    name: String,
    n_missing: usize,
    fraction_missing: f64,
}

#[derive(Serialize)]
struct ImputeReport {
    n_subjects: usize,
    n_cells_filled: usize,
    per_iteration_change: Vec<f64>,
    columns: Vec<ColumnMissingness>,
}

fn impute_cmd(cfg: &mut RunConfig, args: &ImputeArgs) -> Result<()> {
    let (mut subjects, names) = read_subjects(&args.input)?;
    let specs = load_specs(&args.input, args.specs.as_ref(), &names)?;
    if let Some(iterations) = args.iterations {
        cfg.impute.iterations = iterations;
    }
    if let Some(trees) = args.trees {
        cfg.impute.trees_per_forest = trees;
    }
    let n = subjects.len();
    let columns: Vec<ColumnMissingness> = specs
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let n_missing =
                subjects.iter().filter(|s| is_missing(s.covariates[j])).count();
            ColumnMissingness {
                name: spec.name.clone(),
                n_missing,
                fraction_missing: if n == 0 { 0.0 } else { n_missing as f64 / n as f64 },
            }
        })
        .collect();
    let summary = impute_stage(cfg, &mut subjects, &specs)?;
    write_subjects(&args.out, &subjects, &names)?;
    write_json(&specs_sidecar(&args.out), &specs)?;
    let report = ImputeReport {
        n_subjects: n,
        n_cells_filled: summary.as_ref().map_or(0, |s| s.n_cells),
        per_iteration_change: summary.map(|s| s.per_iteration_change).unwrap_or_default(),
        columns,
    };
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| args.out.with_extension("report.json"));
    write_json(&report_path, &report)?;
    if report.n_cells_filled == 0 {
        println!("no missing cells to fill; wrote {} unchanged", args.out.display());
    } else {
        println!(
            "filled {} cells over {} iterations; wrote {} and {}",
            report.n_cells_filled,
            report.per_iteration_change.len(),
            args.out.display(),
            report_path.display()
        );
    }
    Ok(())
}

fn weights_cmd(cfg: &mut RunConfig, args: &WeightsArgs) -> Result<()> {
    let (mut subjects, names) = read_subjects(&args.input)?;
    let specs = load_specs(&args.input, args.specs.as_ref(), &names)?;
    if let Some(col) = &args.included_col {
        cfg.weights.included_col = col.clone();
    }
    if !args.features.is_empty() {
        cfg.weights.features = args.features.clone();
    }
    if cfg.weights.features.is_empty() {
        bail!("no propensity features; pass --features or set [weights] features in the config");
    }
    let summary = weights_stage(cfg, &mut subjects, &specs)?
        .expect("features are non-empty, so the stage runs");
    write_subjects(&args.out, &subjects, &names)?;
    write_json(&specs_sidecar(&args.out), &specs)?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| args.out.with_extension("report.json"));
    write_json(&report_path, &summary)?;
    println!(
        "weighted {} included subjects ({} excluded get weight 0); max weight {:.4}",
        summary.n_included, summary.n_excluded, summary.max_weight
    );
    Ok(())
}

fn fit_cmd(args: &FitArgs) -> Result<()> {
    let Some(model) = Model::parse(&args.model) else {
        bail!("unknown model {:?}; use finegray or causespecific", args.model);
    };
    if !args.cause.eq_ignore_ascii_case("dementia") {
        bail!("only the dementia cause is supported; got {:?}", args.cause);
    }
    let Some(stratum) = Stratum::parse(&args.stratum) else {
        bail!(
            "unknown stratum {:?}; use NHW-men, NHW-women, NHB-men, or NHB-women",
            args.stratum
        );
    };
    let (subjects, names) = read_subjects(&args.input)?;
    let specs = load_specs(&args.input, args.specs.as_ref(), &names)?;
    let Some(j) = specs.iter().position(|s| s.name == args.predictor) else {
        bail!("predictor {:?} is not a column of {}", args.predictor, args.input.display());
    };
    let spec = specs[j].clone();
    if spec.female_only && stratum.is_male() {
        bail!(
            "predictor {:?} is sex-specific and undefined in stratum {}",
            args.predictor,
            stratum.label()
        );
    }
    let mut dropped = 0usize;
    let subset: Vec<Subject> = subjects
        .iter()
        .filter(|s| s.stratum == stratum)
        .filter_map(|s| {
            let v = s.covariates[j];
            if is_missing(v) {
                dropped += 1;
                return None;
            }
            let mut t = s.clone();
            t.covariates = vec![v];
            Some(t)
        })
        .collect();
    if dropped > 0 {
        eprintln!(
            "warning: dropped {dropped} subject(s) with a missing {} value (complete-case fit); \
             run `impute` first to keep them",
            args.predictor
        );
    }
    if subset.is_empty() {
        bail!("stratum {} has no usable subjects", stratum.label());
    }
    let fits = run_sweep(&subset, std::slice::from_ref(&spec), model, stratum)?;
    write_fits_csv(&args.out, stratum, &fits)?;
    let row = &fits[0];
    match &row.fit {
        Some(fit) => println!(
            "{} ({}, {}): {}",
            row.predictor,
            stratum.label(),
            model.label(),
            format_hr(fit)
        ),
        None => println!(
            "{} ({}, {}): no estimate ({})",
            row.predictor,
            stratum.label(),
            model.label(),
            row.status
        ),
    }
    Ok(())
}

fn forest_grow_cmd(cfg: &mut RunConfig, args: &ForestGrowArgs) -> Result<()> {
    let Some(stratum) = Stratum::parse(&args.stratum) else {
        bail!(
            "unknown stratum {:?}; use NHW-men, NHW-women, NHB-men, or NHB-women",
            args.stratum
        );
    };
    let (subjects, names) = read_subjects(&args.input)?;
    let specs = load_specs(&args.input, args.specs.as_ref(), &names)?;
    if let Some(trees) = args.trees {
        cfg.forest.n_trees = trees;
    }
    if args.mtry.is_some() {
        cfg.forest.mtry = args.mtry;
    }
    let subset: Vec<Subject> =
        subjects.iter().filter(|s| s.stratum == stratum).cloned().collect();
    if subset.is_empty() {
        bail!("stratum {} has no subjects", stratum.label());
    }
    let (fsubs, fspecs) = project_for_forest(&subset, &specs, stratum);
    let forest = grow_forest(&fsubs, &fspecs, &cfg.forest)?;
    let oob = forest.oob_error(None)?;
    save_forest(&args.out, &forest)?;
    println!(
        "grew {} trees on {} subjects with {} predictors; OOB error {:.4} at age {:.1}; wrote {}",
        forest.trees.len(),
        fsubs.len(),
        fspecs.len(),
        oob.error,
        oob.horizon,
        args.out.display()
    );
    Ok(())
}

fn forest_vimp_cmd(args: &ForestVimpArgs) -> Result<()> {
    let forest = load_forest(&args.forest)?;
    let table = forest.vimp()?;
    write_vimp_csv(&args.out, &table)?;
    match table.rows.first() {
        Some(top) => println!(
            "importance for {} predictors in stratum {}; top: {} ({:.4}); wrote {}",
            table.rows.len(),
            table.stratum_label,
            top.predictor,
            top.importance,
            args.out.display()
        ),
        None => println!("empty importance table; wrote {}", args.out.display()),
    }
    Ok(())
}

fn parse_policy(s: &str) -> Result<MissingRankPolicy> {
    match s {
        "worst_rank" => Ok(MissingRankPolicy::WorstRank),
        "mean_available" => Ok(MissingRankPolicy::MeanAvailable),
        other => bail!("unknown rank policy {other:?}; use worst_rank or mean_available"),
    }
}

/// Union of predictors seen across the tables, with a predictor treated as
/// sex-specific when it is absent only from male strata. That is the one
/// absence the aggregator accepts, so inference and validation agree.
fn infer_specs_from_tables(tables: &[(Stratum, VimpTable)]) -> Vec<CovariateSpec> {
    let mut specs: Vec<CovariateSpec> = Vec::new();
    for (_, table) in tables {
        for row in &table.rows {
            if !specs.iter().any(|s| s.name == row.predictor) {
                specs.push(CovariateSpec {
                    name: row.predictor.clone(),
                    domain: row.domain,
                    kind: CodingKind::StandardizedContinuous,
                    reverse_coded: false,
                    missing_fraction: 0.0,
                    female_only: false,
                    zero_fill_missing: false,
                });
            }
        }
    }
    for spec in &mut specs {
        let absent_in_male = tables.iter().any(|(stratum, table)| {
            stratum.is_male() && table.rows.iter().all(|r| r.predictor != spec.name)
        });
        if absent_in_male {
            spec.female_only = true;
        }
    }
    specs
}

fn rank_cmd(cfg: &RunConfig, args: &RankArgs) -> Result<()> {
    let mut tables: Vec<(Stratum, VimpTable)> = Vec::new();
    for path in &args.inputs {
        let table =
            read_vimp_csv(path).with_context(|| format!("reading {}", path.display()))?;
        let Some(stratum) = Stratum::parse(&table.stratum_label) else {
            bail!("{}: unknown stratum label {:?}", path.display(), table.stratum_label);
        };
        tables.push((stratum, table));
    }
    let policy = match &args.policy {
        Some(s) => parse_policy(s)?,
        None => cfg.rank.missing_policy,
    };
    let specs = match &args.specs {
        Some(path) => {
            let file =
                File::open(path).with_context(|| format!("opening {}", path.display()))?;
            serde_json::from_reader(BufReader::new(file))
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => infer_specs_from_tables(&tables),
    };
    let refs: Vec<(Stratum, &VimpTable)> = tables.iter().map(|(s, t)| (*s, t)).collect();
    let ranking = rank_aggregate(&refs, &specs, policy)?;
    write_ranks_csv(&args.out, &ranking)?;
    println!(
        "ranked {} predictors across {} strata; wrote {}",
        ranking.rows.len(),
        refs.len(),
        args.out.display()
    );
    Ok(())
}

fn describe_cmd(args: &DescribeArgs) -> Result<()> {
    let (subjects, names) = read_subjects(&args.input)?;
    let specs = load_specs(&args.input, args.specs.as_ref(), &names)?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut blocks = Vec::new();
    for stratum in Stratum::ALL {
        let subset: Vec<Subject> =
            subjects.iter().filter(|s| s.stratum == stratum).cloned().collect();
        if subset.len() < 2 {
            eprintln!(
                "warning: stratum {} has {} subject(s); skipped",
                stratum.label(),
                subset.len()
            );
            continue;
        }
        blocks.push((stratum, describe(&subset, &specs)?));
        let corr = correlations(&subset, &specs)?;
        write_correlations_csv(
            &args.out_dir.join(format!("correlations_{}.csv", stratum.label())),
            &specs,
            &corr,
        )?;
    }
    if blocks.is_empty() {
        bail!("no stratum has enough subjects to describe");
    }
    write_descriptives_csv(&args.out_dir.join("descriptives.csv"), &blocks)?;
    println!(
        "wrote descriptives and correlations for {} strata to {}",
        blocks.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn synth_cmd(cfg: &RunConfig, args: &SynthArgs) -> Result<()> {
    if cfg.synth.covariates.is_empty() {
        bail!(
            "the config has no [synth] covariates; add [[synth.covariates]] entries \
             (see config.example.toml)"
        );
    }
    let (subjects, truth) = synth_cohort(&cfg.synth)?;
    let names: Vec<String> = cfg.synth.covariates.iter().map(|s| s.name.clone()).collect();
    write_subjects(&args.out, &subjects, &names)?;
    write_json(&specs_sidecar(&args.out), &cfg.synth.covariates)?;
    write_json(&args.out.with_extension("truth.json"), &truth)?;
    println!(
        "synthesized {} subjects ({} dementia, {} death, {} censored) to {}",
        truth.n,
        truth.n_dementia,
        truth.n_death,
        truth.n_censored,
        args.out.display()
    );
    Ok(())
}

fn run_all_cmd(cfg: &mut RunConfig, args: &RunAllArgs) -> Result<ExitCode> {
    let (mut subjects, specs) = match &args.input {
        Some(input) => {
            let (subjects, names) = read_subjects(input)?;
            let specs = load_specs(input, args.specs.as_ref(), &names)?;
            (subjects, specs)
        }
        None => {
            if cfg.synth.covariates.is_empty() {
                bail!(
                    "no --in and no [synth] covariates in the config; nothing to analyze"
                );
            }
            let (subjects, truth) = synth_cohort(&cfg.synth)?;
            println!(
                "no --in given; synthesized {} subjects from the [synth] config (seed {})",
                truth.n, truth.seed
            );
            (subjects, cfg.synth.covariates.clone())
        }
    };
    let outcome = run_all(cfg, &mut subjects, &specs, &args.out_dir)?;
    for summary in &outcome.manifest.strata {
        let oob = summary
            .oob_error
            .map(|e| format!(", OOB error {e:.4}"))
            .unwrap_or_default();
        println!(
            "stratum {}: {} subjects, {} dementia, {} death, {} censored{}",
            summary.stratum,
            summary.n_subjects,
            summary.n_dementia,
            summary.n_death,
            summary.n_censored,
            oob
        );
    }
    for w in &outcome.manifest.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "wrote {} stratum report(s) to {}",
        outcome.reports.len(),
        args.out_dir.display()
    );
    if outcome.failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "{} stratum(s) produced no report: {}",
            outcome.failed.len(),
            outcome.failed.join(", ")
        );
        Ok(ExitCode::FAILURE)
    }
}
