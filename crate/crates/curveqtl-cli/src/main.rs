//! Command-line interface for curve QTL mapping.
//!
//! Every subcommand reads its inputs, runs one pipeline from the
//! `curveqtl` library, and writes plot-ready CSV/JSON files into a fresh
//! output directory. The full parsed configuration is serialized to
//! `meta.json` inside that directory, so any run can be reproduced
//! exactly from its sidecar. All randomness flows from `--seed`, and
//! results never depend on `--threads`.
//!
//! Exit codes: 0 on success, 2 when arguments or input files fail
//! validation, 3 when a run fails at computation or I/O time.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use curveqtl::io::{self, Dataset};
use curveqtl::sim::power::{
    run_power_study, MultiStudyConfig, SingleStudyConfig, StudyConfig,
};
use curveqtl::sim::{
    sim_multi_qtl, sim_single_qtl, study_unstructured, CovarianceKind, CovarianceSpec,
    CubicQtlSpec, LogisticQtlSpec,
};
use curveqtl::{
    calc_genoprob, fit_effects, permutation_threshold, profile, scan_hk, stepwise_search,
    CrossType, Error, GenoProbs, GridSpec, QtlLocus, QtlModel, Result, ScanSummary, StatKind,
    StepwiseOptions,
};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "curveqtl",
    version,
    about = "QTL mapping for function-valued phenotypes",
    long_about = "QTL mapping for function-valued phenotypes: genome scans with the \
                  SLOD and MLOD statistics, permutation thresholds, penalized \
                  multiple-QTL model search, and simulation studies."
)]
struct Cli {
    /// Worker threads for parallel sections; 0 uses every available core.
    /// The thread count never changes any result, only the wall time.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Seed for every random draw a subcommand makes.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    #[command(subcommand)]
    #[serde(flatten)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "snake_case")]
enum Command {
    /// Genome scan: per-time signed LOD scores plus SLOD/MLOD curves.
    Scan(ScanArgs),
    /// Permutation test for a genome-wide significance threshold.
    Perm(PermArgs),
    /// Penalized stepwise search for a multiple-QTL model.
    Stepwise(StepwiseArgs),
    /// Profile curves for each QTL of a fitted model.
    Profile(ProfileArgs),
    /// Baseline and effect curves for a fitted model.
    Fit(FitArgs),
    /// Simulate a dataset from one of the built-in study designs.
    Simulate(SimulateArgs),
    /// Power study over many simulated replicates.
    Power(PowerArgs),
}

/// How the individuals were bred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CrossArg {
    /// Recombinant inbred lines by selfing.
    RilSelf,
    /// F2 intercross.
    F2,
}

impl CrossArg {
    fn to_cross(self) -> CrossType {
        match self {
            CrossArg::RilSelf => CrossType::RilSelf,
            CrossArg::F2 => CrossType::F2,
        }
    }
}

/// Scan statistic aggregating per-time LOD scores across the curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum StatArg {
    /// Mean of the per-time LOD scores.
    Slod,
    /// Maximum of the per-time LOD scores.
    Mlod,
}

impl StatArg {
    fn to_stat(self) -> StatKind {
        match self {
            StatArg::Slod => StatKind::Slod,
            StatArg::Mlod => StatKind::Mlod,
        }
    }
}

/// Residual covariance family for the single-QTL design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CovArg {
    /// Autoregressive: cov(i, j) = sigma2 * rho^|i-j|.
    Ar,
    /// Equicorrelated: constant correlation rho between time points.
    Equi,
    /// The built-in unstructured 10x10 covariance.
    Unstructured,
}

impl CovArg {
    fn to_kind(self, sigma2: f64, rho: f64) -> CovarianceKind {
        match self {
            CovArg::Ar => CovarianceKind::Autoregressive { sigma2, rho },
            CovArg::Equi => CovarianceKind::Equicorrelated { sigma2, rho },
            CovArg::Unstructured => study_unstructured(),
        }
    }
}

/// Which built-in simulation design to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum DesignArg {
    /// One-chromosome F2 intercross with a single QTL and logistic
    /// growth curves.
    Single,
    /// Five-chromosome selfed RIL genome with three QTL acting on cubic
    /// coefficient curves.
    Multi,
}

/// A stepwise penalty: a fixed value, or `from-perm` to derive it from a
/// permutation test run with the same seed.
#[derive(Debug, Clone, Copy, PartialEq)]
enum PenaltyArg {
    FromPerm,
    Fixed(f64),
}

impl std::str::FromStr for PenaltyArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<PenaltyArg, String> {
        if s == "from-perm" {
            return Ok(PenaltyArg::FromPerm);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => Ok(PenaltyArg::Fixed(v)),
            _ => Err(format!(
                "expected a positive number or \"from-perm\", got {s:?}"
            )),
        }
    }
}

impl Serialize for PenaltyArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PenaltyArg::FromPerm => s.serialize_str("from-perm"),
            PenaltyArg::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

/// The dataset files and genotype-probability settings shared by every
/// analysis subcommand.
#[derive(Debug, Args, Serialize)]
struct InputArgs {
    /// Genotype CSV: `id` column plus one column per marker.
    #[arg(long)]
    geno: PathBuf,

    /// Genetic map CSV with columns `marker,chr,pos`.
    #[arg(long)]
    map: PathBuf,

    /// Phenotype CSV: `id` column plus one column per time point.
    #[arg(long)]
    pheno: PathBuf,

    /// Cross type of the population.
    #[arg(long, value_enum)]
    cross: CrossArg,

    /// Maximum pseudomarker spacing in cM; 0 evaluates at markers only.
    #[arg(long, default_value_t = 1.0)]
    step: f64,

    /// Assumed genotyping error rate.
    #[arg(long, default_value_t = 1e-4)]
    error_prob: f64,
}

impl InputArgs {
    fn load(&self) -> Result<(Dataset, GenoProbs)> {
        let cross = self.cross.to_cross();
        let dataset = io::read_dataset(&self.geno, &self.map, &self.pheno, cross)?;
        let grid = GridSpec::new(self.step)?;
        let probs = calc_genoprob(&dataset.geno, &dataset.map, cross, &grid, self.error_prob)?;
        Ok((dataset, probs))
    }
}

#[derive(Debug, Args, Serialize)]
struct OutputArgs {
    /// Output directory; refused if it already exists, unless --force.
    #[arg(long = "out")]
    #[serde(rename = "out")]
    dir: PathBuf,

    /// Write into the output directory even if it already exists.
    #[arg(long)]
    force: bool,
}

impl OutputArgs {
    /// Enforce the fresh-directory contract without touching the disk.
    fn check(&self) -> Result<()> {
        if self.dir.exists() && !self.force {
            return Err(Error::invalid(format!(
                "output directory {} already exists; pass --force to write into it",
                self.dir.display()
            )));
        }
        Ok(())
    }

    /// Create the directory and record the full run configuration.
    fn create(&self, cli: &Cli) -> Result<&Path> {
        std::fs::create_dir_all(&self.dir)?;
        io::write_json_line(&self.dir.join("meta.json"), cli)?;
        Ok(&self.dir)
    }
}

#[derive(Debug, Args, Serialize)]
struct ScanArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,

    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,

    /// Also write the genotype probabilities, one CSV per chromosome.
    #[arg(long)]
    dump_probs: bool,
}

#[derive(Debug, Args, Serialize)]
struct PermArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,

    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,

    /// Scan statistic whose genome-wide maximum is recorded.
    #[arg(long, value_enum, default_value_t = StatArg::Slod)]
    stat: StatArg,

    /// Number of permutation replicates.
    #[arg(long, default_value_t = 1000)]
    n_perm: usize,

    /// Significance level(s); repeat the flag for several thresholds.
    #[arg(long = "alpha", value_name = "ALPHA", default_values_t = vec![0.05])]
    alphas: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
struct StepwiseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,

    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,

    /// Scan statistic driving the search.
    #[arg(long, value_enum, default_value_t = StatArg::Slod)]
    stat: StatArg,

    /// Penalty per QTL: a positive number, or `from-perm` to use the
    /// permutation threshold computed with the same seed.
    #[arg(long)]
    penalty: PenaltyArg,

    /// Permutation replicates behind `--penalty from-perm`.
    #[arg(long, default_value_t = 1000)]
    n_perm: usize,

    /// Significance level behind `--penalty from-perm`.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,

    /// Largest number of QTL the forward search may reach.
    #[arg(long, default_value_t = 10)]
    max_qtl: usize,

    /// Smallest spacing in cM between model QTL on one chromosome.
    #[arg(long, default_value_t = 5.0)]
    min_spacing: f64,
}

#[derive(Debug, Args, Serialize)]
struct ProfileArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,

    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,

    /// Fitted model JSON, as written by `stepwise`.
    #[arg(long)]
    model: PathBuf,

    /// Statistic to profile; defaults to the one stored in the model.
    #[arg(long, value_enum)]
    stat: Option<StatArg>,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,

    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,

    /// Fitted model JSON, as written by `stepwise`.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,

    /// Study design to simulate from.
    #[arg(long, value_enum, default_value_t = DesignArg::Single)]
    design: DesignArg,

    /// Number of individuals.
    #[arg(long)]
    n: usize,

    /// Residual covariance family (single design only).
    #[arg(long, value_enum, default_value_t = CovArg::Ar)]
    cov: CovArg,

    /// Residual variance sigma^2 (single design, ar/equi only).
    #[arg(long, default_value_t = 3.0)]
    sigma2: f64,

    /// Residual correlation rho (single design, ar/equi only).
    #[arg(long, default_value_t = 0.6)]
    rho: f64,

    /// Residual scale multiplier c (single design only).
    #[arg(long = "c", value_name = "C", default_value_t = 1.0)]
    scale: f64,

    /// Independent noise standard deviation (single design only).
    #[arg(long, default_value_t = 0.0)]
    noise_sd: f64,
}

#[derive(Debug, Args, Serialize)]
struct PowerArgs {
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,

    /// Study design to measure.
    #[arg(long, value_enum)]
    study: DesignArg,

    /// Number of individuals per replicate.
    #[arg(long)]
    n: usize,

    /// Simulated replicates per study cell.
    #[arg(long, default_value_t = 1000)]
    replicates: usize,

    /// Residual covariance family (single study only).
    #[arg(long, value_enum, default_value_t = CovArg::Ar)]
    cov: CovArg,

    /// Residual variance sigma^2 (single study, ar/equi only).
    #[arg(long, default_value_t = 3.0)]
    sigma2: f64,

    /// Residual correlation rho (single study, ar/equi only).
    #[arg(long, default_value_t = 0.6)]
    rho: f64,

    /// Independent noise standard deviation (single study only).
    #[arg(long, default_value_t = 0.0)]
    noise_sd: f64,

    /// Residual scale values, one study cell per value (single study
    /// only).
    #[arg(
        long = "c-values",
        value_name = "C,...",
        value_delimiter = ',',
        default_values_t = vec![1.0, 2.0, 3.0, 6.0]
    )]
    c_values: Vec<f64>,

    /// Null replicates behind each detection threshold (single study
    /// only).
    #[arg(long, default_value_t = 1000)]
    null_replicates: usize,

    /// Permutations behind the stepwise penalties (multi study only).
    #[arg(long, default_value_t = 1000)]
    n_perm: usize,

    /// Detection window in cM around each true QTL (multi study only).
    #[arg(long, default_value_t = 15.0)]
    window: f64,

    /// Largest number of QTL the forward search may reach (multi study
    /// only).
    #[arg(long, default_value_t = 10)]
    max_qtl: usize,

    /// Smallest spacing in cM between model QTL on one chromosome
    /// (multi study only).
    #[arg(long, default_value_t = 5.0)]
    min_spacing: f64,

    /// Significance level for thresholds and penalties.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,

    /// Maximum pseudomarker spacing in cM for the scans.
    #[arg(long, default_value_t = 1.0)]
    step: f64,

    /// Assumed genotyping error rate for the scans.
    #[arg(long, default_value_t = 1e-4)]
    error_prob: f64,
}

/// True QTL positions of a simulated dataset, written next to it.
#[derive(Debug, Serialize)]
struct TruthFile {
    design: DesignArg,
    true_loci: Vec<QtlLocus>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Format { .. } | Error::Row { .. } | Error::Cell { .. } | Error::Invalid(_) => {
            EXIT_VALIDATION
        }
        Error::Io(_) | Error::NotPositiveDefinite | Error::ZeroLikelihood { .. } => EXIT_RUNTIME,
    }
}

fn init_thread_pool(threads: usize) -> Result<()> {
    if threads == 0 {
        return Ok(()); // let the pool size itself to the machine
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::invalid(format!("cannot configure the worker pool: {e}")))
}

fn run(cli: &Cli) -> Result<()> {
    init_thread_pool(cli.threads)?;
    match &cli.command {
        Command::Scan(args) => cmd_scan(cli, args),
        Command::Perm(args) => cmd_perm(cli, args),
        Command::Stepwise(args) => cmd_stepwise(cli, args),
        Command::Profile(args) => cmd_profile(cli, args),
        Command::Fit(args) => cmd_fit(cli, args),
        Command::Simulate(args) => cmd_simulate(cli, args),
        Command::Power(args) => cmd_power(cli, args),
    }
}

fn cmd_scan(cli: &Cli, args: &ScanArgs) -> Result<()> {
    args.output.check()?;
    let (dataset, probs) = args.input.load()?;
    let lods = scan_hk(&probs, &dataset.pheno)?;
    let summary = ScanSummary::from_lods(&lods);
    let out = args.output.create(cli)?;
    io::write_lod_csv(&out.join("lod.csv"), &lods)?;
    io::write_summary_csv(&out.join("summary.csv"), &summary.slod, &summary.mlod)?;
    if args.dump_probs {
        for (ci, chrom) in probs.chromosomes().iter().enumerate() {
            let name = format!("probs_chr{}.csv", chrom.name());
            io::write_probs_csv(&out.join(name), &probs, ci)?;
        }
    }
    Ok(())
}

fn cmd_perm(cli: &Cli, args: &PermArgs) -> Result<()> {
    args.output.check()?;
    let (dataset, probs) = args.input.load()?;
    let out = args.output.create(cli)?;
    let perm = permutation_threshold(
        &probs,
        &dataset.pheno,
        args.stat.to_stat(),
        args.n_perm,
        &args.alphas,
        cli.seed,
    )?;
    io::write_perm_csv(&out.join("perm.csv"), &perm)
}

fn cmd_stepwise(cli: &Cli, args: &StepwiseArgs) -> Result<()> {
    args.output.check()?;
    let (dataset, probs) = args.input.load()?;
    let stat = args.stat.to_stat();
    let out = args.output.create(cli)?;
    let penalty = match args.penalty {
        PenaltyArg::Fixed(v) => v,
        PenaltyArg::FromPerm => {
            let perm = permutation_threshold(
                &probs,
                &dataset.pheno,
                stat,
                args.n_perm,
                &[args.alpha],
                cli.seed,
            )?;
            perm.thresholds()[0]
        }
    };
    let options = StepwiseOptions {
        max_qtl: args.max_qtl,
        min_spacing_cm: args.min_spacing,
    };
    let model = stepwise_search(&probs, &dataset.pheno, stat, penalty, &options)?;
    io::write_model_json(&out.join("model.json"), &model)?;
    write_profiles(&probs, &dataset, &model, stat, &out.join("profiles.csv"))?;
    let effects = fit_effects(&probs, &dataset.pheno, &model)?;
    io::write_effects_csv(&out.join("effects.csv"), &effects)
}

/// Write profile curves, falling back to a header-only file when the
/// search kept the null model (there is nothing to profile then, but the
/// output set stays the same for downstream tooling).
fn write_profiles(
    probs: &GenoProbs,
    dataset: &Dataset,
    model: &QtlModel,
    stat: StatKind,
    path: &Path,
) -> Result<()> {
    if model.loci.is_empty() {
        std::fs::write(path, "qtl,chr,pos,value\n")?;
        return Ok(());
    }
    let profiles = profile(probs, &dataset.pheno, model, stat)?;
    io::write_profiles_csv(path, &profiles)
}

fn cmd_profile(cli: &Cli, args: &ProfileArgs) -> Result<()> {
    args.output.check()?;
    let (dataset, probs) = args.input.load()?;
    let model = io::read_model_json(&args.model)?;
    let stat = args.stat.map_or(model.stat, StatArg::to_stat);
    let profiles = profile(&probs, &dataset.pheno, &model, stat)?;
    let out = args.output.create(cli)?;
    io::write_profiles_csv(&out.join("profiles.csv"), &profiles)
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    args.output.check()?;
    let (dataset, probs) = args.input.load()?;
    let model = io::read_model_json(&args.model)?;
    let effects = fit_effects(&probs, &dataset.pheno, &model)?;
    let out = args.output.create(cli)?;
    io::write_effects_csv(&out.join("effects.csv"), &effects)
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    args.output.check()?;
    let (dataset, truth) = match args.design {
        DesignArg::Single => {
            let spec = LogisticQtlSpec::default();
            let cov = CovarianceSpec::new(args.cov.to_kind(args.sigma2, args.rho), args.scale);
            let data = sim_single_qtl(&spec, &cov, args.n, args.noise_sd, cli.seed)?;
            let truth = TruthFile {
                design: args.design,
                true_loci: vec![QtlLocus {
                    chrom: spec.map()?.chromosomes()[0].name.clone(),
                    pos: data.true_pos_cm,
                }],
            };
            (
                Dataset {
                    map: data.map,
                    geno: data.geno,
                    pheno: data.pheno,
                },
                truth,
            )
        }
        DesignArg::Multi => {
            let data = sim_multi_qtl(args.n, cli.seed)?;
            let truth = TruthFile {
                design: args.design,
                true_loci: data.true_loci,
            };
            (
                Dataset {
                    map: data.map,
                    geno: data.geno,
                    pheno: data.pheno,
                },
                truth,
            )
        }
    };
    let out = args.output.create(cli)?;
    io::write_dataset(
        &dataset,
        &out.join("map.csv"),
        &out.join("geno.csv"),
        &out.join("pheno.csv"),
    )?;
    io::write_json_line(&out.join("truth.json"), &truth)
}

fn cmd_power(cli: &Cli, args: &PowerArgs) -> Result<()> {
    args.output.check()?;
    let config = match args.study {
        DesignArg::Single => StudyConfig::Single(SingleStudyConfig {
            spec: LogisticQtlSpec::default(),
            cov_kind: args.cov.to_kind(args.sigma2, args.rho),
            c_values: args.c_values.clone(),
            noise_sd: args.noise_sd,
            n: args.n,
            n_replicates: args.replicates,
            n_null_replicates: args.null_replicates,
            alpha: args.alpha,
            error_prob: args.error_prob,
            grid_step_cm: args.step,
            seed: cli.seed,
        }),
        DesignArg::Multi => StudyConfig::Multi(MultiStudyConfig {
            spec: CubicQtlSpec::default(),
            n: args.n,
            n_replicates: args.replicates,
            n_permutations: args.n_perm,
            alpha: args.alpha,
            window_cm: args.window,
            stepwise: StepwiseOptions {
                max_qtl: args.max_qtl,
                min_spacing_cm: args.min_spacing,
            },
            error_prob: args.error_prob,
            grid_step_cm: args.step,
            seed: cli.seed,
        }),
    };
    let out = args.output.create(cli)?;
    let report = run_power_study(&config)?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(out.join("power_report.csv"))?);
    report.write_csv(&mut csv)?;
    let mut json = std::io::BufWriter::new(std::fs::File::create(out.join("power_report.json"))?);
    report.write_json(&mut json)?;
    Ok(())
}
