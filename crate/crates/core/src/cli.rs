//! Command-line front-end.
//!
//! Exit codes: 0 success, 1 usage error (bad flags or option values),
//! 2 data error (unreadable/invalid input or a failed computation).

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::engine::{run_test, TestConfig, TestRecord, TestResult, VERSION};
use crate::error::Error;
use crate::estimators::{default_analysis_b, DfEstimator, EstimatorConfig, EstimatorMode, DEFAULT_WORK_CAP};
use crate::hypothesis::{
    factorial_hypothesis_family, kron_pair_projector, standard_hypothesis, ContrastMatrix, HypothesisKind,
    ProjectionPair, SubplotStructure,
};
use crate::io::{read_matrix_csv, read_sample_csv, sample_warnings, write_sample};
use crate::model::{SplitPlotDesign, SplitPlotSample};
use crate::oracle::{level_table, oracle_report, write_oracle_csv, OracleRow};
use crate::rng::mix64;
use crate::simulation::{power_study, run_study, subsample_overlap_study, write_rows, Alternative, CovarianceSpec, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "splitplot", version, about = "High-dimensional split-plot tests with estimated degrees of freedom")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Test a hypothesis on a sample CSV.
    Test(TestArgs),
    /// Run a type-I error or power study.
    Simulate(SimulateArgs),
    /// Exact traces, moments, tau_P and limiting levels for a design.
    Oracle(OracleArgs),
    /// Write a synthetic sample CSV.
    Gen(GenArgs),
    /// Check the subsample-overlap law by simulation.
    Overlap(OverlapArgs),
}

#[derive(Debug, Args)]
struct TestArgs {
    /// Sample CSV with header group,y1,...,yd.
    #[arg(long)]
    data: PathBuf,
    /// group | time | interaction | time_within:L | between:L:K
    #[arg(long, conflicts_with_all = ["t_whole", "h_whole", "family"])]
    hypothesis: Option<String>,
    /// Run all thirteen factorial hypotheses (needs --subplot).
    #[arg(long)]
    family: bool,
    /// Factorial sub-plot layout OUTERxINNER, e.g. 4x6.
    #[arg(long)]
    subplot: Option<String>,
    /// Whole-plot projection matrix file (headerless CSV).
    #[arg(long, requires = "t_sub", conflicts_with = "h_whole")]
    t_whole: Option<PathBuf>,
    #[arg(long, requires = "t_whole")]
    t_sub: Option<PathBuf>,
    /// Whole-plot contrast matrix file; the projector is derived.
    #[arg(long, requires = "h_sub")]
    h_whole: Option<PathBuf>,
    #[arg(long, requires = "h_whole")]
    h_sub: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Subsample draws (default 50000·N).
    #[arg(long)]
    b: Option<u64>,
    /// Random seed; generated and reported when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// exact | efficient | subsampled
    #[arg(long, default_value = "efficient")]
    mode: String,
    /// c5_exact | c5_star | c7_star
    #[arg(long, default_value = "c5_star")]
    df: String,
    /// Permutations for c7_star.
    #[arg(long, default_value_t = 1)]
    w: u64,
    /// Skip the √(N/(N−1)) factor.
    #[arg(long)]
    no_correction: bool,
    /// Use a fixed degrees of freedom instead of estimating it.
    #[arg(long)]
    forced_f: Option<f64>,
    /// csv | json
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML study configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_sim: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated d values overriding the configuration.
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    b_multiplier: Option<u64>,
    /// Append finished cells here and skip cells already present.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long, default_value = "time")]
    hypothesis: String,
    #[arg(long)]
    a: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    subplot: Option<String>,
    /// Group sizes, e.g. 10,15.
    #[arg(long)]
    n: String,
    /// Covariances, one per group or one for all, e.g. ar:0.6,ar:0.65.
    #[arg(long, default_value = "identity")]
    cov: String,
    /// Print a single quantity (e.g. tau_p, f_p, trace_tv_2) or `levels`.
    #[arg(long)]
    quantity: Option<String>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Group sizes, e.g. 20,30.
    #[arg(long)]
    n: String,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    subplot: Option<String>,
    #[arg(long, default_value = "identity")]
    cov: String,
    /// null | trend | shift | one_point (applied to group 1).
    #[arg(long, default_value = "null")]
    alternative: String,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OverlapArgs {
    /// Group sizes, e.g. 8,10.
    #[arg(long)]
    n: String,
    /// Indices drawn per group.
    #[arg(long)]
    m: usize,
    #[arg(long)]
    b: u64,
    #[arg(long, default_value_t = 1000)]
    reps: u64,
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(e: impl std::fmt::Display) -> CliResult<T> {
    Err(Failure::Usage(e.to_string()))
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Overlap(args) => cmd_overlap(args),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn fresh_seed() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    let seed = mix64(nanos ^ u64::from(std::process::id()));
    eprintln!("seed: {seed}");
    seed
}

fn sink(path: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))
        })?),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Sidecar `<path>.meta.json` for outputs whose format has no room for provenance.
fn write_meta(path: &Path, meta: &impl Serialize) -> CliResult<()> {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::InvalidInput(e.to_string()))?;
    std::fs::write(PathBuf::from(name), text + "\n")?;
    Ok(())
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|s| s.trim().parse::<T>().or_else(|_| usage(format!("bad {what} entry '{s}'"))))
        .collect()
}

fn parse_subplot(text: &str) -> CliResult<SubplotStructure> {
    let parts: Vec<&str> = text.split(['x', 'X']).collect();
    match parts.as_slice() {
        [o, i] => match (o.trim().parse(), i.trim().parse()) {
            (Ok(outer), Ok(inner)) if outer > 0 && inner > 0 => Ok(SubplotStructure::Factorial { outer, inner }),
            _ => usage(format!("bad --subplot '{text}', expected OUTERxINNER")),
        },
        _ => usage(format!("bad --subplot '{text}', expected OUTERxINNER")),
    }
}

fn structure_for(subplot: &Option<String>, d: Option<usize>) -> CliResult<SubplotStructure> {
    match (subplot, d) {
        (Some(s), d) => {
            let st = parse_subplot(s)?;
            if let Some(d) = d {
                if st.dim() != d {
                    return usage(format!("--subplot {s} implies d = {}, but d = {d}", st.dim()));
                }
            }
            Ok(st)
        }
        (None, Some(d)) if d > 0 => Ok(SubplotStructure::Flat(d)),
        _ => usage("need --d or --subplot"),
    }
}

fn parse_covs(text: &str, a: usize) -> CliResult<Vec<CovarianceSpec>> {
    let specs = text
        .split(',')
        .map(|s| CovarianceSpec::parse(s).or_else(|e| usage(e)))
        .collect::<CliResult<Vec<_>>>()?;
    match specs.len() {
        1 => Ok(vec![specs[0]; a]),
        k if k == a => Ok(specs),
        k => usage(format!("{k} covariances given for {a} groups")),
    }
}

fn design_from(n: &[usize], structure: SubplotStructure, covs: &[CovarianceSpec]) -> CliResult<SplitPlotDesign> {
    let d = structure.dim();
    let mats = covs.iter().map(|c| c.matrix(d)).collect::<crate::Result<Vec<_>>>()?;
    Ok(SplitPlotDesign::centered(n.to_vec(), mats)?)
}

fn cmd_test(args: TestArgs) -> CliResult<()> {
    let alpha_ok = args.alpha > 0.0 && args.alpha <= 1.0;
    if !alpha_ok {
        return usage(format!("--alpha {} not in (0,1]", args.alpha));
    }
    let mode = EstimatorMode::parse(&args.mode).or_else(usage)?;
    let df = DfEstimator::parse(&args.df).or_else(usage)?;
    let structure = args.subplot.as_deref().map(parse_subplot).transpose()?;
    let as_json = match args.format.as_str() {
        "csv" => false,
        "json" => true,
        other => return usage(format!("unknown --format '{other}'")),
    };

    let sample = read_sample_csv(&args.data)?;
    let a = sample.group_count();
    let d = sample.dim();
    let structure = match structure {
        Some(s) if s.dim() != d => {
            return Err(Error::DimensionMismatch(format!("--subplot implies d = {}, data has d = {d}", s.dim())).into())
        }
        Some(s) => s,
        None => SubplotStructure::Flat(d),
    };

    let mut hypotheses: Vec<(String, ProjectionPair)> = Vec::new();
    if let (Some(tw), Some(ts)) = (&args.t_whole, &args.t_sub) {
        hypotheses.push(("custom".into(), ProjectionPair::new(read_matrix_csv(tw)?, read_matrix_csv(ts)?)?));
    } else if let (Some(hw), Some(hs)) = (&args.h_whole, &args.h_sub) {
        let hw = ContrastMatrix::new(read_matrix_csv(hw)?)?;
        let hs = ContrastMatrix::new(read_matrix_csv(hs)?)?;
        hypotheses.push(("custom".into(), kron_pair_projector(&hw, &hs)?));
    } else if args.family {
        let SubplotStructure::Factorial { outer, .. } = structure else {
            return usage("--family needs --subplot");
        };
        for kind in factorial_hypothesis_family(outer) {
            hypotheses.push((kind.label(), standard_hypothesis(kind, a, structure)?));
        }
    } else {
        let Some(h) = &args.hypothesis else {
            return usage("one of --hypothesis, --family, --t-whole/--t-sub or --h-whole/--h-sub is required");
        };
        let kind = HypothesisKind::parse(h).or_else(usage)?;
        hypotheses.push((kind.label(), standard_hypothesis(kind, a, structure)?));
    }

    for w in sample_warnings(&sample) {
        eprintln!("warning: {w}");
    }
    let seed = args.seed.unwrap_or_else(fresh_seed);
    let config = TestConfig {
        alpha: args.alpha,
        estimator: EstimatorConfig {
            mode,
            df: Some(df),
            b: Some(args.b.unwrap_or_else(|| default_analysis_b(sample.total()))),
            w: args.w,
            seed,
            work_cap: DEFAULT_WORK_CAP,
            with_c6: false,
        },
        correction: !args.no_correction,
        forced_f: args.forced_f,
    };
    let results = hypotheses
        .iter()
        .map(|(label, pair)| Ok((label.clone(), run_test(&sample, pair, &config)?)))
        .collect::<CliResult<Vec<(String, TestResult)>>>()?;
    write_test_results(&results, as_json, sink(&args.output)?)
}

#[derive(Serialize)]
struct LabelledResult<'a> {
    hypothesis: &'a str,
    #[serde(flatten)]
    result: &'a TestResult,
}

fn write_test_results(results: &[(String, TestResult)], as_json: bool, mut out: Box<dyn Write>) -> CliResult<()> {
    if as_json {
        let rows: Vec<_> = results.iter().map(|(h, r)| LabelledResult { hypothesis: h, result: r }).collect();
        let text = serde_json::to_string_pretty(&rows).map_err(|e| Error::InvalidInput(e.to_string()))?;
        writeln!(out, "{text}")?;
        return Ok(());
    }
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let mut header = vec!["hypothesis".to_string()];
    header.extend(TestRecord::COLUMNS.iter().map(|c| c.to_string()));
    writer.write_record(&header).map_err(Error::from)?;
    for (label, r) in results {
        writer.serialize((label, r.record())).map_err(Error::from)?;
    }
    writer.flush()?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let mut config = match (&args.preset, &args.config) {
        (Some(p), None) => SimConfig::preset(p).or_else(usage)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str::<SimConfig>(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        }
        _ => return usage("exactly one of --preset or --config is required"),
    };
    if let Some(n) = args.n_sim {
        config.n_sim = n;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(b) = args.b_multiplier {
        config.b_multiplier = b;
    }
    if let Some(d) = &args.d {
        config.d_grid = parse_list(d, "d")?;
    }
    if let Err(e) = config.validate() {
        return usage(e);
    }
    let result = if config.alternative == Alternative::Null {
        run_study(&config, args.checkpoint.as_deref())?
    } else {
        power_study(&config, args.checkpoint.as_deref())?
    };
    if result.failed_replications > 0 {
        eprintln!("warning: {} replications failed and count as non-rejections", result.failed_replications);
    }
    eprintln!("wall time: {:.1} s", result.wall_time_s);
    write_rows(&result.rows, sink(&args.output)?)?;
    Ok(())
}

#[derive(Serialize)]
struct OracleMeta<'a> {
    hypothesis: &'a str,
    n: &'a [usize],
    d: usize,
    cov: &'a str,
    seed: Option<u64>,
    #[serde(rename = "B")]
    b: Option<u64>,
    version: &'a str,
}

fn cmd_oracle(args: OracleArgs) -> CliResult<()> {
    if args.quantity.as_deref() == Some("levels") {
        return print_rows(&level_table()?, None, &args.output);
    }
    let n: Vec<usize> = parse_list(&args.n, "n")?;
    if let Some(a) = args.a {
        if a != n.len() {
            return usage(format!("--a {a} but --n lists {} groups", n.len()));
        }
    }
    let structure = structure_for(&args.subplot, args.d)?;
    let kind = HypothesisKind::parse(&args.hypothesis).or_else(usage)?;
    let covs = parse_covs(&args.cov, n.len())?;
    let pair = standard_hypothesis(kind, n.len(), structure)?;
    let design = design_from(&n, structure, &covs)?;
    let rows = oracle_report(&pair, &design)?;
    if let Some(path) = &args.output {
        let meta = OracleMeta {
            hypothesis: &args.hypothesis,
            n: &n,
            d: structure.dim(),
            cov: &args.cov,
            seed: None,
            b: None,
            version: VERSION,
        };
        write_meta(path, &meta)?;
    }
    print_rows(&rows, args.quantity.as_deref(), &args.output)
}

fn print_rows(rows: &[OracleRow], quantity: Option<&str>, output: &Option<PathBuf>) -> CliResult<()> {
    let mut out = sink(output)?;
    match quantity {
        None | Some("levels") | Some("all") => write_oracle_csv(rows, out)?,
        Some(q) => match rows.iter().find(|r| r.quantity == q) {
            Some(r) => writeln!(out, "{}", r.value)?,
            None => {
                let known: Vec<&str> = rows.iter().map(|r| r.quantity.as_str()).collect();
                return usage(format!("unknown quantity '{q}' (known: {}, levels)", known.join(", ")));
            }
        },
    }
    Ok(())
}

#[derive(Serialize)]
struct GenMeta<'a> {
    n: &'a [usize],
    d: usize,
    cov: &'a str,
    alternative: &'a str,
    delta: f64,
    seed: u64,
    #[serde(rename = "B")]
    b: u64,
    version: &'a str,
}

fn cmd_gen(args: GenArgs) -> CliResult<()> {
    let n: Vec<usize> = parse_list(&args.n, "n")?;
    let structure = structure_for(&args.subplot, args.d)?;
    let covs = parse_covs(&args.cov, n.len())?;
    let alternative = Alternative::parse(&args.alternative).or_else(usage)?;
    let d = structure.dim();
    let design = design_from(&n, structure, &covs)?;
    let mut means = DMatrix::zeros(n.len(), d);
    means.row_mut(0).copy_from(&alternative.mean(d, args.delta).transpose());
    let design = design.with_means(means)?;
    let seed = args.seed.unwrap_or_else(fresh_seed);
    let sample: SplitPlotSample = design.sample(seed);
    write_sample(&sample, sink(&args.output)?)?;
    if let Some(path) = &args.output {
        let meta = GenMeta {
            n: &n,
            d,
            cov: &args.cov,
            alternative: alternative.as_str(),
            delta: args.delta,
            seed,
            b: 0,
            version: VERSION,
        };
        write_meta(path, &meta)?;
    }
    Ok(())
}

fn cmd_overlap(args: OverlapArgs) -> CliResult<()> {
    let n: Vec<usize> = parse_list(&args.n, "n")?;
    let seed = args.seed.unwrap_or_else(fresh_seed);
    let report = subsample_overlap_study(&n, args.m, args.b, args.reps, seed).or_else(|e| match e {
        Error::Io(_) | Error::Csv(_) => Err(Failure::Data(e)),
        other => usage(other),
    })?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidInput(e.to_string()))?;
    println!("{text}");
    Ok(())
}
