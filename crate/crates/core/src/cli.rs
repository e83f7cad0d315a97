//! Command-line front end and CSV output.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::auction::{settle, AuctionOutcome, BidVector, ValuationProfile};
use crate::equilibrium::{box_mapping_probe, corollary_bounds, BoundVector, BoxProbeReport};
use crate::error::{Error, Result};
use crate::experiments::{
    alpha_grid, log_grid, make_scenario, run_full_experiment, ExperimentConfig, ExperimentReport,
    SteepnessGrids, SweepRow, DEFAULT_GRID_MAX, DEFAULT_GRID_MIN, DEFAULT_GRID_POINTS,
    DEFAULT_REFINE_ROUNDS,
};
use crate::response::{run_dynamics, DynamicsOptions, DynamicsTrace};
use crate::weights::{Family, WeightSpec};

pub const SWEEP_HEADER: &str =
    "alpha,family,best_steepness,revenue,high_alloc,high_bid,low_bid,residual,boundary_flag";

/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "QP_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "qpauction",
    version,
    about = "Quasi-proportional auction equilibria and revenue sweeps"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Settle one bid vector.
    Run(RunArgs),
    /// Run synchronous best-response dynamics.
    Dynamics(DynamicsArgs),
    /// Sweep steepness for every alpha and family.
    Sweep(SweepArgs),
    /// Lower bounds on equilibrium bids under exponential weights.
    Bounds(BoundsArgs),
    /// Check that best responses map the bound box into itself.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// Explicit private values, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["n", "alpha"])]
    values: Option<Vec<f64>>,
    /// Number of bidders of the (alpha, 1, ..., 1) scenario.
    #[arg(long)]
    n: Option<usize>,
    /// Value of bidder 1 in the (alpha, 1, ..., 1) scenario.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Write the result here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    profile: ProfileArgs,
    /// Weight function: exp:c=<f>, pow:p=<f> or poly:c1=<f>,c2=<f>,...
    #[arg(long)]
    weight: WeightSpec,
    /// Bids, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    bids: Vec<f64>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct DynamicsArgs {
    #[command(flatten)]
    profile: ProfileArgs,
    #[arg(long)]
    weight: WeightSpec,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Common starting bid.
    #[arg(long, default_value_t = 0.5)]
    start: f64,
    /// Early-stopping step tolerance; 0 runs every iteration.
    #[arg(long, default_value_t = 0.0)]
    tol: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_value = "exp,pow")]
    families: Vec<Family>,
    /// Alpha values; defaults to {1.2, 1.4, ..., 10} U {20, 30, ..., 100}.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Exponential grid as lo:hi:points (log spaced).
    #[arg(long)]
    c_grid: Option<String>,
    /// Power grid as lo:hi:points (log spaced).
    #[arg(long)]
    p_grid: Option<String>,
    #[arg(long, default_value_t = DEFAULT_REFINE_ROUNDS)]
    refine: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0.5)]
    start: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[command(flatten)]
    profile: ProfileArgs,
    /// Exponential steepness.
    #[arg(long)]
    c: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    profile: ProfileArgs,
    #[arg(long)]
    c: f64,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutputArgs,
}

/// A validated command.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Run {
        spec: WeightSpec,
        profile: ValuationProfile,
        bids: BidVector,
    },
    Dynamics {
        spec: WeightSpec,
        profile: ValuationProfile,
        start: BidVector,
        opts: DynamicsOptions,
    },
    Sweep {
        config: ExperimentConfig,
    },
    Bounds {
        profile: ValuationProfile,
        c: f64,
    },
    Verify {
        profile: ValuationProfile,
        c: f64,
        samples: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub output: Option<PathBuf>,
}

fn usage(flag: &str, err: impl std::fmt::Display) -> clap::Error {
    Cli::command().error(
        ErrorKind::ValueValidation,
        format!("invalid value for {flag}: {err}"),
    )
}

fn profile_from(args: ProfileArgs) -> std::result::Result<ValuationProfile, clap::Error> {
    match args.values {
        Some(values) => ValuationProfile::new(values).map_err(|e| usage("--values", e)),
        None => {
            let n = args.n.unwrap_or(2);
            let alpha = args.alpha.unwrap_or(1.0);
            make_scenario(n, alpha).map_err(|e| usage("--n/--alpha", e))
        }
    }
}

fn parse_grid(flag: &str, raw: &str) -> std::result::Result<Vec<f64>, clap::Error> {
    let parts: Vec<&str> = raw.split(':').collect();
    let parsed = match parts.as_slice() {
        [lo, hi, points] => lo
            .parse::<f64>()
            .ok()
            .zip(hi.parse::<f64>().ok())
            .zip(points.parse::<usize>().ok()),
        _ => None,
    };
    match parsed {
        Some(((lo, hi), points)) if lo > 0.0 && hi >= lo && hi.is_finite() && points >= 1 => {
            Ok(log_grid(lo, hi, points))
        }
        _ => Err(usage(
            flag,
            format!("expected lo:hi:points with 0 < lo <= hi, got `{raw}`"),
        )),
    }
}

/// Parses and validates `argv` (including the program name).
pub fn parse_args<I, T>(argv: I) -> std::result::Result<RunConfig, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let (command, output) = match cli.verb {
        Verb::Run(a) => {
            let profile = profile_from(a.profile)?;
            let bids = BidVector::new(a.bids).map_err(|e| usage("--bids", e))?;
            if bids.len() != profile.len() {
                return Err(usage(
                    "--bids",
                    format!("expected {} bids, got {}", profile.len(), bids.len()),
                ));
            }
            if bids.positive_count() == 0 {
                return Err(usage("--bids", "at least one bid must be positive"));
            }
            (
                Command::Run {
                    spec: a.weight,
                    profile,
                    bids,
                },
                a.out.output,
            )
        }
        Verb::Dynamics(a) => {
            let profile = profile_from(a.profile)?;
            if a.iters == 0 {
                return Err(usage("--iters", "must be at least 1"));
            }
            if !(a.tol >= 0.0) {
                return Err(usage("--tol", "must be >= 0"));
            }
            let start =
                BidVector::uniform(profile.len(), a.start).map_err(|e| usage("--start", e))?;
            if !(a.start > 0.0) || start.check_within(&profile).is_err() {
                return Err(usage("--start", "must lie in (0, min value]"));
            }
            let opts = DynamicsOptions {
                max_iters: a.iters,
                tol: a.tol,
                ..Default::default()
            };
            (
                Command::Dynamics {
                    spec: a.weight,
                    profile,
                    start,
                    opts,
                },
                a.out.output,
            )
        }
        Verb::Sweep(a) => {
            if a.n < 2 {
                return Err(usage("--n", "must be at least 2"));
            }
            if a.families.is_empty() || a.families.contains(&Family::Polynomial) {
                return Err(usage("--families", "choose from exp,pow"));
            }
            let alphas = a.alphas.unwrap_or_else(alpha_grid);
            if alphas.is_empty() || alphas.iter().any(|x| !(x.is_finite() && *x >= 1.0)) {
                return Err(usage("--alphas", "every alpha must be >= 1"));
            }
            if a.iters == 0 {
                return Err(usage("--iters", "must be at least 1"));
            }
            if !(a.start > 0.0 && a.start <= 1.0) {
                return Err(usage("--start", "must lie in (0, 1]"));
            }
            let default_grid = || log_grid(DEFAULT_GRID_MIN, DEFAULT_GRID_MAX, DEFAULT_GRID_POINTS);
            let grids = SteepnessGrids {
                exponential: match a.c_grid {
                    Some(g) => parse_grid("--c-grid", &g)?,
                    None => default_grid(),
                },
                power: match a.p_grid {
                    Some(g) => parse_grid("--p-grid", &g)?,
                    None => default_grid(),
                },
                refine_rounds: a.refine,
            };
            let config = ExperimentConfig {
                n: a.n,
                alphas,
                families: a.families,
                grids,
                iters: a.iters,
                start_bid: a.start,
            };
            (Command::Sweep { config }, a.out.output)
        }
        Verb::Bounds(a) => {
            let profile = profile_from(a.profile)?;
            if !(a.c.is_finite() && a.c > 0.0) {
                return Err(usage("--c", "must be positive"));
            }
            (Command::Bounds { profile, c: a.c }, a.out.output)
        }
        Verb::Verify(a) => {
            let profile = profile_from(a.profile)?;
            if !(a.c.is_finite() && a.c > 0.0) {
                return Err(usage("--c", "must be positive"));
            }
            (
                Command::Verify {
                    profile,
                    c: a.c,
                    samples: a.samples,
                    seed: a.seed,
                },
                a.out.output,
            )
        }
    };
    Ok(RunConfig { command, output })
}

/// Formats like C's `%.12g`.
pub fn format_float(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if !(-5..DIGITS).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        format!(
            "{mantissa}e{}{:02}",
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn csv_err(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::other(format!("{other:?}")),
    }
}

/// Sweep table sorted by (alpha, family).
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> io::Result<()> {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.alpha.total_cmp(&b.alpha).then(a.family.cmp(&b.family)));
    let mut out = csv_writer(w);
    out.write_record(SWEEP_HEADER.split(',')).map_err(csv_err)?;
    for r in sorted {
        out.write_record([
            format_float(r.alpha),
            r.family.tag().to_string(),
            format_float(r.best_steepness),
            format_float(r.revenue),
            format_float(r.high_alloc),
            format_float(r.high_bid),
            format_float(r.low_bid),
            format_float(r.residual),
            (!r.grid_argmax_interior).to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()
}

/// Reads a table written by [`write_sweep_csv`].
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != SWEEP_HEADER {
        return Err(parse_err(1, format!("unexpected header `{header}`")));
    }
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != 9 {
            return Err(parse_err(
                line,
                format!("expected 9 fields, got {}", record.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("bad number `{}`", &record[i])))
        };
        let boundary = match &record[8] {
            "true" => true,
            "false" => false,
            other => return Err(parse_err(line, format!("bad flag `{other}`"))),
        };
        rows.push(SweepRow {
            alpha: num(0)?,
            family: record[1]
                .parse()
                .map_err(|e: Error| parse_err(line, e.to_string()))?,
            best_steepness: num(2)?,
            revenue: num(3)?,
            high_alloc: num(4)?,
            high_bid: num(5)?,
            low_bid: num(6)?,
            residual: num(7)?,
            grid_argmax_interior: !boundary,
        });
    }
    Ok(rows)
}

/// `iter,b_1,...,b_n,revenue,residual`, one row per iterate. The residual of
/// row `k` is `max_i |b^k_i - BR_i(b^k)|`.
pub fn write_dynamics_csv<W: Write>(
    spec: &WeightSpec,
    profile: &ValuationProfile,
    trace: &DynamicsTrace,
    w: W,
) -> Result<()> {
    let n = profile.len();
    let mut out = csv_writer(w);
    let mut header = vec!["iter".to_string()];
    header.extend((1..=n).map(|i| format!("b_{i}")));
    header.extend(["revenue".to_string(), "residual".to_string()]);
    let io = |e: csv::Error| Error::Io {
        path: PathBuf::from("<dynamics>"),
        source: csv_err(e),
    };
    out.write_record(&header).map_err(io)?;
    for (k, bids) in trace.iterates.iter().enumerate() {
        let revenue = settle(spec, profile, bids)?.revenue;
        let residual = match trace.iterates.get(k + 1) {
            Some(next) => next.sup_distance(bids),
            None => trace.residual,
        };
        let mut record = vec![k.to_string()];
        record.extend(bids.bids().iter().map(|&b| format_float(b)));
        record.extend([format_float(revenue), format_float(residual)]);
        out.write_record(&record).map_err(io)?;
    }
    out.flush().map_err(|source| Error::Io {
        path: PathBuf::from("<dynamics>"),
        source,
    })
}

fn join(xs: &[f64]) -> String {
    xs.iter()
        .map(|&x| format_float(x))
        .collect::<Vec<_>>()
        .join(";")
}

/// Single-record CSV of the verification report; list fields are `;`-joined.
pub fn write_verify_csv<W: Write>(
    profile: &ValuationProfile,
    c: f64,
    seed: u64,
    bounds: &BoundVector,
    report: &BoxProbeReport,
    w: W,
) -> io::Result<()> {
    let mut out = csv_writer(w);
    out.write_record([
        "values",
        "c",
        "seed",
        "bounds",
        "premise_ok",
        "samples",
        "violations",
        "worst_margin",
    ])
    .map_err(csv_err)?;
    out.write_record([
        join(profile.values()),
        format_float(c),
        seed.to_string(),
        join(&bounds.bounds),
        bounds.premise_ok.to_string(),
        report.samples.to_string(),
        report.violations.to_string(),
        report
            .worst_margin
            .map(format_float)
            .unwrap_or_else(|| "NA".into()),
    ])
    .map_err(csv_err)?;
    out.flush()
}

fn write_bounds_csv<W: Write>(
    profile: &ValuationProfile,
    c: f64,
    b: &BoundVector,
    w: W,
) -> io::Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["bidder", "value", "raw_bound", "bound"])
        .map_err(csv_err)?;
    for i in 0..profile.len() {
        out.write_record([
            (i + 1).to_string(),
            format_float(profile.value(i)),
            format_float(b.raw_bounds[i]),
            format_float(b.bounds[i]),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    let mut inner = out
        .into_inner()
        .map_err(|e| io::Error::other(e.to_string()))?;
    writeln!(
        inner,
        "# c={} premise_ok={} degenerate={}",
        format_float(c),
        b.premise_ok,
        b.degenerate
    )
}

fn write_outcome_csv<W: Write>(bids: &BidVector, o: &AuctionOutcome, w: W) -> io::Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["bidder", "bid", "allocation", "payment", "utility"])
        .map_err(csv_err)?;
    for i in 0..bids.len() {
        out.write_record([
            (i + 1).to_string(),
            format_float(bids.bids()[i]),
            format_float(o.allocations[i]),
            format_float(o.payments[i]),
            format_float(o.utilities[i]),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    let mut inner = out
        .into_inner()
        .map_err(|e| io::Error::other(e.to_string()))?;
    writeln!(inner, "# revenue={}", format_float(o.revenue))
}

/// What a command produced, for the exit status and the terminal summary.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Settled(AuctionOutcome),
    Dynamics(DynamicsTrace),
    Sweep(ExperimentReport),
    Bounds(BoundVector),
    Verified(BoxProbeReport),
}

impl Outcome {
    /// Exit status: zero unless a verification found violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Verified(r) if r.violations > 0 => 1,
            _ => 0,
        }
    }
}

fn with_output<F>(path: Option<&Path>, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match path {
        Some(p) => {
            let io_err = |source| Error::Io {
                path: p.to_path_buf(),
                source,
            };
            let mut file = BufWriter::new(File::create(p).map_err(io_err)?);
            write(&mut file).map_err(|e| match e {
                Error::Io { source, .. } => io_err(source),
                other => other,
            })?;
            file.flush().map_err(io_err)
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)
        }
    }
}

fn io_at(source: io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<output>"),
        source,
    }
}

/// Rayon pool honoring `QP_THREADS`, if set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let threads: usize = raw.trim().parse().ok().filter(|&t| t > 0).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "{THREADS_ENV} must be a positive integer, got `{raw}`"
            ))
        })?;
        builder = builder.num_threads(threads);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// Runs a validated command and writes its CSV.
pub fn execute(config: &RunConfig) -> Result<Outcome> {
    let output = config.output.as_deref();
    match &config.command {
        Command::Run {
            spec,
            profile,
            bids,
        } => {
            let outcome = settle(spec, profile, bids)?;
            with_output(output, |w| {
                write_outcome_csv(bids, &outcome, w).map_err(io_at)
            })?;
            Ok(Outcome::Settled(outcome))
        }
        Command::Dynamics {
            spec,
            profile,
            start,
            opts,
        } => {
            let trace = run_dynamics(spec, profile, start, opts)?;
            with_output(output, |w| write_dynamics_csv(spec, profile, &trace, w))?;
            Ok(Outcome::Dynamics(trace))
        }
        Command::Sweep { config: experiment } => {
            let report = thread_pool()?.install(|| run_full_experiment(experiment))?;
            with_output(output, |w| write_sweep_csv(&report.rows, w).map_err(io_at))?;
            Ok(Outcome::Sweep(report))
        }
        Command::Bounds { profile, c } => {
            let bounds = corollary_bounds(profile, *c)?;
            with_output(output, |w| {
                write_bounds_csv(profile, *c, &bounds, w).map_err(io_at)
            })?;
            Ok(Outcome::Bounds(bounds))
        }
        Command::Verify {
            profile,
            c,
            samples,
            seed,
        } => {
            let bounds = corollary_bounds(profile, *c)?;
            let spec = WeightSpec::exponential(*c)?;
            let report = box_mapping_probe(&spec, profile, &bounds, *samples, *seed)?;
            with_output(output, |w| {
                write_verify_csv(profile, *c, *seed, &bounds, &report, w).map_err(io_at)
            })?;
            Ok(Outcome::Verified(report))
        }
    }
}
