//! `cpapr`: command-line front end for decomposition, kernel studies,
//! roofline emission and bandwidth microbenchmarks.
//!
//! Exit codes: 0 success, 1 usage error, 2 input error, 3 runtime failure.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cpapr_core::microbench::write_bandwidth_csv;
use cpapr_core::policy::{write_grid_csv, write_heatmap};
use cpapr_core::report::write_breakdown_csv;
use cpapr_core::roofline::{emit_roofline, roofline_gnuplot};
use cpapr_core::{
    cp_apr_mu, grid_search, mttkrp_bandwidth, random_tensor, read_tns, report_kernel_breakdown, resolve_machine,
    run_ppa, run_stream, save_model, Error, KernelCostModel, MachineSpec, PhiStrategy, PolicyParams, PolicySpace,
    SolverOptions, SparseTensor, StreamKernel,
};

#[derive(Parser)]
#[command(name = "cpapr", version, about = "Sparse Poisson tensor decomposition and kernel studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run CP-APR MU on a .tns tensor; writes model files and a trace CSV.
    Decompose(DecomposeArgs),
    /// Time the Φ kernel under each perturbation.
    Ppa(PpaArgs),
    /// Time the Φ kernel (or the full solver) over a grid of policies.
    Gridsearch(GridArgs),
    /// Emit a roofline curve for a machine, with kernel markers.
    Roofline(RooflineArgs),
    /// Run the STREAM-style bandwidth kernels.
    BenchStream(StreamArgs),
    /// Measure effective MTTKRP bandwidth.
    BenchMttkrp(MttkrpArgs),
}

/// Flags shared by the kernel-running subcommands.
#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Worker budget; also sizes the data-parallel pool.
    #[arg(long)]
    threads: Option<usize>,
    /// atomic, chunked, or chunked:V. Plain `chunked` takes V from the policy.
    #[arg(long)]
    strategy: Option<String>,
    /// Parallel policy as league,team,vector.
    #[arg(long, value_parser = parse_policy)]
    policy: Option<PolicyParams>,
    #[arg(long)]
    rank: Option<usize>,
    /// key=value file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Tensor source: a .tns file, or a seeded synthetic tensor.
#[derive(Args, Clone)]
struct TensorSource {
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Dimensions of the synthetic tensor used without --input.
    #[arg(long, value_delimiter = ',', default_values_t = vec![200usize, 150, 100])]
    synthetic_dims: Vec<usize>,
    #[arg(long, default_value_t = 20_000)]
    synthetic_nnz: usize,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    max_inner: Option<usize>,
    /// Prefix for model files; defaults to the input path without extension.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also write the per-kernel time breakdown CSV here.
    #[arg(long)]
    breakdown: Option<PathBuf>,
}

#[derive(Args)]
struct PpaArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: TensorSource,
    #[arg(long, default_value_t = 5)]
    reps: usize,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: TensorSource,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 4, 8, 16, 32, 64, 128])]
    policy_league: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 4, 8])]
    policy_team: Vec<usize>,
    /// Vector sizes; `auto` picks the largest admissible width per team size.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["1".to_string(), "8".into(), "32".into(), "128".into()])]
    policy_vector: Vec<String>,
    /// Time the full solver per policy instead of Φ only.
    #[arg(long)]
    full_solver: bool,
    /// Also write a per-league heatmap matrix here.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct RooflineArgs {
    /// Machine name, JSON path, or name in the machine directory.
    #[arg(long, default_value = "e5-2690v4")]
    machine: String,
    #[arg(long, default_value_t = 10)]
    rank: u32,
    /// Chunk widths for chunked-kernel markers.
    #[arg(long, value_delimiter = ',', default_values_t = vec![10u32])]
    chunk: Vec<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a gnuplot script for the CSV here.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long, default_value_t = 10_000_000)]
    length: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_stream_kernel)]
    kernels: Vec<StreamKernel>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    machine: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MttkrpArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: TensorSource,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long)]
    machine: Option<String>,
}

enum Failure {
    Usage(String),
    Input(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn parse_policy(s: &str) -> Result<PolicyParams, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_stream_kernel(s: &str) -> Result<StreamKernel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

/// Defaults, then the config file, then explicit flags. Everything is
/// validated before returning.
fn solver_options(common: &Common) -> Result<SolverOptions, Failure> {
    let mut opts = SolverOptions::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        opts.apply_config(&text).map_err(usage)?;
    }
    if let Some(seed) = common.seed {
        opts.seed = seed;
    }
    if let Some(rank) = common.rank {
        opts.rank = rank;
    }
    if let Some(threads) = common.threads {
        opts.worker_budget = threads;
        if common.policy.is_none() {
            opts.policy = PolicyParams::default_for(threads.max(1));
        }
    }
    if let Some(policy) = common.policy {
        opts.policy = policy;
    }
    if let Some(s) = &common.strategy {
        let strategy: PhiStrategy = s.parse().map_err(usage)?;
        opts.strategy = if s.trim().eq_ignore_ascii_case("chunked") {
            strategy.with_policy_vector(opts.policy)
        } else {
            strategy
        };
    }
    opts.validate().map_err(usage)?;
    Ok(opts)
}

fn configure_pool(threads: usize) {
    // Only fails if a global pool already exists, which is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global();
}

fn load_tensor(path: &Path) -> Result<SparseTensor, Failure> {
    read_tns(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn tensors(source: &TensorSource, seed: u64) -> Result<Vec<(String, SparseTensor)>, Failure> {
    if source.input.is_empty() {
        let t = random_tensor(&source.synthetic_dims, source.synthetic_nnz, 10, seed).map_err(usage)?;
        let dims: Vec<String> = source.synthetic_dims.iter().map(|d| d.to_string()).collect();
        return Ok(vec![(format!("synthetic-{}", dims.join("x")), t)]);
    }
    source
        .input
        .iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, load_tensor(p)?))
        })
        .collect()
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn machine(spec: &str) -> Result<MachineSpec, Failure> {
    resolve_machine(spec).map_err(|e| match e {
        Error::InvalidArgument(m) => Failure::Input(m),
        other => other.into(),
    })
}

fn decompose(args: DecomposeArgs) -> Outcome {
    let mut opts = solver_options(&args.common)?;
    if let Some(n) = args.max_outer {
        opts.max_outer = n;
    }
    if let Some(n) = args.max_inner {
        opts.max_inner = n;
    }
    opts.validate().map_err(usage)?;
    configure_pool(opts.worker_budget);
    let tensor = load_tensor(&args.input)?;
    let (model, trace) = cp_apr_mu(&tensor, &opts)?;
    let prefix = args.model.unwrap_or_else(|| args.input.with_extension(""));
    let files = save_model(&model, &prefix)?;
    let mut out = output(&args.common.out)?;
    trace.write_csv(&mut out)?;
    out.flush()?;
    if let Some(path) = args.breakdown {
        write_breakdown_csv(&report_kernel_breakdown(&trace)?, File::create(path)?)?;
    }
    eprintln!(
        "{} outer iterations, converged: {}, objective {:.6}, model in {} files",
        trace.outer_iterations(),
        trace.converged,
        trace.objectives().last().copied().unwrap_or(trace.initial_objective),
        files.len()
    );
    Ok(())
}

fn ppa(args: PpaArgs) -> Outcome {
    let opts = solver_options(&args.common)?;
    if args.reps == 0 {
        return Err(Failure::Usage("--reps must be at least 1".into()));
    }
    configure_pool(opts.worker_budget);
    let tensors = tensors(&args.source, opts.seed)?;
    let report = run_ppa(&tensors, &opts, opts.policy, args.reps)?;
    let mut out = output(&args.common.out)?;
    report.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn gridsearch(args: GridArgs) -> Outcome {
    let opts = solver_options(&args.common)?;
    if args.reps == 0 {
        return Err(Failure::Usage("--reps must be at least 1".into()));
    }
    let mut vectors = Vec::new();
    let mut auto_vector = false;
    for v in &args.policy_vector {
        if v.eq_ignore_ascii_case("auto") {
            auto_vector = true;
        } else {
            vectors.push(v.parse().map_err(|_| Failure::Usage(format!("bad vector size {v:?}")))?);
        }
    }
    let mut space = PolicySpace::new(args.policy_league.clone(), args.policy_team.clone(), vectors);
    space.auto_vector = auto_vector;
    space.candidates().map_err(usage)?;
    configure_pool(opts.worker_budget);
    let (_, tensor) = tensors(&args.source, opts.seed)?.remove(0);
    let result = grid_search(&tensor, &opts, &space, opts.policy, args.reps, args.full_solver)?;
    let mut out = output(&args.common.out)?;
    write_grid_csv(&result, &mut out)?;
    out.flush()?;
    if let Some(path) = args.heatmap {
        write_heatmap(&result, BufWriter::new(File::create(path)?))?;
    }
    let skipped = result.skipped();
    if !skipped.is_empty() {
        let list: Vec<String> = skipped.iter().map(|p| p.to_string()).collect();
        eprintln!("skipped {} policies over the team x vector bound: {}", skipped.len(), list.join(" "));
    }
    Ok(())
}

fn roofline(args: RooflineArgs) -> Outcome {
    let m = machine(&args.machine)?;
    let mut models = vec![KernelCostModel::base(args.rank)];
    models.extend(args.chunk.iter().map(|&v| KernelCostModel::chunked(args.rank, v)));
    for model in &models {
        model.validate().map_err(usage)?;
    }
    let mut out = output(&args.out)?;
    emit_roofline(&m, &models, &mut out)?;
    out.flush()?;
    if let Some(path) = args.gnuplot {
        let csv = args.out.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "roofline.csv".into());
        fs::write(path, roofline_gnuplot(&csv, &m))?;
    }
    Ok(())
}

fn bench_stream(args: StreamArgs) -> Outcome {
    if args.reps < 2 || args.length == 0 {
        return Err(Failure::Usage("need --reps >= 2 and --length >= 1".into()));
    }
    let peak = args.machine.as_deref().map(machine).transpose()?;
    configure_pool(args.threads.unwrap_or_else(cpapr_core::hardware_concurrency));
    let kernels = if args.kernels.is_empty() { StreamKernel::ALL.to_vec() } else { args.kernels };
    let mut results = run_stream(args.length, args.reps, &kernels)?;
    if let Some(m) = &peak {
        results = results.into_iter().map(|r| r.with_peak(m.bandwidth_gbs)).collect();
    }
    let mut out = output(&args.out)?;
    write_bandwidth_csv(&results, &mut out)?;
    out.flush()?;
    if results.iter().any(|r| !r.validated) {
        return Err(Failure::Runtime("STREAM validation failed".into()));
    }
    Ok(())
}

fn bench_mttkrp(args: MttkrpArgs) -> Outcome {
    let opts = solver_options(&args.common)?;
    if args.reps < 2 {
        return Err(Failure::Usage("--reps must be at least 2".into()));
    }
    let peak = args.machine.as_deref().map(machine).transpose()?;
    configure_pool(opts.worker_budget);
    let mut results = Vec::new();
    for (name, tensor) in tensors(&args.source, opts.seed)? {
        let mut r = mttkrp_bandwidth(&tensor, opts.rank, args.reps, &opts.kernel_config(), opts.seed)?;
        r.kernel = format!("mttkrp:{name}");
        if let Some(m) = &peak {
            r = r.with_peak(m.bandwidth_gbs);
        }
        results.push(r);
    }
    let mut out = output(&args.common.out)?;
    write_bandwidth_csv(&results, &mut out)?;
    out.flush()?;
    if results.iter().any(|r| !r.validated) {
        return Err(Failure::Runtime("MTTKRP validation failed".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Decompose(a) => decompose(a),
        Command::Ppa(a) => ppa(a),
        Command::Gridsearch(a) => gridsearch(a),
        Command::Roofline(a) => roofline(a),
        Command::BenchStream(a) => bench_stream(a),
        Command::BenchMttkrp(a) => bench_mttkrp(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("cpapr: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
