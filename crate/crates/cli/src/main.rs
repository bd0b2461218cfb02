mod units;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use edgesplit::latency::latency_for_devices;
use edgesplit::planner::{build_grid_with_upload, solve_with, PlanRecord, ReplanController, SolverKind};
use edgesplit::predictor::{build_tables, read_records, write_records, LookupTables, SizeStatistic, TableOptions};
use edgesplit::profiles::{load_model_profile, load_scenario, validate_scenario, ModelProfile, Scenario};
use edgesplit::simulator::{
    run, sweep_accuracy, sweep_bandwidth, sweep_edge_power, write_amplification_csv,
    write_compression_csv, write_sweep_csv, Fidelity, RequestStream, SimOptions,
};
use edgesplit::synthetic::{gen_calibration_range, GeneratorSpec};
use edgesplit::transport::{CloudConfig, CloudService, EdgeAgent, EdgeConfig};

use units::{parse_bandwidth, parse_bandwidth_list, parse_bit_depths, parse_f64_list};

/// Comma-separated bit depths, parsed as one argument.
type Depths = Vec<u8>;

/// Split planning, simulation and a socket pipeline for edge/cloud inference.
#[derive(Parser)]
#[command(name = "edgesplit", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic generator spec or calibration corpus.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Build lookup tables from calibration records or a generator spec.
    BuildTables(BuildTablesArgs),
    /// Choose the split layer and bit depth for one bandwidth.
    Plan(PlanArgs),
    /// Replay a request stream through a scenario.
    Simulate(SimulateArgs),
    /// Sweep one parameter and write one CSV row per value.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Run the cloud service until interrupted.
    ServeCloud(ServeArgs),
    /// Run the edge agent against a cloud service.
    RunEdge(RunEdgeArgs),
    /// Emit report and plot-data files.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Subcommand)]
enum GenCommand {
    /// Write a generator spec with ramped sparsity and loss for a model.
    Spec {
        #[arg(long, env = "EDGESPLIT_MODEL")]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write calibration records for samples `first..first+samples`.
    Corpus {
        #[arg(long, env = "EDGESPLIT_MODEL")]
        model: PathBuf,
        #[arg(long = "gen", env = "EDGESPLIT_GEN")]
        generator: PathBuf,
        #[arg(long, value_parser = parse_bit_depths, default_value = "1,2,3,4,5,6,7,8")]
        bits: Depths,
        #[arg(long)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        first: u64,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BuildTablesArgs {
    #[arg(long, env = "EDGESPLIT_MODEL")]
    model: PathBuf,
    /// Calibration record file.
    #[arg(long, conflicts_with = "generator", required_unless_present = "generator")]
    records: Option<PathBuf>,
    /// Generate the corpus in memory from this spec instead.
    #[arg(long = "gen", env = "EDGESPLIT_GEN")]
    generator: Option<PathBuf>,
    /// Sample count when generating.
    #[arg(long, default_value_t = 100)]
    samples: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_bit_depths, default_value = "1,2,3,4,5,6,7,8")]
    bits: Depths,
    /// `mean` or a percentile such as `p95`.
    #[arg(long, default_value = "mean", value_parser = parse_statistic)]
    statistic: SizeStatistic,
    #[arg(long)]
    out: PathBuf,
    /// Also write the tables as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    #[arg(long, env = "EDGESPLIT_SCENARIO")]
    scenario: PathBuf,
    /// Replace the scenario's lookup tables.
    #[arg(long, env = "EDGESPLIT_TABLES")]
    tables: Option<PathBuf>,
    /// Replace the accuracy budget.
    #[arg(long)]
    max_loss: Option<f64>,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Bandwidth, e.g. 300KB or 1.5MBps. Defaults to the trace at time 0.
    #[arg(long, value_parser = parse_bandwidth)]
    bw: Option<f64>,
    #[arg(long, value_enum, default_value_t = Solver::Exhaustive)]
    solver: Solver,
    /// Write the decision as a plan record.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Exhaustive,
    Bnb,
}

impl From<Solver> for SolverKind {
    fn from(s: Solver) -> Self {
        match s {
            Solver::Exhaustive => SolverKind::Exhaustive,
            Solver::Bnb => SolverKind::BranchAndBound,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Table,
    Payload,
}

#[derive(Args, Clone)]
struct StreamArgs {
    #[arg(long, default_value_t = 100)]
    requests: usize,
    /// Seconds between request arrivals.
    #[arg(long, default_value_t = 0.0)]
    interval: f64,
    #[arg(long, value_enum, default_value_t = Mode::Table)]
    mode: Mode,
    /// Generator spec for payload mode.
    #[arg(long = "gen", env = "EDGESPLIT_GEN")]
    generator: Option<PathBuf>,
    /// Overrides the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Solver::Exhaustive)]
    solver: Solver,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    stream: StreamArgs,
    /// Directory for requests.csv and summary.txt.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SweepCommand {
    /// Accuracy budgets, e.g. 0,0.01,0.05,0.1,1.
    Accuracy(SweepArgs),
    /// Edge FLOPS values, e.g. 3e11,2e12.
    EdgePower(SweepArgs),
    /// Bandwidths, e.g. 100KB,300KB,1MB,10MB.
    Bandwidth(SweepArgs),
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    values: String,
    #[command(flatten)]
    stream: StreamArgs,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878", env = "EDGESPLIT_BIND")]
    bind: String,
    /// Scenario whose cloud device sets the stub compute time.
    #[arg(long, env = "EDGESPLIT_SCENARIO")]
    scenario: Option<PathBuf>,
    /// Multiplier on modeled compute time for stub sleeps.
    #[arg(long, default_value_t = 0.0)]
    time_scale: f64,
}

#[derive(Args)]
struct RunEdgeArgs {
    #[arg(long, default_value = "127.0.0.1:7878", env = "EDGESPLIT_CLOUD")]
    cloud: String,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long = "gen", env = "EDGESPLIT_GEN")]
    generator: PathBuf,
    #[arg(long, default_value_t = 10)]
    requests: u64,
    #[arg(long, default_value_t = 0)]
    first_sample: u64,
    /// Constant bandwidth; otherwise request k uses the trace at k * step.
    #[arg(long, value_parser = parse_bandwidth)]
    bw: Option<f64>,
    /// Trace seconds advanced per request.
    #[arg(long, default_value_t = 0.1)]
    trace_step: f64,
    #[arg(long, default_value_t = 0.0)]
    time_scale: f64,
    #[arg(long, default_value_t = 20)]
    max_attempts: u32,
    /// Per-request CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Output size of every decoupling point against the raw input.
    Amplification {
        #[arg(long, env = "EDGESPLIT_MODEL")]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expected compressed sizes against float32 maps.
    Compression {
        #[arg(long, env = "EDGESPLIT_MODEL")]
        model: PathBuf,
        #[arg(long, env = "EDGESPLIT_TABLES")]
        tables: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Edge prefix and cloud suffix times of a scenario.
    Latency {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lookup tables as CSV.
    Tables {
        #[arg(long, env = "EDGESPLIT_TABLES")]
        tables: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All plot-data files for a scenario.
    PlotData {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 100)]
        requests: usize,
        #[arg(long, default_value_t = 0.05)]
        interval: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Bad input detected before any work; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_statistic(s: &str) -> Result<SizeStatistic, String> {
    if s == "mean" {
        return Ok(SizeStatistic::Mean);
    }
    s.strip_prefix('p')
        .and_then(|q| q.parse::<f64>().ok())
        .filter(|q| *q > 0.0 && *q <= 100.0)
        .map(SizeStatistic::Percentile)
        .ok_or_else(|| format!("expected `mean` or `pNN`, got {s:?}"))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} file not found: {}", path.display())));
    }
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_scenario_args(a: &ScenarioArgs) -> Result<Scenario> {
    require_file(&a.scenario, "scenario")?;
    if let Some(t) = &a.tables {
        require_file(t, "tables")?;
    }
    let mut s = load_scenario(&a.scenario).map_err(|e| match &e {
        edgesplit::Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => {
            usage(e.to_string())
        }
        _ => anyhow::Error::from(e),
    })?;
    if let Some(t) = &a.tables {
        s.tables = LookupTables::load(t)?;
    }
    if let Some(b) = a.max_loss {
        s.accuracy_budget = b;
    }
    let diags = validate_scenario(&s);
    if !diags.is_empty() {
        let lines: Vec<String> = diags.iter().map(|d| format!("  {d}")).collect();
        bail!("scenario {} is invalid:\n{}", s.name, lines.join("\n"));
    }
    Ok(s)
}

fn load_spec(path: &Path, seed: Option<u64>) -> Result<GeneratorSpec> {
    require_file(path, "generator spec")?;
    let mut spec = GeneratorSpec::load(path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn load_model(path: &Path) -> Result<ModelProfile> {
    require_file(path, "model profile")?;
    Ok(load_model_profile(path)?)
}

fn sim_options(s: &Scenario, a: &StreamArgs) -> Result<SimOptions> {
    let fidelity = match a.mode {
        Mode::Table => Fidelity::Table,
        Mode::Payload => {
            let path = a
                .generator
                .as_ref()
                .ok_or_else(|| usage("--mode payload needs --gen"))?;
            let spec = load_spec(path, a.seed)?;
            spec.check_model(&s.model)?;
            Fidelity::Payload(spec)
        }
    };
    Ok(SimOptions {
        fidelity,
        solver: a.solver.into(),
    })
}

fn stream(a: &StreamArgs) -> Result<RequestStream> {
    if a.requests == 0 {
        return Err(usage("--requests must be positive"));
    }
    Ok(RequestStream::every(a.requests, a.interval))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(g) => gen(g),
        Command::BuildTables(a) => build_tables_cmd(a),
        Command::Plan(a) => plan(a),
        Command::Simulate(a) => simulate(a),
        Command::Sweep(s) => sweep(s),
        Command::ServeCloud(a) => serve_cloud(a),
        Command::RunEdge(a) => run_edge(a),
        Command::Report(r) => report(r),
    }
}

fn gen(cmd: GenCommand) -> Result<()> {
    match cmd {
        GenCommand::Spec { model, seed, out } => {
            let m = load_model(&model)?;
            let spec = GeneratorSpec::ramp(m.n_layers(), seed);
            let mut w = output(Some(&out))?;
            w.write_all(spec.to_toml().as_bytes())?;
            w.flush()?;
        }
        GenCommand::Corpus {
            model,
            generator,
            bits,
            samples,
            first,
            seed,
            out,
        } => {
            let m = load_model(&model)?;
            let spec = load_spec(&generator, seed)?;
            if samples == 0 {
                return Err(usage("--samples must be positive"));
            }
            let mut records = Vec::new();
            for batch in gen_calibration_range(&spec, &m, &bits, first, samples)? {
                records.extend(batch?);
            }
            let n = write_records(output(Some(&out))?, records)?;
            info!("wrote {n} records to {}", out.display());
        }
    }
    Ok(())
}

fn build_tables_cmd(a: BuildTablesArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let options = TableOptions {
        size_statistic: a.statistic,
    };
    let tables = match (&a.records, &a.generator) {
        (Some(r), _) => {
            require_file(r, "records")?;
            build_tables(read_records(r)?, &model, &a.bits, options)?
        }
        (None, Some(g)) => {
            let spec = load_spec(g, a.seed)?;
            let mut records = Vec::new();
            for (k, batch) in gen_calibration_range(&spec, &model, &a.bits, 0, a.samples)?.enumerate() {
                records.extend(batch?);
                if (k + 1) % 10 == 0 {
                    info!("generated {} of {} samples", k + 1, a.samples);
                }
            }
            build_tables(records, &model, &a.bits, options)?
        }
        (None, None) => return Err(usage("one of --records or --gen is required")),
    };
    tables.save(&a.out)?;
    if let Some(c) = &a.csv {
        tables.write_csv(output(Some(c))?)?;
    }
    println!(
        "tables for {}: N={} bit depths {:?} -> {}",
        tables.model_name,
        tables.n_layers(),
        tables.bit_depths,
        a.out.display()
    );
    Ok(())
}

fn plan(a: PlanArgs) -> Result<()> {
    let s = load_scenario_args(&a.scenario)?;
    let bw = a.bw.unwrap_or_else(|| s.bandwidth_trace.at(0.0));
    let latency = latency_for_devices(&s.model, &s.edge, &s.cloud)?;
    let grid = build_grid_with_upload(&s.model, &latency, &s.tables, bw, s.accuracy_budget, s.upload)?;
    let d = solve_with(&grid, a.solver.into())?;
    let layer_name = s
        .model
        .point(d.split_layer)
        .map_or("input", |p| p.name.as_str());
    let mut out = io::stdout().lock();
    writeln!(out, "scenario: {}", s.name)?;
    writeln!(out, "bandwidth_Bps: {bw}")?;
    writeln!(out, "accuracy_budget: {}", s.accuracy_budget)?;
    writeln!(out, "split_layer: {} ({layer_name})", d.split_layer)?;
    writeln!(
        out,
        "bit_depth: {}",
        d.bit_depth.map_or_else(|| "none".to_string(), |c| c.to_string())
    )?;
    writeln!(out, "edge_ms: {:.4}", d.edge_s * 1e3)?;
    writeln!(out, "trans_ms: {:.4}", d.trans_s * 1e3)?;
    writeln!(out, "cloud_ms: {:.4}", d.cloud_s * 1e3)?;
    writeln!(out, "total_ms: {:.4}", d.total_s * 1e3)?;
    writeln!(out, "predicted_accuracy_loss: {}", d.predicted_accuracy_loss)?;
    writeln!(out, "predicted_bytes: {}", d.predicted_bytes)?;
    writeln!(out, "solver: {}", d.solver.as_str())?;
    if let Some(p) = &a.record {
        let rec = PlanRecord {
            epoch: 1,
            decision: d,
        };
        fs::write(p, rec.to_text()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let s = load_scenario_args(&a.scenario)?;
    let opts = sim_options(&s, &a.stream)?;
    let report = run(&s, &stream(&a.stream)?, &opts)?;
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut w = output(Some(&dir.join("requests.csv")))?;
        report.write_csv(&mut w)?;
        w.flush()?;
        fs::write(dir.join("summary.txt"), report.summary())?;
    }
    print!("{}", report.summary());
    Ok(())
}

fn sweep(cmd: SweepCommand) -> Result<()> {
    let (a, kind) = match cmd {
        SweepCommand::Accuracy(a) => (a, "accuracy_budget"),
        SweepCommand::EdgePower(a) => (a, "edge_flops"),
        SweepCommand::Bandwidth(a) => (a, "bandwidth_Bps"),
    };
    let values = match kind {
        "bandwidth_Bps" => parse_bandwidth_list(&a.values),
        _ => parse_f64_list(&a.values),
    }
    .map_err(usage)?;
    let s = load_scenario_args(&a.scenario)?;
    let opts = sim_options(&s, &a.stream)?;
    let st = stream(&a.stream)?;
    let rows = match kind {
        "accuracy_budget" => sweep_accuracy(&s, &values, &st, &opts)?,
        "edge_flops" => sweep_edge_power(&s, &values, &st, &opts)?,
        _ => sweep_bandwidth(&s, &values, &st, &opts)?,
    };
    let mut w = output(a.out.as_deref())?;
    write_sweep_csv(&rows, kind, &mut w)?;
    w.flush()?;
    Ok(())
}

fn serve_cloud(a: ServeArgs) -> Result<()> {
    let mut config = CloudConfig::new(&a.bind);
    config.time_scale = a.time_scale;
    if let Some(p) = &a.scenario {
        let s = load_scenario_args(&ScenarioArgs {
            scenario: p.clone(),
            tables: None,
            max_loss: None,
        })?;
        config.cloud_suffix = Some(latency_for_devices(&s.model, &s.edge, &s.cloud)?.cloud_suffix().to_vec());
    }
    let service = CloudService::bind(config)?;
    let handle = service.handle();
    let stopper = handle.clone();
    ctrlc::set_handler(move || stopper.stop()).context("installing signal handler")?;
    println!("listening on {}", handle.addr());
    io::stdout().flush()?;
    let stats = service.run();
    println!("cloud stats: {stats}");
    Ok(())
}

fn run_edge(a: RunEdgeArgs) -> Result<()> {
    let s = load_scenario_args(&a.scenario)?;
    let spec = load_spec(&a.generator, None)?;
    spec.check_model(&s.model)?;
    let latency = latency_for_devices(&s.model, &s.edge, &s.cloud)?;
    let controller = ReplanController::new(s.model.clone(), latency, s.tables.clone(), s.accuracy_budget)
        .with_upload(s.upload);
    let mut config = EdgeConfig::new(&a.cloud, spec);
    config.time_scale = a.time_scale;
    config.max_attempts = a.max_attempts;
    config.io_timeout = Duration::from_secs(5);
    let mut agent = EdgeAgent::new(config, controller)?;

    let interrupted = Arc::new(AtomicBool::new(false));
    let flag = interrupted.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).context("installing signal handler")?;

    let mut csv = match &a.out {
        Some(p) => {
            let mut w = output(Some(p))?;
            writeln!(w, "request,epoch,split_layer,bit_depth,bytes,digest,edge_s,trans_s,cloud_s,wall_s")?;
            Some(w)
        }
        None => None,
    };
    let mut failure = None;
    for k in 0..a.requests {
        if interrupted.load(Ordering::SeqCst) {
            println!("interrupted after {k} requests");
            break;
        }
        let bw = a
            .bw
            .unwrap_or_else(|| s.bandwidth_trace.at(k as f64 * a.trace_step));
        let id = a.first_sample + k;
        let outcome = agent.set_bandwidth(bw).and_then(|_| agent.request(id));
        match outcome {
            Ok(o) => {
                let bits = o.bit_depth.map_or_else(String::new, |c| c.to_string());
                println!(
                    "request={} epoch={} split={} bits={} bytes={} digest={} edge_ms={:.3} trans_ms={:.3} cloud_ms={:.3}",
                    o.request_id,
                    o.epoch,
                    o.split_layer,
                    if bits.is_empty() { "-" } else { &bits },
                    o.bytes,
                    &o.digest[..16],
                    o.edge_s * 1e3,
                    o.trans_s * 1e3,
                    o.cloud_s * 1e3
                );
                if let Some(w) = csv.as_mut() {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{},{},{}",
                        o.request_id, o.epoch, o.split_layer, bits, o.bytes, o.digest, o.edge_s, o.trans_s, o.cloud_s, o.wall_s
                    )?;
                }
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if let Some(w) = csv.as_mut() {
        w.flush()?;
    }
    println!("edge stats: {}", agent.stats());
    if let Some(e) = failure {
        return Err(anyhow::Error::from(e).context("edge agent stopped"));
    }
    let st = agent.stats();
    if st.digest_mismatches > 0 || st.epoch_violations > 0 {
        bail!("{} digest mismatches, {} epoch violations", st.digest_mismatches, st.epoch_violations);
    }
    Ok(())
}

fn report(cmd: ReportCommand) -> Result<()> {
    match cmd {
        ReportCommand::Amplification { model, out } => {
            let m = load_model(&model)?;
            let mut w = output(out.as_deref())?;
            write_amplification_csv(&m, &mut w)?;
            w.flush()?;
        }
        ReportCommand::Compression { model, tables, out } => {
            let m = load_model(&model)?;
            require_file(&tables, "tables")?;
            let t = LookupTables::load(&tables)?;
            if t.n_layers() != m.n_layers() {
                bail!("tables have N={} but model has N={}", t.n_layers(), m.n_layers());
            }
            let mut w = output(out.as_deref())?;
            write_compression_csv(&m, &t, &mut w)?;
            w.flush()?;
        }
        ReportCommand::Latency { scenario, out } => {
            let s = load_scenario_args(&scenario)?;
            let lm = latency_for_devices(&s.model, &s.edge, &s.cloud)?;
            let mut w = output(out.as_deref())?;
            lm.write_csv(&mut w)?;
            w.flush()?;
        }
        ReportCommand::Tables { tables, out } => {
            require_file(&tables, "tables")?;
            let t = LookupTables::load(&tables)?;
            let mut w = output(out.as_deref())?;
            t.write_csv(&mut w)?;
            w.flush()?;
        }
        ReportCommand::PlotData {
            scenario,
            requests,
            interval,
            out_dir,
        } => plot_data(&scenario, requests, interval, &out_dir)?,
    }
    Ok(())
}

const PLOT_BUDGETS: [f64; 7] = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 1.0];
const PLOT_BANDWIDTHS: [f64; 8] = [50e3, 100e3, 200e3, 300e3, 500e3, 1e6, 3e6, 10e6];

/// Amplification, compression, accuracy sweep, bandwidth sweep and a
/// trace replay, one CSV each.
fn plot_data(a: &ScenarioArgs, requests: usize, interval: f64, dir: &Path) -> Result<()> {
    let s = load_scenario_args(a)?;
    if requests == 0 {
        return Err(usage("--requests must be positive"));
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let write = |name: &str, f: &dyn Fn(&mut dyn Write) -> Result<()>| -> Result<()> {
        let mut w = output(Some(&dir.join(name)))?;
        f(&mut w)?;
        w.flush()?;
        Ok(())
    };
    let opts = SimOptions::default();
    let st = RequestStream::every(requests, interval);
    write("amplification.csv", &|w| Ok(write_amplification_csv(&s.model, w)?))?;
    write("compression.csv", &|w| Ok(write_compression_csv(&s.model, &s.tables, w)?))?;
    let acc = sweep_accuracy(&s, &PLOT_BUDGETS, &st, &opts)?;
    write("accuracy_sweep.csv", &|w| Ok(write_sweep_csv(&acc, "accuracy_budget", w)?))?;
    let bws = sweep_bandwidth(&s, &PLOT_BANDWIDTHS, &st, &opts)?;
    write("bandwidth_sweep.csv", &|w| Ok(write_sweep_csv(&bws, "bandwidth_Bps", w)?))?;
    let trace = run(&s, &st, &opts)?;
    write("trace_run.csv", &|w| Ok(trace.write_csv(w)?))?;
    println!("plot data written to {}", dir.display());
    Ok(())
}
