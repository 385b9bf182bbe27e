use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lake_mpc::config::RunConfig;
use lake_mpc::ddp::{self, TimeStep};
use lake_mpc::hydrology::HOURS_PER_DAY;
use lake_mpc::metrics::{self, Block};
use lake_mpc::mpc::{self, MpcMode};
use lake_mpc::report;
use lake_mpc::scenario::{self, GaussianInflowParams, Scenario, SeriesKind, SynthOptions};
use lake_mpc::ClosedLoopTrace;

/// Regulated-lake control toolkit: receding-horizon MPC, a DDP benchmark and
/// the experiments comparing them.
#[derive(Debug, Parser)]
#[command(name = "lake-mpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-loop MPC run.
    Simulate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        mpc: MpcArgs,
    },
    /// Hourly MPC over a range of demand weights.
    Sweep {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        mpc: MpcArgs,
        /// `lo..hi` for every decade between two powers of ten, or a comma list.
        #[arg(long, value_parser = parse_lambdas, default_value = "1e-4..1e4")]
        lambdas: Lambdas,
    },
    /// Offline dynamic-programming benchmark.
    Ddp {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        ddp: DdpArgs,
    },
    /// Hourly MPC side by side with DDP or with daily MPC.
    Compare {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        mpc: MpcArgs,
        #[command(flatten)]
        ddp: DdpArgs,
        #[arg(long, value_enum, default_value_t = Against::Ddp)]
        against: Against,
    },
    /// Write the synthetic inflow and demand series as CSV.
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Length of the synthetic scenario.
    #[arg(long, default_value_t = 365)]
    days: usize,
    /// Add the intra-day Gaussian inflow pulse.
    #[arg(long)]
    pulse: bool,
    /// Multiplicative noise on the synthetic daily inflow, e.g. 0.1.
    #[arg(long)]
    jitter: Option<f64>,
    /// Seed of the jitter.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Inflow series; the synthetic year when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Demand series; the synthetic demand when omitted.
    #[arg(long)]
    demand: Option<PathBuf>,
    /// Resolution of the input files.
    #[arg(long, value_enum, default_value_t = Resolution::Hourly)]
    resolution: Resolution,
    #[command(flatten)]
    synth: SynthArgs,
    /// Initial storage in m³, or `level:<m>`.
    #[arg(long, value_parser = parse_s0, default_value = "level:0.3")]
    s0: InitialState,
    /// TOML file with [lake], [mpc] and [ddp] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MpcArgs {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Debug, Args)]
struct DdpArgs {
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    action_samples: Option<usize>,
    #[arg(long, value_enum)]
    time_step: Option<Mode>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Hourly,
    Daily,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Resolution {
    Hourly,
    Daily,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Against {
    Ddp,
    Daily,
}

#[derive(Debug, Clone, Copy)]
enum InitialState {
    Storage(f64),
    Level(f64),
}

#[derive(Debug, Clone)]
struct Lambdas(Vec<f64>);

fn parse_s0(s: &str) -> Result<InitialState, String> {
    let bad = || format!("`{s}` is neither a storage in m3 nor `level:<m>`");
    match s.strip_prefix("level:") {
        Some(h) => h.parse().map(InitialState::Level).map_err(|_| bad()),
        None => match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(InitialState::Storage(v)),
            _ => Err(bad()),
        },
    }
}

fn parse_lambdas(s: &str) -> Result<Lambdas, String> {
    let positive = |v: &str| -> Result<f64, String> {
        match v.trim().parse::<f64>() {
            Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
            _ => Err(format!("`{v}` is not a positive number")),
        }
    };
    if let Some((lo, hi)) = s.split_once("..") {
        let exponent = |v: &str| -> Result<i32, String> {
            let e = positive(v)?.log10();
            if (e - e.round()).abs() > 1e-9 {
                return Err(format!("range ends must be powers of ten, got `{v}`"));
            }
            Ok(e.round() as i32)
        };
        let (lo, hi) = (exponent(lo)?, exponent(hi)?);
        if lo > hi {
            return Err("empty range".into());
        }
        return Ok(Lambdas(metrics::decades(lo, hi)));
    }
    s.split(',').map(positive).collect::<Result<_, _>>().map(Lambdas)
}

enum CliError {
    Usage(String),
    Run(lake_mpc::Error),
}

impl From<lake_mpc::Error> for CliError {
    fn from(e: lake_mpc::Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn load_config(input: &InputArgs) -> CliResult<RunConfig> {
    Ok(match &input.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    })
}

fn pulse_of(args: &SynthArgs) -> Option<GaussianInflowParams> {
    args.pulse.then(GaussianInflowParams::default)
}

fn load_scenario(input: &InputArgs) -> CliResult<Scenario> {
    let s = &input.synth;
    let Some(path) = &input.scenario else {
        if input.demand.is_some() {
            return Err(CliError::Usage("--demand needs --scenario".into()));
        }
        let jitter = s.jitter.map(|f| (s.seed, f));
        return Ok(scenario::synthetic_year(SynthOptions {
            days: Some(s.days),
            pulse: pulse_of(s),
            jitter,
        })?);
    };
    if s.jitter.is_some() {
        return Err(CliError::Usage("--jitter only applies to the synthetic scenario".into()));
    }
    let daily = matches!(input.resolution, Resolution::Daily);
    let inflow = match (daily, pulse_of(s)) {
        (true, Some(pulse)) => {
            // daily files come back held over each day; take one value per day
            let hourly = scenario::load_timeseries(path, SeriesKind::InflowDaily)?;
            let days: Vec<f64> = hourly.iter().step_by(HOURS_PER_DAY).copied().collect();
            scenario::synth_inflow(&days, &pulse)?
        }
        (true, None) => scenario::load_timeseries(path, SeriesKind::InflowDaily)?,
        (false, Some(_)) => return Err(CliError::Usage("--pulse needs daily or synthetic inflow".into())),
        (false, None) => scenario::load_timeseries(path, SeriesKind::InflowHourly)?,
    };
    let demand = match &input.demand {
        Some(d) if daily => scenario::load_timeseries(d, SeriesKind::DemandDaily)?,
        Some(d) => scenario::load_timeseries(d, SeriesKind::DemandHourly)?,
        None => scenario::default_demand(inflow.len()),
    };
    Ok(Scenario::new(inflow, demand, path.display().to_string())?)
}

fn initial_storage(input: &InputArgs, cfg: &RunConfig) -> CliResult<f64> {
    match input.s0 {
        InitialState::Storage(s) => Ok(s),
        InitialState::Level(h) => cfg
            .lake
            .storage_of_level(h)
            .map_err(|e| CliError::Usage(format!("--s0: {e}"))),
    }
}

fn apply_mpc_args(cfg: &mut RunConfig, args: &MpcArgs) -> CliResult<()> {
    if let Some(m) = args.mode {
        cfg.mpc.mode = match m {
            Mode::Hourly => MpcMode::Hourly,
            Mode::Daily => MpcMode::Daily,
        };
    }
    if let Some(l) = args.lambda {
        cfg.mpc.lambda = l;
    }
    if let Some(h) = args.horizon {
        cfg.mpc.horizon = h;
    }
    cfg.mpc.validate().map_err(|e| CliError::Usage(e.to_string()))
}

fn apply_ddp_args(cfg: &mut RunConfig, args: &DdpArgs) -> CliResult<()> {
    if let Some(g) = args.grid_points {
        cfg.ddp.grid_points = g;
    }
    if let Some(a) = args.action_samples {
        cfg.ddp.action_samples = a;
    }
    if let Some(t) = args.time_step {
        cfg.ddp.time_step = match t {
            Mode::Hourly => TimeStep::Hourly,
            Mode::Daily => TimeStep::Daily,
        };
    }
    cfg.ddp.validate().map_err(|e| CliError::Usage(e.to_string()))
}

fn write(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| lake_mpc::Error::Io { path, source })?;
    Ok(())
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| lake_mpc::Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn mode_name(mode: MpcMode) -> &'static str {
    match mode {
        MpcMode::Hourly => "mpc_hourly",
        MpcMode::Daily => "mpc_daily",
    }
}

/// Trace and report files of one run; returns the report.
fn write_run(cfg: &RunConfig, out: &Path, name: &str, trace: &ClosedLoopTrace) -> CliResult<metrics::RunReport> {
    let rep = metrics::compute_report(&cfg.lake, trace);
    write(out, &format!("{name}_trace.csv"), &report::trace_csv(trace))?;
    write(out, &format!("{name}_report.csv"), &metrics::report_csv(&rep))?;
    write(out, &format!("{name}_report.txt"), &metrics::report_text(name, &rep))?;
    Ok(rep)
}

fn run_mpc(cfg: &RunConfig, sc: &Scenario, s0: f64, out: &Path) -> CliResult<(mpc::ClosedLoopRun, metrics::RunReport)> {
    let name = mode_name(cfg.mpc.mode);
    let run = mpc::run(&cfg.lake, &cfg.mpc, sc, s0)?;
    let rep = write_run(cfg, out, name, &run.trace)?;
    write(out, &format!("{name}_steps.csv"), &report::steps_csv(&run.steps))?;
    Ok((run, rep))
}

fn run_ddp(cfg: &RunConfig, sc: &Scenario, s0: f64, out: &Path) -> CliResult<(ClosedLoopTrace, metrics::RunReport)> {
    let table = ddp::backward_induction(&cfg.lake, &cfg.ddp, &sc.inflow_hourly, &sc.demand_hourly)?;
    let trace = ddp::simulate_policy(&cfg.lake, &table, &sc.inflow_hourly, &sc.demand_hourly, s0)?;
    let rep = write_run(cfg, out, "ddp", &trace)?;
    Ok((trace, rep))
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { synth, out } => {
            let jitter = synth.jitter.map(|f| (synth.seed, f));
            let sc = scenario::synthetic_year(SynthOptions {
                days: Some(synth.days),
                pulse: pulse_of(&synth),
                jitter,
            })?;
            prepare_out(&out)?;
            scenario::write_timeseries(&out.join("inflow.csv"), SeriesKind::InflowHourly, &sc.inflow_hourly)?;
            scenario::write_timeseries(&out.join("demand.csv"), SeriesKind::DemandHourly, &sc.demand_hourly)?;
            println!("wrote {} hours to {}", sc.len(), out.display());
        }
        Command::Simulate { input, mpc: margs } => {
            let mut cfg = load_config(&input)?;
            apply_mpc_args(&mut cfg, &margs)?;
            let sc = load_scenario(&input)?;
            let s0 = initial_storage(&input, &cfg)?;
            prepare_out(&input.out)?;
            let (run, rep) = run_mpc(&cfg, &sc, s0, &input.out)?;
            let name = mode_name(cfg.mpc.mode);
            write(&input.out, "levels.csv", &report::levels_plot_csv(&cfg.lake, &[(name, &run.trace)]))?;
            print!("{}", metrics::report_text(name, &rep));
            println!(
                "recovery hours {}, max KKT residual {}",
                run.trace.recovery_hours,
                report::fmt_sig(run.max_kkt_residual())
            );
        }
        Command::Sweep { input, mpc: margs, lambdas } => {
            let mut cfg = load_config(&input)?;
            apply_mpc_args(&mut cfg, &margs)?;
            let sc = load_scenario(&input)?;
            let s0 = initial_storage(&input, &cfg)?;
            prepare_out(&input.out)?;
            let rows = metrics::lambda_sweep(&cfg.lake, &cfg.mpc, &sc, s0, &lambdas.0)?;
            write(&input.out, "sweep.csv", &report::sweep_csv(&rows))?;
            write(&input.out, "sweep.txt", &report::sweep_text(&rows))?;
            write(&input.out, "sweep_plot.csv", &report::sweep_plot_csv(&rows))?;
            print!("{}", report::sweep_text(&rows));
        }
        Command::Ddp { input, ddp: dargs } => {
            let mut cfg = load_config(&input)?;
            apply_ddp_args(&mut cfg, &dargs)?;
            let sc = load_scenario(&input)?;
            let s0 = initial_storage(&input, &cfg)?;
            prepare_out(&input.out)?;
            let (trace, rep) = run_ddp(&cfg, &sc, s0, &input.out)?;
            write(&input.out, "levels.csv", &report::levels_plot_csv(&cfg.lake, &[("ddp", &trace)]))?;
            print!("{}", metrics::report_text("ddp", &rep));
            println!(
                "weighted cost {}",
                report::fmt_sig(ddp::trajectory_cost(&cfg.lake, &cfg.ddp, &trace))
            );
        }
        Command::Compare {
            input,
            mpc: margs,
            ddp: dargs,
            against,
        } => {
            let mut cfg = load_config(&input)?;
            apply_mpc_args(&mut cfg, &margs)?;
            apply_ddp_args(&mut cfg, &dargs)?;
            cfg.mpc.mode = MpcMode::Hourly;
            let sc = load_scenario(&input)?;
            let s0 = initial_storage(&input, &cfg)?;
            prepare_out(&input.out)?;
            let (hourly, hourly_rep) = run_mpc(&cfg, &sc, s0, &input.out)?;
            let (other_name, other_trace, other_rep, keep) = match against {
                Against::Ddp => {
                    let (trace, rep) = run_ddp(&cfg, &sc, s0, &input.out)?;
                    ("ddp", trace, rep, &[Block::Flood, Block::Demand, Block::Dry][..])
                }
                Against::Daily => {
                    let daily_cfg = RunConfig {
                        mpc: mpc::MpcConfig {
                            mode: MpcMode::Daily,
                            ..cfg.mpc
                        },
                        ..cfg.clone()
                    };
                    daily_cfg.mpc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                    let (run, rep) = run_mpc(&daily_cfg, &sc, s0, &input.out)?;
                    ("mpc_daily", run.trace, rep, &[Block::Flood, Block::Demand][..])
                }
            };
            let table = metrics::compare_runs(&[
                ("mpc_hourly".to_string(), hourly_rep),
                (other_name.to_string(), other_rep),
            ])?
            .blocks(keep);
            write(&input.out, "comparison.csv", &table.to_csv())?;
            write(&input.out, "comparison.txt", &table.to_text())?;
            write(
                &input.out,
                "levels.csv",
                &report::levels_plot_csv(&cfg.lake, &[("mpc_hourly", &hourly.trace), (other_name, &other_trace)]),
            )?;
            print!("{}", table.to_text());
            if matches!(against, Against::Ddp) {
                println!(
                    "weighted cost: mpc_hourly {}, ddp {}",
                    report::fmt_sig(ddp::trajectory_cost(&cfg.lake, &cfg.ddp, &hourly.trace)),
                    report::fmt_sig(ddp::trajectory_cost(&cfg.lake, &cfg.ddp, &other_trace))
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version go to stdout with success; everything else is a usage error
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
