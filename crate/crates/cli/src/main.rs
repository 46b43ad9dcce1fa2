mod config;
mod parse;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use tickvol::benchmark::{bench_cv, BenchPolicy, BenchState, OracleState};
use tickvol::exec::ExecPolicy;
use tickvol::ingest::{self, CleanConfig};
use tickvol::io::{fmt_f64, read_ticks, read_truth, write_ticks, write_truth};
use tickvol::model::{NoiseModel, StateModel, TickObservation};
use tickvol::particle_filter::FilterConfig;
use tickvol::pipeline::{
    cv_select_duration, cv_select_lambda, EstimatorKind, Pipeline, PipelineConfig,
};
use tickvol::sages::{calibrate_kappa, default_grid, load_kappa, write_kappa_sidecar, KappaConfig};
use tickvol::seq_em::{CvRecord, StepPolicy};
use tickvol::simulator::{
    apply_noise, gen_path, return_acf, return_pacf, zero_return_fraction, PathSpec, VolCurve,
};

/// On-line spot volatility from tick data.
#[derive(Parser)]
#[command(name = "tickvol", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a latent path and its rounded ticks.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Clean raw trades (and optionally match quotes).
    #[command(args_override_self = true)]
    Clean(CleanArgs),
    /// Run an estimator over a tick file.
    #[command(args_override_self = true)]
    Estimate(EstimateArgs),
    /// Choose tuning constants offline.
    Calibrate {
        #[command(subcommand)]
        what: CalibrateCmd,
    },
    /// Return autocorrelations and the zero-return fraction.
    #[command(args_override_self = true)]
    Stylized(StylizedArgs),
}

#[derive(Subcommand)]
enum CalibrateCmd {
    /// Fixed step size of the filter-based estimator.
    #[command(args_override_self = true)]
    Lambda(CalLambdaArgs),
    /// Critical values for the aggregated estimator.
    #[command(args_override_self = true)]
    Kappa(CalKappaArgs),
    /// Step size of the duration average.
    #[command(args_override_self = true)]
    Duration(CalDurationArgs),
    /// Fixed step size of the benchmark estimator.
    #[command(args_override_self = true)]
    BenchLambda(CalDurationArgs),
}

#[derive(Args)]
struct Common {
    /// `key = value` file with default flag values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; 1 gives the sequential reference path, 0 one per core.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: u64,
    /// Tick file to write.
    #[arg(long)]
    output: PathBuf,
    /// Latent log-prices to write.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long = "t-len", default_value_t = 5000)]
    t_len: usize,
    /// Constant volatility per transaction (or per second with --clock).
    #[arg(long, default_value_t = 1e-4)]
    sigma: f64,
    /// Squared-volatility curve, overrides --sigma.
    #[arg(long = "vol-curve")]
    vol_curve: Option<String>,
    #[arg(long, default_value_t = 50.0)]
    p0: f64,
    #[arg(long, default_value_t = 0.01)]
    tick: f64,
    /// deterministic, stochastic, book[:DEPTH] or quotes.
    #[arg(long, default_value = "deterministic")]
    noise: String,
    /// equispaced[:DT], poisson:RATE or inhom:CURVE.
    #[arg(long, default_value = "equispaced:1")]
    arrivals: String,
    /// Volatility per second of calendar time instead of per transaction.
    #[arg(long)]
    clock: bool,
    #[arg(long = "start-time", default_value = "09:30:00")]
    start_time: String,
    #[arg(long, default_value = "N")]
    exchange: String,
}

#[derive(Args)]
struct CleanArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    trades: PathBuf,
    #[arg(long)]
    quotes: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Audit sidecar; defaults to OUTPUT with `.audit.csv` appended.
    #[arg(long)]
    audit: Option<PathBuf>,
    #[arg(long, default_value = "09:30:00-16:00:00")]
    session: String,
    /// Comma-separated exchange whitelist.
    #[arg(long, default_value = "N")]
    exchanges: String,
    #[arg(long = "all-exchanges")]
    all_exchanges: bool,
    /// Comma-separated sale-condition blacklist.
    #[arg(long = "bad-conditions", default_value = "G,L,T,U,W,Z")]
    bad_conditions: String,
    /// Seconds subtracted from trade times before looking up the quote.
    #[arg(long, default_value_t = 0.0)]
    latency: f64,
    /// Keep duplicate time stamps instead of spreading them out.
    #[arg(long = "keep-stamps")]
    keep_stamps: bool,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    seed: u64,
    /// Tick file with at least `time,price`.
    #[arg(long)]
    input: PathBuf,
    /// deterministic, stochastic, book, quotes or spread.
    #[arg(long, default_value = "deterministic")]
    noise: String,
    #[arg(long, default_value_t = 0.01)]
    tick: f64,
    #[arg(long, default_value_t = 500)]
    particles: usize,
    /// Resample when ESS falls below this fraction of the particle count.
    #[arg(long = "ess-threshold", default_value_t = 0.2)]
    ess_threshold: f64,
    #[arg(long = "k-lag", default_value_t = 1)]
    k_lag: usize,
    /// Initial squared volatility (per second in clock mode).
    #[arg(long = "sigma2-init")]
    sigma2_init: Option<f64>,
    /// Step size of the duration average.
    #[arg(long = "lambda-dur", default_value_t = 0.1)]
    lambda_dur: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    ConstGamma,
    TvLambda,
    TvSages,
    Clock,
    ClockAlt,
    BenchmarkConst,
    BenchmarkTv,
    Oracle,
}

impl Mode {
    fn tag(self) -> &'static str {
        match self {
            Mode::ConstGamma => "const-gamma",
            Mode::TvLambda => "tv-lambda",
            Mode::TvSages => "tv-sages",
            Mode::Clock => "clock",
            Mode::ClockAlt => "clock-alt",
            Mode::BenchmarkConst => "benchmark-const",
            Mode::BenchmarkTv => "benchmark-tv",
            Mode::Oracle => "oracle",
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda0: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    /// Step-size grid of the aggregated estimator.
    #[arg(long)]
    grid: Option<String>,
    /// Critical-value sidecar from `calibrate kappa`.
    #[arg(long)]
    kappa: Option<PathBuf>,
    /// Latent log-prices, needed by the oracle.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Leave out the timing footer.
    #[arg(long = "no-timing")]
    no_timing: bool,
}

#[derive(Args)]
struct CalLambdaArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long)]
    grid: Option<String>,
    /// Criterion table; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CalKappaArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    grid: Option<String>,
    /// Volatility per transaction of the null model.
    #[arg(long, default_value_t = 1e-4)]
    sigma: f64,
    #[arg(long, default_value_t = 0.01)]
    tick: f64,
    #[arg(long, default_value_t = 50.0)]
    p0: f64,
    #[arg(long = "t-len", default_value_t = 2000)]
    t_len: usize,
    #[arg(long, default_value_t = 200)]
    runs: usize,
    #[arg(long, default_value_t = 0.25)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    particles: usize,
}

#[derive(Args)]
struct CalDurationArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StylizedArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long = "max-lag", default_value_t = 10)]
    max_lag: usize,
}

fn main() {
    let result =
        config::expand(std::env::args().collect()).and_then(|args| run(Cli::parse_from(args)));
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Clean(a) => clean(a),
        Cmd::Estimate(a) => estimate(a),
        Cmd::Calibrate { what } => match what {
            CalibrateCmd::Lambda(a) => calibrate_lambda(a),
            CalibrateCmd::Kappa(a) => calibrate_kappa_cmd(a),
            CalibrateCmd::Duration(a) => calibrate_duration(a, false),
            CalibrateCmd::BenchLambda(a) => calibrate_duration(a, true),
        },
        Cmd::Stylized(a) => stylized(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn load_ticks(path: &Path) -> Result<Vec<TickObservation>> {
    read_ticks(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let vol = match &a.vol_curve {
        Some(c) => parse::vol_curve(c)?,
        None => VolCurve::Constant(a.sigma * a.sigma),
    };
    let spec = PathSpec {
        t_len: a.t_len,
        vol,
        p0: a.p0,
        tick: a.tick,
        arrivals: parse::arrivals(&a.arrivals)?,
        mode: if a.clock {
            StateModel::ClockTime
        } else {
            StateModel::TransactionTime
        },
        start_time: tickvol::io::parse_time(&a.start_time)?,
    };
    let path = gen_path(&spec, a.seed)?;
    let mut ticks = apply_noise(
        &path.times,
        &path.x,
        parse::sim_noise(&a.noise, a.tick)?,
        a.seed,
    )?;
    for t in &mut ticks {
        t.exchange.clone_from(&a.exchange);
    }
    let mut out = create(&a.output)?;
    write_ticks(&mut out, &ticks)?;
    out.flush()?;
    let mut truth = create(&a.truth)?;
    write_truth(&mut truth, &path.times, &path.x)?;
    truth.flush()?;
    Ok(())
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn clean(a: CleanArgs) -> Result<()> {
    let cfg = CleanConfig {
        session: parse::session(&a.session)?,
        exchanges: if a.all_exchanges {
            None
        } else {
            Some(split_list(&a.exchanges))
        },
        bad_conditions: split_list(&a.bad_conditions),
    };
    let (raw, bad) = ingest::read_trades(open(&a.trades)?)?;
    let (trades, mut audit) = ingest::clean(&raw, &cfg);
    audit.input += bad;
    audit.unparseable = bad;
    let mut rows: Vec<(&str, String)> = audit.rows();

    let mut ticks: Vec<TickObservation> = match &a.quotes {
        Some(qp) => {
            let (rawq, badq) = ingest::read_quotes(open(qp)?)?;
            let (quotes, qa) = ingest::clean(&rawq, &cfg);
            rows.push(("quotes_unparseable", badq.to_string()));
            rows.push(("quotes_kept", qa.kept.to_string()));
            let (matched, ma) = ingest::match_quotes(&trades, &quotes, a.latency)?;
            rows.extend(ma.rows());
            matched.into_iter().map(|m| m.obs).collect()
        }
        None => trades
            .iter()
            .map(|r| {
                let mut o = TickObservation::new(r.time, r.price);
                o.exchange.clone_from(&r.exchange);
                o.sale_condition.clone_from(&r.sale_condition);
                o
            })
            .collect(),
    };
    if !a.keep_stamps {
        let times: Vec<f64> = ticks.iter().map(|t| t.time).collect();
        for (t, s) in ticks.iter_mut().zip(ingest::despread_timestamps(&times)?) {
            t.time = s;
        }
    }
    let mut out = create(&a.output)?;
    write_ticks(&mut out, &ticks)?;
    out.flush()?;
    let audit_path = a.audit.unwrap_or_else(|| {
        let mut p = a.output.clone().into_os_string();
        p.push(".audit.csv");
        p.into()
    });
    let mut w = create(&audit_path)?;
    ingest::write_audit(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

fn pipeline_config(
    f: &FilterArgs,
    exec: ExecPolicy,
    estimator: EstimatorKind,
) -> Result<PipelineConfig> {
    let Some(s2) = f.sigma2_init else {
        bail!("--sigma2-init is required for filter-based modes");
    };
    Ok(PipelineConfig {
        noise: parse::noise_model(&f.noise, f.tick)?,
        state_model: StateModel::TransactionTime,
        filter: FilterConfig {
            n_particles: f.particles,
            ess_threshold: f.ess_threshold,
            k_lag: f.k_lag,
            seed: f.seed,
            exec,
            ..FilterConfig::default()
        },
        estimator,
        initial_sigma: DMatrix::from_element(1, 1, s2),
        duration_lambda: f.lambda_dur,
    })
}

/// Ticks usable by the noise model; quote-based models skip unmatched
/// trades.
fn usable(noise: &NoiseModel, ticks: Vec<TickObservation>) -> Vec<TickObservation> {
    match noise {
        NoiseModel::MarketMakerQuotes => ticks
            .into_iter()
            .filter(|t| t.bid.is_some() && t.ask.is_some())
            .collect(),
        NoiseModel::OrderBook => ticks
            .into_iter()
            .filter(|t| t.book_levels.is_some())
            .collect(),
        _ => ticks,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let exec = ExecPolicy::with_threads(a.common.threads);
    let mode = a.mode;
    let truth = match (mode, &a.truth) {
        (Mode::Oracle, None) => bail!("oracle mode needs --truth with the latent log-prices"),
        (Mode::Oracle, Some(p)) => Some(read_truth(open(p)?)?),
        _ => None,
    };
    let ticks = load_ticks(&a.filter.input)?;
    let extra = match mode {
        Mode::Clock | Mode::ClockAlt => Some("sigma2_c_hat"),
        Mode::BenchmarkConst | Mode::BenchmarkTv => Some("eta2_hat"),
        _ => None,
    };
    let mut out = create(&a.output)?;
    let tag = mode.tag();
    let mut header = format!("time,j,price,sigma2_hat[{tag}]");
    if let Some(e) = extra {
        header.push_str(&format!(",{e}[{tag}]"));
    }
    writeln!(out, "{header},ess,resampled,diverged")?;

    let mut lat = Vec::with_capacity(ticks.len());
    match mode {
        Mode::BenchmarkConst | Mode::BenchmarkTv => {
            let policy = if mode == Mode::BenchmarkConst {
                BenchPolicy::Constant
            } else {
                BenchPolicy::Fixed { lambda: a.lambda }
            };
            let mut b = BenchState::new(policy)?;
            for t in &ticks {
                let start = Instant::now();
                let r = b.push(t.price.ln())?;
                lat.push(start.elapsed().as_secs_f64());
                if let Some((s, e)) = r {
                    writeln!(
                        out,
                        "{},{},{},{},{},,,",
                        fmt_f64(t.time),
                        b.j(),
                        fmt_f64(t.price),
                        fmt_f64(s),
                        fmt_f64(e)
                    )?;
                }
            }
        }
        Mode::Oracle => {
            let (times, x) = truth.expect("checked above");
            if times.len() != ticks.len() {
                bail!(
                    "truth has {} rows but the tick file has {}",
                    times.len(),
                    ticks.len()
                );
            }
            let mut o = OracleState::new(a.gamma)?;
            for (j, (t, xv)) in ticks.iter().zip(&x).enumerate() {
                let start = Instant::now();
                let r = o.push(*xv);
                lat.push(start.elapsed().as_secs_f64());
                if let Some(s) = r {
                    writeln!(
                        out,
                        "{},{},{},{},,,",
                        fmt_f64(t.time),
                        j + 1,
                        fmt_f64(t.price),
                        fmt_f64(s)
                    )?;
                }
            }
        }
        _ => {
            let estimator = match mode {
                Mode::ConstGamma => EstimatorKind::Single(StepPolicy::Constant {
                    gamma: a.gamma,
                    lambda0: a.lambda0,
                }),
                Mode::TvSages => {
                    let grid = a
                        .grid
                        .as_deref()
                        .map(parse::grid)
                        .transpose()?
                        .unwrap_or_else(default_grid);
                    let Some(kp) = &a.kappa else {
                        bail!("tv-sages needs --kappa (see `calibrate kappa`)");
                    };
                    EstimatorKind::Sages {
                        kappa: load_kappa(kp, None)?,
                        grid,
                    }
                }
                _ => EstimatorKind::Single(StepPolicy::Fixed { lambda: a.lambda }),
            };
            let mut cfg = pipeline_config(&a.filter, exec, estimator)?;
            if mode == Mode::Clock {
                cfg.state_model = StateModel::ClockTime;
            }
            let ticks = usable(&cfg.noise, ticks);
            let mut p = Pipeline::new(cfg)?;
            for t in &ticks {
                let start = Instant::now();
                let r = p.push(t).with_context(|| format!("at time {}", t.time))?;
                lat.push(start.elapsed().as_secs_f64());
                let Some(u) = r else { continue };
                let s = u.sigma_hat[(0, 0)];
                let (main, second) = match mode {
                    Mode::Clock => (u.delta_bar.map(|d| s * d), Some(Some(s))),
                    Mode::ClockAlt => (Some(s), Some(u.delta_bar.map(|d| s / d))),
                    _ => (Some(s), None),
                };
                let mut row = format!(
                    "{},{},{},{}",
                    fmt_f64(u.time),
                    u.j,
                    fmt_f64(u.price[0]),
                    opt(main)
                );
                if let Some(c) = second {
                    row.push(',');
                    row.push_str(&opt(c));
                }
                writeln!(
                    out,
                    "{row},{},{},{}",
                    fmt_f64(u.step.ess),
                    u8::from(u.step.resampled),
                    u8::from(u.step.diverged)
                )?;
            }
        }
    }
    if !a.no_timing && !lat.is_empty() {
        let mut s = lat.clone();
        s.sort_by(f64::total_cmp);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        writeln!(
            out,
            "# timing updates={} median_ms={:.4} mean_ms={:.4} max_ms={:.4}",
            s.len(),
            s[s.len() / 2] * 1e3,
            mean * 1e3,
            s[s.len() - 1] * 1e3
        )?;
    }
    out.flush()?;
    Ok(())
}

fn write_trace(path: Option<&Path>, name: &str, rec: &CvRecord) -> Result<()> {
    let mut w: Box<dyn Write> = match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(w, "{name},crit")?;
    for (l, c) in rec.grid.iter().zip(&rec.sums) {
        writeln!(w, "{},{}", fmt_f64(*l), fmt_f64(*c))?;
    }
    writeln!(w, "# argmin {name}={}", fmt_f64(rec.best()))?;
    w.flush()?;
    Ok(())
}

fn calibrate_lambda(a: CalLambdaArgs) -> Result<()> {
    let exec = ExecPolicy::with_threads(a.common.threads);
    let grid = a
        .grid
        .as_deref()
        .map(parse::grid)
        .transpose()?
        .unwrap_or_else(default_grid);
    let base = pipeline_config(
        &a.filter,
        exec,
        EstimatorKind::Single(StepPolicy::Fixed { lambda: grid[0] }),
    )?;
    let ticks = usable(&base.noise, load_ticks(&a.filter.input)?);
    let rec = cv_select_lambda(&ticks, &grid, &base)?;
    write_trace(a.output.as_deref(), "lambda", &rec)
}

fn calibrate_duration(a: CalDurationArgs, bench: bool) -> Result<()> {
    let exec = ExecPolicy::with_threads(a.common.threads);
    let ticks = load_ticks(&a.input)?;
    let rec = if bench {
        let grid = a
            .grid
            .as_deref()
            .map(parse::grid)
            .transpose()?
            .unwrap_or_else(default_grid);
        let logs: Vec<f64> = ticks.iter().map(|t| t.price.ln()).collect();
        bench_cv(&logs, &grid, exec)?
    } else {
        let grid = match a.grid.as_deref() {
            Some(g) => parse::grid(g)?,
            None => tickvol::sages::log_grid(0.5, 0.001, 15),
        };
        let times: Vec<f64> = ticks.iter().map(|t| t.time).collect();
        cv_select_duration(&times, &grid)?
    };
    write_trace(a.output.as_deref(), "lambda", &rec)
}

fn calibrate_kappa_cmd(a: CalKappaArgs) -> Result<()> {
    let cfg = KappaConfig {
        grid: a
            .grid
            .as_deref()
            .map(parse::grid)
            .transpose()?
            .unwrap_or_else(default_grid),
        sigma: a.sigma,
        tick: a.tick,
        p0: a.p0,
        t_len: a.t_len,
        runs: a.runs,
        alpha: a.alpha,
        filter: FilterConfig {
            n_particles: a.particles,
            seed: a.seed,
            exec: ExecPolicy::with_threads(a.common.threads),
            ..FilterConfig::default()
        },
        ..KappaConfig::default()
    };
    let kappa = calibrate_kappa(&cfg)?;
    let hash = cfg.hash();
    let mut w = create(&a.output)?;
    write_kappa_sidecar(&mut w, &hash, &kappa)?;
    w.flush()?;
    println!("hash={hash}");
    for (k, v) in kappa.iter().enumerate() {
        println!("kappa_{}={}", k + 1, fmt_f64(*v));
    }
    Ok(())
}

fn stylized(a: StylizedArgs) -> Result<()> {
    let ticks = load_ticks(&a.input)?;
    let prices: Vec<f64> = ticks.iter().map(|t| t.price).collect();
    let acf = return_acf(&prices, a.max_lag)?;
    let pacf = return_pacf(&prices, a.max_lag)?;
    let zero = zero_return_fraction(&prices)?;
    let mut w: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(w, "statistic,lag,value")?;
    for (k, v) in acf.iter().enumerate() {
        writeln!(w, "acf,{},{}", k + 1, fmt_f64(*v))?;
    }
    for (k, v) in pacf.iter().enumerate() {
        writeln!(w, "pacf,{},{}", k + 1, fmt_f64(*v))?;
    }
    writeln!(w, "zero_return_fraction,0,{}", fmt_f64(zero))?;
    w.flush()?;
    Ok(())
}
