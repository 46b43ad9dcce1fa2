//! Adaptive aggregation of exponential smoothers with different step sizes.
//!
//! K fixed-step recursions run side by side, ordered from the fastest
//! (largest λ) to the slowest. Starting from the fastest, each slower
//! estimate is blended in as long as it agrees with the aggregate so far,
//! measured by a Kullback–Leibler type divergence scaled by a critical
//! value. On disagreement the slower estimate is down-weighted, so the
//! aggregate uses long windows in calm periods and short windows after
//! volatility changes.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::model::{support_simple_deterministic, StateModel};
use crate::particle_filter::{FilterConfig, ParticleCloud};
use crate::rng::{stream_rng, Stream};
use crate::seq_em::breve_sigma;
use crate::simulator::{apply_noise, gen_path, PathSpec, SimNoise, VolCurve};

/// Knee of the aggregation kernel.
const KNEE: f64 = 1.0 / 6.0;

/// `{1 − (u − 1/6)⁺}⁺`.
pub fn kernel_k(u: f64) -> f64 {
    (1.0 - (u - KNEE).max(0.0)).clamp(0.0, 1.0)
}

/// `−½ {log(σ²/σ̃²) + 1 − σ²/σ̃²}`.
pub fn kernel_div(s2: f64, s2_tilde: f64) -> Result<f64> {
    if !(s2 > 0.0 && s2_tilde > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "divergence needs positive arguments, got {s2} and {s2_tilde}"
        )));
    }
    let q = s2 / s2_tilde;
    Ok((-0.5 * (q.ln() + 1.0 - q)).max(0.0))
}

/// Equally spaced grid from `from` to `to` inclusive.
pub fn linear_grid(from: f64, to: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![from],
        _ => (0..n)
            .map(|i| from + (to - from) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Log-equally spaced grid from `from` to `to` inclusive.
pub fn log_grid(from: f64, to: f64, n: usize) -> Vec<f64> {
    linear_grid(from.ln(), to.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Default transaction-time grid: 15 values from 0.05 down to 0.00005.
pub fn default_grid() -> Vec<f64> {
    linear_grid(0.05, 0.00005, 15)
}

/// Default clock-time grid: 15 values from 0.3 down to 0.003.
pub fn default_clock_grid() -> Vec<f64> {
    linear_grid(0.3, 0.003, 15)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidParameter(
            "aggregation needs at least 2 step sizes".into(),
        ));
    }
    if grid.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(Error::InvalidParameter(
            "step sizes must lie in (0, 1)".into(),
        ));
    }
    if grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter(
            "step sizes must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Aggregate of per-step-size estimates `σ̂²_1, …, σ̂²_K` (fastest first),
/// together with the blending weights `γ_2, …, γ_K`.
pub fn sages_combine(estimates: &[f64], grid: &[f64], kappa: &[f64]) -> Result<(f64, Vec<f64>)> {
    let k = estimates.len();
    if grid.len() != k || kappa.len() + 1 != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: grid.len().min(kappa.len() + 1),
        });
    }
    let mut agg = estimates[0];
    let mut gammas = Vec::with_capacity(k.saturating_sub(1));
    for i in 1..k {
        let g = kernel_k(kernel_div(estimates[i], agg)? / (kappa[i - 1] * grid[i]));
        agg = harmonic_blend(g, estimates[i], agg);
        gammas.push(g);
    }
    Ok((agg, gammas))
}

/// `(γ/σ² + (1−γ)/σ̃²)^{−1}`, returning the endpoints exactly at γ ∈ {0, 1}.
fn harmonic_blend(g: f64, s2: f64, s2_tilde: f64) -> f64 {
    if g == 1.0 {
        s2
    } else if g == 0.0 {
        s2_tilde
    } else {
        1.0 / (g / s2 + (1.0 - g) / s2_tilde)
    }
}

/// K fixed-step smoothers and their aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct SagesState {
    grid: Vec<f64>,
    kappa: Vec<f64>,
    estimates: Option<Vec<f64>>,
    aggregate: Option<f64>,
    gammas: Vec<f64>,
}

impl SagesState {
    /// The first update initializes every smoother with its input.
    pub fn new(grid: Vec<f64>, kappa: Vec<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        if kappa.len() + 1 != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len() - 1,
                got: kappa.len(),
            });
        }
        if kappa.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::InvalidParameter(
                "critical values must be positive".into(),
            ));
        }
        Ok(SagesState {
            grid,
            kappa,
            estimates: None,
            aggregate: None,
            gammas: vec![],
        })
    }

    /// Every smoother starts at `sigma2`.
    pub fn with_initial(grid: Vec<f64>, kappa: Vec<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidParameter(
                "initial variance must be positive".into(),
            ));
        }
        let mut s = SagesState::new(grid, kappa)?;
        s.estimates = Some(vec![sigma2; s.grid.len()]);
        s.aggregate = Some(sigma2);
        Ok(s)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn estimates(&self) -> Option<&[f64]> {
        self.estimates.as_deref()
    }

    pub fn aggregate(&self) -> Option<f64> {
        self.aggregate
    }

    /// Blending weights of the last combine step.
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    /// Feeds one update value to every smoother and recombines.
    pub fn update(&mut self, breve: f64) -> Result<f64> {
        if !breve.is_finite() || breve < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "update value must be finite and non-negative, got {breve}"
            )));
        }
        let est = match self.estimates.as_mut() {
            None => self.estimates.insert(vec![breve; self.grid.len()]),
            Some(e) => {
                for (v, l) in e.iter_mut().zip(&self.grid) {
                    *v += l * (breve - *v);
                }
                e
            }
        };
        let (agg, gammas) = sages_combine(est, &self.grid, &self.kappa)?;
        self.aggregate = Some(agg);
        self.gammas = gammas;
        Ok(agg)
    }
}

/// Monte Carlo setup for the critical values.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaConfig {
    pub grid: Vec<f64>,
    /// Volatility (not squared) per transaction under the null.
    pub sigma: f64,
    pub tick: f64,
    pub p0: f64,
    pub t_len: usize,
    /// Steps discarded at the start of every run.
    pub burn_in: usize,
    /// Keep every `thin`-th step after burn-in.
    pub thin: usize,
    pub runs: usize,
    /// Target per-step frequency of `γ_k < 1` under the null.
    pub alpha: f64,
    pub filter: FilterConfig,
}

impl Default for KappaConfig {
    fn default() -> Self {
        KappaConfig {
            grid: default_grid(),
            sigma: 1e-4,
            tick: 0.01,
            p0: 50.0,
            t_len: 2000,
            burn_in: 100,
            thin: 10,
            runs: 200,
            alpha: 0.25,
            filter: FilterConfig {
                n_particles: 100,
                ..FilterConfig::default()
            },
        }
    }
}

impl KappaConfig {
    /// Short hex key identifying the null model the values were computed for.
    pub fn hash(&self) -> String {
        let mut key = format!("K={};grid=", self.grid.len());
        for l in &self.grid {
            let _ = write!(key, "{l:e},");
        }
        let _ = write!(key, ";sigma={:e};N={}", self.sigma, self.filter.n_particles);
        let digest = Sha256::digest(key.as_bytes());
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Critical values `κ_1, …, κ_{K−1}` from constant-volatility simulations.
///
/// The filter in each run uses the true variance. With the kernel knee at
/// 1/6, `γ_k < 1` happens exactly when the scaled divergence exceeds
/// `κ_{k−1}/6`, so `κ_{k−1}` is six times the `(1 − α)` quantile of that
/// statistic. Values are fixed one at a time because the aggregate that
/// step `k` compares against depends on the earlier ones.
pub fn calibrate_kappa(cfg: &KappaConfig) -> Result<Vec<f64>> {
    validate_grid(&cfg.grid)?;
    if cfg.runs < 200 {
        return Err(Error::InsufficientData(format!(
            "calibration needs at least 200 runs, got {}",
            cfg.runs
        )));
    }
    if !(cfg.alpha >= 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in [0, 1), got {}",
            cfg.alpha
        )));
    }
    if cfg.thin == 0 || cfg.burn_in + 2 >= cfg.t_len {
        return Err(Error::InvalidParameter(
            "thin must be positive and burn_in shorter than the run".into(),
        ));
    }
    let k = cfg.grid.len();
    let runs = cfg.filter.exec.map(cfg.runs, |r| null_run(cfg, r as u64));
    let mut records: Vec<Vec<f64>> = Vec::new();
    for run in runs {
        records.extend(run?);
    }
    if records.is_empty() {
        return Err(Error::InsufficientData("no calibration records".into()));
    }

    let mut agg: Vec<f64> = records.iter().map(|r| r[0]).collect();
    let mut kappa = Vec::with_capacity(k - 1);
    let mut stats = vec![0.0; records.len()];
    for i in 1..k {
        for (s, (rec, a)) in stats.iter_mut().zip(records.iter().zip(&agg)) {
            *s = kernel_div(rec[i], *a)? / cfg.grid[i];
        }
        let q = upper_quantile(&stats, cfg.alpha);
        // A zero quantile would make κ invalid; any positive value then
        // leaves all null weights at one.
        let kap = if q > 0.0 { 6.0 * q } else { f64::MIN_POSITIVE };
        kappa.push(kap);
        for ((a, rec), s) in agg.iter_mut().zip(&records).zip(&stats) {
            let g = kernel_k(s / kap);
            *a = harmonic_blend(g, rec[i], *a);
        }
    }
    Ok(kappa)
}

/// Empirical `(1 − α)` quantile by nearest rank; `α = 0` gives the maximum.
fn upper_quantile(v: &[f64], alpha: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((1.0 - alpha) * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

/// One null simulation; returns thinned K-vectors of smoother values.
fn null_run(cfg: &KappaConfig, r: u64) -> Result<Vec<Vec<f64>>> {
    let seed: u64 = stream_rng(cfg.filter.seed, Stream::Experiment, r).random();
    let var = cfg.sigma * cfg.sigma;
    let spec = PathSpec {
        t_len: cfg.t_len,
        vol: VolCurve::Constant(var),
        p0: cfg.p0,
        tick: cfg.tick,
        ..PathSpec::default()
    };
    let path = gen_path(&spec, seed)?;
    let ticks = apply_noise(
        &path.times,
        &path.x,
        SimNoise::Deterministic { tick: cfg.tick },
        seed,
    )?;
    let fcfg = FilterConfig {
        seed,
        k_lag: 1,
        exec: ExecPolicy::Sequential,
        ..cfg.filter.clone()
    };
    let mut cloud = ParticleCloud::init(
        &support_simple_deterministic(ticks[0].price, cfg.tick)?,
        fcfg,
    )?;
    let sigma_pf = DMatrix::from_element(1, 1, var);
    let mut est = vec![var; cfg.grid.len()];
    let mut out = Vec::with_capacity(cfg.t_len / cfg.thin + 1);
    for (j, obs) in ticks.iter().enumerate().skip(1) {
        let b = support_simple_deterministic(obs.price, cfg.tick)?;
        cloud.step(&sigma_pf, &b, 1.0, StateModel::TransactionTime)?;
        let breve = breve_sigma(&cloud, 1)?[(0, 0)];
        for (v, l) in est.iter_mut().zip(&cfg.grid) {
            *v += l * (breve - *v);
        }
        if j >= cfg.burn_in
            && (j - cfg.burn_in).is_multiple_of(cfg.thin)
            && est.iter().all(|v| *v > 0.0)
        {
            out.push(est.clone());
        }
    }
    Ok(out)
}

/// Writes critical values as a text sidecar: a header with the config hash,
/// then one value per line.
pub fn write_kappa_sidecar<W: Write>(mut w: W, hash: &str, kappa: &[f64]) -> Result<()> {
    writeln!(w, "# kappa-sidecar hash={hash} K={}", kappa.len() + 1)?;
    for k in kappa {
        writeln!(w, "{k:.16e}")?;
    }
    Ok(())
}

/// Reads a sidecar; returns its hash and values.
pub fn read_kappa_sidecar<R: BufRead>(r: R) -> Result<(String, Vec<f64>)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty kappa sidecar".into()))??;
    let mut hash = None;
    let mut k = None;
    for tok in header.trim_start_matches('#').split_whitespace() {
        if let Some(h) = tok.strip_prefix("hash=") {
            hash = Some(h.to_string());
        } else if let Some(v) = tok.strip_prefix("K=") {
            k = Some(
                v.parse::<usize>()
                    .map_err(|e| Error::Parse(format!("bad K in sidecar: {e}")))?,
            );
        }
    }
    let (Some(hash), Some(k)) = (hash, k) else {
        return Err(Error::Parse(
            "sidecar header must carry hash= and K=".into(),
        ));
    };
    let mut kappa = Vec::new();
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        kappa.push(
            t.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad kappa value {t:?}: {e}")))?,
        );
    }
    if kappa.len() + 1 != k {
        return Err(Error::Parse(format!(
            "sidecar declares K={k} but holds {} values",
            kappa.len()
        )));
    }
    Ok((hash, kappa))
}

/// Loads a sidecar file, checking its hash when one is expected.
pub fn load_kappa(path: &Path, expected_hash: Option<&str>) -> Result<Vec<f64>> {
    let f = std::fs::File::open(path)?;
    let (hash, kappa) = read_kappa_sidecar(std::io::BufReader::new(f))?;
    if let Some(e) = expected_hash {
        if e != hash {
            return Err(Error::InvalidParameter(format!(
                "kappa sidecar was computed for config {hash}, expected {e}"
            )));
        }
    }
    Ok(kappa)
}
