//! Synthetic latent paths, trading times and rounded ticks, plus the return
//! statistics used to compare simulated and observed tick data.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::error::{Error, Result};
use crate::model::{StateModel, TickObservation};
use crate::rng::{stream_rng, Stream};

/// Positive function of transaction index or of seconds elapsed, used for
/// squared volatilities and for arrival intensities.
#[derive(Debug, Clone, PartialEq)]
pub enum VolCurve {
    Constant(f64),
    /// `(position, value)` knots, sorted by position, linearly interpolated
    /// and held flat outside. Two knots at the same position give a jump.
    PiecewiseLinear(Vec<(f64, f64)>),
    /// `base + amplitude · sin(2π u / period)`.
    Sinusoid {
        base: f64,
        amplitude: f64,
        period: f64,
    },
    /// Quadratic decay from `open` to `mid` over the first half of
    /// `length`, quadratic rise to `close` over the second half.
    UShape {
        open: f64,
        mid: f64,
        close: f64,
        length: f64,
    },
}

impl VolCurve {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(format!("vol curve: {msg}")));
        match self {
            VolCurve::Constant(v) => {
                if !(*v > 0.0 && v.is_finite()) {
                    return bad("value must be positive");
                }
            }
            VolCurve::PiecewiseLinear(knots) => {
                if knots.is_empty() {
                    return bad("no knots");
                }
                if knots
                    .iter()
                    .any(|(u, v)| !(*v > 0.0 && v.is_finite()) || !u.is_finite())
                {
                    return bad("knot values must be positive");
                }
                if knots.windows(2).any(|w| w[1].0 < w[0].0) {
                    return bad("knots must be sorted by position");
                }
            }
            VolCurve::Sinusoid {
                base,
                amplitude,
                period,
            } => {
                if !(*base > amplitude.abs() && *period > 0.0) {
                    return bad("need base > |amplitude| and a positive period");
                }
            }
            VolCurve::UShape {
                open,
                mid,
                close,
                length,
            } => {
                if !(*open > 0.0 && *mid > 0.0 && *close > 0.0 && *length > 0.0) {
                    return bad("all levels and the length must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            VolCurve::Constant(v) => *v,
            VolCurve::PiecewiseLinear(knots) => {
                let k = knots.partition_point(|(p, _)| *p <= u);
                if k == 0 {
                    knots[0].1
                } else if k == knots.len() {
                    knots[k - 1].1
                } else {
                    let (u0, v0) = knots[k - 1];
                    let (u1, v1) = knots[k];
                    v0 + (v1 - v0) * (u - u0) / (u1 - u0)
                }
            }
            VolCurve::Sinusoid {
                base,
                amplitude,
                period,
            } => base + amplitude * (std::f64::consts::TAU * u / period).sin(),
            VolCurve::UShape {
                open,
                mid,
                close,
                length,
            } => {
                let v = (u / length).clamp(0.0, 1.0);
                if v < 0.5 {
                    mid + (open - mid) * (1.0 - 2.0 * v).powi(2)
                } else {
                    mid + (close - mid) * (2.0 * v - 1.0).powi(2)
                }
            }
        }
    }

    /// An upper bound of the curve over its whole domain.
    pub fn upper_bound(&self) -> f64 {
        match self {
            VolCurve::Constant(v) => *v,
            VolCurve::PiecewiseLinear(knots) => knots.iter().map(|k| k.1).fold(0.0, f64::max),
            VolCurve::Sinusoid {
                base, amplitude, ..
            } => base + amplitude.abs(),
            VolCurve::UShape {
                open, mid, close, ..
            } => open.max(*mid).max(*close),
        }
    }
}

/// How trading times are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalModel {
    Equispaced(f64),
    /// Homogeneous Poisson process with the given rate per second.
    Poisson(f64),
    /// Inhomogeneous Poisson process; the curve is the rate in seconds
    /// since the first trade. Sampled by thinning.
    InhomPoisson(VolCurve),
}

impl ArrivalModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            ArrivalModel::Equispaced(d) if !(*d > 0.0) => {
                Err(Error::InvalidParameter("spacing must be positive".into()))
            }
            ArrivalModel::Poisson(r) if !(*r > 0.0) => {
                Err(Error::InvalidParameter("rate must be positive".into()))
            }
            ArrivalModel::InhomPoisson(c) => c.validate(),
            _ => Ok(()),
        }
    }
}

/// Everything needed to generate one latent path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSpec {
    pub t_len: usize,
    /// Squared volatility, per transaction or per second depending on `mode`.
    pub vol: VolCurve,
    pub p0: f64,
    pub tick: f64,
    pub arrivals: ArrivalModel,
    pub mode: StateModel,
    /// Time stamp of the first trade, seconds since midnight.
    pub start_time: f64,
}

impl Default for PathSpec {
    fn default() -> Self {
        PathSpec {
            t_len: 5000,
            vol: VolCurve::Constant(1e-8),
            p0: 50.0,
            tick: 0.01,
            arrivals: ArrivalModel::Equispaced(1.0),
            mode: StateModel::TransactionTime,
            start_time: 34_200.0,
        }
    }
}

/// Latent log-prices `x` at trading times `times`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
}

/// Random-walk path. In transaction mode the increment into trade `j` has
/// variance `vol(j)`; in clock mode `dt_j · vol(t_j − t_1)`. The first
/// efficient price is uniform on `[p₀ − tick/2, p₀ + tick/2)`.
pub fn gen_path(spec: &PathSpec, seed: u64) -> Result<Path> {
    if spec.t_len < 2 {
        return Err(Error::InsufficientData(
            "a path needs at least 2 points".into(),
        ));
    }
    spec.vol.validate()?;
    spec.arrivals.validate()?;
    if !(spec.tick > 0.0) {
        return Err(Error::NonPositiveTick(spec.tick));
    }
    if !(spec.p0 - spec.tick / 2.0 > 0.0) {
        return Err(Error::NonPositivePrice(spec.p0));
    }
    let mut rng = stream_rng(seed, Stream::Simulate, 0);
    let times = gen_times(spec, &mut rng)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = Vec::with_capacity(spec.t_len);
    let p = spec.p0 - spec.tick / 2.0 + spec.tick * rng.random::<f64>();
    x.push(p.ln());
    for j in 1..spec.t_len {
        let var = match spec.mode {
            StateModel::TransactionTime => spec.vol.eval(j as f64),
            StateModel::ClockTime => (times[j] - times[j - 1]) * spec.vol.eval(times[j] - times[0]),
        };
        let z: f64 = normal.sample(&mut rng);
        x.push(x[j - 1] + var.sqrt() * z);
    }
    Ok(Path { times, x })
}

fn gen_times<R: Rng>(spec: &PathSpec, rng: &mut R) -> Result<Vec<f64>> {
    let mut times = Vec::with_capacity(spec.t_len);
    let mut t = spec.start_time;
    times.push(t);
    match &spec.arrivals {
        ArrivalModel::Equispaced(d) => {
            for j in 1..spec.t_len {
                times.push(spec.start_time + j as f64 * d);
            }
        }
        ArrivalModel::Poisson(rate) => {
            let exp = Exp::new(*rate).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            while times.len() < spec.t_len {
                let gap: f64 = exp.sample(rng);
                if t + gap > t {
                    t += gap;
                    times.push(t);
                }
            }
        }
        ArrivalModel::InhomPoisson(curve) => {
            let bound = curve.upper_bound();
            let exp = Exp::new(bound).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let mut cand = t;
            while times.len() < spec.t_len {
                cand += exp.sample(rng);
                let accept = rng.random::<f64>() * bound < curve.eval(cand - spec.start_time);
                if accept && cand > t {
                    t = cand;
                    times.push(t);
                }
            }
        }
    }
    Ok(times)
}

/// How latent prices are turned into observed ticks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimNoise {
    /// Nearest grid point.
    Deterministic { tick: f64 },
    /// Grid neighbor below or above, each with probability 1/2.
    Stochastic { tick: f64 },
    /// Nearest level of a grid book with `depth` levels per side centered on
    /// the previous trade.
    OrderBook { tick: f64, depth: usize },
    /// Quotes at the grid points straddling the efficient price; the trade
    /// happens on the nearer side.
    MarketMaker { tick: f64 },
}

impl SimNoise {
    pub fn tick(&self) -> f64 {
        match *self {
            SimNoise::Deterministic { tick }
            | SimNoise::Stochastic { tick }
            | SimNoise::OrderBook { tick, .. }
            | SimNoise::MarketMaker { tick } => tick,
        }
    }
}

/// Grid helper that keeps `n · tick` free of representation noise whenever
/// `1/tick` is an integer (cents, ticks of 1/8, ...).
#[derive(Debug, Clone, Copy)]
struct Grid {
    tick: f64,
    inv: Option<f64>,
}

impl Grid {
    fn new(tick: f64) -> Result<Self> {
        if !(tick > 0.0) {
            return Err(Error::NonPositiveTick(tick));
        }
        let inv = 1.0 / tick;
        let r = inv.round();
        Ok(Grid {
            tick,
            inv: (r >= 1.0 && (inv - r).abs() <= 1e-9 * r).then_some(r),
        })
    }

    fn index(&self, p: f64) -> f64 {
        match self.inv {
            Some(inv) => p * inv,
            None => p / self.tick,
        }
    }

    fn price(&self, n: f64) -> f64 {
        match self.inv {
            Some(inv) => n / inv,
            None => n * self.tick,
        }
    }
}

/// Rounded ticks for latent log-prices `x` at `times`.
pub fn apply_noise(
    times: &[f64],
    x: &[f64],
    noise: SimNoise,
    seed: u64,
) -> Result<Vec<TickObservation>> {
    if times.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            got: x.len(),
        });
    }
    let grid = Grid::new(noise.tick())?;
    let mut rng = stream_rng(seed, Stream::Noise, 0);
    let mut out = Vec::with_capacity(x.len());
    let mut prev: Option<f64> = None;
    for (&t, &xj) in times.iter().zip(x) {
        let p = xj.exp();
        let n = grid.index(p);
        let obs = match noise {
            SimNoise::Deterministic { .. } => TickObservation::new(t, grid.price(n.round())),
            SimNoise::Stochastic { .. } => {
                let k = if rng.random::<bool>() {
                    n.floor()
                } else {
                    n.ceil()
                };
                TickObservation::new(t, grid.price(k))
            }
            SimNoise::OrderBook { depth, .. } => {
                let centre = match prev {
                    Some(y) => grid.index(y).round(),
                    None => n.round(),
                };
                let d = depth.max(1) as f64;
                let lo = (centre - d).max(1.0);
                let hi = lo + 2.0 * d;
                let k = n.round().clamp(lo, hi);
                let levels: Vec<f64> = (0..=(2 * depth.max(1)))
                    .map(|i| grid.price(lo + i as f64))
                    .collect();
                TickObservation::new(t, grid.price(k)).with_book(levels)
            }
            SimNoise::MarketMaker { .. } => {
                let b = n.floor();
                let (bid, ask) = (grid.price(b), grid.price(b + 1.0));
                let y = if p - bid < ask - p { bid } else { ask };
                TickObservation::new(t, y).with_quotes(bid, ask)
            }
        };
        if !(obs.price > 0.0) {
            return Err(Error::NonPositivePrice(obs.price));
        }
        prev = Some(obs.price);
        out.push(obs);
    }
    Ok(out)
}

/// Log-prices `x + U` with i.i.d. `U ~ N(0, η²)`.
pub fn apply_additive_noise(x: &[f64], eta: f64, seed: u64) -> Result<Vec<f64>> {
    if !(eta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise scale must be non-negative, got {eta}"
        )));
    }
    let normal = Normal::new(0.0, eta).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = stream_rng(seed, Stream::Noise, 1);
    Ok(x.iter().map(|v| v + normal.sample(&mut rng)).collect())
}

/// Log-returns of a positive price series.
pub fn log_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::NonPositivePrice(
            prices.iter().copied().find(|p| !(*p > 0.0)).unwrap_or(0.0),
        ));
    }
    Ok(prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

/// Sample autocorrelations of log-returns at lags `1..=max_lag`.
pub fn return_acf(prices: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if prices.len() < max_lag + 2 {
        return Err(Error::InsufficientData(format!(
            "need at least {} prices for {max_lag} lags",
            max_lag + 2
        )));
    }
    acf(&log_returns(prices)?, max_lag)
}

/// Sample autocorrelations of a series at lags `1..=max_lag`.
pub fn acf(r: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let c0: f64 = r.iter().map(|v| (v - mean) * (v - mean)).sum();
    if !(c0 > 0.0) {
        return Err(Error::Degenerate("constant return series".into()));
    }
    Ok((1..=max_lag)
        .map(|h| {
            r.iter()
                .zip(&r[h.min(r.len())..])
                .map(|(a, b)| (a - mean) * (b - mean))
                .sum::<f64>()
                / c0
        })
        .collect())
}

/// Partial autocorrelations of log-returns via Durbin–Levinson.
pub fn return_pacf(prices: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let rho = return_acf(prices, max_lag)?;
    Ok(pacf_from_acf(&rho))
}

/// Durbin–Levinson recursion on autocorrelations `ρ(1..=m)`.
pub fn pacf_from_acf(rho: &[f64]) -> Vec<f64> {
    let m = rho.len();
    let mut out = Vec::with_capacity(m);
    let mut phi: Vec<f64> = Vec::with_capacity(m);
    for k in 0..m {
        let num = rho[k] - (0..k).map(|i| phi[i] * rho[k - 1 - i]).sum::<f64>();
        let den = 1.0 - (0..k).map(|i| phi[i] * rho[i]).sum::<f64>();
        let pkk = num / den;
        let next: Vec<f64> = (0..k).map(|i| phi[i] - pkk * phi[k - 1 - i]).collect();
        phi = next;
        phi.push(pkk);
        out.push(pkk);
    }
    out
}

/// Fraction of exactly zero price changes.
pub fn zero_return_fraction(prices: &[f64]) -> Result<f64> {
    if prices.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 prices".into()));
    }
    let zeros = prices.windows(2).filter(|w| w[0] == w[1]).count();
    Ok(zeros as f64 / (prices.len() - 1) as f64)
}
