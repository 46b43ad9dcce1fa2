//! Small value syntaxes used on the command line.

use anyhow::{anyhow, bail, Context, Result};
use tickvol::model::NoiseModel;
use tickvol::sages::{linear_grid, log_grid};
use tickvol::simulator::{ArrivalModel, SimNoise, VolCurve};

fn num(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .with_context(|| format!("not a number: {s:?}"))
}

/// `FROM:TO:Nlog`, `FROM:TO:Nlin` or a comma-separated list.
pub fn grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let g = match parts.as_slice() {
        [from, to, n] => {
            let (count, log) = if let Some(c) = n.strip_suffix("log") {
                (c, true)
            } else if let Some(c) = n.strip_suffix("lin") {
                (c, false)
            } else {
                (*n, true)
            };
            let count: usize = count
                .parse()
                .with_context(|| format!("bad grid size in {s:?}"))?;
            if log {
                log_grid(num(from)?, num(to)?, count)
            } else {
                linear_grid(num(from)?, num(to)?, count)
            }
        }
        [list] => list
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(num)
            .collect::<Result<_>>()?,
        _ => bail!("bad grid {s:?}; use FROM:TO:Nlog, FROM:TO:Nlin or a comma list"),
    };
    if g.is_empty() {
        bail!("grid {s:?} is empty");
    }
    Ok(g)
}

/// Observation model for estimation.
pub fn noise_model(s: &str, tick: f64) -> Result<NoiseModel> {
    Ok(match s {
        "deterministic" => NoiseModel::SimpleDeterministic { tick },
        "stochastic" => NoiseModel::SimpleStochastic { tick },
        "book" => NoiseModel::OrderBook,
        "quotes" => NoiseModel::MarketMakerQuotes,
        "spread" => NoiseModel::spread_estimate(tick),
        _ => bail!(
            "unknown noise model {s:?}; use deterministic, stochastic, book, quotes or spread"
        ),
    })
}

/// Rounding scheme for simulation: `deterministic`, `stochastic`,
/// `book[:DEPTH]` or `quotes`.
pub fn sim_noise(s: &str, tick: f64) -> Result<SimNoise> {
    let (kind, arg) = s.split_once(':').map_or((s, None), |(k, a)| (k, Some(a)));
    Ok(match (kind, arg) {
        ("deterministic", None) => SimNoise::Deterministic { tick },
        ("stochastic", None) => SimNoise::Stochastic { tick },
        ("book", depth) => SimNoise::OrderBook {
            tick,
            depth: depth
                .map_or(Ok(3), |d| d.parse())
                .with_context(|| format!("bad book depth in {s:?}"))?,
        },
        ("quotes", None) => SimNoise::MarketMaker { tick },
        _ => bail!("unknown simulation noise {s:?}"),
    })
}

/// Squared-volatility curve: `const:V`, `pwl:U=V,U=V,...`,
/// `sin:BASE:AMP:PERIOD` or `ushape:OPEN:MID:CLOSE:LENGTH`.
pub fn vol_curve(s: &str) -> Result<VolCurve> {
    let (kind, rest) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("bad curve {s:?}"))?;
    let args = || rest.split(':').map(num).collect::<Result<Vec<f64>>>();
    let curve = match kind {
        "const" => VolCurve::Constant(num(rest)?),
        "pwl" => {
            let knots = rest
                .split(',')
                .map(|kv| {
                    let (u, v) = kv
                        .split_once('=')
                        .ok_or_else(|| anyhow!("bad knot {kv:?}"))?;
                    Ok((num(u)?, num(v)?))
                })
                .collect::<Result<Vec<_>>>()?;
            VolCurve::PiecewiseLinear(knots)
        }
        "sin" => match args()?.as_slice() {
            [base, amplitude, period] => VolCurve::Sinusoid {
                base: *base,
                amplitude: *amplitude,
                period: *period,
            },
            _ => bail!("sin needs BASE:AMP:PERIOD"),
        },
        "ushape" => match args()?.as_slice() {
            [open, mid, close, length] => VolCurve::UShape {
                open: *open,
                mid: *mid,
                close: *close,
                length: *length,
            },
            _ => bail!("ushape needs OPEN:MID:CLOSE:LENGTH"),
        },
        _ => bail!("unknown curve kind {kind:?}"),
    };
    curve.validate()?;
    Ok(curve)
}

/// `equispaced[:DT]`, `poisson:RATE` or `inhom:<curve>`.
pub fn arrivals(s: &str) -> Result<ArrivalModel> {
    let (kind, rest) = s.split_once(':').map_or((s, None), |(k, r)| (k, Some(r)));
    let a = match (kind, rest) {
        ("equispaced", None) => ArrivalModel::Equispaced(1.0),
        ("equispaced", Some(d)) => ArrivalModel::Equispaced(num(d)?),
        ("poisson", Some(r)) => ArrivalModel::Poisson(num(r)?),
        ("inhom", Some(c)) => ArrivalModel::InhomPoisson(vol_curve(c)?),
        _ => bail!("unknown arrival model {s:?}"),
    };
    a.validate()?;
    Ok(a)
}

/// `HH:MM:SS-HH:MM:SS` or decimal seconds `A-B`.
pub fn session(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .split_once('-')
        .ok_or_else(|| anyhow!("session must look like 09:30:00-16:00:00"))?;
    let lo = tickvol::io::parse_time(a)?;
    let hi = tickvol::io::parse_time(b)?;
    if lo > hi {
        bail!("session start after end in {s:?}");
    }
    Ok((lo, hi))
}
