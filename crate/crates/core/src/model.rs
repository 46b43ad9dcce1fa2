//! Observation types, support sets of the rounding noise models and the
//! latent random-walk dynamics.
//!
//! Every noise model maps an observed transaction price `y` to the set of
//! efficient prices that could have produced it. The particle filter only
//! ever sees that set, so all models are handled uniformly through
//! [`SupportBox`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative tolerance for floating-point grid and quote membership checks.
pub const GRID_TOLERANCE: f64 = 1e-9;

/// One trade record after ingestion.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickObservation {
    /// Seconds since midnight.
    pub time: f64,
    pub price: f64,
    pub bid: Option<f64>,
    pub ask: Option<f64>,
    /// Sorted book levels available just before the trade.
    pub book_levels: Option<Vec<f64>>,
    pub exchange: String,
    pub sale_condition: String,
}

impl TickObservation {
    pub fn new(time: f64, price: f64) -> Self {
        TickObservation {
            time,
            price,
            ..Default::default()
        }
    }

    pub fn with_quotes(mut self, bid: f64, ask: f64) -> Self {
        self.bid = Some(bid);
        self.ask = Some(ask);
        self
    }

    pub fn with_book(mut self, levels: Vec<f64>) -> Self {
        self.book_levels = Some(levels);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.price > 0.0) {
            return Err(Error::NonPositivePrice(self.price));
        }
        if let (Some(bid), Some(ask)) = (self.bid, self.ask) {
            if !(bid < ask) {
                return Err(Error::CrossedQuotes { bid, ask });
            }
        }
        if let Some(levels) = &self.book_levels {
            check_levels(levels)?;
            if !levels.iter().any(|&l| approx_eq(l, self.price)) {
                return Err(Error::NotABookLevel(self.price));
            }
        }
        Ok(())
    }
}

/// A price interval with an optional closed lower end. The upper end is
/// always open; infinite upper bounds are allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub lower_closed: bool,
}

impl Interval {
    pub fn new(lower: f64, upper: f64, lower_closed: bool) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || !(lower < upper) || lower < 0.0 {
            return Err(Error::InvalidInterval { lower, upper });
        }
        Ok(Interval {
            lower,
            upper,
            lower_closed,
        })
    }

    pub fn contains(&self, p: f64) -> bool {
        let above = if self.lower_closed {
            p >= self.lower
        } else {
            p > self.lower
        };
        above && p < self.upper
    }

    /// Bounds in log-price space; `ln 0 = -inf`.
    pub fn log_bounds(&self) -> (f64, f64) {
        (self.lower.ln(), self.upper.ln())
    }

    pub fn is_bounded(&self) -> bool {
        self.lower > 0.0 && self.upper.is_finite()
    }
}

/// Product of per-instrument price intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportBox {
    dims: Vec<Interval>,
}

impl SupportBox {
    pub fn new(dims: Vec<Interval>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        Ok(SupportBox { dims })
    }

    pub fn univariate(lower: f64, upper: f64, lower_closed: bool) -> Result<Self> {
        Ok(SupportBox {
            dims: vec![Interval::new(lower, upper, lower_closed)?],
        })
    }

    /// The whole positive half-line in every dimension.
    pub fn uninformative(dim: usize) -> Self {
        SupportBox {
            dims: vec![
                Interval {
                    lower: 0.0,
                    upper: f64::INFINITY,
                    lower_closed: true,
                };
                dim
            ],
        }
    }

    /// Cartesian product of univariate boxes (synchronous trading times).
    pub fn product(parts: &[SupportBox]) -> Result<Self> {
        let dims: Vec<Interval> = parts.iter().flat_map(|b| b.dims.iter().copied()).collect();
        SupportBox::new(dims)
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn interval(&self, s: usize) -> &Interval {
        &self.dims[s]
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.dims
    }

    pub fn lower(&self) -> f64 {
        self.dims[0].lower
    }

    pub fn upper(&self) -> f64 {
        self.dims[0].upper
    }

    pub fn log_lower(&self) -> Vec<f64> {
        self.dims.iter().map(|i| i.lower.ln()).collect()
    }

    pub fn log_upper(&self) -> Vec<f64> {
        self.dims.iter().map(|i| i.upper.ln()).collect()
    }

    pub fn contains(&self, prices: &[f64]) -> bool {
        prices.len() == self.dims.len() && self.dims.iter().zip(prices).all(|(i, &p)| i.contains(p))
    }

    pub fn contains_log(&self, log_prices: &[f64]) -> bool {
        log_prices.len() == self.dims.len()
            && self.dims.iter().zip(log_prices).all(|(i, &x)| {
                let (lo, hi) = i.log_bounds();
                x >= lo && x <= hi
            })
    }

    /// True when every side is finite and the lower bound is positive.
    pub fn is_bounded(&self) -> bool {
        self.dims.iter().all(Interval::is_bounded)
    }

    /// True when no dimension restricts the efficient price at all.
    pub fn is_uninformative(&self) -> bool {
        self.dims
            .iter()
            .all(|i| i.lower <= 0.0 && i.upper == f64::INFINITY)
    }

    /// Replaces unbounded sides by finite ones so the box can be sampled
    /// uniformly: an infinite upper end becomes `max(lower, anchor) + pad`, a
    /// zero lower end becomes `min(upper, anchor) - pad` (kept positive).
    pub fn clipped(&self, anchors: &[f64], pad: f64) -> Result<SupportBox> {
        if anchors.len() != self.dims.len() {
            return Err(Error::DimensionMismatch {
                expected: self.dims.len(),
                got: anchors.len(),
            });
        }
        let dims = self
            .dims
            .iter()
            .zip(anchors)
            .map(|(i, &a)| {
                let mut lo = i.lower;
                let mut hi = i.upper;
                if !hi.is_finite() {
                    hi = lo.max(a) + pad;
                }
                if lo <= 0.0 {
                    lo = (hi.min(a) - pad).max(hi * 1e-6);
                }
                if !(lo < hi) {
                    return Err(Error::UnboundedBox);
                }
                Ok(Interval {
                    lower: lo,
                    upper: hi,
                    lower_closed: i.lower_closed,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SupportBox { dims })
    }
}

fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= GRID_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

fn check_tick(tick: f64) -> Result<()> {
    if tick > 0.0 && tick.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTick(tick))
    }
}

fn check_grid(y: f64, tick: f64) -> Result<()> {
    check_tick(tick)?;
    if !(y > 0.0) {
        return Err(Error::NonPositivePrice(y));
    }
    let ratio = y / tick;
    if (ratio - ratio.round()).abs() > GRID_TOLERANCE * ratio.abs().max(1.0) {
        return Err(Error::OffGrid { price: y, tick });
    }
    Ok(())
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() || levels.windows(2).any(|w| !(w[0] < w[1])) || !(levels[0] > 0.0) {
        return Err(Error::InvalidBook);
    }
    Ok(())
}

/// Deterministic rounding to the nearest grid point: `[y - tick/2, y + tick/2)`.
pub fn support_simple_deterministic(y: f64, tick: f64) -> Result<SupportBox> {
    check_grid(y, tick)?;
    SupportBox::univariate(y - 0.5 * tick, y + 0.5 * tick, true)
}

/// Stochastic rounding to one of the two neighbouring grid points:
/// `(y - tick, y + tick)`, lower end clamped at zero.
pub fn support_simple_stochastic(y: f64, tick: f64) -> Result<SupportBox> {
    check_grid(y, tick)?;
    SupportBox::univariate((y - tick).max(0.0), y + tick, false)
}

/// Voronoi cell of `y` among the book levels. Extreme levels extend to
/// zero or infinity.
pub fn support_order_book(y: f64, levels: &[f64]) -> Result<SupportBox> {
    check_levels(levels)?;
    let pos = levels
        .iter()
        .position(|&l| approx_eq(l, y))
        .ok_or(Error::NotABookLevel(y))?;
    let level = levels[pos];
    let lower = if pos == 0 {
        0.0
    } else {
        0.5 * (levels[pos - 1] + level)
    };
    let upper = if pos + 1 == levels.len() {
        f64::INFINITY
    } else {
        0.5 * (level + levels[pos + 1])
    };
    SupportBox::univariate(lower, upper, true)
}

/// Single market maker quoting one bid and one ask: the trade happened at
/// one of them and the efficient price lies within a half-spread.
pub fn support_market_maker(y: f64, bid: f64, ask: f64) -> Result<SupportBox> {
    if !(bid < ask) {
        return Err(Error::CrossedQuotes { bid, ask });
    }
    if !(approx_eq(y, bid) || approx_eq(y, ask)) {
        return Err(Error::OffQuote { price: y, bid, ask });
    }
    let half = 0.5 * (ask - bid);
    SupportBox::univariate((y - half).max(0.0), y + half, true)
}

/// Half-spread estimated from the last non-zero return. Returns the updated
/// half-spread and the support; fails with [`Error::SpreadUnset`] when no
/// half-spread can be formed yet, in which case the caller falls back to
/// deterministic rounding.
pub fn support_spread_estimate(
    y: f64,
    y_prev: f64,
    half_spread_prev: Option<f64>,
) -> Result<(f64, SupportBox)> {
    if !(y > 0.0) {
        return Err(Error::NonPositivePrice(y));
    }
    let half = if y != y_prev {
        0.5 * (y - y_prev).abs()
    } else {
        match half_spread_prev {
            Some(h) if h > 0.0 => h,
            _ => return Err(Error::SpreadUnset),
        }
    };
    let b = SupportBox::univariate((y - half).max(0.0), y + half, true)?;
    Ok((half, b))
}

/// Running state of the spread-estimate noise model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpreadState {
    pub prev_price: Option<f64>,
    pub half_spread: Option<f64>,
}

/// Microstructure noise model, i.e. how an observed price constrains the
/// efficient price.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    SimpleDeterministic {
        tick: f64,
    },
    SimpleStochastic {
        tick: f64,
    },
    OrderBook,
    MarketMakerQuotes,
    /// `tick` is the cold-start fallback grid.
    SpreadEstimate {
        tick: f64,
        state: SpreadState,
    },
}

impl NoiseModel {
    pub fn spread_estimate(tick: f64) -> Self {
        NoiseModel::SpreadEstimate {
            tick,
            state: SpreadState::default(),
        }
    }

    /// Grid size used to clip unbounded supports, when the model has one.
    pub fn tick(&self) -> Option<f64> {
        match self {
            NoiseModel::SimpleDeterministic { tick }
            | NoiseModel::SimpleStochastic { tick }
            | NoiseModel::SpreadEstimate { tick, .. } => Some(*tick),
            NoiseModel::OrderBook | NoiseModel::MarketMakerQuotes => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseModel::SimpleDeterministic { .. } => "deterministic",
            NoiseModel::SimpleStochastic { .. } => "stochastic",
            NoiseModel::OrderBook => "book",
            NoiseModel::MarketMakerQuotes => "quotes",
            NoiseModel::SpreadEstimate { .. } => "spread",
        }
    }

    /// Support of the efficient price given one observation. Mutates the
    /// running half-spread of the spread-estimate model.
    pub fn support(&mut self, obs: &TickObservation) -> Result<SupportBox> {
        match self {
            NoiseModel::SimpleDeterministic { tick } => {
                support_simple_deterministic(obs.price, *tick)
            }
            NoiseModel::SimpleStochastic { tick } => support_simple_stochastic(obs.price, *tick),
            NoiseModel::OrderBook => {
                let levels = obs
                    .book_levels
                    .as_deref()
                    .ok_or(Error::MissingContext("order book levels"))?;
                support_order_book(obs.price, levels)
            }
            NoiseModel::MarketMakerQuotes => {
                let bid = obs.bid.ok_or(Error::MissingContext("bid quote"))?;
                let ask = obs.ask.ok_or(Error::MissingContext("ask quote"))?;
                support_market_maker(obs.price, bid, ask)
            }
            NoiseModel::SpreadEstimate { tick, state } => {
                let prev = state.prev_price.replace(obs.price);
                let estimate = match prev {
                    Some(p) => support_spread_estimate(obs.price, p, state.half_spread),
                    None => Err(Error::SpreadUnset),
                };
                match estimate {
                    Ok((half, b)) => {
                        state.half_spread = Some(half);
                        Ok(b)
                    }
                    Err(Error::SpreadUnset) => support_simple_deterministic(obs.price, *tick),
                    Err(e) => Err(e),
                }
            }
        }
    }
}

/// Time scale of the latent random walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StateModel {
    /// One step of variance `Σ` per transaction.
    #[default]
    TransactionTime,
    /// Variance `dt · Σᶜ` over an inter-trade duration `dt`.
    ClockTime,
}

impl StateModel {
    /// Scalar variance factor applied to the covariance over a step of
    /// length `dt`.
    pub fn variance_scale(&self, dt: f64) -> Result<f64> {
        match self {
            StateModel::TransactionTime => Ok(1.0),
            StateModel::ClockTime => {
                if dt > 0.0 && dt.is_finite() {
                    Ok(dt)
                } else {
                    Err(Error::NonPositiveDuration(dt))
                }
            }
        }
    }
}

/// Covariance of the latent increment over one step.
pub fn transition_variance(
    model: StateModel,
    sigma: &DMatrix<f64>,
    dt: f64,
) -> Result<DMatrix<f64>> {
    let scale = model.variance_scale(dt)?;
    Ok(sigma * scale)
}
