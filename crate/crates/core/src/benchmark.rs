//! Reference estimators: a recursive realized-variance estimator corrected
//! for additive noise, and the infeasible oracle that sees the latent path.

use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::seq_em::CvRecord;

/// Step size of the benchmark variance recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchPolicy {
    /// `1/(j−1)`.
    Constant,
    /// Fixed `λ ∈ (0, 1)`.
    Fixed { lambda: f64 },
}

/// One benchmark update from `j−1` to `j`:
/// `(1−a)(Σ̂_{j−1} + max{0, 2η̂²_{j−1}}) + a r_j² − max{0, 2η̂²_j}`.
pub fn bench_step(prev_sigma: f64, prev_eta2: f64, eta2: f64, r: f64, a: f64) -> f64 {
    (1.0 - a) * (prev_sigma + correction(prev_eta2)) + a * r * r - correction(eta2)
}

/// Noise correction `max{0, 2η̂²}`.
pub fn correction(eta2: f64) -> f64 {
    (2.0 * eta2).max(0.0)
}

/// Benchmark recursion over observed log-prices.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchState {
    policy: BenchPolicy,
    j: usize,
    last: Option<f64>,
    last_return: f64,
    sigma: f64,
    eta2: f64,
    negative_count: u64,
}

impl BenchState {
    pub fn new(policy: BenchPolicy) -> Result<Self> {
        if let BenchPolicy::Fixed { lambda } = policy {
            if !(lambda > 0.0 && lambda < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "lambda must lie in (0, 1), got {lambda}"
                )));
            }
        }
        Ok(BenchState {
            policy,
            j: 0,
            last: None,
            last_return: 0.0,
            sigma: 0.0,
            eta2: 0.0,
            negative_count: 0,
        })
    }

    /// Consumes `log y_j`. Returns `(Σ̂_B, η̂²)` from the second observation
    /// on; `Σ̂_B,2 = r_2²` and `η̂²_2 = 0`.
    pub fn push(&mut self, log_y: f64) -> Result<Option<(f64, f64)>> {
        if !log_y.is_finite() {
            return Err(Error::NaN("log price"));
        }
        self.j += 1;
        let Some(prev) = self.last.replace(log_y) else {
            return Ok(None);
        };
        let r = log_y - prev;
        if self.j == 2 {
            self.sigma = r * r;
            self.eta2 = 0.0;
        } else {
            let j = self.j as f64;
            let b = 1.0 / (j - 2.0);
            let eta2 = (1.0 - b) * self.eta2 - b * r * self.last_return;
            let a = match self.policy {
                BenchPolicy::Constant => 1.0 / (j - 1.0),
                BenchPolicy::Fixed { lambda } => lambda,
            };
            self.sigma = bench_step(self.sigma, self.eta2, eta2, r, a);
            self.eta2 = eta2;
        }
        self.last_return = r;
        if self.sigma < 0.0 {
            self.negative_count += 1;
        }
        Ok(Some((self.sigma, self.eta2)))
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eta2(&self) -> f64 {
        self.eta2
    }

    pub fn j(&self) -> usize {
        self.j
    }

    /// Number of updates that produced a negative `Σ̂_B`.
    pub fn negative_count(&self) -> u64 {
        self.negative_count
    }
}

/// Cross-validation criterion of the fixed-step benchmark:
/// `Σ_j (Σ̂_B,j + max{0, 2η̂²_j} − r_{j+2}²)²`.
pub fn bench_criterion(log_prices: &[f64], lambda: f64) -> Result<f64> {
    let mut st = BenchState::new(BenchPolicy::Fixed { lambda })?;
    let t = log_prices.len();
    let mut crit = 0.0;
    for (idx, &y) in log_prices.iter().enumerate() {
        let Some((sigma, eta2)) = st.push(y)? else {
            continue;
        };
        if idx + 2 < t {
            let r = log_prices[idx + 2] - log_prices[idx + 1];
            let e = sigma + correction(eta2) - r * r;
            crit += e * e;
        }
    }
    if !crit.is_finite() {
        return Err(Error::Degenerate("non-finite benchmark criterion".into()));
    }
    Ok(crit)
}

/// Grid search of the benchmark step size; ties go to the smaller `λ`.
pub fn bench_cv(log_prices: &[f64], grid: &[f64], exec: ExecPolicy) -> Result<CvRecord> {
    if log_prices.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "cross-validation needs at least 100 ticks, got {}",
            log_prices.len()
        )));
    }
    let mut rec = CvRecord::new(grid.to_vec())?;
    let values = exec.map(grid.len(), |i| bench_criterion(log_prices, grid[i]));
    for (slot, v) in rec.sums.iter_mut().zip(values) {
        *slot = v?;
    }
    Ok(rec)
}

/// Infeasible estimator driven by the latent log-prices:
/// `Σ̂_j = (1−(j−1)^{−γ}) Σ̂_{j−1} + (j−1)^{−γ} (x_j − x_{j−1})²`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleState {
    gamma: f64,
    j: usize,
    last: Option<f64>,
    sigma: f64,
}

impl OracleState {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.5 && gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (1/2, 1], got {gamma}"
            )));
        }
        Ok(OracleState {
            gamma,
            j: 0,
            last: None,
            sigma: 0.0,
        })
    }

    /// Consumes `x_j`; returns the estimate from the second point on.
    pub fn push(&mut self, x: f64) -> Option<f64> {
        self.j += 1;
        let prev = self.last.replace(x)?;
        let a = ((self.j - 1) as f64).powf(-self.gamma);
        let d = x - prev;
        self.sigma = (1.0 - a) * self.sigma + a * d * d;
        Some(self.sigma)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}
