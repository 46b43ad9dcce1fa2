//! Sequential EM-type volatility recursions.
//!
//! After each filter step the particles give an update matrix `Σ̆_j`, the
//! weighted outer product of latent increments. The running estimate is a
//! stochastic-approximation average of these matrices, either with a
//! decaying step `λ₀ (j−1)^{−γ}` for constant volatility or with a fixed
//! step `λ` that tracks time-varying volatility.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::particle_filter::ParticleCloud;

/// Default decay exponent of the constant-volatility step size.
pub const DEFAULT_GAMMA: f64 = 0.9;
/// Default scale of the constant-volatility step size.
pub const DEFAULT_LAMBDA0: f64 = 1.0;

/// `(1/k) Σᵢ ωᵢ (xⱼⁱ − xⱼ₋ₖⁱ)(xⱼⁱ − xⱼ₋ₖⁱ)ᵀ`.
pub fn breve_sigma(cloud: &ParticleCloud, k_lag: usize) -> Result<DMatrix<f64>> {
    let mut m = weighted_increment_outer(cloud, k_lag)?;
    m /= k_lag as f64;
    Ok(m)
}

/// Clock-time update matrix: the weighted outer product divided by the
/// elapsed time `dt_k = t_j − t_{j−k}` instead of by `k`.
pub fn breve_sigma_clock(cloud: &ParticleCloud, k_lag: usize, dt_k: f64) -> Result<DMatrix<f64>> {
    if !(dt_k > 0.0) {
        return Err(Error::NonPositiveDuration(dt_k));
    }
    let mut m = weighted_increment_outer(cloud, k_lag)?;
    m /= dt_k;
    Ok(m)
}

fn weighted_increment_outer(cloud: &ParticleCloud, k_lag: usize) -> Result<DMatrix<f64>> {
    if k_lag == 0 {
        return Err(Error::InvalidParameter("k_lag must be at least 1".into()));
    }
    let s = cloud.dim();
    let mut m = DMatrix::zeros(s, s);
    let mut d = vec![0.0; s];
    for (i, &w) in cloud.weights().iter().enumerate() {
        let now = cloud.current(i);
        let then = cloud.lagged(i, k_lag)?;
        for a in 0..s {
            d[a] = now[a] - then[a];
        }
        for a in 0..s {
            for b in a..s {
                m[(a, b)] += w * d[a] * d[b];
            }
        }
    }
    for a in 0..s {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
    Ok(m)
}

/// Step-size schedule of a volatility recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPolicy {
    /// `λ_j = λ₀ (j−1)^{−γ}`, for constant volatility.
    Constant { gamma: f64, lambda0: f64 },
    /// `λ_j ≡ λ`, for time-varying volatility.
    Fixed { lambda: f64 },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::Constant {
            gamma: DEFAULT_GAMMA,
            lambda0: DEFAULT_LAMBDA0,
        }
    }
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepPolicy::Constant { gamma, lambda0 } => {
                if !(gamma > 0.5 && gamma <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "gamma must lie in (1/2, 1], got {gamma}"
                    )));
                }
                if !(lambda0 > 0.0 && lambda0.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "lambda0 must be positive, got {lambda0}"
                    )));
                }
            }
            StepPolicy::Fixed { lambda } => check_fixed_lambda(lambda)?,
        }
        Ok(())
    }

    /// Step size used when moving from `Σ̂_{j−1}` to `Σ̂_j`.
    pub fn step_size(&self, j: usize) -> Result<f64> {
        match *self {
            StepPolicy::Constant { gamma, lambda0 } => {
                if j < 2 {
                    return Err(Error::InsufficientHistory { need: 2, have: j });
                }
                let l = lambda0 * ((j - 1) as f64).powf(-gamma);
                if !(l > 0.0 && l <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "step size {l} at j={j} outside (0, 1]"
                    )));
                }
                Ok(l)
            }
            StepPolicy::Fixed { lambda } => Ok(lambda),
        }
    }
}

fn check_fixed_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "lambda must lie in (0, 1), got {lambda}"
        )))
    }
}

/// Running volatility estimate `Σ̂_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolEstimatorState {
    sigma: Option<DMatrix<f64>>,
    j: usize,
    policy: StepPolicy,
}

impl VolEstimatorState {
    /// Empty state; the first `Σ̆` supplied becomes `Σ̂_2`.
    pub fn new(policy: StepPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(VolEstimatorState {
            sigma: None,
            j: 1,
            policy,
        })
    }

    /// State whose `Σ̂_2` is given explicitly.
    pub fn with_initial(policy: StepPolicy, sigma2: DMatrix<f64>) -> Result<Self> {
        policy.validate()?;
        check_psd_diag(&sigma2)?;
        Ok(VolEstimatorState {
            sigma: Some(sigma2),
            j: 2,
            policy,
        })
    }

    pub fn policy(&self) -> StepPolicy {
        self.policy
    }

    /// Index of the current estimate (`Σ̂_j`); 1 before initialization.
    pub fn j(&self) -> usize {
        self.j
    }

    pub fn estimate(&self) -> Option<&DMatrix<f64>> {
        self.sigma.as_ref()
    }

    /// Feeds `Σ̆_{j+1}` and returns `Σ̂_{j+1}`, using whichever step-size
    /// policy the state carries.
    pub fn update(&mut self, breve: &DMatrix<f64>) -> Result<&DMatrix<f64>> {
        if breve.iter().any(|v| v.is_nan()) {
            return Err(Error::NaN("update matrix"));
        }
        match self.sigma.take() {
            None => {
                self.sigma = Some(breve.clone());
                self.j = 2;
            }
            Some(mut s) => {
                if s.shape() != breve.shape() {
                    let got = breve.nrows();
                    self.sigma = Some(s);
                    return Err(Error::DimensionMismatch {
                        expected: self.dim(),
                        got,
                    });
                }
                let l = match self.policy.step_size(self.j + 1) {
                    Ok(l) => l,
                    Err(e) => {
                        self.sigma = Some(s);
                        return Err(e);
                    }
                };
                s *= 1.0 - l;
                s += breve * l;
                self.sigma = Some(s);
                self.j += 1;
            }
        }
        Ok(self.sigma.as_ref().expect("set above"))
    }

    /// Update under the decaying step; fails for a fixed-step state.
    pub fn update_constant(&mut self, breve: &DMatrix<f64>) -> Result<&DMatrix<f64>> {
        match self.policy {
            StepPolicy::Constant { .. } => self.update(breve),
            StepPolicy::Fixed { .. } => {
                Err(Error::InvalidParameter("state uses a fixed step".into()))
            }
        }
    }

    /// Update under the fixed step; fails for a decaying-step state.
    pub fn update_tv(&mut self, breve: &DMatrix<f64>) -> Result<&DMatrix<f64>> {
        match self.policy {
            StepPolicy::Fixed { .. } => self.update(breve),
            StepPolicy::Constant { .. } => {
                Err(Error::InvalidParameter("state uses a decaying step".into()))
            }
        }
    }

    fn dim(&self) -> usize {
        self.sigma.as_ref().map_or(0, |s| s.nrows())
    }
}

fn check_psd_diag(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::InvalidParameter(
            "covariance must be a non-empty square matrix".into(),
        ));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NaN("covariance"));
    }
    if (0..m.nrows()).any(|i| m[(i, i)] < 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(())
}

/// Exponentially averaged inter-trade duration `δ̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationState {
    mean: Option<f64>,
    lambda: f64,
    j: usize,
}

impl DurationState {
    pub fn new(lambda: f64) -> Result<Self> {
        check_fixed_lambda(lambda)?;
        Ok(DurationState {
            mean: None,
            lambda,
            j: 1,
        })
    }

    /// Feeds `t_j − t_{j−1}`; the first duration initializes `δ̄_2`.
    pub fn update(&mut self, dt: f64) -> Result<f64> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::NonPositiveDuration(dt));
        }
        let m = match self.mean {
            None => dt,
            Some(m) => (1.0 - self.lambda) * m + self.lambda * dt,
        };
        self.mean = Some(m);
        self.j += 1;
        Ok(m)
    }

    pub fn mean(&self) -> Option<f64> {
        self.mean
    }

    /// Trading-intensity estimate `1/δ̄`.
    pub fn intensity(&self) -> Option<f64> {
        self.mean.map(|m| 1.0 / m)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Per-second estimate obtained from a per-transaction one: `Σ̂ / δ̄`.
pub fn alt_clock_estimate(sigma_txn: &DMatrix<f64>, delta_bar: f64) -> Result<DMatrix<f64>> {
    if !(delta_bar > 0.0) {
        return Err(Error::NonPositiveDuration(delta_bar));
    }
    Ok(sigma_txn / delta_bar)
}

/// Weight that a fixed-step recursion puts on the update `k` steps back.
pub fn smoothing_weight(lambda: f64, k: u32) -> f64 {
    (1.0 - lambda).powi(k as i32) * lambda
}

/// Exponential-kernel weight `(δ/b) e^{−kδ/b}` with bandwidth `b = δ/λ`.
pub fn kernel_weight(lambda: f64, k: u32, delta: f64) -> f64 {
    let b = delta / lambda;
    (delta / b) * (-(k as f64) * delta / b).exp()
}

/// Running cross-validation sums, one per candidate step size.
#[derive(Debug, Clone, PartialEq)]
pub struct CvRecord {
    pub grid: Vec<f64>,
    pub sums: Vec<f64>,
}

impl CvRecord {
    pub fn new(grid: Vec<f64>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidParameter("empty lambda grid".into()));
        }
        let n = grid.len();
        Ok(CvRecord {
            grid,
            sums: vec![0.0; n],
        })
    }

    /// Adds the squared entrywise distance between a prediction and its
    /// target to candidate `idx`.
    pub fn add(&mut self, idx: usize, predicted: &DMatrix<f64>, target: &DMatrix<f64>) {
        self.sums[idx] += (predicted - target).iter().map(|v| v * v).sum::<f64>();
    }

    /// Index of the minimizing candidate. Ties go to the smaller step size,
    /// and among equal step sizes to the earlier entry.
    pub fn argmin(&self) -> usize {
        argmin_smallest(&self.grid, &self.sums)
    }

    pub fn best(&self) -> f64 {
        self.grid[self.argmin()]
    }
}

pub(crate) fn argmin_smallest(grid: &[f64], crit: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..grid.len() {
        let better = crit[i] < crit[best] || (crit[i] == crit[best] && grid[i] < grid[best]);
        if better {
            best = i;
        }
    }
    best
}

/// Evaluates `criterion(λ)` for every grid entry and returns the filled
/// record. Each evaluation must be self-contained (own seed, own filter).
pub fn cv_grid<F>(grid: &[f64], exec: ExecPolicy, criterion: F) -> Result<CvRecord>
where
    F: Fn(f64) -> Result<f64> + Sync + Send,
{
    let mut rec = CvRecord::new(grid.to_vec())?;
    for &l in grid {
        check_fixed_lambda(l)?;
    }
    let values = exec.map(grid.len(), |i| criterion(grid[i]));
    for (slot, v) in rec.sums.iter_mut().zip(values) {
        *slot = v?;
    }
    Ok(rec)
}
