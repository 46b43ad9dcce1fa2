//! Streaming estimator: noise model → support box → particle filter →
//! volatility recursion, one tick at a time.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{NoiseModel, StateModel, SupportBox, TickObservation};
use crate::particle_filter::{FilterConfig, ParticleCloud, StepOutput};
use crate::sages::SagesState;
use crate::seq_em::{
    breve_sigma, breve_sigma_clock, cv_grid, CvRecord, DurationState, StepPolicy, VolEstimatorState,
};

/// Which recursion turns update matrices into the running estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorKind {
    Single(StepPolicy),
    /// Aggregated fixed-step smoothers; univariate only.
    Sages {
        grid: Vec<f64>,
        kappa: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub noise: NoiseModel,
    pub state_model: StateModel,
    pub filter: FilterConfig,
    pub estimator: EstimatorKind,
    /// `Σ̂_2`, also the propagation covariance of the first filter step.
    /// Per transaction, or per second in clock time.
    pub initial_sigma: DMatrix<f64>,
    /// Step size of the duration average.
    pub duration_lambda: f64,
}

impl PipelineConfig {
    /// Univariate transaction-time configuration with defaults elsewhere.
    pub fn univariate(noise: NoiseModel, estimator: EstimatorKind, initial_sigma2: f64) -> Self {
        PipelineConfig {
            noise,
            state_model: StateModel::TransactionTime,
            filter: FilterConfig::default(),
            estimator,
            initial_sigma: DMatrix::from_element(1, 1, initial_sigma2),
            duration_lambda: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
enum Estimator {
    Single(VolEstimatorState),
    Sages(SagesState),
}

impl Estimator {
    fn current(&self) -> DMatrix<f64> {
        match self {
            Estimator::Single(s) => s.estimate().expect("initialized").clone(),
            Estimator::Sages(s) => DMatrix::from_element(1, 1, s.aggregate().expect("initialized")),
        }
    }

    fn update(&mut self, breve: &DMatrix<f64>) -> Result<()> {
        match self {
            Estimator::Single(s) => s.update(breve).map(|_| ()),
            Estimator::Sages(s) => s.update(breve[(0, 0)]).map(|_| ()),
        }
    }
}

/// Result of one tick after the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub j: usize,
    pub time: f64,
    pub price: Vec<f64>,
    /// Covariance used to propagate the particles into this tick (`Σ̂_{j−1}`,
    /// or the initial value at `j = 2`).
    pub sigma_pf: DMatrix<f64>,
    /// Update matrix `Σ̆_j`.
    pub breve: DMatrix<f64>,
    /// Estimate `Σ̂_j` after this tick.
    pub sigma_hat: DMatrix<f64>,
    /// Averaged duration `δ̄_j`, once a positive duration was seen.
    pub delta_bar: Option<f64>,
    pub step: StepOutput,
}

/// On-line estimator for one instrument (or one synchronous basket).
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    noise: NoiseModel,
    cloud: Option<ParticleCloud>,
    estimator: Estimator,
    duration: DurationState,
    /// Time stamps of the last `k_lag + 1` ticks, oldest first.
    times: Vec<f64>,
    j: usize,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        let dim = cfg.initial_sigma.nrows();
        if !cfg.initial_sigma.is_square() || dim == 0 {
            return Err(Error::InvalidParameter(
                "initial covariance must be square".into(),
            ));
        }
        let estimator = match &cfg.estimator {
            EstimatorKind::Single(policy) => Estimator::Single(VolEstimatorState::with_initial(
                *policy,
                cfg.initial_sigma.clone(),
            )?),
            EstimatorKind::Sages { grid, kappa } => {
                if dim != 1 {
                    return Err(Error::UnsupportedDimension(dim));
                }
                Estimator::Sages(SagesState::with_initial(
                    grid.clone(),
                    kappa.clone(),
                    cfg.initial_sigma[(0, 0)],
                )?)
            }
        };
        Ok(Pipeline {
            noise: cfg.noise.clone(),
            duration: DurationState::new(cfg.duration_lambda)?,
            estimator,
            cloud: None,
            times: Vec::with_capacity(cfg.filter.k_lag + 1),
            j: 0,
            cfg,
        })
    }

    /// Number of ticks consumed.
    pub fn ticks(&self) -> usize {
        self.j
    }

    pub fn cloud(&self) -> Option<&ParticleCloud> {
        self.cloud.as_ref()
    }

    pub fn resample_count(&self) -> u64 {
        self.cloud.as_ref().map_or(0, ParticleCloud::resample_count)
    }

    /// Current estimate (`Σ̂_2` until the second tick has been consumed).
    pub fn estimate(&self) -> DMatrix<f64> {
        self.estimator.current()
    }

    pub fn duration(&self) -> &DurationState {
        &self.duration
    }

    /// Consumes one univariate tick.
    pub fn push(&mut self, obs: &TickObservation) -> Result<Option<Update>> {
        obs.validate()?;
        let b = self.noise.support(obs)?;
        self.push_box(obs.time, vec![obs.price], &b)
    }

    /// Consumes one tick given its support box directly (any dimension up
    /// to 4, synchronous prices).
    pub fn push_box(
        &mut self,
        time: f64,
        price: Vec<f64>,
        b: &SupportBox,
    ) -> Result<Option<Update>> {
        let dim = self.cfg.initial_sigma.nrows();
        if b.dim() != dim || price.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: b.dim(),
            });
        }
        if !time.is_finite() {
            return Err(Error::NaN("time stamp"));
        }
        let prev_time = self.times.last().copied();
        let dt = prev_time.map(|t| time - t);
        if let (StateModel::ClockTime, Some(d)) = (self.cfg.state_model, dt) {
            if !(d > 0.0) {
                return Err(Error::NonPositiveDuration(d));
            }
        }

        let Some(cloud) = self.cloud.as_mut() else {
            let bounded = if b.is_bounded() {
                b.clone()
            } else {
                b.clipped(&price, self.cfg.filter.clip_pad)?
            };
            self.cloud = Some(ParticleCloud::init(&bounded, self.cfg.filter.clone())?);
            record_time(&mut self.times, self.cfg.filter.k_lag + 1, time);
            self.j = 1;
            return Ok(None);
        };

        let sigma_pf = self.estimator.current();
        let dt = dt.expect("second tick has a predecessor");
        let step = cloud.step(&sigma_pf, b, dt, self.cfg.state_model)?;
        self.j += 1;
        record_time(&mut self.times, self.cfg.filter.k_lag + 1, time);
        let lag = self.cfg.filter.k_lag.min(cloud.history_len() - 1);
        let breve = match self.cfg.state_model {
            StateModel::TransactionTime => breve_sigma(cloud, lag)?,
            StateModel::ClockTime => {
                let back = self.times[self.times.len() - 1 - lag];
                breve_sigma_clock(cloud, lag, time - back)?
            }
        };
        if self.j > 2 {
            self.estimator.update(&breve)?;
        }
        if dt > 0.0 {
            self.duration.update(dt)?;
        }
        Ok(Some(Update {
            j: self.j,
            time,
            price,
            sigma_pf,
            breve,
            sigma_hat: self.estimator.current(),
            delta_bar: self.duration.mean(),
            step,
        }))
    }
}

fn record_time(times: &mut Vec<f64>, cap: usize, t: f64) {
    if times.len() == cap {
        times.remove(0);
    }
    times.push(t);
}

/// Runs a pipeline over a whole stream and returns every update.
pub fn run_all(cfg: PipelineConfig, ticks: &[TickObservation]) -> Result<Vec<Update>> {
    let mut p = Pipeline::new(cfg)?;
    let mut out = Vec::with_capacity(ticks.len().saturating_sub(1));
    for t in ticks {
        if let Some(u) = p.push(t)? {
            out.push(u);
        }
    }
    Ok(out)
}

/// Cross-validation criterion `Σ_j ‖Σ̂_j − Σ̆_{j+1}‖²` of one fixed step
/// size, using a private copy of the pipeline configuration.
pub fn cv_criterion(base: &PipelineConfig, ticks: &[TickObservation], lambda: f64) -> Result<f64> {
    let cfg = PipelineConfig {
        estimator: EstimatorKind::Single(StepPolicy::Fixed { lambda }),
        ..base.clone()
    };
    let mut p = Pipeline::new(cfg)?;
    let mut crit = 0.0;
    for t in ticks {
        if let Some(u) = p.push(t)? {
            if u.j >= 3 {
                crit += (&u.sigma_pf - &u.breve).iter().map(|v| v * v).sum::<f64>();
            }
        }
    }
    Ok(crit)
}

/// Offline choice of the fixed step size by one-step-ahead prediction of
/// the update matrix. Every candidate replays the stream with the same seed.
pub fn cv_select_lambda(
    ticks: &[TickObservation],
    grid: &[f64],
    base: &PipelineConfig,
) -> Result<CvRecord> {
    if ticks.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "cross-validation needs at least 100 ticks, got {}",
            ticks.len()
        )));
    }
    let mut noise = base.noise.clone();
    let mut informative = false;
    for t in ticks {
        if !noise.support(t)?.is_uninformative() {
            informative = true;
            break;
        }
    }
    if !informative {
        return Err(Error::Degenerate(
            "every tick has an uninformative support".into(),
        ));
    }
    cv_grid(grid, base.filter.exec, |l| cv_criterion(base, ticks, l))
}

/// Prediction criterion `Σ_j (δ̄_j − dt_{j+1})²` of the duration average.
pub fn duration_criterion(times: &[f64], lambda: f64) -> Result<f64> {
    let mut d = DurationState::new(lambda)?;
    let gaps: Vec<f64> = times
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|g| *g > 0.0)
        .collect();
    let mut crit = 0.0;
    for (i, &g) in gaps.iter().enumerate() {
        let m = d.update(g)?;
        if let Some(next) = gaps.get(i + 1) {
            crit += (m - next) * (m - next);
        }
    }
    Ok(crit)
}

/// Grid search of the duration step size.
pub fn cv_select_duration(times: &[f64], grid: &[f64]) -> Result<CvRecord> {
    if times.len() < 3 {
        return Err(Error::InsufficientData(
            "need at least 3 time stamps".into(),
        ));
    }
    let mut rec = CvRecord::new(grid.to_vec())?;
    for (slot, &l) in rec.sums.iter_mut().zip(grid) {
        *slot = duration_criterion(times, l)?;
    }
    Ok(rec)
}
