//! Optimal-proposal particle filter for the rounded random walk.
//!
//! Given the previous latent log-price `x` of a particle, the next state is
//! drawn from `N(x, V)` restricted to the log-support of the new tick, and
//! the particle is reweighted by the mass that `N(x, V)` puts on that box.
//! This is the proposal that minimizes the weight variance, so resampling
//! is rarely needed.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::model::{transition_variance, StateModel, SupportBox};
use crate::rng::{derive_key, item_rng, stream_rng, Stream};
use crate::truncnorm::RectKernel;

/// Default ESS fraction below which the cloud is resampled.
pub const DEFAULT_ESS_THRESHOLD: f64 = 0.2;

/// Total unnormalized weight below which the filter is declared diverged.
pub const DIVERGENCE_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Resample when `ESS < ess_threshold · N`.
    pub ess_threshold: f64,
    /// Number of past states kept per particle beyond the current one.
    pub k_lag: usize,
    pub seed: u64,
    pub exec: ExecPolicy,
    /// Price distance used to close unbounded supports before uniform
    /// (re)initialization.
    pub clip_pad: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n_particles: 500,
            ess_threshold: DEFAULT_ESS_THRESHOLD,
            k_lag: 1,
            seed: 0,
            exec: ExecPolicy::default(),
            clip_pad: 0.1,
        }
    }
}

impl FilterConfig {
    fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 particles, got {}",
                self.n_particles
            )));
        }
        if !(self.ess_threshold > 0.0 && self.ess_threshold <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ESS threshold must lie in (0, 1], got {}",
                self.ess_threshold
            )));
        }
        if self.k_lag == 0 {
            return Err(Error::InvalidParameter("k_lag must be at least 1".into()));
        }
        if !(self.clip_pad > 0.0) {
            return Err(Error::InvalidParameter("clip_pad must be positive".into()));
        }
        Ok(())
    }
}

/// Diagnostics of one filter step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    /// Sum of the unnormalized weights, i.e. the predictive likelihood of the
    /// tick under the particle approximation.
    pub predictive_likelihood: f64,
    /// ESS after normalization and before any resampling.
    pub ess: f64,
    pub resampled: bool,
    pub diverged: bool,
}

/// `N` weighted particles, each carrying its last `k_lag + 1` latent
/// log-prices.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    dim: usize,
    depth: usize,
    n: usize,
    /// Particle-major: particle `i`, ring slot `r`, coordinate `s` lives at
    /// `(i * depth + r) * dim + s`.
    states: Vec<f64>,
    head: usize,
    filled: usize,
    weights: Vec<f64>,
    step: u64,
    resample_count: u64,
    config: FilterConfig,
}

impl ParticleCloud {
    /// Particles with `exp[x]` i.i.d. uniform on the (bounded) price box.
    pub fn init(first_box: &SupportBox, config: FilterConfig) -> Result<Self> {
        config.validate()?;
        if !first_box.is_bounded() {
            return Err(Error::UnboundedBox);
        }
        let dim = first_box.dim();
        let n = config.n_particles;
        let mut cloud = ParticleCloud::empty(dim, n, config);
        let mut rng = stream_rng(cloud.config.seed, Stream::Init, 0);
        for i in 0..n {
            let base = cloud.slot_offset(i, cloud.head);
            for s in 0..dim {
                cloud.states[base + s] = uniform_log_price(first_box, s, &mut rng);
            }
        }
        Ok(cloud)
    }

    /// Builds a cloud from explicit histories. `histories[i][0]` is the
    /// current state of particle `i`, `histories[i][l]` the state `l` steps
    /// back. Weights are normalized.
    pub fn from_histories(
        histories: &[Vec<Vec<f64>>],
        weights: &[f64],
        config: FilterConfig,
    ) -> Result<Self> {
        config.validate()?;
        let n = histories.len();
        if weights.len() != n || n < 2 {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: weights.len(),
            });
        }
        let filled = histories[0].len();
        let dim = histories[0].first().map_or(0, Vec::len);
        if filled == 0 || dim == 0 || filled > config.k_lag + 1 {
            return Err(Error::InvalidParameter("bad particle history shape".into()));
        }
        let mut cfg = config;
        cfg.n_particles = n;
        let mut cloud = ParticleCloud::empty(dim, n, cfg);
        let depth = cloud.depth;
        for (i, h) in histories.iter().enumerate() {
            if h.len() != filled || h.iter().any(|x| x.len() != dim) {
                return Err(Error::InvalidParameter("ragged particle histories".into()));
            }
            for (lag, x) in h.iter().enumerate() {
                let slot = (depth + filled - 1 - lag) % depth;
                let base = cloud.slot_offset(i, slot);
                cloud.states[base..base + dim].copy_from_slice(x);
            }
        }
        cloud.head = filled - 1;
        cloud.filled = filled;
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidParameter(
                "weights must be non-negative with positive sum".into(),
            ));
        }
        cloud.weights = weights.iter().map(|w| w / total).collect();
        Ok(cloud)
    }

    fn empty(dim: usize, n: usize, config: FilterConfig) -> Self {
        let depth = config.k_lag + 1;
        ParticleCloud {
            dim,
            depth,
            n,
            states: vec![0.0; n * depth * dim],
            head: 0,
            filled: 1,
            weights: vec![1.0 / n as f64; n],
            step: 0,
            resample_count: 0,
            config,
        }
    }

    fn slot_offset(&self, i: usize, slot: usize) -> usize {
        (i * self.depth + slot) * self.dim
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of states stored per particle (at most `k_lag + 1`).
    pub fn history_len(&self) -> usize {
        self.filled
    }

    pub fn resample_count(&self) -> u64 {
        self.resample_count
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Current latent log-price of particle `i`.
    pub fn current(&self, i: usize) -> &[f64] {
        let base = self.slot_offset(i, self.head);
        &self.states[base..base + self.dim]
    }

    /// State of particle `i` from `lag` steps back.
    pub fn lagged(&self, i: usize, lag: usize) -> Result<&[f64]> {
        if lag >= self.filled {
            return Err(Error::InsufficientHistory {
                need: lag + 1,
                have: self.filled,
            });
        }
        let slot = (self.head + self.depth - lag) % self.depth;
        let base = self.slot_offset(i, slot);
        Ok(&self.states[base..base + self.dim])
    }

    pub fn ess(&self) -> f64 {
        ess(&self.weights)
    }

    /// Weighted mean of the efficient prices `exp[x]`.
    pub fn weighted_mean_price(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.n {
            for (s, x) in self.current(i).iter().enumerate() {
                m[s] += self.weights[i] * x.exp();
            }
        }
        m
    }

    /// Propagate, reweight, normalize and conditionally resample.
    ///
    /// `sigma_pf` is the per-transaction covariance in transaction time and
    /// the per-second covariance in clock time.
    pub fn step(
        &mut self,
        sigma_pf: &DMatrix<f64>,
        obs_box: &SupportBox,
        dt: f64,
        model: StateModel,
    ) -> Result<StepOutput> {
        if obs_box.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: obs_box.dim(),
            });
        }
        let cov = transition_variance(model, sigma_pf, dt)?;
        let kernel = RectKernel::new(&cov, &obs_box.log_lower(), &obs_box.log_upper())?;
        self.step += 1;
        let key = derive_key(self.config.seed, Stream::Propagate, self.step);
        let dim = self.dim;

        let proposals: Vec<Result<(f64, Vec<f64>)>> = {
            let this = &*self;
            let kernel = &kernel;
            let lower = obs_box.log_lower();
            let upper = obs_box.log_upper();
            self.config.exec.map(self.n, move |i| {
                let mean = this.current(i);
                let mut rng = item_rng(&key, i as u64);
                let p = kernel.prob(mean);
                let mut x = vec![0.0; dim];
                match kernel.sample_into(mean, &mut rng, &mut x) {
                    Ok(()) => Ok((p, x)),
                    Err(Error::ZeroMass) => {
                        // Weight is zero anyway; park the particle on the box.
                        for s in 0..dim {
                            x[s] = mean[s].clamp(lower[s], upper[s]);
                        }
                        Ok((0.0, x))
                    }
                    Err(e) => Err(e),
                }
            })
        };

        let anchor = self.weighted_mean_price();
        self.head = (self.head + 1) % self.depth;
        self.filled = (self.filled + 1).min(self.depth);
        let mut total = 0.0;
        for (i, prop) in proposals.into_iter().enumerate() {
            let (p, x) = prop?;
            let base = self.slot_offset(i, self.head);
            self.states[base..base + dim].copy_from_slice(&x);
            self.weights[i] *= p;
            total += self.weights[i];
        }

        if !(total >= DIVERGENCE_FLOOR) || !total.is_finite() {
            self.recover(obs_box, &anchor)?;
            return Ok(StepOutput {
                predictive_likelihood: if total.is_finite() {
                    total.max(0.0)
                } else {
                    0.0
                },
                ess: self.n as f64,
                resampled: false,
                diverged: true,
            });
        }

        for w in &mut self.weights {
            *w /= total;
        }
        let ess_value = self.ess();
        let resampled = ess_value < self.config.ess_threshold * self.n as f64;
        if resampled {
            let mut rng = stream_rng(self.config.seed, Stream::Resample, self.step);
            self.resample_with(&mut rng);
        }
        Ok(StepOutput {
            predictive_likelihood: total,
            ess: ess_value,
            resampled,
            diverged: false,
        })
    }

    /// Replace current positions by uniform draws on the (clipped) box and
    /// reset the weights.
    fn recover(&mut self, obs_box: &SupportBox, anchor: &[f64]) -> Result<()> {
        let bounded = if obs_box.is_bounded() {
            obs_box.clone()
        } else {
            obs_box.clipped(anchor, self.config.clip_pad)?
        };
        let mut rng = stream_rng(self.config.seed, Stream::Recover, self.step);
        for i in 0..self.n {
            let base = self.slot_offset(i, self.head);
            for s in 0..self.dim {
                self.states[base + s] = uniform_log_price(&bounded, s, &mut rng);
            }
        }
        self.weights.fill(1.0 / self.n as f64);
        Ok(())
    }

    /// Residual resampling with an explicit generator; histories travel with
    /// their particles and all weights become `1/N`.
    pub fn resample_with<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let ancestors = residual_resample(&self.weights, rng);
        let block = self.depth * self.dim;
        let mut states = vec![0.0; self.states.len()];
        for (i, &a) in ancestors.iter().enumerate() {
            states[i * block..(i + 1) * block]
                .copy_from_slice(&self.states[a * block..(a + 1) * block]);
        }
        self.states = states;
        self.weights.fill(1.0 / self.n as f64);
        self.resample_count += 1;
    }
}

fn uniform_log_price<R: Rng + ?Sized>(b: &SupportBox, s: usize, rng: &mut R) -> f64 {
    let iv = b.interval(s);
    let p = iv.lower + (iv.upper - iv.lower) * rng.random::<f64>();
    p.ln()
}

/// Effective sample size `1 / Σ ω²` of normalized weights.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Ancestor indices under residual resampling: `⌊N ωᵢ⌋` deterministic
/// copies of each particle, the remaining slots drawn multinomially from the
/// residual weights. Indices are returned in ascending order.
pub fn residual_resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| (n as f64 * w).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    // Guard against weights summing to slightly more than one.
    let remaining = n.saturating_sub(assigned);
    if remaining > 0 {
        let residual: Vec<f64> = weights
            .iter()
            .zip(&counts)
            .map(|(w, &c)| (n as f64 * w - c as f64).max(0.0))
            .collect();
        let dist = WeightedIndex::new(&residual)
            .or_else(|_| WeightedIndex::new(weights))
            .expect("weights are normalized");
        for _ in 0..remaining {
            counts[dist.sample(rng)] += 1;
        }
    }
    let mut out = Vec::with_capacity(n);
    for (i, &c) in counts.iter().enumerate() {
        out.extend(std::iter::repeat_n(i, c));
    }
    out.truncate(n);
    out
}
