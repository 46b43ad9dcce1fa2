//! End-to-end acceptance checks. Runs with its own harness and prints one
//! PASS/FAIL line per check; exits non-zero when any check fails.
//!
//! An optional positional argument keeps only the checks whose name
//! contains it, e.g. `cargo test --test acceptance -- latency`.

mod common;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tickvol::benchmark::{BenchPolicy, BenchState, OracleState};
use tickvol::exec::ExecPolicy;
use tickvol::ingest::despread_timestamps;
use tickvol::model::{NoiseModel, StateModel, TickObservation};
use tickvol::particle_filter::FilterConfig;
use tickvol::pipeline::{cv_select_lambda, run_all, EstimatorKind, Pipeline, PipelineConfig};
use tickvol::rng::{stream_rng, Stream};
use tickvol::sages::{calibrate_kappa, default_grid, sages_combine, KappaConfig, SagesState};
use tickvol::seq_em::{
    alt_clock_estimate, kernel_weight, smoothing_weight, StepPolicy, VolEstimatorState,
};
use tickvol::simulator::{
    apply_additive_noise, apply_noise, gen_path, return_acf, zero_return_fraction, ArrivalModel,
    PathSpec, SimNoise, VolCurve,
};
use tickvol::truncnorm::{sample_interval, RectKernel};

use common::{iqr, median, normal_mass, quantile, std_normal_mass};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

const TICK: f64 = 0.01;
const SIGMA2: f64 = 1e-8;

fn rounded_ticks(spec: &PathSpec, seed: u64, noise: SimNoise) -> (Vec<f64>, Vec<TickObservation>) {
    let p = gen_path(spec, seed).unwrap();
    let t = apply_noise(&p.times, &p.x, noise, seed).unwrap();
    (p.x, t)
}

fn filter(n: usize, seed: u64) -> FilterConfig {
    FilterConfig {
        n_particles: n,
        seed,
        exec: ExecPolicy::Sequential,
        ..FilterConfig::default()
    }
}

fn deterministic() -> NoiseModel {
    NoiseModel::SimpleDeterministic { tick: TICK }
}

/// Final estimates of one constant-volatility replication.
struct Replication {
    filter_sigma: f64,
    resample_rate: f64,
    bench_sigma: f64,
    oracle_sigma: f64,
}

const REPLICATION_SEEDS: u64 = 100;

fn replicate(seed: u64, n: usize, with_references: bool) -> Replication {
    let spec = PathSpec {
        t_len: 5000,
        vol: VolCurve::Constant(SIGMA2),
        ..PathSpec::default()
    };
    let (x, ticks) = rounded_ticks(&spec, seed, SimNoise::Deterministic { tick: TICK });
    let s2: f64 = stream_rng(seed, Stream::Experiment, 0)
        .random_range(0.00006f64.powi(2)..0.00014f64.powi(2));
    let mut cfg = PipelineConfig::univariate(
        deterministic(),
        EstimatorKind::Single(StepPolicy::Constant {
            gamma: 0.9,
            lambda0: 1.0,
        }),
        s2,
    );
    cfg.filter = filter(n, seed);
    let mut p = Pipeline::new(cfg).unwrap();
    for t in &ticks {
        p.push(t).unwrap();
    }
    let filter_sigma = p.estimate()[(0, 0)].sqrt();
    let resample_rate = p.resample_count() as f64 / (ticks.len() - 1) as f64;
    let (mut bench_sigma, mut oracle_sigma) = (f64::NAN, f64::NAN);
    if with_references {
        let mut b = BenchState::new(BenchPolicy::Constant).unwrap();
        for t in &ticks {
            b.push(t.price.ln()).unwrap();
        }
        bench_sigma = b.sigma().max(0.0).sqrt();
        let mut o = OracleState::new(0.9).unwrap();
        for v in &x {
            o.push(*v);
        }
        oracle_sigma = o.sigma().sqrt();
    }
    Replication {
        filter_sigma,
        resample_rate,
        bench_sigma,
        oracle_sigma,
    }
}

fn replications(n: usize, with_references: bool) -> Vec<Replication> {
    ExecPolicy::Parallel.map(REPLICATION_SEEDS as usize, |s| {
        replicate(1000 + s as u64, n, with_references)
    })
}

struct Ctx {
    base: Option<(Vec<Replication>, f64)>,
}

impl Ctx {
    fn base(&mut self) -> &(Vec<Replication>, f64) {
        self.base.get_or_insert_with(|| {
            let start = Instant::now();
            let r = replications(500, true);
            (r, start.elapsed().as_secs_f64())
        })
    }
}

fn constant_vol_replication(ctx: &mut Ctx) -> Outcome {
    let (runs, secs) = ctx.base();
    let ours: Vec<f64> = runs.iter().map(|r| r.filter_sigma).collect();
    let bench: Vec<f64> = runs.iter().map(|r| r.bench_sigma).collect();
    let oracle: Vec<f64> = runs.iter().map(|r| r.oracle_sigma).collect();
    let med = median(&ours);
    let (iq, iqb, iqo) = (iqr(&ours), iqr(&bench), iqr(&oracle));
    let pass =
        (0.9e-4..=1.1e-4).contains(&med) && iq < iqb && iqo < iq && iqo < iqb && *secs <= 300.0;
    outcome(
        pass,
        format!(
            "median sigma {med:.4e}; IQR filter {iq:.3e}, benchmark {iqb:.3e}, oracle {iqo:.3e}; {secs:.0} s"
        ),
    )
}

fn particle_count(ctx: &mut Ctx) -> Outcome {
    let (runs, _) = ctx.base();
    let s500: Vec<f64> = runs.iter().map(|r| r.filter_sigma).collect();
    let spread = iqr(&s500);
    let m500 = median(&s500);
    let m100 = median(
        &replications(100, false)
            .iter()
            .map(|r| r.filter_sigma)
            .collect::<Vec<_>>(),
    );
    let m2000 = median(
        &replications(2000, false)
            .iter()
            .map(|r| r.filter_sigma)
            .collect::<Vec<_>>(),
    );
    let bias = |m: f64| m - 1e-4;
    let change = (bias(m2000) - bias(m500)).abs();
    outcome(
        change < 0.25 * spread,
        format!(
            "median bias N=100 {:.3e}, N=500 {:.3e}, N=2000 {:.3e}; |change 500->2000| {change:.3e} vs 0.25 IQR {:.3e}",
            bias(m100),
            bias(m500),
            bias(m2000),
            0.25 * spread
        ),
    )
}

fn resampling_frequency(ctx: &mut Ctx) -> Outcome {
    let (runs, _) = ctx.base();
    let mean = runs.iter().map(|r| r.resample_rate).sum::<f64>() / runs.len() as f64;
    outcome(
        (1.0 / 30.0..=1.0 / 7.0).contains(&mean),
        format!("mean resampling rate {mean:.4} (one in {:.1})", 1.0 / mean),
    )
}

fn weight_quadrature(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for i in 0..1000 {
        let sd = 10f64.powf(rng.random_range(-5.5..-2.5));
        let mean = (50.0f64).ln() + rng.random_range(-0.01..0.01);
        let width = sd * 10f64.powf(rng.random_range(-2.0..2.0));
        let centre = mean + sd * rng.random_range(-8.0..8.0);
        let (mut lo, mut hi) = (centre - width / 2.0, centre + width / 2.0);
        match i % 5 {
            0 => lo = f64::NEG_INFINITY,
            1 => hi = f64::INFINITY,
            _ => {}
        }
        let cov = DMatrix::from_element(1, 1, sd * sd);
        let ours = RectKernel::new(&cov, &[lo], &[hi]).unwrap().prob(&[mean]);
        let exact = normal_mass(mean, sd, lo, hi);
        if exact < 1e-290 {
            continue;
        }
        cases += 1;
        worst = worst.max(((ours - exact) / exact).abs());
    }
    outcome(
        worst <= 1e-9 && cases >= 990,
        format!("{cases} cases, worst relative error {worst:.2e}"),
    )
}

fn random_breve(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1e-4..1e-4));
    &a * a.transpose()
}

fn running_mean_identity(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut st = VolEstimatorState::new(StepPolicy::Constant {
        gamma: 1.0,
        lambda0: 1.0,
    })
    .unwrap();
    let mut sum = DMatrix::zeros(2, 2);
    let mut comp = DMatrix::zeros(2, 2);
    let mut worst: f64 = 0.0;
    for k in 1..=10_000usize {
        let b = random_breve(&mut rng);
        // Kahan-summed batch mean.
        let y: DMatrix<f64> = &b - &comp;
        let t: DMatrix<f64> = &sum + &y;
        comp = (&t - &sum) - &y;
        sum = t;
        let run = st.update_constant(&b).unwrap();
        let batch = &sum / k as f64;
        let rel = (run - &batch).amax() / batch.amax();
        worst = worst.max(rel);
    }
    outcome(
        worst <= 1e-12,
        format!("worst relative deviation over 1e4 steps {worst:.2e}"),
    )
}

fn closed_form_identity(_: &mut Ctx) -> Outcome {
    let mut worst: f64 = 0.0;
    for &lambda in &[0.5, 0.01] {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let init = random_breve(&mut rng);
        let mut st =
            VolEstimatorState::with_initial(StepPolicy::Fixed { lambda }, init.clone()).unwrap();
        let mut seq = Vec::new();
        for j in 3..=1002usize {
            let b = random_breve(&mut rng);
            seq.push(b.clone());
            let run = st.update_tv(&b).unwrap().clone();
            let mut closed = &init * (1.0 - lambda).powi((j - 2) as i32);
            for (i, bi) in seq.iter().enumerate() {
                closed += bi * (lambda * (1.0 - lambda).powi((j - 3 - i) as i32));
            }
            worst = worst.max((&run - &closed).amax() / closed.amax());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("worst relative deviation {worst:.2e}"),
    )
}

fn kernel_equivalence(_: &mut Ctx) -> Outcome {
    let lambda: f64 = 0.01;
    // Equispaced stamps one second apart give an averaged duration of 1.
    let delta = 1.0;
    let mut worst: f64 = 0.0;
    for k in 0..=1000u32 {
        let diff = (smoothing_weight(lambda, k) - kernel_weight(lambda, k, delta)).abs();
        let bound =
            lambda * lambda * (k.max(1) as f64) * (1.0 - lambda).powi(k.saturating_sub(1) as i32);
        worst = worst.max(diff / bound);
    }
    outcome(
        worst <= 1.0,
        format!("max |difference| / (lambda^2 k (1-lambda)^(k-1)) = {worst:.3}"),
    )
}

fn benchmark_noise(_: &mut Ctx) -> Outcome {
    let target = 5e-9;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let spec = PathSpec {
            t_len: 50_000,
            vol: VolCurve::Constant(SIGMA2),
            ..PathSpec::default()
        };
        let path = gen_path(&spec, 80 + seed).unwrap();
        let y = apply_additive_noise(&path.x, 5e-5, 80 + seed).unwrap();
        let mut b = BenchState::new(BenchPolicy::Constant).unwrap();
        for v in &y {
            b.push(*v).unwrap();
        }
        let two_eta2 = 2.0 * b.eta2();
        worst = worst.max(((two_eta2 - target) / target).abs());
        parts.push(format!("{two_eta2:.3e}"));
    }
    outcome(
        worst <= 0.10,
        format!(
            "2 eta^2 over 5 seeds [{}], worst relative error {worst:.3}",
            parts.join(", ")
        ),
    )
}

fn clock_consistency(_: &mut Ctx) -> Outcome {
    // Variance 2e-8 per second at two trades per second: 1e-8 per
    // transaction on average.
    let spec = PathSpec {
        t_len: 20_000,
        vol: VolCurve::Constant(2.0 * SIGMA2),
        arrivals: ArrivalModel::Poisson(2.0),
        mode: StateModel::ClockTime,
        ..PathSpec::default()
    };
    let (_, ticks) = rounded_ticks(&spec, 90, SimNoise::Deterministic { tick: TICK });
    let policy = EstimatorKind::Single(StepPolicy::Constant {
        gamma: 0.9,
        lambda0: 1.0,
    });
    let mut txn = PipelineConfig::univariate(deterministic(), policy.clone(), SIGMA2);
    txn.filter = filter(500, 90);
    txn.duration_lambda = 0.01;
    let mut clock = PipelineConfig {
        state_model: StateModel::ClockTime,
        initial_sigma: DMatrix::from_element(1, 1, 2.0 * SIGMA2),
        ..txn.clone()
    };
    clock.filter.seed = 91;
    let half = ticks.len() / 2;
    let alt: Vec<f64> = run_all(txn, &ticks)
        .unwrap()
        .iter()
        .filter(|u| u.j > half)
        .map(|u| alt_clock_estimate(&u.sigma_hat, u.delta_bar.unwrap()).unwrap()[(0, 0)])
        .collect();
    let direct: Vec<f64> = run_all(clock, &ticks)
        .unwrap()
        .iter()
        .filter(|u| u.j > half)
        .map(|u| u.sigma_hat[(0, 0)])
        .collect();
    let a = alt.iter().sum::<f64>() / alt.len() as f64;
    let d = direct.iter().sum::<f64>() / direct.len() as f64;
    let target = 2.0 * SIGMA2;
    let (ea, ed) = ((a - target).abs() / target, (d - a).abs() / a);
    outcome(
        ea <= 0.15 && ed <= 0.25,
        format!(
            "alt clock {a:.3e} ({:.1}% off 2e-8/s); direct clock {d:.3e} ({:.1}% off alt)",
            100.0 * ea,
            100.0 * ed
        ),
    )
}

fn stylized_facts(_: &mut Ctx) -> Outcome {
    let t_len = 10_000;
    let bound = -3.0 / (t_len as f64).sqrt();
    let hits: Vec<(bool, bool)> = ExecPolicy::Parallel.map(100, |s| {
        let seed = 500 + s as u64;
        let spec = PathSpec {
            t_len,
            vol: VolCurve::Constant(SIGMA2),
            ..PathSpec::default()
        };
        let path = gen_path(&spec, seed).unwrap();
        let prices = |noise| -> Vec<f64> {
            apply_noise(&path.times, &path.x, noise, seed)
                .unwrap()
                .iter()
                .map(|t| t.price)
                .collect()
        };
        let det = prices(SimNoise::Deterministic { tick: TICK });
        let sto = prices(SimNoise::Stochastic { tick: TICK });
        let acf1 = return_acf(&det, 1).unwrap()[0];
        let zero = zero_return_fraction(&det).unwrap() > zero_return_fraction(&sto).unwrap();
        (acf1 < bound, zero)
    });
    let both = hits.iter().filter(|(a, b)| *a && *b).count();
    let acf = hits.iter().filter(|h| h.0).count();
    let zero = hits.iter().filter(|h| h.1).count();
    outcome(
        both >= 95,
        format!(
            "{both}/100 seeds show both (lag-1 ACF below bound: {acf}, more zero returns: {zero})"
        ),
    )
}

fn truncated_sampler_law(_: &mut Ctx) -> Outcome {
    let cases: [(&str, f64, f64); 5] = [
        ("centered", -1.0, 1.0),
        ("one-sided at 3 sd", 3.0, 4.0),
        ("far tail", 8.0, 8.5),
        ("half-infinite above", 3.0, f64::INFINITY),
        ("half-infinite below", f64::NEG_INFINITY, -0.5),
    ];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, (name, a, b)) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11 + i as u64);
        let (mean, sd) = (3.9, 2e-4);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                (sample_interval(mean, sd, mean + a * sd, mean + b * sd, &mut rng).unwrap() - mean)
                    / sd
            })
            .collect();
        let total = std_normal_mass(*a, *b);
        let d = common::ks_distance(draws, *a, total, std_normal_mass);
        worst = worst.max(d);
        parts.push(format!("{name} {d:.4}"));
    }
    outcome(worst < 0.01, format!("KS distances: {}", parts.join(", ")))
}

fn aggregation(_: &mut Ctx) -> Outcome {
    // Identical sub-estimates must pass through unchanged.
    let grid = default_grid();
    let kappa = vec![1.0; grid.len() - 1];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut exact = true;
    for _ in 0..1000 {
        let v: f64 = 10f64.powf(rng.random_range(-10.0..-6.0));
        let (agg, _) = sages_combine(&vec![v; grid.len()], &grid, &kappa).unwrap();
        exact &= agg == v;
        let mut st = SagesState::with_initial(grid.clone(), kappa.clone(), v).unwrap();
        for _ in 0..5 {
            exact &= st.update(v).unwrap() == v;
        }
    }

    let kcfg = KappaConfig {
        filter: FilterConfig {
            seed: 12,
            ..KappaConfig::default().filter
        },
        ..KappaConfig::default()
    };
    let kappa = calibrate_kappa(&kcfg).unwrap();
    let t_len = 4000;
    let jump = (t_len / 2) as f64;
    let vol = VolCurve::PiecewiseLinear(vec![(0.0, SIGMA2), (jump, SIGMA2), (jump, 9.0 * SIGMA2)]);
    // The closed-loop criterion favours slow steps after an upward jump, so
    // the first seeds are also scored against the best grid step in hindsight.
    let results: Vec<(f64, f64, f64, Option<f64>)> = ExecPolicy::Parallel.map(50, |s| {
        let seed = 700 + s as u64;
        let spec = PathSpec {
            t_len,
            vol: vol.clone(),
            ..PathSpec::default()
        };
        let (_, ticks) = rounded_ticks(&spec, seed, SimNoise::Deterministic { tick: TICK });
        let mut base = PipelineConfig::univariate(
            deterministic(),
            EstimatorKind::Single(StepPolicy::default()),
            SIGMA2,
        );
        base.filter = filter(100, seed);
        let lambda = cv_select_lambda(&ticks, &grid, &base).unwrap().best();
        let mse = |estimator: EstimatorKind| {
            let cfg = PipelineConfig {
                estimator,
                ..base.clone()
            };
            let ups = run_all(cfg, &ticks).unwrap();
            ups.iter()
                .map(|u| (u.sigma_hat[(0, 0)] - vol.eval(u.j as f64)).powi(2))
                .sum::<f64>()
                / ups.len() as f64
        };
        let single = mse(EstimatorKind::Single(StepPolicy::Fixed { lambda }));
        let agg = mse(EstimatorKind::Sages {
            grid: grid.clone(),
            kappa: kappa.clone(),
        });
        let hindsight = (s < 10).then(|| {
            grid.iter()
                .map(|&l| mse(EstimatorKind::Single(StepPolicy::Fixed { lambda: l })))
                .fold(f64::INFINITY, f64::min)
        });
        (agg, single, lambda, hindsight)
    });
    let wins = results.iter().filter(|r| r.0 <= r.1).count();
    let lambdas: Vec<f64> = results.iter().map(|r| r.2).collect();
    let (ma, ms) = (
        median(&results.iter().map(|r| r.0).collect::<Vec<_>>()),
        median(&results.iter().map(|r| r.1).collect::<Vec<_>>()),
    );
    let ratios: Vec<f64> = results
        .iter()
        .filter_map(|r| r.3.map(|h| r.0 / h))
        .collect();
    outcome(
        exact && wins >= 35,
        format!(
            "identical inputs exact: {exact}; aggregate MSE <= single-lambda MSE in {wins}/50 seeds (median MSE {ma:.3e} vs {ms:.3e}; CV lambda median {:.2e}, range {:.1e}..{:.1e}); against the best grid lambda in hindsight the aggregate wins {}/{} (median MSE ratio {:.2})",
            median(&lambdas),
            quantile(&lambdas, 0.0),
            quantile(&lambdas, 1.0),
            ratios.iter().filter(|r| **r <= 1.0).count(),
            ratios.len(),
            median(&ratios)
        ),
    )
}

fn timestamp_despread(_: &mut Ctx) -> Outcome {
    let ex = despread_timestamps(&[10.0, 10.0, 10.0, 12.0]).unwrap();
    let want = [10.0, 10.0 + 2.0 / 3.0, 10.0 + 4.0 / 3.0, 12.0];
    let example = ex.iter().zip(want).all(|(a, b)| (a - b).abs() <= 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut props = true;
    for _ in 0..2000 {
        let n = rng.random_range(1..200);
        let mut t: Vec<f64> = (0..n)
            .map(|_| 34_200.0 + rng.random_range(0..60) as f64)
            .collect();
        t.sort_by(f64::total_cmp);
        let out = despread_timestamps(&t).unwrap();
        props &= out.len() == t.len() && out.windows(2).all(|w| w[1] > w[0]);
        for i in 0..t.len() {
            if i == 0 || t[i] != t[i - 1] {
                props &= out[i] == t[i];
            }
        }
    }
    outcome(example && props, format!("example exact: {example}; strictly increasing and run starts kept on 2000 random streams: {props}"))
}

fn update_latency(_: &mut Ctx) -> Outcome {
    let spec = PathSpec {
        t_len: 10_001,
        vol: VolCurve::Constant(SIGMA2),
        ..PathSpec::default()
    };
    let (_, ticks) = rounded_ticks(&spec, 14, SimNoise::Deterministic { tick: TICK });
    let mut cfg = PipelineConfig::univariate(
        deterministic(),
        EstimatorKind::Single(StepPolicy::Fixed { lambda: 0.01 }),
        SIGMA2,
    );
    cfg.filter = filter(500, 14);
    let mut p = Pipeline::new(cfg).unwrap();
    p.push(&ticks[0]).unwrap();
    let mut times = Vec::with_capacity(10_000);
    for t in &ticks[1..] {
        let start = Instant::now();
        p.push(t).unwrap();
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let med = median(&times);
    outcome(
        med <= 10.0,
        format!(
            "median update {med:.3} ms over {} updates (N=500, one thread)",
            times.len()
        ),
    )
}

type Check = fn(&mut Ctx) -> Outcome;

fn main() {
    let checks: [(&str, Check); 14] = [
        ("constant_vol_replication", constant_vol_replication),
        ("particle_count_sufficiency", particle_count),
        ("resampling_frequency", resampling_frequency),
        ("weight_quadrature", weight_quadrature),
        ("running_mean_identity", running_mean_identity),
        ("closed_form_identity", closed_form_identity),
        ("kernel_equivalence", kernel_equivalence),
        ("benchmark_noise_recovery", benchmark_noise),
        ("clock_transaction_consistency", clock_consistency),
        ("stylized_facts", stylized_facts),
        ("truncated_sampler_law", truncated_sampler_law),
        ("aggregation", aggregation),
        ("timestamp_despread", timestamp_despread),
        ("update_latency", update_latency),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut ctx = Ctx { base: None };
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = check(&mut ctx);
        ran += 1;
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {:2} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} checks passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
