//! Independent numerical oracles for the integration tests.

#![allow(dead_code)]

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let s = f(c - h * XGK[i]) + f(c + h * XGK[i]);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, (k - g).abs() * h)
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel: f64, depth: u32) -> f64 {
    let (k, err) = gk15(f, a, b);
    if err <= rel * k.abs() || err < 1e-320 || depth == 0 {
        return k;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, rel, depth - 1) + adapt(f, m, b, rel, depth - 1)
}

/// Adaptive Gauss–Kronrod integral with per-panel relative tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel: f64) -> f64 {
    adapt(&f, a, b, rel, 60)
}

fn std_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `P(a < Z < b)` for a standard normal by quadrature; infinite ends are cut
/// 40 units past the nearest finite point or the origin.
pub fn std_normal_mass(a: f64, b: f64) -> f64 {
    if a >= b || a.is_nan() || b.is_nan() {
        return 0.0;
    }
    let lo = if a.is_finite() { a } else { b.min(0.0) - 40.0 };
    let hi = if b.is_finite() { b } else { a.max(0.0) + 40.0 };
    // Split at the origin and at a few scale points so every panel starts
    // with a resolved integrand.
    let mut cuts = vec![lo];
    for c in [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0] {
        if c > lo && c < hi {
            cuts.push(c);
        }
    }
    cuts.push(hi);
    cuts.windows(2)
        .map(|w| integrate(std_pdf, w[0], w[1], 1e-14))
        .sum()
}

/// `P(lo < X < hi)` for `X ~ N(mean, sd²)`.
pub fn normal_mass(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    std_normal_mass((lo - mean) / sd, (hi - mean) / sd)
}

/// Kolmogorov–Smirnov distance of a sample against a CDF that is evaluated
/// incrementally over the sorted sample: `segment(x0, x1)` is the mass
/// between consecutive points, `total` the mass of the whole support.
pub fn ks_distance<F: Fn(f64, f64) -> f64>(
    mut xs: Vec<f64>,
    start: f64,
    total: f64,
    segment: F,
) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut cdf = 0.0;
    let mut prev = start;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        cdf += segment(prev, x);
        prev = x;
        let f = (cdf / total).clamp(0.0, 1.0);
        d = d
            .max((f - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - f).abs());
    }
    d
}

pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Linear-interpolation sample quantile.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < s.len() {
        s[i] + frac * (s[i + 1] - s[i])
    } else {
        s[i]
    }
}

pub fn iqr(v: &[f64]) -> f64 {
    quantile(v, 0.75) - quantile(v, 0.25)
}
