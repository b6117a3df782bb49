#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use tmc::opinion::Opinion;

/// Uniform point on the (K+1)-simplex, returned as an opinion with u > 0.
pub fn random_opinion(k: usize, rng: &mut impl Rng) -> Opinion {
    let draws: Vec<f64> = (0..=k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    let u = (draws[k] / total).max(1e-6);
    let scale = (1.0 - u) / draws[..k].iter().sum::<f64>();
    Opinion::new(draws[..k].iter().map(|d| d * scale).collect(), u).unwrap()
}

pub fn random_evidence(k: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(lo..hi)).collect()
}

/// Mixed absolute/relative closeness: `|a - b| <= tol * max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    // Split first so that narrow features are not missed by the initial rule.
    let pieces = 16;
    let width = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * width, a + (i + 1) as f64 * width);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson_step(f, lo, hi, fa, fm, fb, whole, eps / pieces as f64, 48)
        })
        .sum()
}

/// Expected `-ln p_y` under `Beta(a, b)` where `a` is the concentration of
/// the true class, computed purely by quadrature.
pub fn ace_by_quadrature(a: f64, b: f64) -> f64 {
    // Both integrands are divided by the density's peak so the tolerance is
    // effectively relative.
    let mode = if a + b > 2.0 { (a - 1.0) / (a + b - 2.0) } else { 0.5 };
    let log_kernel = |p: f64, q: f64| {
        let lp = if a == 1.0 { 0.0 } else { (a - 1.0) * p.ln() };
        let lq = if b == 1.0 { 0.0 } else { (b - 1.0) * q.ln() };
        lp + lq
    };
    let peak = log_kernel(mode, 1.0 - mode);
    let z = integrate(&|p: f64| (log_kernel(p, 1.0 - p) - peak).exp(), 0.0, 1.0, 1e-13);
    // Numerator with p = exp(-t) to remove the logarithmic endpoint.
    let upper = 80.0 / a;
    let num = integrate(
        &|t: f64| {
            if t == 0.0 {
                return 0.0;
            }
            let p = (-t).exp();
            t * p * (log_kernel(p, -(-t).exp_m1()) - peak).exp()
        },
        0.0,
        upper,
        1e-13,
    );
    num / z
}

/// Lanczos approximation (g = 7, n = 9), independent of the library's
/// asymptotic-series implementation.
pub fn lanczos_ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - lanczos_ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn sample_dirichlet(alpha: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).unwrap().sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// Monte-Carlo estimate of KL(Dir(alpha) || Dir(1)) and its standard error.
pub fn kl_monte_carlo(alpha: &[f64], samples: usize, rng: &mut impl Rng) -> (f64, f64) {
    let k = alpha.len() as f64;
    let s: f64 = alpha.iter().sum();
    let log_norm = lanczos_ln_gamma(s) - alpha.iter().map(|&a| lanczos_ln_gamma(a)).sum::<f64>();
    let log_uniform = lanczos_ln_gamma(k);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let p = sample_dirichlet(alpha, rng);
        let log_pdf = log_norm
            + alpha
                .iter()
                .zip(&p)
                .map(|(a, pi)| (a - 1.0) * pi.max(f64::MIN_POSITIVE).ln())
                .sum::<f64>();
        let term = log_pdf - log_uniform;
        sum += term;
        sum_sq += term * term;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    up[i] += h;
    down[i] -= h;
    (f(&up) - f(&down)) / (2.0 * h)
}
