//! Small robust-statistics toolkit for the walk experiments.

use alloc::vec::Vec;

use crate::math;

/// CDF of `N(0, var)`.
pub fn normal_cdf(x: f64, var: f64) -> f64 {
    0.5 * math::erfc(-x / math::sqrt(2.0 * var))
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// One-sample Kolmogorov-Smirnov distance against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let v = sorted(xs);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Linear-interpolated quantile (type 7) of an unsorted sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    quantile_sorted(&sorted(xs), q)
}

pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = math::floor(h) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    crate::sum::pairwise_sum(xs) / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two points.
pub fn sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    math::sqrt(crate::sum::pairwise_sum(&dev) / (xs.len() - 1) as f64)
}

/// `|count - n p| / sqrt(n p (1-p))`, the multinomial z-score of one cell.
pub fn cell_z(count: u64, n: u64, p: f64) -> f64 {
    let n = n as f64;
    let var = n * p * (1.0 - p);
    let dev = (count as f64 - n * p).abs();
    if var == 0.0 {
        return if dev == 0.0 { 0.0 } else { f64::INFINITY };
    }
    dev / math::sqrt(var)
}
