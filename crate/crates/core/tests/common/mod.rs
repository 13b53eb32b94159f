#![allow(dead_code)]

use critlat_core::environment::{Distribution, EnvironmentSpec};
use critlat_core::grid::{BoxDomain, Grid};
use critlat_core::kernel::{ball_tail, kappa_eps, kernel_j, LatticeScale};
use critlat_core::operator::TruncationPolicy;
use nalgebra::DMatrix;

pub fn two_point(seed: u64, d: usize) -> EnvironmentSpec {
    EnvironmentSpec::new(seed, d, 0.5, Distribution::TwoPoint { low: 0.5, high: 2.0, prob_low: 0.5 }).unwrap()
}

pub fn uniform(seed: u64, d: usize) -> EnvironmentSpec {
    EnvironmentSpec::new(seed, d, 0.5, Distribution::Uniform { low: 0.5, high: 2.0 }).unwrap()
}

pub fn cube_grid(d: usize, eps: f64) -> Grid {
    Grid::discretize(&BoxDomain::unit_cube(d).unwrap(), LatticeScale::new(eps).unwrap()).unwrap()
}

/// `-L` assembled entry by entry from the generator's definition.
pub fn dense_minus_l(env: &EnvironmentSpec, grid: &Grid, policy: &TruncationPolicy) -> DMatrix<f64> {
    let n = grid.len();
    let d = grid.d();
    let eps = grid.eps;
    let spec = grid.spec();
    let s = 1.0 / (kappa_eps(grid.scale(), spec) * eps * eps);
    let r = policy.r_kill / eps;
    let rl = r.floor() as i64;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let x = grid.site(i);
        let mut tot = 0.0;
        let range = |k: usize| if k < d { -rl..=rl } else { 0..=0 };
        for a in range(0) {
            for b in range(1) {
                for c in range(2) {
                    let w = [a, b, c];
                    let r2 = (a * a + b * b + c * c) as f64;
                    if r2 == 0.0 || r2 > r * r * (1.0 + 1e-12) {
                        continue;
                    }
                    let y = [x[0] + a, x[1] + b, x[2] + c];
                    let cxy = env.value(&x, &y) * kernel_j(&w[..d], spec);
                    tot += cxy;
                    if let Some(j) = grid.index_of(&y) {
                        m[(i, j)] -= s * cxy;
                    }
                }
            }
        }
        m[(i, i)] += s * (tot + env.mean() * ball_tail(spec, r));
    }
    m
}

/// `L l_p` at each site from the definition.
pub fn dense_rhs(env: &EnvironmentSpec, grid: &Grid, policy: &TruncationPolicy, p: &[f64]) -> Vec<f64> {
    let d = grid.d();
    let eps = grid.eps;
    let spec = grid.spec();
    let s = 1.0 / (kappa_eps(grid.scale(), spec) * eps * eps);
    let r = policy.r_kill / eps;
    let rl = r.floor() as i64;
    (0..grid.len())
        .map(|i| {
            let x = grid.site(i);
            let mut acc = 0.0;
            for a in -rl..=rl {
                let bl = if d > 1 { rl } else { 0 };
                for b in -bl..=bl {
                    let w = [a, b, 0];
                    let r2 = (a * a + b * b) as f64;
                    if r2 == 0.0 || r2 > r * r * (1.0 + 1e-12) {
                        continue;
                    }
                    let y = [x[0] + a, x[1] + b, 0];
                    let pw: f64 = (0..d).map(|k| p[k] * w[k] as f64).sum();
                    acc += env.value(&x, &y) * kernel_j(&w[..d], spec) * eps * pw;
                }
            }
            s * acc
        })
        .collect()
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

pub fn lcg_values(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}
