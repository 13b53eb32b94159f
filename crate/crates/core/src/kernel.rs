//! The critical jump kernel and the finite lattice sums built from it.
//!
//! Lattice vectors are integer points `w`; the physical displacement at spacing
//! `eps` is `z = eps * w`. Radial sums are enumerated over one symmetry sector
//! (`w_1 >= w_2 >= ... >= 0`) and weighted by the orbit size.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::sum::Neumaier;
use crate::{Error, Point, Result, MAX_D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    d: usize,
}

impl KernelSpec {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 || d > MAX_D {
            return Err(Error::InvalidDimension(d));
        }
        Ok(Self { d })
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    /// Kernel exponent `d + 2`.
    #[inline]
    pub fn exponent(&self) -> f64 {
        (self.d + 2) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeScale {
    eps: f64,
}

impl LatticeScale {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidScale(eps));
        }
        Ok(Self { eps })
    }

    #[inline]
    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `|ln eps|`.
    pub fn abs_ln(&self) -> f64 {
        -math::ln(self.eps)
    }
}

#[inline]
pub fn norm2(w: &Point) -> i64 {
    w[0] * w[0] + w[1] * w[1] + w[2] * w[2]
}

#[inline]
pub fn norm_inf(w: &Point) -> i64 {
    w[0].abs().max(w[1].abs()).max(w[2].abs())
}

#[inline]
pub fn norm1(w: &Point) -> i64 {
    w[0].abs() + w[1].abs() + w[2].abs()
}

/// `J(w) = |w|^{-(d+2)}` on the unit lattice, `J(0) = 0`.
pub fn kernel_j(z: &[i64], spec: KernelSpec) -> f64 {
    let r2: i64 = z.iter().take(spec.d).map(|c| c * c).sum();
    if r2 == 0 {
        return 0.0;
    }
    math::inv_pow_from_sq(r2 as f64, spec.exponent())
}

/// Kernel at a physical displacement `eps * w`: `eps^{-(d+2)} |w|^{-(d+2)}`.
pub fn kernel_j_scaled(w: &[i64], scale: LatticeScale, spec: KernelSpec) -> f64 {
    kernel_j(w, spec) * math::powi(scale.eps, -((spec.d + 2) as i32))
}

/// Largest integer `m` with `m <= r^2`, padded by a relative `1e-12` so that
/// radii landing on a lattice shell keep that shell.
pub fn ball_limit(r: f64) -> i64 {
    math::floor(r * r * (1.0 + 1e-12)) as i64
}

/// `pi^{d/2} / Gamma(d/2 + 1)`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let pi = core::f64::consts::PI;
    // Gamma at half-integers by recursion from Gamma(1) = 1, Gamma(1/2) = sqrt(pi)
    let mut x = d as f64 / 2.0 + 1.0;
    let mut g = 1.0;
    while x > 1.25 {
        x -= 1.0;
        g *= x;
    }
    if (x - 0.5).abs() < 1e-12 {
        g *= math::sqrt(pi);
    }
    math::powf(pi, d as f64 / 2.0) / g
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Orbit size of a sector representative `w_1 >= ... >= w_d >= 0`.
fn orbit(w: &[i64]) -> f64 {
    let nz = w.iter().filter(|&&c| c != 0).count();
    let mut perms = factorial(w.len());
    let mut i = 0;
    while i < w.len() {
        let mut j = i;
        while j < w.len() && w[j] == w[i] {
            j += 1;
        }
        perms /= factorial(j - i);
        i = j;
    }
    perms * (1u64 << nz) as f64
}

/// Calls `f(|w|^2, orbit)` for every sector representative with `w_1` in
/// `lo..=hi` and `|w|^2` in `r2_min..=r2_max`. Other coordinates are bounded by
/// `w_1`, so the range in `w_1` is a range in `|w|_inf`.
pub fn for_each_sector<F: FnMut(i64, f64)>(
    d: usize,
    lo: i64,
    hi: i64,
    r2_min: i64,
    r2_max: i64,
    mut f: F,
) {
    let lo = lo.max(1);
    match d {
        1 => {
            for a in lo..=hi {
                let r2 = a * a;
                if r2 > r2_max {
                    break;
                }
                if r2 >= r2_min {
                    f(r2, 2.0);
                }
            }
        }
        2 => {
            for a in lo..=hi {
                if a * a > r2_max {
                    break;
                }
                for b in 0..=a {
                    let r2 = a * a + b * b;
                    if r2 > r2_max {
                        break;
                    }
                    if r2 >= r2_min {
                        f(r2, if b == 0 || b == a { 4.0 } else { 8.0 });
                    }
                }
            }
        }
        3 => {
            for a in lo..=hi {
                if a * a > r2_max {
                    break;
                }
                for b in 0..=a {
                    if a * a + b * b > r2_max {
                        break;
                    }
                    for c in 0..=b {
                        let r2 = a * a + b * b + c * c;
                        if r2 > r2_max {
                            break;
                        }
                        if r2 >= r2_min {
                            f(r2, orbit(&[a, b, c]));
                        }
                    }
                }
            }
        }
        _ => unreachable!("dimension validated by KernelSpec"),
    }
}

/// `sum over 0 < |w| <= r` of `|w|^{-alpha}` on the unit lattice.
pub fn ball_sum(spec: KernelSpec, r: f64, alpha: f64) -> f64 {
    let lim = ball_limit(r);
    let hi = math::floor(math::sqrt(lim as f64)) as i64 + 1;
    let mut acc = Neumaier::new();
    let mut row = 0.0;
    let mut count = 0u32;
    // short runs are summed plainly, then folded in compensated
    for_each_sector(spec.d, 1, hi, 1, lim, |r2, m| {
        row += m * math::inv_pow_from_sq(r2 as f64, alpha);
        count += 1;
        if count == 256 {
            acc.add(row);
            row = 0.0;
            count = 0;
        }
    });
    acc.add(row);
    acc.value()
}

/// `kappa_eps = eps^d * sum_{0<|z|<=1} |z|^{-d}`, an exact finite lattice sum.
pub fn kappa_eps(scale: LatticeScale, spec: KernelSpec) -> f64 {
    ball_sum(spec, 1.0 / scale.eps, spec.d as f64)
}

/// `eps^d * sum_{0<|z|<=1} |z|^{-alpha}`.
pub fn lattice_sum_alpha(alpha: f64, scale: LatticeScale, spec: KernelSpec) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter("alpha must be nonnegative"));
    }
    let s = ball_sum(spec, 1.0 / scale.eps, alpha);
    Ok(s * math::powf(scale.eps, spec.d as f64 - alpha))
}

/// `kappa_eps - d V_d |ln eps|`, the bounded remainder of the logarithmic asymptotics.
pub fn kappa_deviation(scale: LatticeScale, spec: KernelSpec) -> f64 {
    let d = spec.d;
    kappa_eps(scale, spec) - d as f64 * unit_ball_volume(d) * scale.abs_ln()
}

/// `M_ij = (eps^d / kappa_eps) sum_{0<|z|<=1} J(z) z_i z_j`, returned row-major
/// as a `d x d` matrix. Off-diagonal entries add each term to its reflection
/// `w_i -> -w_i`, so they vanish exactly.
pub fn second_moment_matrix(scale: LatticeScale, spec: KernelSpec) -> Vec<Vec<f64>> {
    let d = spec.d;
    let r = 1.0 / scale.eps;
    let lim = ball_limit(r);
    let rl = math::floor(math::sqrt(lim as f64)) as i64;
    let kappa = kappa_eps(scale, spec);
    let mut diag: Vec<Neumaier> = (0..d).map(|_| Neumaier::new()).collect();
    let mut off: Vec<Neumaier> = (0..d * d).map(|_| Neumaier::new()).collect();
    let ex = spec.exponent();
    let mut w: Point = [0; MAX_D];
    let range = |k: usize| if k < d { -rl..=rl } else { 0..=0 };
    for a in range(0) {
        w[0] = a;
        for b in range(1) {
            w[1] = b;
            if a * a + b * b > lim {
                continue;
            }
            for c in range(2) {
                w[2] = c;
                let r2 = norm2(&w);
                if r2 == 0 || r2 > lim {
                    continue;
                }
                let jw = math::inv_pow_from_sq(r2 as f64, ex);
                for i in 0..d {
                    let wi = w[i] as f64;
                    diag[i].add(jw * wi * wi);
                    if w[i] > 0 {
                        for j in (i + 1)..d {
                            let t = jw * wi * w[j] as f64;
                            let t_reflected = jw * (-wi) * w[j] as f64;
                            off[i * d + j].add(t + t_reflected);
                        }
                    }
                }
            }
        }
    }
    let mut m = alloc::vec![alloc::vec![0.0; d]; d];
    for i in 0..d {
        m[i][i] = diag[i].value() / kappa;
        for j in (i + 1)..d {
            let v = off[i * d + j].value() / kappa;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// Exact `sum` of `|w|^{-(d+2)}` over `lo < |w|_inf <= hi`.
pub fn annulus_mass(spec: KernelSpec, lo: i64, hi: i64) -> f64 {
    let mut acc = Neumaier::new();
    let ex = spec.exponent();
    let mut row = 0.0;
    for_each_sector(spec.d, lo + 1, hi, 1, i64::MAX, |r2, m| {
        row += m * math::inv_pow_from_sq(r2 as f64, ex);
        if row > 1.0 {
            acc.add(row);
            row = 0.0;
        }
    });
    acc.add(row);
    acc.value()
}

/// `integral over [-1,1]^{d-1} of (1+|y|^2)^{-beta/2}` by composite Simpson.
fn face_integral(d: usize, beta: f64) -> f64 {
    let g = |r2: f64| math::powf(1.0 + r2, -beta / 2.0);
    let n = if d == 3 { 400 } else { 4000 };
    let h = 2.0 / n as f64;
    let wt = |i: usize| {
        if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    match d {
        1 => 1.0,
        2 => {
            let s: f64 = (0..=n).map(|i| {
                let y = -1.0 + i as f64 * h;
                wt(i) * g(y * y)
            }).sum();
            s * h / 3.0
        }
        _ => {
            let mut s = 0.0;
            for i in 0..=n {
                let y = -1.0 + i as f64 * h;
                for j in 0..=n {
                    let x = -1.0 + j as f64 * h;
                    s += wt(i) * wt(j) * g(x * x + y * y);
                }
            }
            s * h * h / 9.0
        }
    }
}

/// `integral over |x|_inf > 1 of |x|^{-(d+2)}`: the far-field constant with
/// `sum_{|w|_inf > M} |w|^{-(d+2)} ~ I_d (M + 1/2)^{-2}`.
pub fn cube_tail_constant(d: usize) -> f64 {
    // 2d faces, radial factor 1/2
    d as f64 * face_integral(d, (d + 2) as f64)
}

/// `sum_{|w|_inf > m} |w|^{-(d+2)}`: cell integral over `|x|_inf > m + 1/2`
/// with the first midpoint correction `-(1/24) integral of Laplacian J`.
pub fn cube_tail(spec: KernelSpec, m: i64) -> f64 {
    let d = spec.d;
    let a = m as f64 + 0.5;
    let main = cube_tail_constant(d) / (a * a);
    // Laplacian of |x|^{-(d+2)} is 4(d+2)|x|^{-(d+4)}; its far integral has radial factor 1/4
    let lap = 4.0 * (d + 2) as f64 * (d as f64 / 2.0) * face_integral(d, (d + 4) as f64) / (a * a * a * a);
    main - lap / 24.0
}

fn default_tail_cube(d: usize) -> i64 {
    match d {
        1 => 4096,
        2 => 1024,
        _ => 64,
    }
}

/// `sum_{|w| > r} |w|^{-(d+2)}`: exact between the ball and a large cube, cell
/// integral outside the cube.
pub fn ball_tail(spec: KernelSpec, r: f64) -> f64 {
    let lim = ball_limit(r);
    let m = (math::ceil(2.0 * r) as i64).max(default_tail_cube(spec.d));
    let ex = spec.exponent();
    let mut acc = Neumaier::new();
    let mut row = 0.0;
    for_each_sector(spec.d, 1, m, lim + 1, i64::MAX, |r2, mult| {
        row += mult * math::inv_pow_from_sq(r2 as f64, ex);
        if row > 1e-3 {
            acc.add(row);
            row = 0.0;
        }
    });
    acc.add(row);
    acc.add(cube_tail(spec, m));
    acc.value()
}

/// Forward slab `S_k`: `3^k <= w_1 < 2*3^k`, `|w_i| < 3^k` for `i >= 2`,
/// in lattice units.
#[derive(Debug, Clone, PartialEq)]
pub struct Slab {
    pub eps: f64,
    pub k: u32,
    pub d: usize,
    pub points: Vec<Point>,
}

impl Slab {
    /// `sum_{z in S_k} J(z)` with the physical kernel.
    pub fn j_mass(&self) -> f64 {
        let spec = KernelSpec { d: self.d };
        let s: f64 = self.points.iter().map(|w| kernel_j(w, spec)).sum();
        s * math::powi(self.eps, -((self.d + 2) as i32))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn pow3(k: u32) -> i64 {
    3i64.pow(k)
}

/// Enumerates `S_k`. The scale must fit the domain: `eps 3^k <= diam`.
pub fn slab_points(scale: LatticeScale, k: u32, spec: KernelSpec, diam: f64) -> Result<Slab> {
    let s = pow3(k);
    if scale.eps * s as f64 > diam * (1.0 + 1e-12) {
        return Err(Error::InvalidScale(scale.eps * s as f64));
    }
    let d = spec.d;
    let side = |i: usize| if i < d { -(s - 1)..=(s - 1) } else { 0..=0 };
    let mut points = Vec::new();
    for a in s..2 * s {
        for b in side(1) {
            for c in side(2) {
                points.push([a, b, c]);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::InvalidScale(scale.eps));
    }
    Ok(Slab { eps: scale.eps, k, d, points })
}

/// All lattice vectors `0 < |w| <= r` that are lexicographically positive,
/// paired with `|w|^{-(d+2)}`. Their negatives complete the ball.
pub fn half_ball(spec: KernelSpec, r: f64) -> Vec<(Point, f64)> {
    let d = spec.d;
    let lim = ball_limit(r);
    let rl = math::floor(math::sqrt(lim as f64)) as i64;
    let ex = spec.exponent();
    let range = |k: usize| if k < d { -rl..=rl } else { 0..=0 };
    let mut out = Vec::new();
    for a in range(0) {
        for b in range(1) {
            for c in range(2) {
                let w = [a, b, c];
                let r2 = norm2(&w);
                if r2 == 0 || r2 > lim || !lex_positive(&w) {
                    continue;
                }
                out.push((w, math::inv_pow_from_sq(r2 as f64, ex)));
            }
        }
    }
    out
}

#[inline]
pub fn lex_positive(w: &Point) -> bool {
    for &c in w {
        if c != 0 {
            return c > 0;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: usize) -> KernelSpec {
        KernelSpec::new(d).unwrap()
    }
    fn sc(e: f64) -> LatticeScale {
        LatticeScale::new(e).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_j(&[1, 0], spec(2)), 1.0);
        assert_eq!(kernel_j(&[0, 0], spec(2)), 0.0);
        assert_eq!(kernel_j(&[0, 2], spec(2)), 0.0625);
        assert_eq!(kernel_j(&[3], spec(1)), 1.0 / 27.0);
        assert!((kernel_j(&[1, 1, 1], spec(3)) - 3f64.powf(-2.5)).abs() < 1e-16);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(KernelSpec::new(0).is_err());
        assert!(KernelSpec::new(4).is_err());
        assert!(LatticeScale::new(1.0).is_err());
        assert!(LatticeScale::new(0.0).is_err());
        assert!(lattice_sum_alpha(-1.0, sc(0.5), spec(1)).is_err());
    }

    #[test]
    fn kappa_hand_sums() {
        assert!((kappa_eps(sc(0.5), spec(1)) - 3.0).abs() < 1e-15);
        assert!((kappa_eps(sc(0.25), spec(1)) - 25.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn kappa_sector_matches_full_enumeration() {
        for d in 1..=3 {
            let r = 9.5;
            let lim = ball_limit(r);
            let mut brute = 0.0;
            let rl = 10i64;
            for a in -rl..=rl {
                for b in -rl..=rl {
                    for c in -rl..=rl {
                        let w = [a, if d > 1 { b } else { 0 }, if d > 2 { c } else { 0 }];
                        if (d < 2 && b != 0) || (d < 3 && c != 0) {
                            continue;
                        }
                        let r2 = norm2(&w);
                        if r2 > 0 && r2 <= lim {
                            brute += (r2 as f64).powf(-(d as f64) / 2.0);
                        }
                    }
                }
            }
            let s = ball_sum(spec(d), r, d as f64);
            assert!((s - brute).abs() < 1e-12 * brute, "d={d}: {s} vs {brute}");
        }
    }

    #[test]
    fn lattice_sum_alpha_examples() {
        assert!((lattice_sum_alpha(0.0, sc(0.5), spec(1)).unwrap() - 2.0).abs() < 1e-15);
        let a = lattice_sum_alpha(2.0, sc(0.125), spec(2)).unwrap();
        let k = kappa_eps(sc(0.125), spec(2));
        assert!((a - k).abs() < 1e-13 * k);
    }

    #[test]
    fn unit_ball_volumes() {
        let pi = core::f64::consts::PI;
        assert!((unit_ball_volume(1) - 2.0).abs() < 1e-15);
        assert!((unit_ball_volume(2) - pi).abs() < 1e-14);
        assert!((unit_ball_volume(3) - 4.0 * pi / 3.0).abs() < 1e-14);
    }

    #[test]
    fn second_moment_small_cases() {
        let m = second_moment_matrix(sc(0.125), spec(2));
        assert!((m[0][0] - 0.5).abs() < 1e-13);
        assert!((m[1][1] - 0.5).abs() < 1e-13);
        assert_eq!(m[0][1], 0.0);
        let m = second_moment_matrix(sc(1.0 / 16.0), spec(1));
        assert!((m[0][0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn slab_enumeration() {
        // eps = 1 is outside LatticeScale; slabs only depend on k in lattice units
        let s = slab_points(sc(0.5), 0, spec(1), 1.0).unwrap();
        assert_eq!(s.points, alloc::vec![[1, 0, 0]]);
        let s = slab_points(sc(0.1), 1, spec(2), 1.0).unwrap();
        assert_eq!(s.len(), 15);
        assert!(s.points.iter().all(|w| (3..6).contains(&w[0]) && w[1].abs() <= 2));
        assert!(slab_points(sc(0.5), 1, spec(1), 1.0).is_err());
    }

    #[test]
    fn tail_constants_closed_forms() {
        assert!((cube_tail_constant(1) - 1.0).abs() < 1e-15);
        assert!((cube_tail_constant(2) - (1.0 + core::f64::consts::FRAC_PI_2)).abs() < 1e-12);
    }

    #[test]
    fn tail_constant_d3_matches_brute_shell_sum() {
        // compare the cell integral against an exact shell sum between 40 and 400
        let s = spec(3);
        let exact = annulus_mass(s, 40, 160);
        let approx = cube_tail(s, 40) - cube_tail(s, 160);
        assert!((exact - approx).abs() < 1e-7 * exact, "{exact} {approx}");
    }

    #[test]
    fn ball_tail_consistency_d1() {
        // sum_{k>10} k^{-3} * 2
        let s = spec(1);
        let mut exact = 0.0;
        for k in (11..2_000_000).rev() {
            exact += 2.0 / (k as f64).powi(3);
        }
        let t = ball_tail(s, 10.0);
        assert!((t - exact).abs() < 1e-12, "{t} {exact}");
    }

    #[test]
    fn half_ball_completes_symmetric_ball() {
        let s = spec(2);
        let hb = half_ball(s, 5.0);
        let total: f64 = hb.iter().map(|(_, j)| 2.0 * j).sum();
        let direct = ball_sum(s, 5.0, 4.0);
        assert!((total - direct).abs() < 1e-13);
    }
}
