//! Unit-lattice walk with jump rates `a(x, x+w) |w|^{-(d+2)}`, simulated by
//! thinning a homogeneous envelope, plus uniformized heat kernels on tori.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::environment::EnvironmentSpec;
use crate::grid::{BoxDomain, Grid};
use crate::kernel::{self, norm2, norm_inf, KernelSpec, LatticeScale};
use crate::sum::Neumaier;
use crate::{math, par, stats, Error, Point, Result, MAX_D};

pub const R_TAB: i64 = 64;
pub const R_MAX: i64 = 1 << 13;
/// In d = 3, annuli beyond this use the cell integral.
const EXACT_SHELL_LIMIT_D3: i64 = 1 << 9;

/// Walker/Vose alias table.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        if n == 0 || !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("alias weights must be nonnegative with positive sum"));
        }
        let mut prob: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut alias = alloc::vec![0u32; n];
        let mut small = Vec::new();
        let mut large = Vec::new();
        for (i, p) in prob.iter().enumerate() {
            if *p < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            alias[s] = l as u32;
            prob[l] -= 1.0 - prob[s];
            if prob[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        for i in large.into_iter().chain(small) {
            prob[i] = 1.0;
        }
        Ok(AliasTable { prob, alias })
    }

    #[inline]
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let i = rng.gen_range(0..self.prob.len());
        if rng.gen::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    Free,
    /// `(Z / n Z)^d` with minimal-image jumps `-n/2 < w_i <= n/2`.
    Torus { n: i64 },
}

impl Geometry {
    #[inline]
    pub fn step(&self, x: &Point, w: &Point, d: usize) -> Point {
        let mut y = [0i64; MAX_D];
        for k in 0..d {
            y[k] = x[k] + w[k];
            if let Geometry::Torus { n } = *self {
                y[k] = y[k].rem_euclid(n);
            }
        }
        y
    }
}

/// Envelope proposal law for the thinning construction.
#[derive(Debug, Clone)]
pub struct JumpSampler {
    spec: KernelSpec,
    lambda: f64,
    geometry: Geometry,
    table_lo: i64,
    table_side: i64,
    table_len: usize,
    top: AliasTable,
    annuli: Vec<(i64, i64)>,
    total: f64,
    dropped: f64,
}

impl JumpSampler {
    /// Free lattice: alias table on `|w|_inf <= R_TAB`, dyadic annuli up to `R_MAX`.
    pub fn new(spec: KernelSpec, lambda: f64) -> Result<Self> {
        Self::with_radii(spec, lambda, R_TAB, R_MAX)
    }

    pub fn with_radii(spec: KernelSpec, lambda: f64, r_tab: i64, r_max: i64) -> Result<Self> {
        check_lambda(lambda)?;
        if r_tab < 1 || r_max < r_tab {
            return Err(Error::InvalidParameter("need 1 <= r_tab <= r_max"));
        }
        let d = spec.d();
        let side = 2 * r_tab + 1;
        let (mut weights, table_len) = cube_weights(spec, -r_tab, side);
        let mut annuli = Vec::new();
        let mut lo = r_tab;
        while lo < r_max {
            let hi = (2 * lo).min(r_max);
            annuli.push((lo, hi));
            weights.push(if d == 3 && hi > EXACT_SHELL_LIMIT_D3 {
                kernel::cube_tail(spec, lo) - kernel::cube_tail(spec, hi)
            } else {
                kernel::annulus_mass(spec, lo, hi)
            });
            lo = hi;
        }
        let dropped = kernel::cube_tail(spec, r_max);
        weights.push(dropped);
        let mut acc = Neumaier::new();
        for w in &weights {
            acc.add(*w);
        }
        let total = acc.value();
        Ok(JumpSampler {
            spec,
            lambda,
            geometry: Geometry::Free,
            table_lo: -r_tab,
            table_side: side,
            table_len,
            top: AliasTable::new(&weights)?,
            annuli,
            total,
            dropped,
        })
    }

    /// Torus of side `n` (even) with the minimal-image kernel.
    pub fn torus(spec: KernelSpec, lambda: f64, n: i64) -> Result<Self> {
        check_lambda(lambda)?;
        if n < 2 || n % 2 != 0 {
            return Err(Error::InvalidParameter("torus side must be even and at least 2"));
        }
        let (weights, table_len) = cube_weights(spec, -n / 2 + 1, n);
        let total: f64 = weights.iter().sum();
        Ok(JumpSampler {
            spec,
            lambda,
            geometry: Geometry::Torus { n },
            table_lo: -n / 2 + 1,
            table_side: n,
            table_len,
            top: AliasTable::new(&weights)?,
            annuli: Vec::new(),
            total,
            dropped: 0.0,
        })
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// `S`: total kernel mass of the proposal law including the dropped tail.
    pub fn total_mass(&self) -> f64 {
        self.total
    }

    /// `Lambda* = S / lambda`.
    pub fn envelope_rate(&self) -> f64 {
        self.total / self.lambda
    }

    /// Per-proposal bias from never proposing beyond the cutoff.
    pub fn declared_bias(&self) -> f64 {
        self.dropped / self.total / self.lambda
    }

    /// Exact proposal probability of `w`.
    pub fn probability(&self, w: &Point) -> f64 {
        let d = self.spec.d();
        if norm2(w) == 0 {
            return 0.0;
        }
        let inside = match self.geometry {
            Geometry::Free => norm_inf(w) <= self.annuli.last().map_or(-self.table_lo, |a| a.1),
            Geometry::Torus { n } => (0..d).all(|k| w[k] > -n / 2 && w[k] <= n / 2),
        };
        if !inside {
            return 0.0;
        }
        kernel::kernel_j(&w[..d], self.spec) / self.total
    }

    fn decode(&self, mut i: usize) -> Point {
        let d = self.spec.d();
        let mut w = [0i64; MAX_D];
        for k in (0..d).rev() {
            w[k] = self.table_lo + (i as i64 % self.table_side);
            i /= self.table_side as usize;
        }
        w
    }

    /// Draws a jump; `None` for the dropped far tail.
    #[inline]
    pub fn propose<R: Rng>(&self, rng: &mut R) -> Option<Point> {
        let i = self.top.sample(rng);
        if i < self.table_len {
            return Some(self.decode(i));
        }
        let a = i - self.table_len;
        if a >= self.annuli.len() {
            return None;
        }
        Some(self.sample_annulus(self.annuli[a], rng))
    }

    fn sample_annulus<R: Rng>(&self, (lo, hi): (i64, i64), rng: &mut R) -> Point {
        let d = self.spec.d();
        let ex = self.spec.exponent();
        // J is largest at |w| = lo + 1 on the annulus
        let jmax = math::powf((lo + 1) as f64, -ex);
        loop {
            let mut w = [0i64; MAX_D];
            for c in w.iter_mut().take(d) {
                *c = rng.gen_range(-hi..=hi);
            }
            if norm_inf(&w) <= lo {
                continue;
            }
            let j = math::inv_pow_from_sq(norm2(&w) as f64, ex);
            if rng.gen::<f64>() * jmax < j {
                return w;
            }
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter("lambda must lie in (0, 1]"))
    }
}

/// `J` on the cube `[lo, lo + side)^d`, origin weighted 0.
fn cube_weights(spec: KernelSpec, lo: i64, side: i64) -> (Vec<f64>, usize) {
    let d = spec.d();
    let len = (side as usize).pow(d as u32);
    let ex = spec.exponent();
    let w = (0..len)
        .map(|mut i| {
            let mut r2 = 0i64;
            for _ in 0..d {
                let c = lo + (i as i64 % side);
                r2 += c * c;
                i /= side as usize;
            }
            if r2 == 0 {
                0.0
            } else {
                math::inv_pow_from_sq(r2 as f64, ex)
            }
        })
        .collect();
    (w, len)
}

/// RNG for trajectory `stream` of experiment `seed`.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: Point,
    /// Times of accepted jumps, strictly increasing.
    pub times: Vec<f64>,
    /// Position after each accepted jump.
    pub positions: Vec<Point>,
    pub horizon: f64,
}

impl Trajectory {
    pub fn position_at(&self, t: f64) -> Result<Point> {
        if t > self.horizon {
            return Err(Error::HorizonTooShort { requested: t, horizon: self.horizon });
        }
        let n = self.times.partition_point(|&s| s <= t);
        Ok(if n == 0 { self.initial } else { self.positions[n - 1] })
    }

    pub fn jump_count(&self) -> usize {
        self.times.len()
    }
}

#[inline]
fn exp_draw<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    // 1 - U lies in (0, 1]
    -math::ln(1.0 - rng.gen::<f64>()) / rate
}

/// Runs the thinned chain, calling `on_jump(time, new_position)` for each
/// accepted jump until `t_end`.
fn run<R: Rng, F: FnMut(f64, &Point)>(
    env: &EnvironmentSpec,
    sampler: &JumpSampler,
    x0: Point,
    t_end: f64,
    rng: &mut R,
    mut on_jump: F,
) -> Point {
    let d = sampler.spec.d();
    let rate = sampler.envelope_rate();
    let lambda = sampler.lambda;
    let constant_accept = match env.distribution {
        crate::environment::Distribution::Constant { value } => Some(lambda * value),
        _ => None,
    };
    let mut t = 0.0;
    let mut x = x0;
    loop {
        t += exp_draw(rng, rate);
        if t > t_end {
            return x;
        }
        let Some(w) = sampler.propose(rng) else { continue };
        let y = sampler.geometry.step(&x, &w, d);
        let acc = constant_accept.unwrap_or_else(|| lambda * env.value(&x, &y));
        if acc >= 1.0 || rng.gen::<f64>() < acc {
            x = y;
            on_jump(t, &x);
        }
    }
}

fn check_env(env: &EnvironmentSpec, sampler: &JumpSampler) -> Result<()> {
    if env.d != sampler.spec.d() {
        return Err(Error::InvalidDimension(env.d));
    }
    // acceptance lambda * a must not exceed 1
    if env.lambda < sampler.lambda * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter("sampler lambda exceeds the environment's ellipticity"));
    }
    Ok(())
}

pub fn simulate_path<R: Rng>(
    env: &EnvironmentSpec,
    sampler: &JumpSampler,
    x0: Point,
    t_end: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    check_env(env, sampler)?;
    if !(t_end > 0.0) {
        return Err(Error::InvalidParameter("horizon must be positive"));
    }
    let mut times = Vec::new();
    let mut positions = Vec::new();
    run(env, sampler, x0, t_end, rng, |t, x| {
        times.push(t);
        positions.push(*x);
    });
    Ok(Trajectory { initial: x0, times, positions, horizon: t_end })
}

/// Positions at increasing times `obs` along one trajectory, without storing it.
pub fn simulate_observed<R: Rng>(
    env: &EnvironmentSpec,
    sampler: &JumpSampler,
    x0: Point,
    obs: &[f64],
    rng: &mut R,
) -> Result<Vec<Point>> {
    check_env(env, sampler)?;
    if obs.windows(2).any(|w| w[1] < w[0]) || obs.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidParameter("observation times must be nonnegative and sorted"));
    }
    let mut out = Vec::with_capacity(obs.len());
    let mut x = x0;
    let mut t0 = 0.0;
    for &t in obs {
        // restart the clock at each observation: memoryless envelope
        if t > t0 {
            x = run(env, sampler, x, t - t0, rng, |_, _| {});
        }
        out.push(x);
        t0 = t;
    }
    Ok(out)
}

/// Unit-lattice time at which the rescaled walk reaches macroscopic time `t`.
pub fn unit_time(t: f64, scale: LatticeScale, spec: KernelSpec) -> f64 {
    t / (kernel::kappa_eps(scale, spec) * scale.eps() * scale.eps())
}

/// `X^eps_t = eps Y_{t / (kappa_eps eps^2)}`.
pub fn rescaled_endpoint(traj: &Trajectory, scale: LatticeScale, spec: KernelSpec, t: f64) -> Result<[f64; MAX_D]> {
    let y = traj.position_at(unit_time(t, scale, spec))?;
    let mut x = [0.0; MAX_D];
    for k in 0..spec.d() {
        x[k] = scale.eps() * y[k] as f64;
    }
    Ok(x)
}

/// Simulates `X^eps` directly with the rescaled generator on `eps Z^d` over
/// macroscopic time `t`: rates `a |z|^{-(d+2)} eps^d / kappa_eps` per
/// physical jump `z = eps w`.
pub fn endpoint_direct<R: Rng>(
    env: &EnvironmentSpec,
    sampler: &JumpSampler,
    scale: LatticeScale,
    x0: Point,
    t: f64,
    rng: &mut R,
) -> Result<[f64; MAX_D]> {
    check_env(env, sampler)?;
    let spec = sampler.spec;
    let d = spec.d();
    let eps = scale.eps();
    let kappa = kernel::kappa_eps(scale, spec);
    // eps^d / kappa * |eps w|^{-(d+2)} = |w|^{-(d+2)} / (kappa eps^2)
    let rate = sampler.envelope_rate() / (kappa * eps * eps);
    let mut pos = [0.0; MAX_D];
    for k in 0..d {
        pos[k] = eps * x0[k] as f64;
    }
    let mut site = x0;
    let mut clock = 0.0;
    loop {
        clock += exp_draw(rng, rate);
        if clock > t {
            return Ok(pos);
        }
        let Some(w) = sampler.propose(rng) else { continue };
        let y = sampler.geometry.step(&site, &w, d);
        if rng.gen::<f64>() < sampler.lambda * env.value(&site, &y) {
            site = y;
            for k in 0..d {
                pos[k] += eps * w[k] as f64;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QipConfig {
    /// Strictly decreasing scales; one trajectory family serves all of them.
    pub eps_list: Vec<f64>,
    pub t: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Initial law: uniform over the lattice sites of this box at the finest scale.
    pub start: BoxDomain,
    pub eta_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QipEpsReport {
    pub eps: f64,
    pub unit_time: f64,
    /// Per coordinate KS distance to `N(0, t E[a] / d)`.
    pub ks: Vec<f64>,
    /// Per coordinate `(q25, q50, q75)` of the displacement.
    pub quantiles: Vec<[f64; 3]>,
    pub median_sq: f64,
    /// `(eta, P(|X_t - X_0| > eta), t (1 + ln(2 + eta)) / eta^2)`.
    pub tail: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QipReport {
    pub per_eps: Vec<QipEpsReport>,
    pub limit_variance: f64,
}

pub fn qip_statistics(cfg: &QipConfig, env: &EnvironmentSpec, sampler: &JumpSampler) -> Result<QipReport> {
    let spec = sampler.spec;
    let d = spec.d();
    if cfg.eps_list.is_empty() || cfg.eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("eps_list must be nonempty and strictly decreasing"));
    }
    if cfg.n_paths == 0 || !(cfg.t > 0.0) {
        return Err(Error::InvalidParameter("need t > 0 and at least one path"));
    }
    let scales = cfg.eps_list.iter().map(|&e| LatticeScale::new(e)).collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = scales.iter().map(|s| unit_time(cfg.t, *s, spec)).collect();
    let finest = Grid::discretize(&cfg.start, *scales.last().expect("nonempty"))?;
    let runs = par::map_range(cfg.n_paths, |i| {
        let mut rng = path_rng(cfg.seed, i as u64);
        let x0 = finest.site(rng.gen_range(0..finest.len()));
        simulate_observed(env, sampler, x0, &times, &mut rng).map(|ys| (x0, ys))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let var = cfg.t * env.mean() / d as f64;
    let mut per_eps = Vec::new();
    for (j, (scale, tu)) in scales.iter().zip(&times).enumerate() {
        let eps = scale.eps();
        let disp: Vec<[f64; MAX_D]> = runs
            .iter()
            .map(|(x0, ys)| {
                let mut v = [0.0; MAX_D];
                for k in 0..d {
                    v[k] = eps * (ys[j][k] - x0[k]) as f64;
                }
                v
            })
            .collect();
        let mut ks = Vec::new();
        let mut quantiles = Vec::new();
        for k in 0..d {
            let col: Vec<f64> = disp.iter().map(|v| v[k]).collect();
            ks.push(stats::ks_statistic(&col, |x| stats::normal_cdf(x, var)));
            quantiles.push([stats::quantile(&col, 0.25), stats::quantile(&col, 0.5), stats::quantile(&col, 0.75)]);
        }
        let sq: Vec<f64> = disp.iter().map(|v| v[..d].iter().map(|c| c * c).sum()).collect();
        let n = sq.len() as f64;
        let tail = cfg
            .eta_grid
            .iter()
            .map(|&eta| {
                let freq = sq.iter().filter(|&&s| s > eta * eta).count() as f64 / n;
                (eta, freq, cfg.t * (1.0 + math::ln(2.0 + eta)) / (eta * eta))
            })
            .collect();
        per_eps.push(QipEpsReport {
            eps,
            unit_time: *tu,
            ks,
            quantiles,
            median_sq: stats::quantile(&sq, 0.5),
            tail,
        });
    }
    Ok(QipReport { per_eps, limit_variance: var })
}

fn torus_sites(d: usize, n: i64) -> Result<usize> {
    let m = (n as usize).checked_pow(d as u32).ok_or(Error::InvalidParameter("torus too large"))?;
    if m > HEAT_KERNEL_LIMIT {
        return Err(Error::InvalidParameter("torus too large for the dense heat kernel"));
    }
    Ok(m)
}

/// Largest number of torus sites for the dense heat-kernel matrix.
pub const HEAT_KERNEL_LIMIT: usize = 4096;

fn torus_point(mut i: usize, d: usize, n: i64) -> Point {
    let mut x = [0i64; MAX_D];
    for k in (0..d).rev() {
        x[k] = i as i64 % n;
        i /= n as usize;
    }
    x
}

fn torus_index(x: &Point, d: usize, n: i64) -> usize {
    let mut i = 0usize;
    for &c in &x[..d] {
        i = i * n as usize + c.rem_euclid(n) as usize;
    }
    i
}

/// Generator of the walk on the torus: dense `Q(x, y)` off the diagonal.
pub struct TorusGenerator {
    pub d: usize,
    pub n: i64,
    pub rates: Vec<f64>,
    pub out_rate: Vec<f64>,
}

impl TorusGenerator {
    pub fn new(env: &EnvironmentSpec, n: i64) -> Result<Self> {
        env.validate()?;
        if n < 2 || n % 2 != 0 {
            return Err(Error::InvalidParameter("torus side must be even and at least 2"));
        }
        let d = env.d;
        let m = torus_sites(d, n)?;
        let spec = KernelSpec::new(d)?;
        let ex = spec.exponent();
        let mut rates = alloc::vec![0.0; m * m];
        par::fill(&mut rates, |ij| {
            let (i, j) = (ij / m, ij % m);
            if i == j {
                return 0.0;
            }
            let x = torus_point(i, d, n);
            let y = torus_point(j, d, n);
            let mut r2 = 0;
            for k in 0..d {
                // minimal image in (-n/2, n/2]
                let mut w = (y[k] - x[k]).rem_euclid(n);
                if w > n / 2 {
                    w -= n;
                }
                r2 += w * w;
            }
            env.value(&x, &y) * math::inv_pow_from_sq(r2 as f64, ex)
        });
        let out_rate = (0..m).map(|i| rates[i * m..(i + 1) * m].iter().sum()).collect();
        Ok(TorusGenerator { d, n, rates, out_rate })
    }

    pub fn len(&self) -> usize {
        self.out_rate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.out_rate.is_empty()
    }

    pub fn index(&self, x: &Point) -> usize {
        torus_index(x, self.d, self.n)
    }

    /// `p_t(x0, .)` for every `t` in `t_grid`, by uniformization.
    pub fn transition_rows(&self, x0: &Point, t_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        if t_grid.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidParameter("times must be nonnegative"));
        }
        let m = self.len();
        let big = self.out_rate.iter().cloned().fold(0.0, f64::max);
        let mut v = alloc::vec![0.0; m];
        v[self.index(x0)] = 1.0;
        let mut out = alloc::vec![alloc::vec![0.0; m]; t_grid.len()];
        let kmax: Vec<usize> = t_grid.iter().map(|&t| poisson_cutoff(big * t)).collect();
        let top = kmax.iter().cloned().max().unwrap_or(0);
        let mut next = alloc::vec![0.0; m];
        for k in 0..=top {
            for (ti, &t) in t_grid.iter().enumerate() {
                if k <= kmax[ti] {
                    let wk = poisson_weight(big * t, k);
                    if wk > 0.0 {
                        for (o, vi) in out[ti].iter_mut().zip(&v) {
                            *o += wk * vi;
                        }
                    }
                }
            }
            if k == top {
                break;
            }
            // v K with K = I + Q / big; Q is symmetric
            par::fill(&mut next, |j| {
                let row = &self.rates[j * m..(j + 1) * m];
                let mut acc = v[j] * (1.0 - self.out_rate[j] / big);
                for (r, vi) in row.iter().zip(&v) {
                    acc += r / big * vi;
                }
                acc
            });
            core::mem::swap(&mut v, &mut next);
        }
        Ok(out)
    }
}

fn poisson_weight(mean: f64, k: usize) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    math::exp(-mean + k as f64 * math::ln(mean) - math::lgamma(k as f64 + 1.0))
}

/// Smallest `K` past the mode with Poisson tail beyond `K` at most `1e-12`.
fn poisson_cutoff(mean: f64) -> usize {
    if mean == 0.0 {
        return 0;
    }
    let mut k = math::ceil(mean) as usize;
    loop {
        let ratio = mean / (k + 1) as f64;
        let bound = poisson_weight(mean, k + 1) / (1.0 - ratio);
        if bound <= 1e-12 {
            return k;
        }
        k += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatKernelReport {
    pub n: i64,
    pub t: Vec<f64>,
    pub p00: Vec<f64>,
    pub mass_dev: Vec<f64>,
}

/// On-diagonal heat kernel from the origin on the periodic box of side `n`.
pub fn heat_kernel_evolve(env: &EnvironmentSpec, n: i64, t_grid: &[f64]) -> Result<HeatKernelReport> {
    let gen = TorusGenerator::new(env, n)?;
    let rows = gen.transition_rows(&[0; MAX_D], t_grid)?;
    let p00 = rows.iter().map(|r| r[0]).collect();
    let mass_dev = rows
        .iter()
        .map(|r| {
            let mut acc = Neumaier::new();
            r.iter().for_each(|v| acc.add(*v));
            (acc.value() - 1.0).abs()
        })
        .collect();
    Ok(HeatKernelReport { n, t: t_grid.to_vec(), p00, mass_dev })
}
