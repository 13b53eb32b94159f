//! Box domains, their lattice discretizations, and grid functions extended by
//! zero outside the domain.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::environment::EnvironmentSpec;
use crate::kernel::{self, KernelSpec, LatticeScale};
use crate::operator::{OperatorHandle, Stencil, TruncationPolicy};
use crate::solver;
use crate::sum::{dot, pairwise_sum};
use crate::{math, par, Error, Point, Result, MAX_D};

/// Open axis-aligned box `prod_i (lo_i, hi_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub d: usize,
    pub lo: [f64; MAX_D],
    pub hi: [f64; MAX_D],
}

impl BoxDomain {
    pub fn new(d: usize, lo: &[f64], hi: &[f64]) -> Result<Self> {
        if d == 0 || d > MAX_D {
            return Err(Error::InvalidDimension(d));
        }
        if lo.len() != d || hi.len() != d {
            return Err(Error::InvalidParameter("box corners must have d coordinates"));
        }
        let mut b = BoxDomain { d, lo: [0.0; MAX_D], hi: [0.0; MAX_D] };
        for k in 0..d {
            if !(hi[k] > lo[k]) || !lo[k].is_finite() || !hi[k].is_finite() {
                return Err(Error::InvalidParameter("box must have nonempty finite interior"));
            }
            b.lo[k] = lo[k];
            b.hi[k] = hi[k];
        }
        Ok(b)
    }

    /// `(0, 1)^d`.
    pub fn unit_cube(d: usize) -> Result<Self> {
        Self::new(d, &[0.0; MAX_D][..d.min(MAX_D)], &[1.0; MAX_D][..d.min(MAX_D)])
    }

    /// `(0, side)^d`.
    pub fn cube(d: usize, side: f64) -> Result<Self> {
        let hi = [side; MAX_D];
        Self::new(d, &[0.0; MAX_D][..d.min(MAX_D)], &hi[..d.min(MAX_D)])
    }

    pub fn diam(&self) -> f64 {
        let s: f64 = (0..self.d).map(|k| { let e = self.hi[k] - self.lo[k]; e * e }).sum();
        math::sqrt(s)
    }

    /// The image under `x -> t x`.
    pub fn scaled(&self, t: f64) -> Self {
        let mut b = *self;
        for k in 0..self.d {
            b.lo[k] *= t;
            b.hi[k] *= t;
        }
        b
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.d).all(|k| x[k] > self.lo[k] && x[k] < self.hi[k])
    }
}

/// The sites of `U ∩ eps Z^d` in lexicographic order, coordinate 1 most
/// significant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub domain: BoxDomain,
    pub eps: f64,
    first: Point,
    counts: [usize; MAX_D],
}

impl Grid {
    pub fn discretize(domain: &BoxDomain, scale: LatticeScale) -> Result<Self> {
        let eps = scale.eps();
        let mut first = [0i64; MAX_D];
        let mut counts = [1usize; MAX_D];
        for k in 0..domain.d {
            let a = math::floor(domain.lo[k] / eps + 1e-9) as i64 + 1;
            let b = math::ceil(domain.hi[k] / eps - 1e-9) as i64 - 1;
            if b < a {
                return Err(Error::EmptyDomain);
            }
            first[k] = a;
            counts[k] = (b - a + 1) as usize;
        }
        Ok(Grid { domain: *domain, eps, first, counts })
    }

    /// Like `discretize` but accepts any positive spacing, including `eps >= 1`.
    pub fn discretize_raw(domain: &BoxDomain, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidScale(eps));
        }
        let mut first = [0i64; MAX_D];
        let mut counts = [1usize; MAX_D];
        for k in 0..domain.d {
            let a = math::floor(domain.lo[k] / eps + 1e-9) as i64 + 1;
            let b = math::ceil(domain.hi[k] / eps - 1e-9) as i64 - 1;
            if b < a {
                return Err(Error::EmptyDomain);
            }
            first[k] = a;
            counts[k] = (b - a + 1) as usize;
        }
        Ok(Grid { domain: *domain, eps, first, counts })
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.domain.d
    }

    pub fn scale(&self) -> LatticeScale {
        LatticeScale::new(self.eps).expect("grid spacing validated at construction")
    }

    pub fn spec(&self) -> KernelSpec {
        KernelSpec::new(self.domain.d).expect("dimension validated at construction")
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> [usize; MAX_D] {
        self.counts
    }

    pub fn first(&self) -> Point {
        self.first
    }

    /// Integer lattice coordinates of site `i`.
    #[inline]
    pub fn site(&self, i: usize) -> Point {
        let c2 = i % self.counts[2];
        let r = i / self.counts[2];
        let c1 = r % self.counts[1];
        let c0 = r / self.counts[1];
        [self.first[0] + c0 as i64, self.first[1] + c1 as i64, self.first[2] + c2 as i64]
    }

    /// Physical position `eps * site(i)`.
    pub fn position(&self, i: usize) -> [f64; MAX_D] {
        let s = self.site(i);
        [s[0] as f64 * self.eps, s[1] as f64 * self.eps, s[2] as f64 * self.eps]
    }

    #[inline]
    pub fn index_of(&self, w: &Point) -> Option<usize> {
        let mut idx = 0usize;
        for k in 0..MAX_D {
            let c = w[k] - self.first[k];
            if c < 0 || c >= self.counts[k] as i64 {
                return None;
            }
            idx = idx * self.counts[k] + c as usize;
        }
        Some(idx)
    }

    #[inline]
    pub fn contains_site(&self, w: &Point) -> bool {
        self.index_of(w).is_some()
    }

    /// Largest lattice distance between two sites.
    pub fn lattice_extent(&self) -> f64 {
        let s: f64 = (0..self.d()).map(|k| { let c = (self.counts[k] - 1) as f64; c * c }).sum();
        math::sqrt(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: &Grid) -> Self {
        GridFunction { grid: *grid, values: alloc::vec![0.0; grid.len()] }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        GridFunction { grid: *grid, values: alloc::vec![c; grid.len()] }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(GridFunction { grid: *grid, values })
    }

    /// Samples a function of the physical position at every site.
    pub fn from_fn<F: Fn([f64; MAX_D]) -> f64>(grid: &Grid, f: F) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.position(i))).collect();
        GridFunction { grid: *grid, values }
    }

    /// Indicator of one site.
    pub fn indicator(grid: &Grid, i: usize) -> Self {
        let mut g = Self::zeros(grid);
        g.values[i] = 1.0;
        g
    }

    /// Value at a lattice point; zero off the grid.
    #[inline]
    pub fn at(&self, w: &Point) -> f64 {
        match self.grid.index_of(w) {
            Some(i) => self.values[i],
            None => 0.0,
        }
    }

    pub fn scaled(&self, t: f64) -> Self {
        GridFunction { grid: self.grid, values: self.values.iter().map(|v| v * t).collect() }
    }

    pub fn add(&self, other: &GridFunction) -> Result<Self> {
        same_grid(self, other)?;
        Ok(GridFunction {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        same_grid(self, other)?;
        Ok(GridFunction {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `eps^d sum g h`.
    pub fn inner(&self, other: &GridFunction) -> Result<f64> {
        same_grid(self, other)?;
        Ok(math::powi(self.grid.eps, self.grid.d() as i32) * dot(&self.values, &other.values))
    }
}

fn same_grid(a: &GridFunction, b: &GridFunction) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// `(eps^d sum h^2)^{1/2}`.
pub fn l2_norm(h: &GridFunction) -> f64 {
    let eps_d = math::powi(h.grid.eps, h.grid.d() as i32);
    math::sqrt(eps_d * dot(&h.values, &h.values))
}

/// Per-site sums needed by the direct energy evaluations: for site `i`,
/// `(sum over j in U, j != i of c(i,j) (h_i - h_j)(g_i - g_j), sum over
/// |w| <= R with i+w outside U of c(i, i+w))`.
fn energy_rows(
    h: &GridFunction,
    g: &GridFunction,
    stencil: &Stencil,
    env: Option<&EnvironmentSpec>,
) -> Vec<(f64, f64)> {
    let grid = h.grid;
    let spec = grid.spec();
    let n = grid.len();
    par::map_range(n, |i| {
        let x = grid.site(i);
        let mut inner = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let y = grid.site(j);
            let w = [y[0] - x[0], y[1] - x[1], y[2] - x[2]];
            let a = env.map_or(1.0, |e| e.value(&x, &y));
            inner += a * kernel::kernel_j(&w, spec) * (h.values[i] - h.values[j]) * (g.values[i] - g.values[j]);
        }
        let mut out = 0.0;
        for (w, jw) in stencil.half() {
            for sgn in [1i64, -1] {
                let y = [x[0] + sgn * w[0], x[1] + sgn * w[1], x[2] + sgn * w[2]];
                if !grid.contains_site(&y) {
                    out += env.map_or(1.0, |e| e.value(&x, &y)) * jw;
                }
            }
        }
        (inner, out)
    })
}

/// Critical `H^1` seminorm, `((eps^{2d}/kappa) sum_{x,z} J(z) (h(x+z)-h(x))^2)^{1/2}`,
/// evaluated directly over pairs; the far killing sum follows `policy`.
pub fn h1crit_seminorm(h: &GridFunction, policy: &TruncationPolicy) -> Result<f64> {
    let grid = h.grid;
    let stencil = Stencil::new(&grid, policy)?;
    let rows = energy_rows(h, h, &stencil, None);
    let per_site: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, (inner, out))| inner + 2.0 * h.values[i] * h.values[i] * (out + stencil.tail()))
        .collect();
    let d = grid.d() as i32;
    let kappa = kernel::kappa_eps(grid.scale(), grid.spec());
    let pref = math::powi(grid.eps, d - 2) / kappa;
    Ok(math::sqrt((pref * pairwise_sum(&per_site)).max(0.0)))
}

/// `D_a^eps(h, g) = (eps^{2d} / 2 kappa) sum_{x,z} a J (h(x+z)-h(x)) (g(x+z)-g(x))`
/// over ordered pairs touching `U`, evaluated directly (not through the operator).
pub fn dirichlet_form(
    env: &EnvironmentSpec,
    policy: &TruncationPolicy,
    h: &GridFunction,
    g: &GridFunction,
) -> Result<f64> {
    same_grid(h, g)?;
    if env.d != h.grid.d() {
        return Err(Error::InvalidDimension(env.d));
    }
    let grid = h.grid;
    let stencil = Stencil::new(&grid, policy)?;
    let rows = energy_rows(h, g, &stencil, Some(env));
    let abar = env.mean();
    let per_site: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, (inner, out))| inner + 2.0 * h.values[i] * g.values[i] * (out + abar * stencil.tail()))
        .collect();
    let d = grid.d() as i32;
    let kappa = kernel::kappa_eps(grid.scale(), grid.spec());
    let pref = math::powi(grid.eps, d - 2) / (2.0 * kappa);
    Ok(pref * pairwise_sum(&per_site))
}

/// Dual norm `||g||_{H^{-1}_crit} = sup <g,h> / ||h||_{H^1_crit}`, through the
/// `a = 1` Gram solve: `||g||^2 = eps^d <g, A^{-1} g> / 2` with `A = -L_1`.
pub fn hminus1crit_norm(g: &GridFunction, policy: &TruncationPolicy, tol: f64) -> Result<f64> {
    if g.values.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let env = EnvironmentSpec::unit(g.grid.d())?;
    let op = OperatorHandle::new(&env, &g.grid, policy)?;
    let rep = solver::solve_resolvent(&op, 0.0, g, tol)?;
    let pairing = g.inner(&rep.solution)?;
    Ok(math::sqrt((pairing / 2.0).max(0.0)))
}
