//! Canonical nearest-neighbour paths and the solenoidal comparison field.
//!
//! Field values are kept in lattice units: the physical field is
//! `eps^{-(d+1)}` times the stored one. For a long edge `{u, u+v}` the cycle
//! `C_{u+v,u}` carries unit flow from `u` to `u+v` and returns along the
//! canonical path from `u+v` back to `u`. The field is
//! `g_p = abar J (p.z) + sum_{(u,v) in I} (a(u,u+v) - abar) J(v) (p.v) C_{u+v,u}`,
//! summed over `1 < |v| <= R`.

use alloc::vec::Vec;

use crate::environment::EnvironmentSpec;
use crate::grid::Grid;
use crate::kernel::{self, lex_positive, norm2};
use crate::operator::{Stencil, TruncationPolicy};
use crate::solver;
use crate::sum::pairwise_sum;
use crate::{math, par, Error, Point, Result, MAX_D};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalPath {
    pub from: Point,
    pub to: Point,
    /// Directed nearest-neighbour steps `(a, b)`.
    pub steps: Vec<(Point, Point)>,
}

/// Path from `u` to `v` adjusting coordinate 1 first, then 2, and so on.
pub fn canonical_path(u: Point, v: Point, d: usize) -> Result<CanonicalPath> {
    if u == v {
        return Err(Error::DegenerateEdge);
    }
    let mut steps = Vec::new();
    let mut cur = u;
    for k in 0..d {
        while cur[k] != v[k] {
            let mut next = cur;
            next[k] += if v[k] > cur[k] { 1 } else { -1 };
            steps.push((cur, next));
            cur = next;
        }
    }
    Ok(CanonicalPath { from: u, to: v, steps })
}

fn nn_direction(a: &Point, b: &Point) -> Option<usize> {
    let diff = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    if norm2(&diff) != 1 {
        return None;
    }
    diff.iter().position(|&c| c != 0)
}

/// Number of translates `(u, u+z)` whose canonical path uses the undirected
/// nearest-neighbour edge `e`: exactly `|z_k|` for an edge along axis `k`.
pub fn path_edge_count(e: (Point, Point), z: Point) -> Result<u64> {
    if z == [0; MAX_D] {
        return Err(Error::DegenerateEdge);
    }
    let k = nn_direction(&e.0, &e.1).ok_or(Error::InvalidParameter("edge must join nearest neighbours"))?;
    Ok(z[k].unsigned_abs())
}

/// Exhaustive version of [`path_edge_count`]: walks every translate whose
/// bounding box contains the edge.
pub fn path_edge_count_brute(e: (Point, Point), z: Point, d: usize) -> Result<u64> {
    if z == [0; MAX_D] {
        return Err(Error::DegenerateEdge);
    }
    nn_direction(&e.0, &e.1).ok_or(Error::InvalidParameter("edge must join nearest neighbours"))?;
    let a = e.0;
    let mut lo = [0i64; MAX_D];
    let mut hi = [0i64; MAX_D];
    for k in 0..d {
        lo[k] = a[k] - z[k].max(0);
        hi[k] = a[k] - z[k].min(0);
    }
    let mut count = 0;
    let mut u = lo;
    loop {
        let path = canonical_path(u, [u[0] + z[0], u[1] + z[1], u[2] + z[2]], d)?;
        if path.steps.iter().any(|&(p, q)| (p, q) == e || (q, p) == e) {
            count += 1;
        }
        // odometer over the box
        let mut k = 0;
        loop {
            if k == d {
                return Ok(count);
            }
            if u[k] < hi[k] {
                u[k] += 1;
                break;
            }
            u[k] = lo[k];
            k += 1;
        }
    }
}

/// The solenoidal field on the nearest-neighbour edges of a window around `U`
/// together with closed-form values on longer edges.
#[derive(Debug, Clone)]
pub struct SolenoidalField {
    env: EnvironmentSpec,
    grid: Grid,
    p: [f64; MAX_D],
    abar: f64,
    stencil: Stencil,
    win_lo: Point,
    win_n: [usize; MAX_D],
    /// `nn[k][idx]` is `g(y + e_k, y)` for window base point `y`.
    nn: Vec<Vec<f64>>,
}

impl SolenoidalField {
    pub fn build(env: &EnvironmentSpec, grid: &Grid, policy: &TruncationPolicy, p: &[f64]) -> Result<Self> {
        let d = grid.d();
        if env.d != d {
            return Err(Error::InvalidDimension(env.d));
        }
        if p.len() != d {
            return Err(Error::InvalidParameter("slope must have d components"));
        }
        let stencil = Stencil::new(grid, policy)?;
        let reach = math::ceil(stencil.radius()) as i64 + 1;
        let mut win_lo = [0i64; MAX_D];
        let mut win_n = [1usize; MAX_D];
        let first = grid.first();
        let counts = grid.counts();
        for k in 0..d {
            win_lo[k] = first[k] - reach;
            win_n[k] = counts[k] + 2 * reach as usize + 1;
        }
        let mut slope = [0.0; MAX_D];
        slope[..d].copy_from_slice(p);
        let total = win_n[0] * win_n[1] * win_n[2];
        let mut field = SolenoidalField {
            env: *env,
            grid: *grid,
            p: slope,
            abar: env.mean(),
            stencil,
            win_lo,
            win_n,
            nn: (0..d).map(|_| alloc::vec![0.0; total]).collect(),
        };
        field.scatter_cycles();
        let abar = field.abar;
        for k in 0..d {
            let bg = abar * slope[k];
            for v in field.nn[k].iter_mut() {
                *v += bg;
            }
        }
        Ok(field)
    }

    #[inline]
    fn win_index(&self, y: &Point) -> Option<usize> {
        let mut idx = 0usize;
        for k in 0..MAX_D {
            let c = y[k] - self.win_lo[k];
            if c < 0 || c >= self.win_n[k] as i64 {
                return None;
            }
            idx = idx * self.win_n[k] + c as usize;
        }
        Some(idx)
    }

    /// Cycle weights for every `(u, v)` in the index set with `1 < |v| <= R`.
    fn cycle_weights(&self, u: &Point) -> Vec<(Point, f64)> {
        let d = self.grid.d();
        let mut out = Vec::new();
        for (w, jw) in self.stencil.half() {
            if norm2(w) == 1 {
                continue;
            }
            for sgn in [1i64, -1] {
                let v = [sgn * w[0], sgn * w[1], sgn * w[2]];
                let y = [u[0] + v[0], u[1] + v[1], u[2] + v[2]];
                if self.grid.contains_site(&y) && !lex_positive(&v) {
                    // both endpoints in U: represented from the smaller endpoint
                    continue;
                }
                let a = self.env.value(u, &y);
                let pv: f64 = (0..d).map(|k| self.p[k] * v[k] as f64).sum();
                let weight = (a - self.abar) * jw * pv;
                if weight != 0.0 {
                    out.push((v, weight));
                }
            }
        }
        out
    }

    fn scatter_cycles(&mut self) {
        let d = self.grid.d();
        let n = self.grid.len();
        let per_site: Vec<Vec<(Point, f64)>> = par::map_range(n, |i| self.cycle_weights(&self.grid.site(i)));
        // difference arrays along each axis
        let mut diff: Vec<Vec<f64>> = (0..d).map(|_| alloc::vec![0.0; self.nn[0].len()]).collect();
        for (i, cycles) in per_site.iter().enumerate() {
            let u = self.grid.site(i);
            for &(v, weight) in cycles {
                for k in 0..d {
                    if v[k] == 0 {
                        continue;
                    }
                    // segment k runs along axis k from u_k + v_k to u_k
                    let mut y = [0i64; MAX_D];
                    for j in 0..d {
                        y[j] = if j < k { u[j] } else { u[j] + v[j] };
                    }
                    let lo = u[k].min(u[k] + v[k]);
                    let hi = u[k].max(u[k] + v[k]) - 1;
                    let c = if v[k] > 0 { -weight } else { weight };
                    y[k] = lo;
                    let a = self.win_index(&y).expect("window holds every return path");
                    diff[k][a] += c;
                    y[k] = hi + 1;
                    let b = self.win_index(&y).expect("window holds every return path");
                    diff[k][b] -= c;
                }
            }
        }
        for (k, dk) in diff.iter().enumerate() {
            // prefix sums along axis k
            let stride: usize = self.win_n[k + 1..].iter().product();
            let len_k = self.win_n[k];
            let outer: usize = self.win_n[..k].iter().product();
            for o in 0..outer {
                for s in 0..stride {
                    let mut run = 0.0;
                    for t in 0..len_k {
                        let idx = (o * len_k + t) * stride + s;
                        run += dk[idx];
                        self.nn[k][idx] = run;
                    }
                }
            }
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Same nearest-neighbour value recomputed by enumerating the pairs whose
    /// return path crosses the edge `{y, y + e_k}`.
    pub fn nn_value_direct(&self, y: &Point, k: usize) -> f64 {
        let d = self.grid.d();
        let mut acc = self.abar * self.p[k];
        for (w, jw) in self.stencil.half() {
            if norm2(w) == 1 {
                continue;
            }
            for sgn in [1i64, -1] {
                let v = [sgn * w[0], sgn * w[1], sgn * w[2]];
                if v[k] == 0 {
                    continue;
                }
                // u fixed by y off axis k; u_k ranges over |v_k| values
                let mut u = [0i64; MAX_D];
                for j in 0..d {
                    if j < k {
                        u[j] = y[j];
                    } else if j > k {
                        u[j] = y[j] - v[j];
                    }
                }
                let (lo, hi) = if v[k] > 0 { (y[k] - v[k] + 1, y[k]) } else { (y[k] + 1, y[k] - v[k]) };
                for uk in lo..=hi {
                    u[k] = uk;
                    if !self.grid.contains_site(&u) {
                        continue;
                    }
                    let end = [u[0] + v[0], u[1] + v[1], u[2] + v[2]];
                    if self.grid.contains_site(&end) && !lex_positive(&v) {
                        continue;
                    }
                    let a = self.env.value(&u, &end);
                    let pv: f64 = (0..d).map(|j| self.p[j] * v[j] as f64).sum();
                    let weight = (a - self.abar) * jw * pv;
                    acc += if v[k] > 0 { -weight } else { weight };
                }
            }
        }
        acc
    }

    /// `g(y, x)` in lattice units: flow from `x` to `y`.
    pub fn value(&self, y: &Point, x: &Point) -> f64 {
        let w = [y[0] - x[0], y[1] - x[1], y[2] - x[2]];
        let r2 = norm2(&w);
        if r2 == 0 {
            return 0.0;
        }
        let d = self.grid.d();
        if r2 == 1 {
            let k = w.iter().position(|&c| c != 0).expect("unit vector");
            let (base, sign) = if w[k] > 0 { (*x, 1.0) } else { (*y, -1.0) };
            let v = match self.win_index(&base) {
                Some(idx) => self.nn[k][idx],
                None => self.abar * self.p[k],
            };
            return sign * v;
        }
        let jw = kernel::kernel_j(&w[..d], self.stencil.spec());
        let pw: f64 = (0..d).map(|k| self.p[k] * w[k] as f64).sum();
        let touches = self.grid.contains_site(x) || self.grid.contains_site(y);
        let within = r2 <= kernel::ball_limit(self.stencil.radius());
        let a = if touches && within { self.env.value(x, y) } else { self.abar };
        a * jw * pw
    }

    /// `g - a J (p.z)` in lattice units; nonzero only on nearest-neighbour edges.
    pub fn sigma(&self, y: &Point, x: &Point) -> f64 {
        let w = [y[0] - x[0], y[1] - x[1], y[2] - x[2]];
        if norm2(&w) == 0 {
            return 0.0;
        }
        let d = self.grid.d();
        let jw = kernel::kernel_j(&w[..d], self.stencil.spec());
        let pw: f64 = (0..d).map(|k| self.p[k] * w[k] as f64).sum();
        let touches = self.grid.contains_site(x) || self.grid.contains_site(y);
        let within = norm2(&w) <= kernel::ball_limit(self.stencil.radius());
        let a = if touches && within { self.env.value(x, y) } else { self.abar };
        self.value(y, x) - a * jw * pw
    }

    /// `sum_{0<|w|<=R} g(x+w, x)`, lattice units.
    pub fn divergence(&self, x: &Point) -> f64 {
        let mut terms = Vec::with_capacity(2 * self.stencil.half().len());
        for (w, _) in self.stencil.half() {
            terms.push(self.value(&[x[0] + w[0], x[1] + w[1], x[2] + w[2]], x));
            terms.push(self.value(&[x[0] - w[0], x[1] - w[1], x[2] - w[2]], x));
        }
        pairwise_sum(&terms)
    }

    /// Largest `|divergence|` over the sites of `U`, relative to the largest
    /// single flow through a site.
    pub fn max_divergence(&self) -> f64 {
        let n = self.grid.len();
        let v = par::map_range(n, |i| self.divergence(&self.grid.site(i)).abs());
        v.into_iter().fold(0.0, f64::max)
    }

    /// Unordered nearest-neighbour edges touching `U`, as `(base, axis)`.
    fn touching_edges(&self) -> Vec<(Point, usize)> {
        let d = self.grid.d();
        let mut out = Vec::new();
        for i in 0..self.grid.len() {
            let x = self.grid.site(i);
            for k in 0..d {
                out.push((x, k));
                let mut xm = x;
                xm[k] -= 1;
                if !self.grid.contains_site(&xm) {
                    out.push((xm, k));
                }
            }
        }
        out
    }

    /// `F_eps(p) = (eps^{3d+2}/kappa) sum_{x in U, |z|=eps} Sigma_p(x+z, x)^2`.
    pub fn flux_energy(&self) -> f64 {
        let d = self.grid.d();
        let mut terms = Vec::new();
        for i in 0..self.grid.len() {
            let x = self.grid.site(i);
            for k in 0..d {
                for s in [1i64, -1] {
                    let mut y = x;
                    y[k] += s;
                    let sg = self.sigma(&y, &x);
                    terms.push(sg * sg);
                }
            }
        }
        let kappa = kernel::kappa_eps(self.grid.scale(), self.grid.spec());
        math::powi(self.grid.eps, d as i32) / kappa * pairwise_sum(&terms)
    }

    /// `(eps^{2d} / 2 kappa) sum over ordered pairs touching U of
    /// (g - a J p.z)^2 / (a J)`; only nearest-neighbour pairs contribute.
    pub fn energy_bound(&self) -> f64 {
        let d = self.grid.d();
        let terms: Vec<f64> = self
            .touching_edges()
            .iter()
            .map(|&(x, k)| {
                let mut y = x;
                y[k] += 1;
                let sg = self.sigma(&y, &x);
                sg * sg / self.env.value(&x, &y)
            })
            .collect();
        let kappa = kernel::kappa_eps(self.grid.scale(), self.grid.spec());
        // each unordered edge is two ordered pairs: (1/2) * 2 = 1
        math::powi(self.grid.eps, d as i32) / kappa * pairwise_sum(&terms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperBoundCheck {
    pub nu: f64,
    pub bound: f64,
    pub slack: f64,
    pub flux_energy: f64,
    pub holds: bool,
}

/// Pathwise check of `nu(U^eps, p) <= energy of the solenoidal comparison field`.
pub fn energy_upper_bound_check(
    env: &EnvironmentSpec,
    grid: &Grid,
    policy: &TruncationPolicy,
    p: &[f64],
    tol: f64,
) -> Result<UpperBoundCheck> {
    let op = crate::operator::OperatorHandle::new(env, grid, policy)?;
    let c = solver::solve_corrector(&op, p, tol)?;
    let field = SolenoidalField::build(env, grid, policy, p)?;
    let bound = field.energy_bound();
    let slack = bound - c.nu;
    Ok(UpperBoundCheck { nu: c.nu, bound, slack, flux_energy: field.flux_energy(), holds: slack >= -1e-10 })
}
