//! The Dirichlet-restricted rescaled generator
//! `L h(x) = (eps^d / kappa_eps) sum_z a(x/eps, (x+z)/eps) J(z) (h(x+z) - h(x))`.
//!
//! In lattice units this is `s * sum_w a |w|^{-(d+2)} (h_{i+w} - h_i)` with
//! `s = 1 / (kappa_eps eps^2)`. Couplings inside `U` are exact. The killing sum
//! for `i + w` outside `U` uses the sampled conductances up to `|w| <= r_kill / eps`
//! and the mean conductance times an analytic tail sum beyond.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::environment::EnvironmentSpec;
use crate::grid::{BoxDomain, Grid, GridFunction};
use crate::kernel::{self, KernelSpec};
use crate::sum::{dot, pairwise_sum};
use crate::{math, par, Error, Point, Result, MAX_D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMode {
    /// Conductances beyond `r_kill` replaced by their mean.
    MeanField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    /// Physical radius of exact random summation.
    pub r_kill: f64,
    pub tail_mode: TailMode,
}

impl TruncationPolicy {
    /// `r_kill = 2 diam U`.
    pub fn default_for(domain: &BoxDomain) -> Self {
        TruncationPolicy { r_kill: 2.0 * domain.diam(), tail_mode: TailMode::MeanField }
    }

    pub fn with_radius(domain: &BoxDomain, r_kill: f64) -> Result<Self> {
        if !(r_kill >= domain.diam() * (1.0 - 1e-12)) {
            return Err(Error::InvalidParameter("r_kill must be at least diam U"));
        }
        Ok(TruncationPolicy { r_kill, tail_mode: TailMode::MeanField })
    }
}

/// Lattice offsets of the exact-summation ball with their kernel weights, and
/// the tail mass beyond it.
#[derive(Debug, Clone)]
pub struct Stencil {
    spec: KernelSpec,
    radius: f64,
    half: Vec<(Point, f64)>,
    tail: f64,
}

impl Stencil {
    pub fn new(grid: &Grid, policy: &TruncationPolicy) -> Result<Self> {
        if !(policy.r_kill >= grid.domain.diam() * (1.0 - 1e-12)) {
            return Err(Error::InvalidParameter("r_kill must be at least diam U"));
        }
        let spec = grid.spec();
        let radius = policy.r_kill / grid.eps;
        Ok(Stencil {
            spec,
            radius,
            half: kernel::half_ball(spec, radius),
            tail: kernel::ball_tail(spec, radius),
        })
    }

    /// Lexicographically positive half of the ball; negate for the other half.
    pub fn half(&self) -> &[(Point, f64)] {
        &self.half
    }

    /// `sum_{|w| > R} |w|^{-(d+2)}`.
    pub fn tail(&self) -> f64 {
        self.tail
    }

    /// Lattice radius `R = r_kill / eps`.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }
}

/// Largest site count for which the coupling matrix is cached densely.
pub const DENSE_LIMIT: usize = 4896;

#[derive(Debug, Clone)]
pub struct OperatorHandle {
    env: EnvironmentSpec,
    grid: Grid,
    policy: TruncationPolicy,
    kappa: f64,
    s: f64,
    tail: f64,
    jtab: Vec<f64>,
    rate: Vec<f64>,
    out_rate: Vec<f64>,
    drift: Vec<[f64; MAX_D]>,
    dense: Option<Vec<f64>>,
}

impl OperatorHandle {
    pub fn new(env: &EnvironmentSpec, grid: &Grid, policy: &TruncationPolicy) -> Result<Self> {
        Self::build(env, grid, policy, grid.len() <= DENSE_LIMIT)
    }

    /// Never caches couplings; every matvec regenerates them.
    pub fn matrix_free(env: &EnvironmentSpec, grid: &Grid, policy: &TruncationPolicy) -> Result<Self> {
        Self::build(env, grid, policy, false)
    }

    fn build(env: &EnvironmentSpec, grid: &Grid, policy: &TruncationPolicy, dense: bool) -> Result<Self> {
        env.validate()?;
        if env.d != grid.d() {
            return Err(Error::InvalidDimension(env.d));
        }
        let stencil = Stencil::new(grid, policy)?;
        let spec = grid.spec();
        let d = grid.d();
        let kappa = kernel::kappa_eps(grid.scale(), spec);
        let s = 1.0 / (kappa * grid.eps * grid.eps);
        let abar = env.mean();

        let counts = grid.counts();
        let mut jtab = alloc::vec![0.0; grid.len()];
        for (idx, slot) in jtab.iter_mut().enumerate() {
            let c2 = idx % counts[2];
            let r = idx / counts[2];
            let w = [(r / counts[1]) as i64, (r % counts[1]) as i64, c2 as i64];
            *slot = kernel::kernel_j(&w[..d], spec);
        }

        let per_site: Vec<(f64, f64, [f64; MAX_D])> = par::map_range(grid.len(), |i| {
            let x = grid.site(i);
            let mut tot = 0.0;
            let mut out = 0.0;
            let mut drift = [0.0; MAX_D];
            for (w, jw) in stencil.half() {
                let yp = [x[0] + w[0], x[1] + w[1], x[2] + w[2]];
                let ym = [x[0] - w[0], x[1] - w[1], x[2] - w[2]];
                let ap = env.value(&x, &yp);
                let am = env.value(&x, &ym);
                tot += (ap + am) * jw;
                // (a+ - a-) is exactly zero for a constant field
                let da = (ap - am) * jw;
                for k in 0..d {
                    drift[k] += da * w[k] as f64;
                }
                if !grid.contains_site(&yp) {
                    out += ap * jw;
                }
                if !grid.contains_site(&ym) {
                    out += am * jw;
                }
            }
            let t = abar * stencil.tail();
            (s * (tot + t), s * (out + t), drift)
        });
        let mut handle = OperatorHandle {
            env: *env,
            grid: *grid,
            policy: *policy,
            kappa,
            s,
            tail: stencil.tail(),
            jtab,
            rate: per_site.iter().map(|p| p.0).collect(),
            out_rate: per_site.iter().map(|p| p.1).collect(),
            drift: per_site.iter().map(|p| p.2).collect(),
            dense: None,
        };
        if dense {
            let n = grid.len();
            let rows: Vec<Vec<f64>> = par::map_range(n, |i| (0..n).map(|j| handle.coupling(i, j)).collect());
            let mut m = Vec::with_capacity(n * n);
            for r in rows {
                m.extend_from_slice(&r);
            }
            handle.dense = Some(m);
        }
        Ok(handle)
    }

    #[inline]
    fn jlookup(&self, x: &Point, y: &Point) -> f64 {
        let c = self.grid.counts();
        let idx = ((x[0] - y[0]).unsigned_abs() as usize * c[1] + (x[1] - y[1]).unsigned_abs() as usize) * c[2]
            + (x[2] - y[2]).unsigned_abs() as usize;
        self.jtab[idx]
    }

    /// `c_ij = s a(i,j) |w_j - w_i|^{-(d+2)}`, zero on the diagonal.
    #[inline]
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        if let Some(m) = &self.dense {
            return m[i * self.grid.len() + j];
        }
        let x = self.grid.site(i);
        let y = self.grid.site(j);
        self.s * self.env.value(&x, &y) * self.jlookup(&x, &y)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn env(&self) -> &EnvironmentSpec {
        &self.env
    }

    pub fn policy(&self) -> &TruncationPolicy {
        &self.policy
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Lattice-unit prefactor `1 / (kappa eps^2)`.
    pub fn prefactor(&self) -> f64 {
        self.s
    }

    /// Total jump rate out of each site (the negated diagonal of `L`).
    pub fn diagonal(&self) -> &[f64] {
        &self.rate
    }

    /// Killing rate: jumps leaving `U`.
    pub fn killing_rate(&self) -> &[f64] {
        &self.out_rate
    }

    /// Analytic tail mass `sum_{|w|>R} |w|^{-(d+2)}`.
    pub fn tail_mass(&self) -> f64 {
        self.tail
    }

    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `out = L h` on raw value slices.
    pub fn apply_slice(&self, h: &[f64], out: &mut [f64]) {
        let n = self.grid.len();
        debug_assert_eq!(h.len(), n);
        match &self.dense {
            Some(m) => par::fill(out, |i| dot(&m[i * n..(i + 1) * n], h) - self.rate[i] * h[i]),
            None => par::fill(out, |i| {
                let x = self.grid.site(i);
                let mut acc = 0.0;
                for (j, hj) in h.iter().enumerate() {
                    if j == i || *hj == 0.0 {
                        continue;
                    }
                    let y = self.grid.site(j);
                    acc += self.env.value(&x, &y) * self.jlookup(&x, &y) * hj;
                }
                self.s * acc - self.rate[i] * h[i]
            }),
        }
    }

    pub fn apply(&self, h: &GridFunction) -> Result<GridFunction> {
        if h.grid != self.grid {
            return Err(Error::GridMismatch);
        }
        let mut out = alloc::vec![0.0; self.grid.len()];
        self.apply_slice(&h.values, &mut out);
        GridFunction::from_values(&self.grid, out)
    }

    /// `eps^d <h, -L h>`.
    pub fn quadratic_form(&self, h: &GridFunction) -> Result<f64> {
        let lh = self.apply(h)?;
        Ok(-h.inner(&lh)?)
    }

    /// `b = L l_p` on `U`: `s eps sum_w a |w|^{-(d+2)} (p . w)`. The mean-field
    /// tail is odd in `w` and drops out.
    pub fn rhs_corrector(&self, p: &[f64]) -> Result<GridFunction> {
        let d = self.grid.d();
        if p.len() != d {
            return Err(Error::InvalidParameter("slope must have d components"));
        }
        let scale = self.s * self.grid.eps;
        let values = self
            .drift
            .iter()
            .map(|dr| {
                let terms: Vec<f64> = (0..d).map(|k| p[k] * dr[k]).collect();
                scale * pairwise_sum(&terms)
            })
            .collect();
        GridFunction::from_values(&self.grid, values)
    }

    /// Lattice-unit drift `sum_w a |w|^{-(d+2)} w` at each site.
    pub fn drift(&self) -> &[[f64; MAX_D]] {
        &self.drift
    }
}

/// Shorthand for the `eps^d` weight.
pub fn cell_volume(grid: &Grid) -> f64 {
    math::powi(grid.eps, grid.d() as i32)
}
