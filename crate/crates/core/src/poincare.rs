//! Slab averaging, the single-scale estimate and the critical Poincaré
//! constant on `U^eps`.

use alloc::vec::Vec;

use crate::environment::EnvironmentSpec;
use crate::grid::{Grid, GridFunction};
use crate::kernel::{self, norm2, norm_inf, pow3, Slab};
use crate::operator::{OperatorHandle, TruncationPolicy};
use crate::solver::pcg;
use crate::sum::{dot, pairwise_sum};
use crate::{math, par, Error, Point, Result, MAX_D};

/// `T_k h(x) = sum_{z in S_k} J(z) h(x+z) / sum_{z in S_k} J(z)`.
#[derive(Debug, Clone)]
pub struct AveragingOperator {
    pub slab: Slab,
    pub weights: Vec<f64>,
}

impl AveragingOperator {
    pub fn new(slab: Slab) -> Result<Self> {
        if slab.is_empty() {
            return Err(Error::InvalidScale(slab.eps));
        }
        let spec = kernel::KernelSpec::new(slab.d)?;
        let raw: Vec<f64> = slab.points.iter().map(|w| kernel::kernel_j(w, spec)).collect();
        let total = pairwise_sum(&raw);
        let weights = raw.iter().map(|j| j / total).collect();
        Ok(AveragingOperator { slab, weights })
    }

    pub fn for_grid(grid: &Grid, k: u32) -> Result<Self> {
        Self::new(kernel::slab_points(grid.scale(), k, grid.spec(), grid.domain.diam())?)
    }

    /// `N = ceil(diam / (eps 3^k))`, the number of applications that pushes
    /// any support out of `U^eps`.
    pub fn exit_iterations(&self, grid: &Grid) -> usize {
        let step = self.slab.eps * pow3(self.slab.k) as f64;
        math::ceil(grid.domain.diam() / step - 1e-12) as usize
    }

    /// Componentwise bounds of the slab points.
    fn bounds(&self) -> (Point, Point) {
        let mut lo = [i64::MAX; MAX_D];
        let mut hi = [i64::MIN; MAX_D];
        for z in &self.slab.points {
            for k in 0..MAX_D {
                lo[k] = lo[k].min(z[k]);
                hi[k] = hi[k].max(z[k]);
            }
        }
        (lo, hi)
    }
}

/// Rectangular block of `Z^d`; values outside read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowFunction {
    pub d: usize,
    pub lo: Point,
    pub n: [usize; MAX_D],
    pub values: Vec<f64>,
}

impl WindowFunction {
    /// Embeds `h` in a window padded enough for `iterations` applications of `op`.
    pub fn embed(h: &GridFunction, op: &AveragingOperator, iterations: usize) -> Self {
        let g = &h.grid;
        let d = g.d();
        let (zlo, zhi) = op.bounds();
        let first = g.first();
        let counts = g.counts();
        let mut lo = [0i64; MAX_D];
        let mut n = [1usize; MAX_D];
        let it = iterations as i64;
        for k in 0..d {
            // support of T^m h sits in [first - m*zhi, last - m*zlo]
            let a = first[k] - it * zhi[k].max(0);
            let b = first[k] + counts[k] as i64 - 1 - it * zlo[k].min(0);
            lo[k] = a;
            n[k] = (b - a + 1) as usize;
        }
        let mut w = WindowFunction { d, lo, n, values: alloc::vec![0.0; n[0] * n[1] * n[2]] };
        for i in 0..g.len() {
            let idx = w.index(&g.site(i)).expect("grid inside window");
            w.values[idx] = h.values[i];
        }
        w
    }

    #[inline]
    pub fn index(&self, x: &Point) -> Option<usize> {
        let mut idx = 0usize;
        for k in 0..MAX_D {
            let c = x[k] - self.lo[k];
            if c < 0 || c >= self.n[k] as i64 {
                return None;
            }
            idx = idx * self.n[k] + c as usize;
        }
        Some(idx)
    }

    pub fn point(&self, mut i: usize) -> Point {
        let mut x = [0i64; MAX_D];
        for k in (0..MAX_D).rev() {
            x[k] = self.lo[k] + (i % self.n[k]) as i64;
            i /= self.n[k];
        }
        x
    }

    #[inline]
    pub fn at(&self, x: &Point) -> f64 {
        self.index(x).map_or(0.0, |i| self.values[i])
    }

    pub fn sum_sq(&self) -> f64 {
        dot(&self.values, &self.values)
    }

    pub fn restrict(&self, grid: &Grid) -> GridFunction {
        let values = (0..grid.len()).map(|i| self.at(&grid.site(i))).collect();
        GridFunction { grid: *grid, values }
    }

    /// Bounding box of the nonzero values, if any.
    fn support(&self) -> Option<(Point, Point)> {
        let mut lo = [i64::MAX; MAX_D];
        let mut hi = [i64::MIN; MAX_D];
        let mut any = false;
        for (i, v) in self.values.iter().enumerate() {
            if *v != 0.0 {
                any = true;
                let x = self.point(i);
                for k in 0..MAX_D {
                    lo[k] = lo[k].min(x[k]);
                    hi[k] = hi[k].max(x[k]);
                }
            }
        }
        any.then_some((lo, hi))
    }
}

/// One application of `T_k` on the window of `h`.
pub fn slab_average(op: &AveragingOperator, h: &WindowFunction) -> Result<WindowFunction> {
    if op.slab.d != h.d {
        return Err(Error::InvalidDimension(op.slab.d));
    }
    if let Some((slo, shi)) = h.support() {
        let (zlo, zhi) = op.bounds();
        let need_lo = [slo[0] - zhi[0], slo[1] - zhi[1], slo[2] - zhi[2]];
        let need_hi = [shi[0] - zlo[0], shi[1] - zlo[1], shi[2] - zlo[2]];
        if h.index(&need_lo).is_none() || h.index(&need_hi).is_none() {
            return Err(Error::WindowOverflow);
        }
    }
    let mut out = WindowFunction { values: alloc::vec![0.0; h.values.len()], ..*h };
    let pts = &op.slab.points;
    par::fill(&mut out.values, |i| {
        let x = h.point(i);
        let mut acc = 0.0;
        for (z, w) in pts.iter().zip(&op.weights) {
            let v = h.at(&[x[0] + z[0], x[1] + z[1], x[2] + z[2]]);
            if v != 0.0 {
                acc += w * v;
            }
        }
        acc
    });
    Ok(out)
}

/// `T_k^N h` for `N = exit_iterations`, restricted back to `U^eps`.
pub fn iterate_to_exit(op: &AveragingOperator, h: &GridFunction) -> Result<(GridFunction, usize)> {
    let n = op.exit_iterations(&h.grid);
    let mut w = WindowFunction::embed(h, op, n);
    for _ in 0..n {
        w = slab_average(op, &w)?;
    }
    Ok((w.restrict(&h.grid), n))
}

/// `||h||^2_{L^2} / (diam^2 eps^{2d} sum_x sum_{shell k} J(z) (h(x+z)-h(x))^2)`,
/// shell `k` being `3^k <= |w|_inf < 3^{k+1}` in lattice units. `h = 0` gives 0.
pub fn single_scale_ratio(h: &GridFunction, k: u32) -> Result<f64> {
    let g = &h.grid;
    let d = g.d();
    let eps = g.eps;
    let diam = g.domain.diam();
    let lo = pow3(k);
    if eps * lo as f64 > diam * (1.0 + 1e-12) {
        return Err(Error::InvalidScale(eps * lo as f64));
    }
    let hi = 3 * lo;
    let spec = g.spec();
    let ex = spec.exponent();
    let mut shell = Vec::new();
    let r = |i: usize| if i < d { -(hi - 1)..=(hi - 1) } else { 0..=0 };
    for a in r(0) {
        for b in r(1) {
            for c in r(2) {
                let w = [a, b, c];
                if norm_inf(&w) >= lo {
                    shell.push((w, math::inv_pow_from_sq(norm2(&w) as f64, ex)));
                }
            }
        }
    }
    if shell.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let l2 = pairwise_sum(&h.values.iter().map(|v| v * v).collect::<Vec<_>>());
    if l2 == 0.0 {
        return Ok(0.0);
    }
    let per_site = par::map_range(g.len(), |i| {
        let x = g.site(i);
        let hx = h.values[i];
        let mut inside = 0.0;
        let mut outside = 0.0;
        for (w, j) in &shell {
            let y = [x[0] + w[0], x[1] + w[1], x[2] + w[2]];
            match g.index_of(&y) {
                Some(jx) => {
                    let diff = h.values[jx] - hx;
                    inside += j * diff * diff;
                }
                None => outside += j,
            }
        }
        // ordered pairs with one endpoint outside appear twice in the full sum
        inside + 2.0 * hx * hx * outside
    });
    let energy = pairwise_sum(&per_site) * math::powi(eps, -((d + 2) as i32));
    // eps^d ||h||^2 / (diam^2 eps^{2d} E)
    Ok(l2 / (diam * diam * math::powi(eps, d as i32) * energy))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoincareEstimate {
    pub c_p: f64,
    pub iterations: usize,
}

/// Largest `||h||^2_{L^2} / ||h||^2_{H^1crit}` over `h` supported in `U^eps`,
/// by power iteration on the inverse Gram operator from the all-ones vector.
pub fn poincare_constant(grid: &Grid, policy: &TruncationPolicy, tol: f64) -> Result<PoincareEstimate> {
    let env = EnvironmentSpec::unit(grid.d())?;
    let op = OperatorHandle::new(&env, grid, policy)?;
    poincare_constant_with(&op, tol)
}

/// Same as [`poincare_constant`] on an existing `a = 1` operator.
pub fn poincare_constant_with(op: &OperatorHandle, tol: f64) -> Result<PoincareEstimate> {
    if !op.env().distribution.is_constant() || op.env().mean() != 1.0 {
        return Err(Error::InvalidParameter("Poincare constant uses the a = 1 operator"));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive"));
    }
    let n = op.len();
    // H1crit^2 = eps^d <h, 2A h> with A = -L
    let diag: Vec<f64> = op.diagonal().iter().map(|v| 2.0 * v).collect();
    let apply = |h: &[f64], out: &mut [f64]| {
        op.apply_slice(h, out);
        for o in out.iter_mut() {
            *o *= -2.0;
        }
    };
    let inner_tol = (tol * 1e-4).max(1e-13);
    let mut x = alloc::vec![1.0; n];
    let norm0 = math::sqrt(dot(&x, &x));
    x.iter_mut().for_each(|v| *v /= norm0);
    let mut est = 0.0;
    let max_iter = 2000;
    for it in 1..=max_iter {
        let (y, _, _) = pcg(apply, &diag, &x, inner_tol, 10 * n + 1000)?;
        let next = dot(&x, &y);
        let ny = math::sqrt(dot(&y, &y));
        x = y.into_iter().map(|v| v / ny).collect();
        if it > 1 && (next - est).abs() <= tol * next {
            return Ok(PoincareEstimate { c_p: next, iterations: it });
        }
        est = next;
    }
    Err(Error::Stagnation { iterations: max_iter, last_estimate: est })
}
