//! Conjugate-gradient solves of resolvent and corrector problems, the
//! homogenized finite-difference reference, and the derived diagnostics.

use alloc::vec::Vec;

use crate::environment::EnvironmentSpec;
use crate::grid::{self, BoxDomain, Grid, GridFunction};
use crate::kernel::{self, LatticeScale};
use crate::operator::{OperatorHandle, TruncationPolicy};
use crate::sum::{dot, pairwise_sum};
use crate::{math, par, Error, Result, MAX_D};

/// Default relative residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Continuum source term evaluated at physical positions.
pub type Source<'a> = &'a (dyn Fn([f64; MAX_D]) -> f64 + Sync);

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: GridFunction,
    pub iterations: usize,
    pub relative_residual: f64,
    /// Seconds; only measured with the `std` feature.
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CorrectorResult {
    pub phi: GridFunction,
    pub nu: f64,
    pub slope: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

struct Timer {
    #[cfg(feature = "std")]
    start: std::time::Instant,
}

impl Timer {
    fn start() -> Self {
        Timer {
            #[cfg(feature = "std")]
            start: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> Option<f64> {
        #[cfg(feature = "std")]
        {
            Some(self.start.elapsed().as_secs_f64())
        }
        #[cfg(not(feature = "std"))]
        {
            None
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    math::sqrt(dot(v, v))
}

/// Jacobi-preconditioned CG for an SPD operator. Returns the solution, the
/// iteration count and the true relative residual. When the recursive
/// residual meets `tol` the true residual is recomputed; if it does not, the
/// recursion resumes from the true residual (at most a few times).
pub fn pcg<A>(apply: A, diag: &[f64], b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize, f64)>
where
    A: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = alloc::vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = alloc::vec![0.0; n];
    let mut replacements = 0;
    let mut it = 0;
    while it < max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolverFailure { iterations: it, relative_residual: norm(&r) / bnorm });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        if norm(&r) <= tol * bnorm {
            apply(&x, &mut ap);
            let true_r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
            let rel = norm(&true_r) / bnorm;
            if rel <= tol || replacements >= 4 {
                if rel <= tol {
                    return Ok((x, it, rel));
                }
                return Err(Error::SolverFailure { iterations: it, relative_residual: rel });
            }
            replacements += 1;
            r = true_r;
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    apply(&x, &mut ap);
    let true_r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    Err(Error::SolverFailure { iterations: it, relative_residual: norm(&true_r) / bnorm })
}

fn default_cap(n: usize) -> usize {
    10 * n + 1000
}

/// Solves `(mu - L) u = f` on `U^eps`.
pub fn solve_resolvent(op: &OperatorHandle, mu: f64, f: &GridFunction, tol: f64) -> Result<SolveReport> {
    if !(mu >= 0.0) {
        return Err(Error::InvalidParameter("mu must be nonnegative"));
    }
    if f.grid != *op.grid() {
        return Err(Error::GridMismatch);
    }
    let timer = Timer::start();
    let diag: Vec<f64> = op.diagonal().iter().map(|r| r + mu).collect();
    let apply = |h: &[f64], out: &mut [f64]| {
        op.apply_slice(h, out);
        for (o, hi) in out.iter_mut().zip(h) {
            *o = mu * hi - *o;
        }
    };
    let (x, iterations, relative_residual) = pcg(apply, &diag, &f.values, tol, default_cap(f.values.len()))?;
    Ok(SolveReport {
        solution: GridFunction::from_values(op.grid(), x)?,
        iterations,
        relative_residual,
        wall_time: timer.seconds(),
    })
}

/// Solves `-L phi = L l_p` and evaluates the energy `nu = D_a(phi, phi)`.
pub fn solve_corrector(op: &OperatorHandle, p: &[f64], tol: f64) -> Result<CorrectorResult> {
    let b = op.rhs_corrector(p)?;
    let rep = solve_resolvent(op, 0.0, &b, tol)?;
    let nu = op.quadratic_form(&rep.solution)?.max(0.0);
    Ok(CorrectorResult {
        phi: rep.solution,
        nu,
        slope: p.to_vec(),
        iterations: rep.iterations,
        relative_residual: rep.relative_residual,
    })
}

/// Nodal finite-difference solution of `mu u - coeff Laplace u = f` on a box
/// with zero boundary values; nodes include the boundary.
#[derive(Debug, Clone)]
pub struct HomogenizedSolution {
    pub domain: BoxDomain,
    pub resolution: usize,
    pub values: Vec<f64>,
}

/// Intervals per side for the reference solve: at least 4 per lattice cell of
/// the finest `eps`, and at least 512 / 256 / 64 in d = 1 / 2 / 3.
pub fn default_resolution(d: usize, eps_min: f64) -> usize {
    let base = match d {
        1 => 512,
        2 => 256,
        _ => 64,
    };
    base.max(math::ceil(4.0 / eps_min) as usize)
}

impl HomogenizedSolution {
    fn stride(&self) -> [usize; MAX_D] {
        let m = self.resolution + 1;
        let d = self.domain.d;
        let mut st = [0usize; MAX_D];
        let mut acc = 1;
        for k in (0..d).rev() {
            st[k] = acc;
            acc *= m;
        }
        st
    }

    fn node(&self, idx: [usize; MAX_D]) -> f64 {
        let st = self.stride();
        let mut off = 0;
        for k in 0..self.domain.d {
            off += idx[k] * st[k];
        }
        self.values[off]
    }

    fn h(&self, k: usize) -> f64 {
        (self.domain.hi[k] - self.domain.lo[k]) / self.resolution as f64
    }

    /// Multilinear interpolation of a nodal field.
    fn interp_with<F: Fn([usize; MAX_D]) -> f64>(&self, x: &[f64], field: F) -> f64 {
        let d = self.domain.d;
        let n = self.resolution;
        let mut base = [0usize; MAX_D];
        let mut frac = [0.0; MAX_D];
        for k in 0..d {
            let t = (x[k] - self.domain.lo[k]) / self.h(k);
            if !(0.0..=n as f64).contains(&t) {
                return 0.0;
            }
            let i = (math::floor(t) as usize).min(n - 1);
            base[k] = i;
            frac[k] = t - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut idx = base;
            let mut w = 1.0;
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    idx[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                acc += w * field(idx);
            }
        }
        acc
    }

    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.interp_with(x, |idx| self.node(idx))
    }

    /// Nodal finite-difference gradient (centred inside, one-sided at the
    /// boundary nodes), interpolated multilinearly.
    pub fn gradient_at(&self, x: &[f64], k: usize) -> f64 {
        let n = self.resolution;
        let h = self.h(k);
        self.interp_with(x, |idx| {
            let mut lo = idx;
            let mut hi = idx;
            let span;
            if idx[k] == 0 {
                hi[k] += 1;
                span = h;
            } else if idx[k] == n {
                lo[k] -= 1;
                span = h;
            } else {
                lo[k] -= 1;
                hi[k] += 1;
                span = 2.0 * h;
            }
            (self.node(hi) - self.node(lo)) / span
        })
    }

    /// Values at the sites of a grid.
    pub fn sample(&self, grid: &Grid) -> GridFunction {
        GridFunction::from_fn(grid, |x| self.value_at(&x))
    }
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, m: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let m = if m % 2 == 1 { m + 1 } else { m };
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Solves `mu u - coeff Laplace u = f` with zero Dirichlet data on the box.
/// In d = 1 with `mu = 0` the Green's function is integrated instead.
pub fn solve_homogenized(
    domain: &BoxDomain,
    mu: f64,
    f: Source<'_>,
    coeff: f64,
    resolution: usize,
) -> Result<HomogenizedSolution> {
    if !(coeff > 0.0) {
        return Err(Error::InvalidParameter("homogenized coefficient must be positive"));
    }
    if !(mu >= 0.0) {
        return Err(Error::InvalidParameter("mu must be nonnegative"));
    }
    if resolution < 2 {
        return Err(Error::InvalidParameter("resolution must be at least 2"));
    }
    let d = domain.d;
    let n = resolution;
    let m = n + 1;
    let total = m.pow(d as u32);
    let hs: Vec<f64> = (0..d).map(|k| (domain.hi[k] - domain.lo[k]) / n as f64).collect();
    let mut sol = HomogenizedSolution { domain: *domain, resolution: n, values: alloc::vec![0.0; total] };

    if d == 1 && mu == 0.0 {
        let (a, b) = (domain.lo[0], domain.hi[0]);
        let len = b - a;
        let vals = par::map_range(m, |i| {
            if i == 0 || i == n {
                return 0.0;
            }
            let x = a + i as f64 * hs[0];
            let left = simpson(|y| (y - a) * (b - x) / len * f([y, 0.0, 0.0]), a, x, 256);
            let right = simpson(|y| (x - a) * (b - y) / len * f([y, 0.0, 0.0]), x, b, 256);
            (left + right) / coeff
        });
        sol.values = vals;
        return Ok(sol);
    }

    if d == 1 {
        // tridiagonal: Thomas elimination
        let ni = n - 1;
        let k = coeff / (hs[0] * hs[0]);
        let diag = mu + 2.0 * k;
        let rhs: Vec<f64> = (1..n).map(|i| f([domain.lo[0] + i as f64 * hs[0], 0.0, 0.0])).collect();
        let mut c = alloc::vec![0.0; ni];
        let mut dd = alloc::vec![0.0; ni];
        for i in 0..ni {
            let denom = diag + if i > 0 { k * c[i - 1] } else { 0.0 };
            c[i] = -k / denom;
            dd[i] = (rhs[i] + if i > 0 { k * dd[i - 1] } else { 0.0 }) / denom;
        }
        let mut u = alloc::vec![0.0; ni];
        for i in (0..ni).rev() {
            u[i] = dd[i] - if i + 1 < ni { c[i] * u[i + 1] } else { 0.0 };
        }
        sol.values[1..n].copy_from_slice(&u);
        return Ok(sol);
    }

    // interior unknowns, lexicographic
    let ni = n - 1;
    let count = ni.pow(d as u32);
    let unpack = |mut r: usize| {
        let mut idx = [0usize; MAX_D];
        for k in (0..d).rev() {
            idx[k] = r % ni + 1;
            r /= ni;
        }
        idx
    };
    let rhs: Vec<f64> = (0..count)
        .map(|r| {
            let idx = unpack(r);
            let mut x = [0.0; MAX_D];
            for k in 0..d {
                x[k] = domain.lo[k] + idx[k] as f64 * hs[k];
            }
            f(x)
        })
        .collect();
    let inv_h2: Vec<f64> = hs.iter().map(|h| coeff / (h * h)).collect();
    let diag_val = mu + 2.0 * inv_h2.iter().sum::<f64>();
    let mut strides = [0usize; MAX_D];
    let mut acc = 1;
    for k in (0..d).rev() {
        strides[k] = acc;
        acc *= ni;
    }
    let apply = |u: &[f64], out: &mut [f64]| {
        par::fill(out, |r| {
            let idx = unpack(r);
            let mut v = diag_val * u[r];
            for k in 0..d {
                if idx[k] > 1 {
                    v -= inv_h2[k] * u[r - strides[k]];
                }
                if idx[k] < ni {
                    v -= inv_h2[k] * u[r + strides[k]];
                }
            }
            v
        });
    };
    let diag = alloc::vec![diag_val; count];
    let (u, _, _) = pcg(apply, &diag, &rhs, 1e-10, default_cap(count))?;
    let st = sol.stride();
    for (r, val) in u.into_iter().enumerate() {
        let idx = unpack(r);
        let off: usize = (0..d).map(|k| idx[k] * st[k]).sum();
        sol.values[off] = val;
    }
    Ok(sol)
}

/// `E[a] / (2d)`.
pub fn homogenized_coefficient(env: &EnvironmentSpec) -> f64 {
    env.mean() / (2.0 * env.d as f64)
}

/// `||u^eps_mu - u_bar||_{L^2(U^eps)}` against a precomputed reference;
/// returns the error and the discrete solve report.
pub fn homogenization_error_with(
    op: &OperatorHandle,
    reference: &HomogenizedSolution,
    mu: f64,
    f: Source<'_>,
    tol: f64,
) -> Result<(f64, SolveReport)> {
    let grid = *op.grid();
    let rhs = GridFunction::from_fn(&grid, f);
    let rep = solve_resolvent(op, mu, &rhs, tol)?;
    let diff = rep.solution.sub(&reference.sample(&grid))?;
    Ok((grid::l2_norm(&diff), rep))
}

pub fn homogenization_error(
    env: &EnvironmentSpec,
    domain: &BoxDomain,
    scale: LatticeScale,
    mu: f64,
    f: Source<'_>,
    tol: f64,
) -> Result<f64> {
    let grid = Grid::discretize(domain, scale)?;
    let op = OperatorHandle::new(env, &grid, &TruncationPolicy::default_for(domain))?;
    let reference = solve_homogenized(
        domain,
        mu,
        f,
        homogenized_coefficient(env),
        default_resolution(domain.d, scale.eps()),
    )?;
    Ok(homogenization_error_with(&op, &reference, mu, f, tol)?.0)
}

/// `max_x |v^{eps/2}(x/2) - (kappa_{eps/2} / kappa_eps) u^eps(x)|`, where `u`
/// solves `-L^eps u = f` on `U` and `v` solves `-L^{eps/2} v = 4 f(2 .)` on `U/2`
/// with the same conductances. Both problems have the same integer sites.
pub fn scaling_identity_check(
    env: &EnvironmentSpec,
    domain: &BoxDomain,
    scale: LatticeScale,
    f: Source<'_>,
    tol: f64,
) -> Result<f64> {
    let half_scale = LatticeScale::new(scale.eps() / 2.0)?;
    let half_dom = domain.scaled(0.5);
    let g1 = Grid::discretize(domain, scale)?;
    let g2 = Grid::discretize(&half_dom, half_scale)?;
    if g1.first() != g2.first() || g1.counts() != g2.counts() {
        return Err(Error::GridMismatch);
    }
    let op1 = OperatorHandle::new(env, &g1, &TruncationPolicy::default_for(domain))?;
    let op2 = OperatorHandle::new(env, &g2, &TruncationPolicy::default_for(&half_dom))?;
    let f1 = GridFunction::from_fn(&g1, f);
    let f2 = GridFunction::from_fn(&g2, |x| 4.0 * f([2.0 * x[0], 2.0 * x[1], 2.0 * x[2]]));
    let u = solve_resolvent(&op1, 0.0, &f1, tol)?.solution;
    let v = solve_resolvent(&op2, 0.0, &f2, tol)?.solution;
    let ratio = op2.kappa() / op1.kappa();
    Ok(u.values.iter().zip(&v.values).fold(0.0f64, |m, (ui, vi)| m.max((vi - ratio * ui).abs())))
}

/// `||u^eps - (u_bar + sum_k d_k u_bar phi_{e_k})||_{L^2}` given the discrete
/// solution `u` and the reference.
pub fn two_scale_residual_with(
    op: &OperatorHandle,
    reference: &HomogenizedSolution,
    u: &GridFunction,
    tol: f64,
) -> Result<f64> {
    let grid = *op.grid();
    let d = grid.d();
    let mut w = reference.sample(&grid);
    for k in 0..d {
        let mut p = alloc::vec![0.0; d];
        p[k] = 1.0;
        let phi = solve_corrector(op, &p, tol)?.phi;
        for i in 0..grid.len() {
            w.values[i] += reference.gradient_at(&grid.position(i), k) * phi.values[i];
        }
    }
    Ok(grid::l2_norm(&u.sub(&w)?))
}

pub fn two_scale_residual(
    env: &EnvironmentSpec,
    domain: &BoxDomain,
    scale: LatticeScale,
    mu: f64,
    f: Source<'_>,
    tol: f64,
) -> Result<f64> {
    let grid = Grid::discretize(domain, scale)?;
    let op = OperatorHandle::new(env, &grid, &TruncationPolicy::default_for(domain))?;
    let reference = solve_homogenized(
        domain,
        mu,
        f,
        homogenized_coefficient(env),
        default_resolution(domain.d, scale.eps()),
    )?;
    let rhs = GridFunction::from_fn(&grid, f);
    let u = solve_resolvent(&op, mu, &rhs, tol)?.solution;
    two_scale_residual_with(&op, &reference, &u, tol)
}

/// `kappa_eps` of the grid's spacing; a convenience for reports.
pub fn kappa_of(grid: &Grid) -> f64 {
    kernel::kappa_eps(grid.scale(), grid.spec())
}

/// `eps^d <phi, b>`: the energy through the right-hand side, equal to `nu` at
/// the exact solution.
pub fn energy_by_pairing(op: &OperatorHandle, c: &CorrectorResult) -> Result<f64> {
    let b = op.rhs_corrector(&c.slope)?;
    c.phi.inner(&b)
}

/// Sum of squares helper used by reports.
pub fn sum_sq(v: &[f64]) -> f64 {
    let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    pairwise_sum(&sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Distribution;

    fn one(_: [f64; MAX_D]) -> f64 {
        1.0
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let g = Grid::discretize(&BoxDomain::unit_cube(1).unwrap(), LatticeScale::new(0.125).unwrap()).unwrap();
        let op = OperatorHandle::new(&EnvironmentSpec::unit(1).unwrap(), &g, &TruncationPolicy::default_for(&g.domain))
            .unwrap();
        let rep = solve_resolvent(&op, 0.0, &GridFunction::zeros(&g), 1e-10).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.solution.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn homogenized_closed_form_d1() {
        let dom = BoxDomain::unit_cube(1).unwrap();
        let sol = solve_homogenized(&dom, 0.0, &one, 0.5, 512).unwrap();
        for x in [0.125, 0.25, 0.5, 0.875] {
            assert!((sol.value_at(&[x]) - x * (1.0 - x)).abs() < 1e-12);
        }
        assert!((sol.gradient_at(&[0.25], 0) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn homogenized_fd_d1_with_mass() {
        // mu u - u'' / 2 = 1 on (0,1): u = (1 - cosh(k(x-1/2))/cosh(k/2)) / mu, k = sqrt(2 mu)
        let dom = BoxDomain::unit_cube(1).unwrap();
        let mu = 3.0;
        let sol = solve_homogenized(&dom, mu, &one, 0.5, 512).unwrap();
        let k = (2.0 * mu).sqrt();
        for x in [0.2, 0.5, 0.7] {
            let exact = (1.0 - (k * (x - 0.5)).cosh() / (k * 0.5).cosh()) / mu;
            assert!((sol.value_at(&[x]) - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn homogenized_d2_center_matches_sine_series() {
        let dom = BoxDomain::unit_cube(2).unwrap();
        let coeff = 0.25;
        let sol = solve_homogenized(&dom, 0.0, &one, coeff, 256).unwrap();
        let pi = core::f64::consts::PI;
        let mut series = 0.0;
        for m in (1..400).step_by(2) {
            for n in (1..400).step_by(2) {
                let (mf, nf) = (m as f64, n as f64);
                let sign = if ((m + n) / 2 - 1) % 2 == 0 { 1.0 } else { -1.0 };
                // sin(m pi/2) sin(n pi/2) = (-1)^{(m-1)/2 + (n-1)/2}
                series += sign * 16.0 / (pi * pi * mf * nf * pi * pi * (mf * mf + nf * nf));
            }
        }
        let series = series / coeff;
        let center = sol.value_at(&[0.5, 0.5]);
        assert!((center - series).abs() < 1e-4, "{center} {series}");
    }

    #[test]
    fn zero_source_homogenized() {
        let dom = BoxDomain::unit_cube(2).unwrap();
        let sol = solve_homogenized(&dom, 1.0, &|_| 0.0, 0.5, 16).unwrap();
        assert!(sol.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn corrector_linearity() {
        let g = Grid::discretize(&BoxDomain::unit_cube(1).unwrap(), LatticeScale::new(0.125).unwrap()).unwrap();
        let env = EnvironmentSpec::new(5, 1, 0.5, Distribution::TwoPoint { low: 0.5, high: 2.0, prob_low: 0.5 })
            .unwrap();
        let op = OperatorHandle::new(&env, &g, &TruncationPolicy::default_for(&g.domain)).unwrap();
        let c1 = solve_corrector(&op, &[1.0], 1e-12).unwrap();
        let c2 = solve_corrector(&op, &[2.0], 1e-12).unwrap();
        assert!((c2.nu - 4.0 * c1.nu).abs() <= 1e-9 * c1.nu);
        for (a, b) in c1.phi.values.iter().zip(&c2.phi.values) {
            assert!((2.0 * a - b).abs() <= 1e-9 * a.abs().max(1e-12));
        }
        let pairing = energy_by_pairing(&op, &c1).unwrap();
        assert!((pairing - c1.nu).abs() <= 1e-9 * c1.nu);
    }
}
