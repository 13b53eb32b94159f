//! Experiment harness: declarative configs, sweeps over `(eps, seed)` cells,
//! rate fits and report files.
//!
//! CSV layout is `experiment,d,eps,seed,<value columns>,status`, with the value
//! columns fixed per experiment (see [`Experiment::value_columns`]). Empty
//! `eps` or `seed` fields mean the experiment does not depend on them.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use critlat_core::environment::{Distribution, EnvironmentSpec};
use critlat_core::grid::{BoxDomain, Grid};
use critlat_core::kernel::{self, KernelSpec, LatticeScale};
use critlat_core::operator::{OperatorHandle, TruncationPolicy};
use critlat_core::{flux, poincare, solver, walk, MAX_D};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable holding the default job count.
pub const JOBS_ENV: &str = "CRITLAT_JOBS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {field}: {message}")]
    Config { field: String, message: String },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("fit: {0}")]
    Fit(critlat_core::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn config_err(field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Config { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    KernelCheck,
    CorrectorSweep,
    HomogRate,
    FluxCheck,
    Poincare,
    WalkQip,
    Heatkernel,
    ScalingIdentity,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::KernelCheck => "kernel-check",
            Experiment::CorrectorSweep => "corrector-sweep",
            Experiment::HomogRate => "homog-rate",
            Experiment::FluxCheck => "flux-check",
            Experiment::Poincare => "poincare",
            Experiment::WalkQip => "walk-qip",
            Experiment::Heatkernel => "heatkernel",
            Experiment::ScalingIdentity => "scaling-identity",
        }
    }

    /// Columns between `seed` and `status`.
    pub fn value_columns(self) -> &'static [&'static str] {
        match self {
            Experiment::KernelCheck => &["kappa", "dev_from_asymptotic", "second_moment_dev"],
            Experiment::CorrectorSweep | Experiment::HomogRate => &["mu", "value", "iterations", "residual"],
            Experiment::FluxCheck => &["nu", "rhs_bound", "slack", "F_eps"],
            Experiment::Poincare => &["C_P", "iterations"],
            Experiment::WalkQip => &["coord", "ks", "q25", "q50", "q75"],
            Experiment::Heatkernel => &["N", "t", "p00", "mass_dev"],
            Experiment::ScalingIdentity => &["value"],
        }
    }

    /// Value columns that label a row rather than measure something.
    fn key_columns(self) -> &'static [&'static str] {
        match self {
            Experiment::CorrectorSweep | Experiment::HomogRate => &["mu"],
            Experiment::WalkQip => &["coord"],
            Experiment::Heatkernel => &["N", "t"],
            _ => &[],
        }
    }

    fn uses_eps(self) -> bool {
        self != Experiment::Heatkernel
    }

    fn uses_seeds(self) -> bool {
        !matches!(self, Experiment::KernelCheck | Experiment::Poincare)
    }

    fn default_tol(self) -> f64 {
        match self {
            Experiment::Poincare => 1e-8,
            _ => 1e-10,
        }
    }

    fn label(self) -> Option<&'static str> {
        // box domains lack the boundary regularity the rate result assumes
        (self == Experiment::HomogRate).then_some("out-of-hypothesis check")
    }
}

/// Seeds as an explicit list or a count `n` meaning `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    Count(u64),
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::Count(1)
    }
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Count(n) => (0..*n).collect(),
        }
    }
}

/// Right-hand side selector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    One,
}

impl SourceKind {
    pub fn eval(self, _x: [f64; MAX_D]) -> f64 {
        match self {
            SourceKind::One => 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn default_lambda() -> f64 {
    1.0
}

fn default_distribution() -> Distribution {
    Distribution::Constant { value: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub d: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_distribution")]
    pub distribution: Distribution,
    #[serde(default)]
    pub eps_list: Vec<f64>,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub f: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub output: OutputPaths,
    /// Macroscopic horizon for `walk-qip`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    /// Torus side `N` for `heatkernel`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_side: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Box domain; the unit cube when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| config_err("toml", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Read { path: path.into(), source })?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| HarnessError::Parse { path: path.into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tol(&self) -> f64 {
        self.tol.unwrap_or(self.experiment.default_tol())
    }

    pub fn domain(&self) -> Result<BoxDomain> {
        match &self.domain {
            None => BoxDomain::unit_cube(self.d),
            Some(dc) => BoxDomain::new(self.d, &dc.lo, &dc.hi),
        }
        .map_err(|e| config_err("domain", e.to_string()))
    }

    pub fn environment(&self, seed: u64) -> Result<EnvironmentSpec> {
        EnvironmentSpec::new(seed, self.d, self.lambda, self.distribution)
            .map_err(|e| config_err("distribution", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_D).contains(&self.d) {
            return Err(config_err("d", format!("{} is not in 1..={MAX_D}", self.d)));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(config_err("lambda", "must lie in (0, 1]"));
        }
        self.environment(0)?;
        if self.experiment.uses_eps() && self.eps_list.is_empty() {
            return Err(config_err("eps_list", "must not be empty"));
        }
        if let Some(e) = self.eps_list.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(config_err("eps_list", format!("{e} is not in (0, 1)")));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(config_err("eps_list", "must be strictly decreasing"));
        }
        let seeds = self.seeds.to_vec();
        if seeds.is_empty() {
            return Err(config_err("seeds", "need at least one seed"));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(config_err("seeds", "duplicate seed"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(config_err("mu", "must be finite and nonnegative"));
        }
        if self.jobs == Some(0) {
            return Err(config_err("jobs", "must be at least 1"));
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(config_err("tol", "must lie in (0, 1)"));
            }
        }
        self.domain()?;
        match self.experiment {
            Experiment::WalkQip => {
                if !self.t.is_some_and(|t| t > 0.0 && t.is_finite()) {
                    return Err(config_err("t", "walk-qip needs a positive horizon"));
                }
                if !self.n_paths.is_some_and(|n| n > 0) {
                    return Err(config_err("n_paths", "walk-qip needs at least one path"));
                }
            }
            Experiment::Heatkernel => {
                let n = self.box_side.ok_or_else(|| config_err("box_side", "heatkernel needs the torus side"))?;
                if n < 2 || n % 2 != 0 {
                    return Err(config_err("box_side", "must be even and at least 2"));
                }
                let sites = (n as u128).checked_pow(self.d as u32).unwrap_or(u128::MAX);
                if sites > walk::HEAT_KERNEL_LIMIT as u128 {
                    return Err(config_err(
                        "box_side",
                        format!("{n}^{} sites exceed the dense limit {}", self.d, walk::HEAT_KERNEL_LIMIT),
                    ));
                }
                match &self.t_grid {
                    Some(g) if !g.is_empty() && g.iter().all(|t| *t >= 0.0 && t.is_finite()) => {}
                    _ => return Err(config_err("t_grid", "need a nonempty list of nonnegative times")),
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(u64),
    Float(f64),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Int(i) => i as f64,
            Value::Float(x) => x,
        }
    }

    fn render(self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            // shortest round-trip representation
            Value::Float(x) => format!("{x:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub eps: Option<f64>,
    pub seed: Option<u64>,
    /// Empty on failed cells.
    pub values: Vec<Value>,
    pub status: String,
}

impl Row {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn get(&self, experiment: Experiment, column: &str) -> Option<f64> {
        let i = experiment.value_columns().iter().position(|c| *c == column)?;
        self.values.get(i).map(|v| v.as_f64())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub eps: Option<f64>,
    /// Key columns and their values.
    pub key: Vec<(String, f64)>,
    pub column: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `value ~ C / |ln eps|`
    InvLog,
    /// `value ~ C / sqrt|ln eps|`
    InvSqrtLog,
}

impl RateModel {
    pub fn exponent(self) -> f64 {
        match self {
            RateModel::InvLog => 1.0,
            RateModel::InvSqrtLog => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: RateModel,
    pub eps: Vec<f64>,
    /// `value * |ln eps|^exponent` per eps.
    pub products: Vec<f64>,
    pub product_ratio: f64,
    /// Least-squares slope of `ln value` against `ln |ln eps|`.
    pub slope: f64,
    pub slope_deviation: f64,
}

/// Fits `(eps, value)` pairs; needs at least three distinct `eps`.
pub fn fit_points(points: &[(f64, f64)], model: RateModel) -> Result<FitReport> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(HarnessError::Fit(critlat_core::Error::InsufficientPoints(distinct.len())));
    }
    if points.iter().any(|&(e, v)| !(e > 0.0 && e < 1.0) || !(v > 0.0) || !v.is_finite()) {
        return Err(HarnessError::Fit(critlat_core::Error::InvalidParameter(
            "fits need eps in (0, 1) and positive finite values",
        )));
    }
    let p = model.exponent();
    let products: Vec<f64> = points.iter().map(|&(e, v)| v * e.ln().abs().powf(p)).collect();
    let hi = products.iter().cloned().fold(f64::MIN, f64::max);
    let lo = products.iter().cloned().fold(f64::MAX, f64::min);
    let xs: Vec<f64> = points.iter().map(|&(e, _)| e.ln().abs().ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, v)| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok(FitReport {
        model,
        eps: points.iter().map(|p| p.0).collect(),
        products,
        product_ratio: hi / lo,
        slope,
        slope_deviation: slope + p,
    })
}

/// Fits the seed-mean of the record's `value` column (`nu` for flux checks).
pub fn fit_rate(record: &ResultRecord, model: RateModel) -> Result<FitReport> {
    let column = match record.experiment {
        Experiment::FluxCheck => "nu",
        _ => "value",
    };
    let points: Vec<(f64, f64)> = record
        .aggregates
        .iter()
        .filter(|a| a.column == column)
        .filter_map(|a| a.eps.map(|e| (e, a.mean)))
        .collect();
    fit_points(&points, model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: Experiment,
    pub d: usize,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    pub aggregates: Vec<Aggregate>,
    pub fits: Vec<FitReport>,
    pub failed_cells: usize,
    pub runtime_seconds: f64,
}

impl ResultRecord {
    pub fn empty(experiment: Experiment, d: usize) -> Self {
        ResultRecord {
            experiment,
            d,
            columns: csv_header(experiment),
            rows: Vec::new(),
            aggregates: Vec::new(),
            fits: Vec::new(),
            failed_cells: 0,
            runtime_seconds: 0.0,
        }
    }
}

pub fn csv_header(experiment: Experiment) -> Vec<String> {
    let mut h: Vec<String> = ["experiment", "d", "eps", "seed"].iter().map(|s| s.to_string()).collect();
    h.extend(experiment.value_columns().iter().map(|s| s.to_string()));
    h.push("status".into());
    h
}

type CellOutcome = std::result::Result<Vec<Vec<Value>>, String>;

#[derive(Debug, Clone, Copy)]
struct Cell {
    eps: Option<f64>,
    seed: Option<u64>,
}

/// Work shared by every cell of a sweep.
enum Shared {
    None,
    Reference(solver::HomogenizedSolution),
}

fn run_cell(cfg: &ExperimentConfig, shared: &Shared, cell: Cell) -> critlat_core::Result<Vec<Vec<Value>>> {
    use Value::{Float, Int};
    let d = cfg.d;
    let tol = cfg.tol();
    let dom = cfg.domain().map_err(|_| critlat_core::Error::InvalidParameter("domain"))?;
    let f = |x: [f64; MAX_D]| cfg.f.eval(x);
    let env = || {
        EnvironmentSpec::new(cell.seed.unwrap_or(0), d, cfg.lambda, cfg.distribution)
    };
    let unit_p = || {
        let mut p = vec![0.0; d];
        p[0] = 1.0;
        p
    };
    let grid = || -> critlat_core::Result<(Grid, TruncationPolicy)> {
        let scale = LatticeScale::new(cell.eps.expect("eps cell"))?;
        Ok((Grid::discretize(&dom, scale)?, TruncationPolicy::default_for(&dom)))
    };
    match cfg.experiment {
        Experiment::KernelCheck => {
            let scale = LatticeScale::new(cell.eps.expect("eps cell"))?;
            let spec = KernelSpec::new(d)?;
            let m = kernel::second_moment_matrix(scale, spec);
            let mut dev = 0.0f64;
            for (i, row) in m.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    let want = if i == j { 1.0 / d as f64 } else { 0.0 };
                    dev = dev.max((v - want).abs());
                }
            }
            Ok(vec![vec![
                Float(kernel::kappa_eps(scale, spec)),
                Float(kernel::kappa_deviation(scale, spec)),
                Float(dev),
            ]])
        }
        Experiment::CorrectorSweep => {
            let (g, pol) = grid()?;
            let op = OperatorHandle::new(&env()?, &g, &pol)?;
            let c = solver::solve_corrector(&op, &unit_p(), tol)?;
            Ok(vec![vec![Float(cfg.mu), Float(c.nu), Int(c.iterations as u64), Float(c.relative_residual)]])
        }
        Experiment::HomogRate => {
            let Shared::Reference(reference) = shared else { unreachable!("reference is built for homog-rate") };
            let (g, pol) = grid()?;
            let op = OperatorHandle::new(&env()?, &g, &pol)?;
            let (err, rep) = solver::homogenization_error_with(&op, reference, cfg.mu, &f, tol)?;
            Ok(vec![vec![Float(cfg.mu), Float(err), Int(rep.iterations as u64), Float(rep.relative_residual)]])
        }
        Experiment::FluxCheck => {
            let (g, pol) = grid()?;
            let r = flux::energy_upper_bound_check(&env()?, &g, &pol, &unit_p(), tol)?;
            Ok(vec![vec![Float(r.nu), Float(r.bound), Float(r.slack), Float(r.flux_energy)]])
        }
        Experiment::Poincare => {
            let (g, pol) = grid()?;
            let est = poincare::poincare_constant(&g, &pol, tol)?;
            Ok(vec![vec![Float(est.c_p), Int(est.iterations as u64)]])
        }
        Experiment::ScalingIdentity => {
            let scale = LatticeScale::new(cell.eps.expect("eps cell"))?;
            let r = solver::scaling_identity_check(&env()?, &dom, scale, &f, tol)?;
            Ok(vec![vec![Float(r)]])
        }
        Experiment::WalkQip => {
            let env = env()?;
            let sampler = walk::JumpSampler::new(KernelSpec::new(d)?, cfg.lambda)?;
            let qc = walk::QipConfig {
                eps_list: cfg.eps_list.clone(),
                t: cfg.t.expect("validated"),
                n_paths: cfg.n_paths.expect("validated"),
                seed: cell.seed.unwrap_or(0),
                start: dom,
                eta_grid: Vec::new(),
            };
            let rep = walk::qip_statistics(&qc, &env, &sampler)?;
            let mut rows = Vec::new();
            for e in &rep.per_eps {
                for k in 0..d {
                    let q = e.quantiles[k];
                    rows.push(vec![Int(k as u64), Float(e.ks[k]), Float(q[0]), Float(q[1]), Float(q[2])]);
                }
            }
            Ok(rows)
        }
        Experiment::Heatkernel => {
            let n = cfg.box_side.expect("validated");
            let rep = walk::heat_kernel_evolve(&env()?, n, cfg.t_grid.as_deref().expect("validated"))?;
            Ok((0..rep.t.len())
                .map(|i| vec![Int(n as u64), Float(rep.t[i]), Float(rep.p00[i]), Float(rep.mass_dev[i])])
                .collect())
        }
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

/// Picks the job count: explicit flag, then config, then `CRITLAT_JOBS`.
pub fn resolve_jobs(flag: Option<usize>, cfg: &ExperimentConfig) -> Option<usize> {
    flag.or(cfg.jobs).or_else(|| std::env::var(JOBS_ENV).ok()?.trim().parse().ok()).filter(|j| *j > 0)
}

/// Runs every `(eps, seed)` cell. Failing cells become status rows.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<ResultRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let exp = cfg.experiment;
    let eps: Vec<Option<f64>> =
        if exp == Experiment::WalkQip || !exp.uses_eps() { vec![None] } else { cfg.eps_list.iter().map(|e| Some(*e)).collect() };
    let seeds: Vec<Option<u64>> = if exp.uses_seeds() { cfg.seeds.to_vec().into_iter().map(Some).collect() } else { vec![None] };
    let cells: Vec<Cell> = eps.iter().flat_map(|&e| seeds.iter().map(move |&s| Cell { eps: e, seed: s })).collect();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| HarnessError::Pool(e.to_string()))?;

    let shared = if exp == Experiment::HomogRate {
        let dom = cfg.domain()?;
        let eps_min = *cfg.eps_list.last().expect("validated");
        let env = cfg.environment(0)?;
        let f = |x: [f64; MAX_D]| cfg.f.eval(x);
        let r = pool.install(|| {
            solver::solve_homogenized(
                &dom,
                cfg.mu,
                &f,
                solver::homogenized_coefficient(&env),
                solver::default_resolution(cfg.d, eps_min),
            )
        });
        Shared::Reference(r.map_err(|e| config_err("homogenized reference", e.to_string()))?)
    } else {
        Shared::None
    };

    let results: Vec<(Cell, CellOutcome)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&c| {
                let r = panic::catch_unwind(AssertUnwindSafe(|| run_cell(cfg, &shared, c)));
                let r = match r {
                    Ok(Ok(v)) => Ok(v),
                    Ok(Err(e)) => Err(e.to_string()),
                    Err(p) => Err(format!("panic: {}", panic_message(p))),
                };
                (c, r)
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut failed = 0;
    for (c, r) in results {
        match r {
            Ok(vs) => {
                if exp == Experiment::WalkQip {
                    // rows come per (eps, coord) in eps_list order
                    for (i, v) in vs.into_iter().enumerate() {
                        rows.push(Row { eps: Some(cfg.eps_list[i / cfg.d]), seed: c.seed, values: v, status: "ok".into() });
                    }
                } else {
                    rows.extend(vs.into_iter().map(|v| Row { eps: c.eps, seed: c.seed, values: v, status: "ok".into() }));
                }
            }
            Err(msg) => {
                failed += 1;
                rows.push(Row { eps: c.eps, seed: c.seed, values: Vec::new(), status: format!("error: {msg}") });
            }
        }
    }
    sort_rows(&mut rows);
    let mut rec = ResultRecord::empty(exp, cfg.d);
    rec.rows = rows;
    rec.failed_cells = failed;
    rec.aggregates = aggregate(exp, &rec.rows);
    let model = match exp {
        Experiment::CorrectorSweep | Experiment::FluxCheck => Some(RateModel::InvLog),
        Experiment::HomogRate => Some(RateModel::InvSqrtLog),
        _ => None,
    };
    if let Some(m) = model {
        // too few scales or a failed column simply leaves no fit
        if let Ok(fit) = fit_rate(&rec, m) {
            rec.fits.push(fit);
        }
    }
    rec.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Coarse scales first, then seeds, then the row's own key columns.
fn sort_rows(rows: &mut [Row]) {
    rows.sort_by(|a, b| {
        let ea = a.eps.map(|e| -e).unwrap_or(f64::NEG_INFINITY);
        let eb = b.eps.map(|e| -e).unwrap_or(f64::NEG_INFINITY);
        ea.total_cmp(&eb).then(a.seed.cmp(&b.seed))
    });
}

fn aggregate(exp: Experiment, rows: &[Row]) -> Vec<Aggregate> {
    let cols = exp.value_columns();
    let keys = exp.key_columns();
    let key_idx: Vec<usize> = keys.iter().map(|k| cols.iter().position(|c| c == k).expect("key column")).collect();
    // (eps, key values) -> column -> samples; keys as bit patterns for ordering
    let mut groups: BTreeMap<(i64, Vec<u64>), Vec<Vec<f64>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        let eps_key = r.eps.map(|e| -(e.to_bits() as i64)).unwrap_or(i64::MIN);
        let kv: Vec<u64> = key_idx.iter().map(|&i| r.values[i].as_f64().to_bits()).collect();
        let g = groups.entry((eps_key, kv)).or_insert_with(|| vec![Vec::new(); cols.len()]);
        for (i, v) in r.values.iter().enumerate() {
            g[i].push(v.as_f64());
        }
    }
    let mut out = Vec::new();
    for ((eps_key, kv), samples) in groups {
        let eps = (eps_key != i64::MIN).then(|| f64::from_bits((-eps_key) as u64));
        let key: Vec<(String, f64)> = keys.iter().zip(&kv).map(|(k, b)| (k.to_string(), f64::from_bits(*b))).collect();
        for (i, col) in cols.iter().enumerate() {
            if key_idx.contains(&i) {
                continue;
            }
            let xs = &samples[i];
            let n = xs.len();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            out.push(Aggregate { eps, key: key.clone(), column: col.to_string(), n, mean, sd });
        }
    }
    out
}

/// JSON summary: config echo, software version, aggregates, fits and runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub config: ExperimentConfig,
    pub runs: usize,
    pub failed_cells: usize,
    pub aggregates: Vec<Aggregate>,
    pub fits: Vec<FitReport>,
    pub runtime_seconds: f64,
}

impl Summary {
    pub fn new(cfg: &ExperimentConfig, rec: &ResultRecord) -> Self {
        Summary {
            version: VERSION.to_string(),
            experiment: rec.experiment,
            label: rec.experiment.label().map(str::to_string),
            config: cfg.clone(),
            runs: rec.rows.len(),
            failed_cells: rec.failed_cells,
            aggregates: rec.aggregates.clone(),
            fits: rec.fits.clone(),
            runtime_seconds: rec.runtime_seconds,
        }
    }
}

pub fn csv_bytes(rec: &ResultRecord) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let name = rec.experiment.name();
    let ncols = rec.experiment.value_columns().len();
    w.write_record(&rec.columns).expect("in-memory write");
    for r in &rec.rows {
        let mut fields = vec![
            name.to_string(),
            rec.d.to_string(),
            r.eps.map(|e| Value::Float(e).render()).unwrap_or_default(),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
        ];
        for i in 0..ncols {
            fields.push(r.values.get(i).map(|v| v.render()).unwrap_or_default());
        }
        fields.push(r.status.clone());
        w.write_record(&fields).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn summary_json(cfg: &ExperimentConfig, rec: &ResultRecord) -> String {
    serde_json::to_string_pretty(&Summary::new(cfg, rec)).expect("summary serializes")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let err = |source| HarnessError::Write { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(bytes).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

/// Writes the configured outputs. Returns the CSV bytes for callers that
/// print when no CSV path is set.
pub fn emit_report(cfg: &ExperimentConfig, rec: &ResultRecord) -> Result<Vec<u8>> {
    let csv = csv_bytes(rec);
    if let Some(p) = &cfg.output.csv {
        write_atomic(p, &csv)?;
    }
    if let Some(p) = &cfg.output.json {
        write_atomic(p, summary_json(cfg, rec).as_bytes())?;
    }
    Ok(csv)
}
