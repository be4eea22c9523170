//! Monte Carlo verification of the duality definition of `∫Λ(X_t)dw_t` and
//! of the distributional Itô formula.
//!
//! Paths are regenerated on demand from a counter-based generator keyed by
//! `(seed, path index)`, with the step index as the position in the stream,
//! so ensembles never have to be stored and any batch order gives the same
//! numbers. Estimators mollify the distribution with a Gaussian kernel of
//! width `ε`, take left-point Itô sums on nested time grids, and extrapolate
//! both in `ε` and in the step (two-level Richardson, first order in each).

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::distcat::{mean_log_abs_shifted, mean_x_log_abs_shifted, mollified_eval, DistributionSpec};
use crate::diffusion::{DiffusionModel, FundamentalSolution, Sigma};
use crate::error::{Error, Result};
use crate::numerics::interp::UniformTable;
use crate::numerics::special::{heat_time_integral, mills_ratio, normal_cdf, normal_pdf, pv_gaussian_hilbert};
use crate::numerics::Quad;

/// Paths per work unit; reductions merge units in index order.
const CHUNK: usize = 2048;

// ---------------------------------------------------------------- grids

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GridKind {
    Uniform,
    /// `t_k = T (k/K)^p`.
    Graded(f64),
    /// `t_0 = 0`, `t_k = T q^{K-k}`.
    Geometric(f64),
    Custom,
}

/// Time grid `0 = t_0 < … < t_K = T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    kind: GridKind,
}

impl TimeGrid {
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        check_horizon(horizon, steps)?;
        let times = (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect();
        Ok(Self { times, kind: GridKind::Uniform })
    }

    /// Power-graded grid; `p = 2` turns a `t^{-1/2}` singularity at the
    /// origin into a smooth integrand in the grid coordinate.
    pub fn graded(horizon: f64, steps: usize, power: f64) -> Result<Self> {
        check_horizon(horizon, steps)?;
        if !(power >= 1.0 && power.is_finite()) {
            return Err(Error::invalid(format!("grading power must be at least 1, got {power}")));
        }
        let mut times: Vec<f64> = (0..=steps).map(|k| horizon * (k as f64 / steps as f64).powf(power)).collect();
        times[steps] = horizon;
        Ok(Self { times, kind: GridKind::Graded(power) })
    }

    pub fn geometric(horizon: f64, steps: usize, ratio: f64) -> Result<Self> {
        check_horizon(horizon, steps)?;
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::invalid(format!("geometric ratio must lie in (0, 1), got {ratio}")));
        }
        let mut times = vec![0.0];
        times.extend((1..=steps).map(|k| horizon * ratio.powi((steps - k) as i32)));
        if times[1] <= 0.0 {
            return Err(Error::invalid("geometric grid underflows; use fewer steps or a larger ratio"));
        }
        Ok(Self { times, kind: GridKind::Geometric(ratio) })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::invalid("grid must start at 0 and have at least one step"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || !times.iter().all(|t| t.is_finite()) {
            return Err(Error::invalid("grid must be finite and strictly increasing"));
        }
        Ok(Self { times, kind: GridKind::Custom })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.steps()]
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    /// The grid with twice the steps that contains every point of this one.
    pub fn refine(&self) -> Self {
        let (t, k) = (self.horizon(), self.steps());
        match self.kind {
            GridKind::Uniform => Self::uniform(t, 2 * k).expect("refining a valid grid"),
            GridKind::Graded(p) => Self::graded(t, 2 * k, p).expect("refining a valid grid"),
            GridKind::Geometric(q) => Self::geometric(t, 2 * k, q.sqrt()).expect("refining a valid grid"),
            GridKind::Custom => {
                let mut times = Vec::with_capacity(2 * k + 1);
                for w in self.times.windows(2) {
                    times.push(w[0]);
                    times.push(0.5 * (w[0] + w[1]));
                }
                times.push(t);
                Self { times, kind: GridKind::Custom }
            }
        }
    }

    /// Index of `t` on the grid (up to rounding).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * self.horizon();
        let i = self.times.partition_point(|&v| v < t - tol);
        (i < self.times.len() && (self.times[i] - t).abs() <= tol).then_some(i)
    }
}

fn check_horizon(horizon: f64, steps: usize) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) || steps == 0 {
        return Err(Error::invalid(format!("need a positive horizon and at least one step, got T={horizon}, K={steps}")));
    }
    Ok(())
}

// ---------------------------------------------------------------- ensembles

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PathScheme {
    /// `X_t = ψ⁻¹(w_t)`, exact on the grid.
    Lamperti,
    EulerMaruyama,
}

/// A reproducible family of `M` Brownian paths on a grid, with the diffusion
/// paths derived from them. Paths are regenerated on demand.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    model: DiffusionModel,
    seed: u64,
    paths: usize,
    grid: TimeGrid,
    antithetic: bool,
    scheme: PathScheme,
    sqrt_dt: Vec<f64>,
    state_table: Option<Arc<UniformTable>>,
}

/// `simulate(model, seed, M, grid)`: Lamperti-exact for Stratonovich-symmetric
/// models, Euler-Maruyama otherwise.
pub fn simulate(model: &DiffusionModel, seed: u64, paths: usize, grid: TimeGrid) -> Result<PathEnsemble> {
    if paths == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    let scheme = if model.is_stratonovich_symmetric() { PathScheme::Lamperti } else { PathScheme::EulerMaruyama };
    let sqrt_dt = grid.times.windows(2).map(|w| (w[1] - w[0]).sqrt()).collect();
    let state_table = match (scheme, model.sigma()) {
        (PathScheme::Lamperti, Sigma::Unit) | (PathScheme::EulerMaruyama, _) => None,
        (PathScheme::Lamperti, _) => Some(Arc::new(inverse_lamperti_table(model, grid.horizon())?)),
    };
    Ok(PathEnsemble { model: model.clone(), seed, paths, grid, antithetic: false, scheme, sqrt_dt, state_table })
}

fn lamperti_window(model: &DiffusionModel, horizon: f64) -> (f64, f64) {
    let (lo, hi) = model.lamperti().image();
    let reach = 10.0 * horizon.sqrt() + 1.0;
    (lo.max(-reach), hi.min(reach))
}

fn inverse_lamperti_table(model: &DiffusionModel, horizon: f64) -> Result<UniformTable> {
    let (lo, hi) = lamperti_window(model, horizon);
    let lamperti = model.lamperti();
    // ψ⁻¹ on the window is needed everywhere; fail early rather than per path
    for v in [lo, 0.5 * (lo + hi), hi] {
        lamperti.psi_inv(v)?;
    }
    let f = |v: f64| lamperti.psi_inv(v).unwrap_or(f64::NAN);
    let table = UniformTable::with_derivative(f, |v| model.sigma_at(f(v)), lo, hi, 20_000);
    Ok(table)
}

/// Per-path random stream: ChaCha8 keyed by the seed, stream = path index.
fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Mean and standard error of a Monte Carlo quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0, samples: 0 }
    }

    /// `|value - target| < k stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() < k * self.stderr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SanityReport {
    /// Mean of all standardized increments `Δw/√Δt`.
    pub mean: f64,
    pub mean_tolerance: f64,
    /// Largest `|Var(Δw_k)/Δt_k - 1|` over steps.
    pub max_variance_deviation: f64,
    pub pass: bool,
}

impl PathEnsemble {
    /// Pairs path `2j+1` with the reflection of path `2j`.
    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn model(&self) -> &DiffusionModel {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn scheme(&self) -> PathScheme {
        self.scheme
    }

    pub fn antithetic(&self) -> bool {
        self.antithetic
    }

    /// Brownian values at the grid points for path `i`.
    pub fn brownian_path(&self, i: usize, out: &mut [f64]) {
        let (stream, sign) = if self.antithetic { (i / 2, if i % 2 == 1 { -1.0 } else { 1.0 }) } else { (i, 1.0) };
        let mut rng = path_rng(self.seed, stream);
        out[0] = 0.0;
        let mut w = 0.0;
        for (k, s) in self.sqrt_dt.iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            w += sign * s * z;
            out[k + 1] = w;
        }
    }

    /// Diffusion values at the grid points driven by `w`.
    pub fn state_path(&self, w: &[f64], out: &mut [f64]) {
        let x0 = self.model.start();
        match self.scheme {
            PathScheme::Lamperti => match &self.state_table {
                None => out.iter_mut().zip(w).for_each(|(x, v)| *x = x0 + v),
                Some(table) => {
                    for (x, &v) in out.iter_mut().zip(w) {
                        *x = if table.contains(v) {
                            table.eval(v)
                        } else {
                            self.model.lamperti().psi_inv(v).unwrap_or(f64::NAN)
                        };
                    }
                }
            },
            PathScheme::EulerMaruyama => {
                out[0] = x0;
                for k in 0..self.steps() {
                    let dt = self.grid.times[k + 1] - self.grid.times[k];
                    let x = out[k];
                    out[k + 1] = x + self.model.drift_at(x) * dt + self.model.sigma_at(x) * (w[k + 1] - w[k]);
                }
            }
        }
    }

    fn steps(&self) -> usize {
        self.grid.steps()
    }

    /// `(w, X)` for path `i`.
    pub fn path(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.steps() + 1;
        let (mut w, mut x) = (vec![0.0; n], vec![0.0; n]);
        self.brownian_path(i, &mut w);
        self.state_path(&w, &mut x);
        (w, x)
    }

    /// Increment sanity gate: the mean of the standardized increments within
    /// `4/√(MK)` of zero, and each step's variance within 5% of `Δt` (only
    /// asserted from `M = 10⁴` on, where 5% is several standard errors).
    pub fn sanity(&self) -> SanityReport {
        let k = self.steps();
        let sums = self.reduce(2 * k, |w, _x, out| {
            for j in 0..k {
                let z = (w[j + 1] - w[j]) / self.sqrt_dt[j];
                out[j] = z;
                out[k + j] = z * z;
            }
        });
        let mean = sums.iter().take(k).map(|s| s.mean).sum::<f64>() / k as f64;
        let mean_tolerance = 4.0 / ((self.paths * k) as f64).sqrt();
        let max_variance_deviation = (0..k)
            .map(|j| (sums[k + j].mean - sums[j].mean * sums[j].mean - 1.0).abs())
            .fold(0.0, f64::max);
        let pass = if self.antithetic {
            // reflected pairs make the mean exactly zero
            mean.abs() <= mean_tolerance
        } else {
            mean.abs() <= mean_tolerance
        } && (self.paths < 10_000 || max_variance_deviation <= 0.05);
        SanityReport { mean, mean_tolerance, max_variance_deviation, pass }
    }

    /// Monte Carlo mean of `f(w, X)` over the ensemble.
    pub fn mean_of<F>(&self, f: F) -> Estimate
    where
        F: Fn(&[f64], &[f64]) -> f64 + Sync,
    {
        let s = self.reduce(1, |w, x, out| out[0] = f(w, x));
        s[0].estimate()
    }

    /// Runs `f(w, X, out)` on every path and reduces each of the `width`
    /// outputs to a mean and standard error. Antithetic pairs count as one
    /// sample. Work is split in fixed chunks merged in order, so the result
    /// does not depend on the thread count.
    pub(crate) fn reduce<F>(&self, width: usize, f: F) -> Vec<RunningStats>
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Sync,
    {
        let per_unit = if self.antithetic { 2 } else { 1 };
        let units = self.paths.div_ceil(per_unit);
        let chunks = units.div_ceil(CHUNK);
        let n = self.steps() + 1;
        let partial: Vec<(Vec<RunningStats>, bool)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut stats = vec![RunningStats::default(); width];
                let (mut w, mut x) = (vec![0.0; n], vec![0.0; n]);
                let mut out = vec![0.0; width];
                let mut unit_sum = vec![0.0; width];
                for u in c * CHUNK..((c + 1) * CHUNK).min(units) {
                    unit_sum.iter_mut().for_each(|v| *v = 0.0);
                    let first = u * per_unit;
                    let last = (first + per_unit).min(self.paths);
                    for i in first..last {
                        self.brownian_path(i, &mut w);
                        self.state_path(&w, &mut x);
                        f(&w, &x, &mut out);
                        unit_sum.iter_mut().zip(&out).for_each(|(s, v)| *s += v);
                    }
                    let m = (last - first) as f64;
                    for (s, v) in stats.iter_mut().zip(&unit_sum) {
                        s.push(v / m);
                    }
                }
                (stats, c < chunks.div_ceil(2))
            })
            .collect();
        let mut total = vec![RunningStats::default(); width];
        let mut half = vec![RunningStats::default(); width];
        for (stats, first_half) in &partial {
            for j in 0..width {
                total[j].merge(&stats[j]);
                if *first_half {
                    half[j].merge(&stats[j]);
                }
            }
        }
        for (t, h) in total.iter_mut().zip(&half) {
            t.half_stderr = h.estimate().stderr;
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathSummary {
    pub path: usize,
    pub w_final: f64,
    pub x_final: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl PathEnsemble {
    /// One summary row per path for the first `limit` paths.
    pub fn summaries(&self, limit: usize) -> Vec<PathSummary> {
        (0..limit.min(self.paths))
            .map(|i| {
                let (w, x) = self.path(i);
                let k = self.steps();
                PathSummary {
                    path: i,
                    w_final: w[k],
                    x_final: x[k],
                    x_min: x.iter().copied().fold(f64::INFINITY, f64::min),
                    x_max: x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect()
    }

    pub fn write_summary_csv<W: std::io::Write>(&self, limit: usize, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in self.summaries(limit) {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Welford accumulator with Chan's merge.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RunningStats {
    n: usize,
    mean: f64,
    m2: f64,
    half_stderr: f64,
}

impl RunningStats {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &RunningStats) {
        if o.n == 0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64) * (o.n as f64) / n as f64;
        self.n = n;
    }

    fn estimate(&self) -> Estimate {
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { f64::INFINITY };
        Estimate { value: self.mean, stderr: (var / self.n as f64).sqrt(), samples: self.n }
    }

    /// The standard error did not shrink from half the samples to all of them.
    fn exploding(&self) -> bool {
        let full = self.estimate().stderr;
        self.half_stderr.is_finite() && full > 0.0 && full > self.half_stderr
    }
}

// ---------------------------------------------------------------- mollifiers

/// Decreasing bandwidths `ε_1 > ε_2 > …`; estimators extrapolate from the
/// last two.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsSchedule(Vec<f64>);

impl EpsSchedule {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::invalid("mollification schedule needs at least two levels"));
        }
        if levels.iter().any(|e| !(*e > 0.0 && e.is_finite())) || levels.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid(format!("mollification schedule must be positive and strictly decreasing: {levels:?}")));
        }
        Ok(Self(levels))
    }

    /// `ε_0, ε_0/2, …` with `levels` entries.
    pub fn halving(eps0: f64, levels: usize) -> Result<Self> {
        Self::new((0..levels).map(|k| eps0 / 2f64.powi(k as i32)).collect())
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }

    /// Per-level weights of the first-order extrapolation from levels
    /// `i - 1` and `i`.
    fn weights_at(&self, i: usize) -> (f64, f64) {
        let r = self.0[i - 1] / self.0[i];
        (-1.0 / (r - 1.0), r / (r - 1.0))
    }

    fn last(&self) -> usize {
        self.0.len() - 1
    }
}

impl fmt::Display for EpsSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for EpsSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let levels = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad ε level {p:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels)
    }
}

const TABLE_REACH: f64 = 40.0;
const TABLE_POINTS: usize = 5120;

struct MomentTables {
    log: UniformTable,
    xlog: UniformTable,
    pv: UniformTable,
}

/// `E log|a+Z|`, `E (a+Z) log|a+Z|` and `E p.v. 1/(a+Z)` on `[0, 40]`.
fn moment_tables() -> &'static MomentTables {
    static TABLES: OnceLock<MomentTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let g = |a: f64| mean_log_abs_shifted(a).unwrap_or(f64::NAN);
        let h = |a: f64| pv_gaussian_hilbert(a);
        MomentTables {
            log: UniformTable::with_derivative(g, h, 0.0, TABLE_REACH, TABLE_POINTS),
            xlog: UniformTable::with_derivative(
                |a| mean_x_log_abs_shifted(a).unwrap_or(f64::NAN),
                |a| g(a) + 1.0,
                0.0,
                TABLE_REACH,
                TABLE_POINTS,
            ),
            pv: UniformTable::with_derivative(h, |a| 1.0 - a * h(a), 0.0, TABLE_REACH, TABLE_POINTS),
        }
    })
}

fn fast_log_moment(a: f64) -> f64 {
    let b = a.abs();
    if b <= TABLE_REACH {
        return moment_tables().log.eval(b);
    }
    let r = 1.0 / (b * b);
    b.ln() - 0.5 * r * (1.0 + r * (1.5 + r * 5.0))
}

fn fast_xlog_moment(a: f64) -> f64 {
    let b = a.abs();
    let v = if b <= TABLE_REACH {
        moment_tables().xlog.eval(b)
    } else {
        let r = 1.0 / (b * b);
        b * b.ln() + (0.5 + r * (0.25 + 0.5 * r)) / b
    };
    v * a.signum()
}

fn fast_pv_moment(a: f64) -> f64 {
    let b = a.abs();
    let v = if b <= TABLE_REACH {
        moment_tables().pv.eval(b)
    } else {
        let r = 1.0 / (b * b);
        (1.0 + r * (1.0 + r * (3.0 + 15.0 * r))) / b
    };
    v * a.signum()
}

/// `Λ * κ_ε` prepared for repeated evaluation along paths.
#[derive(Debug, Clone)]
pub struct Mollified {
    spec: DistributionSpec,
    eps: f64,
    ln_eps: f64,
}

impl Mollified {
    pub fn new(spec: &DistributionSpec, eps: f64) -> Result<Self> {
        spec.validate()?;
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {eps}")));
        }
        if matches!(spec, DistributionSpec::LogAbs | DistributionSpec::XLogAbsMinusX | DistributionSpec::PrincipalValueRecip)
            && !moment_tables().log.eval(1.0).is_finite()
        {
            return Err(Error::no_conv("mollified log table", f64::NAN));
        }
        Ok(Self { spec: spec.clone(), eps, ln_eps: eps.ln() })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let e = self.eps;
        match &self.spec {
            DistributionSpec::Delta { y } => normal_pdf((x - y) / e) / e,
            DistributionSpec::Heaviside { y } => normal_cdf((y - x) / e),
            DistributionSpec::LogAbs => self.ln_eps + fast_log_moment(x / e),
            DistributionSpec::PrincipalValueRecip => fast_pv_moment(x / e) / e,
            DistributionSpec::XLogAbsMinusX => {
                let a = x / e;
                e * (self.ln_eps * a + fast_xlog_moment(a)) - x
            }
            other => mollified_eval(other, e, x).unwrap_or(f64::NAN),
        }
    }
}

// ---------------------------------------------------------------- functionals

/// Test functionals `J` with closed-form Malliavin derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TestFunctional {
    Constant,
    /// `H_n(w(t*)/√t*)`.
    Hermite { n: usize, t_star: f64 },
    /// `(w(b) - w(a))^k`.
    IncrementPower { a: f64, b: f64, k: u32 },
}

/// `t^{m/2} H_m(v/√t)`: `P_0 = 1`, `P_1 = v`, `P_m = v P_{m-1} - (m-1) t P_{m-2}`.
fn heat_polynomial(m: usize, v: f64, t: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, v);
    if m == 0 {
        return 1.0;
    }
    for k in 2..=m {
        let p2 = v * p1 - (k - 1) as f64 * t * p0;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// `E (μ + sZ)^m`.
fn gaussian_power_moment(m: u32, mu: f64, s: f64) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0;
    let mut odd_df = 1.0; // (j-1)!! for even j
    for j in 0..=m {
        if j > 0 {
            binom *= (m - j + 1) as f64 / j as f64;
        }
        if j % 2 == 0 {
            if j >= 2 {
                odd_df *= (j - 1) as f64;
            }
            total += binom * mu.powi((m - j) as i32) * s.powi(j as i32) * odd_df;
        }
    }
    total
}

impl TestFunctional {
    /// `H1` and `H2` at the horizon, `wT = w(T)`, `1`, `H3@0.5`, `inc:a:b:k`.
    pub fn parse(s: &str, horizon: f64) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parse(format!("unknown test functional {s:?} (expected 1, wT, Hn, Hn@t or inc:a:b:k)"));
        let j = match s {
            "1" => Self::Constant,
            "wT" | "w_T" => Self::IncrementPower { a: 0.0, b: horizon, k: 1 },
            _ if s.starts_with("inc:") => {
                let p: Vec<&str> = s[4..].split(':').collect();
                if p.len() != 3 {
                    return Err(bad());
                }
                Self::IncrementPower {
                    a: p[0].parse().map_err(|_| bad())?,
                    b: p[1].parse().map_err(|_| bad())?,
                    k: p[2].parse().map_err(|_| bad())?,
                }
            }
            _ if s.starts_with('H') => {
                let (n, t) = match s[1..].split_once('@') {
                    Some((n, t)) => (n, t.parse::<f64>().map_err(|_| bad())?),
                    None => (&s[1..], horizon),
                };
                Self::Hermite { n: n.parse().map_err(|_| bad())?, t_star: t }
            }
            _ => return Err(bad()),
        };
        j.validate(horizon)?;
        Ok(j)
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        match *self {
            Self::Constant => Ok(()),
            Self::Hermite { t_star, .. } if t_star > 0.0 && t_star <= horizon => Ok(()),
            Self::IncrementPower { a, b, .. } if a >= 0.0 && b > a && b <= horizon => Ok(()),
            _ => Err(Error::invalid(format!("test functional {self} does not fit in [0, {horizon}]"))),
        }
    }

    /// Times at which `J` reads the path.
    pub fn times(&self) -> Vec<f64> {
        match *self {
            Self::Constant => vec![],
            Self::Hermite { t_star, .. } => vec![t_star],
            Self::IncrementPower { a, b, .. } => vec![a, b],
        }
    }

    pub fn bind(&self, grid: &TimeGrid) -> Result<BoundFunctional> {
        let idx = self
            .times()
            .into_iter()
            .map(|t| grid.index_of(t).ok_or_else(|| Error::invalid(format!("grid has no point at t = {t} needed by {self}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundFunctional { j: *self, idx, times: grid.times.clone() })
    }

    /// `E[J | w_t = v]`.
    pub fn conditional_value(&self, t: f64, v: f64) -> f64 {
        match *self {
            Self::Constant => 1.0,
            Self::Hermite { n, t_star } => {
                if t <= t_star {
                    heat_polynomial(n, v, t) / t_star.powf(0.5 * n as f64)
                } else {
                    // w(t*) | w_t = v is the bridge value
                    let mean = v * t_star / t;
                    let var = t_star * (t - t_star) / t;
                    let m = n as u32;
                    hermite_gaussian_moment(m, mean, var.sqrt(), t_star.sqrt())
                }
            }
            Self::IncrementPower { a, b, k } => {
                let (mu, s) = increment_law(a, b, t, v);
                gaussian_power_moment(k, mu, s)
            }
        }
    }

    /// `E[D_t J | w_t = v]`.
    pub fn conditional_derivative(&self, t: f64, v: f64) -> f64 {
        match *self {
            Self::Constant => 0.0,
            Self::Hermite { n, t_star } => {
                if n == 0 || t >= t_star {
                    0.0
                } else {
                    n as f64 * heat_polynomial(n - 1, v, t) / t_star.powf(0.5 * n as f64)
                }
            }
            Self::IncrementPower { a, b, k } => {
                if t < a || t >= b || k == 0 {
                    0.0
                } else {
                    let (mu, s) = increment_law(a, b, t, v);
                    k as f64 * gaussian_power_moment(k - 1, mu, s)
                }
            }
        }
    }
}

/// `E H_m(W/c)` for `W ~ N(μ, s²)`, by expanding `H_m` in monomials.
fn hermite_gaussian_moment(m: u32, mu: f64, s: f64, c: f64) -> f64 {
    // H_m(x) = Σ_j (-1)^j m!/(j! (m-2j)! 2^j) x^{m-2j}
    let mut total = 0.0;
    let mut coef = 1.0;
    for j in 0..=m / 2 {
        if j > 0 {
            let top = (m - 2 * j + 2) as f64 * (m - 2 * j + 1) as f64;
            coef *= -top / (2.0 * j as f64);
        }
        let p = m - 2 * j;
        total += coef * gaussian_power_moment(p, mu, s) / c.powi(p as i32);
    }
    total
}

/// Law `N(μ, s²)` of `w(b) - w(a)` given `w_t = v`.
fn increment_law(a: f64, b: f64, t: f64, v: f64) -> (f64, f64) {
    if t <= a {
        (0.0, (b - a).sqrt())
    } else if t < b {
        // w_t - w_a given w_t is a bridge increment, w_b - w_t is fresh
        let mu = v * (t - a) / t;
        (mu, (a * (t - a) / t + (b - t)).sqrt())
    } else {
        let d = b - a;
        (v * d / t, (d - d * d / t).max(0.0).sqrt())
    }
}

impl fmt::Display for TestFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant => f.write_str("1"),
            Self::Hermite { n, t_star } => write!(f, "H{n}@{t_star}"),
            Self::IncrementPower { a, b, k } => write!(f, "inc:{a}:{b}:{k}"),
        }
    }
}

/// A functional whose reading times are resolved to grid indices.
#[derive(Debug, Clone)]
pub struct BoundFunctional {
    j: TestFunctional,
    idx: Vec<usize>,
    times: Vec<f64>,
}

impl BoundFunctional {
    pub fn functional(&self) -> TestFunctional {
        self.j
    }

    #[inline]
    pub fn value(&self, w: &[f64]) -> f64 {
        match self.j {
            TestFunctional::Constant => 1.0,
            TestFunctional::Hermite { n, t_star } => heat_polynomial(n, w[self.idx[0]], t_star) / t_star.powf(0.5 * n as f64),
            TestFunctional::IncrementPower { k, .. } => (w[self.idx[1]] - w[self.idx[0]]).powi(k as i32),
        }
    }

    /// `D_t J` on the grid cell `[t_k, t_{k+1})`.
    pub fn derivative(&self, k: usize, w: &[f64]) -> f64 {
        match self.j {
            TestFunctional::Constant => 0.0,
            TestFunctional::Hermite { n, t_star } => {
                if n == 0 || k >= self.idx[0] {
                    0.0
                } else {
                    n as f64 * heat_polynomial(n - 1, w[self.idx[0]], t_star) / t_star.powf(0.5 * n as f64)
                }
            }
            TestFunctional::IncrementPower { k: p, .. } => {
                if k < self.idx[0] || k >= self.idx[1] || p == 0 {
                    0.0
                } else {
                    p as f64 * (w[self.idx[1]] - w[self.idx[0]]).powi(p as i32 - 1)
                }
            }
        }
    }

    /// `(J(w + δ 1_{[t_{k+1}, T]}) - J(w)) / δ`: bumping the `k`-th increment.
    pub fn bumped_difference(&self, k: usize, w: &[f64], delta: f64) -> f64 {
        let mut b = w.to_vec();
        b.iter_mut().skip(k + 1).for_each(|v| *v += delta);
        (self.value(&b) - self.value(w)) / delta
    }

    pub fn grid_times(&self) -> &[f64] {
        &self.times
    }
}

// ---------------------------------------------------------------- deterministic side

fn quad() -> Quad {
    Quad::new(1e-13, 1e-11)
}

/// `E[Λ(X_t) k(w_t)]` for a Stratonovich-symmetric model, `X_t = ψ⁻¹(w_t)`.
fn pulled_back_expectation(model: &DiffusionModel, spec: &DistributionSpec, t: f64, k: &dyn Fn(f64) -> f64) -> Result<f64> {
    let st = t.sqrt();
    let dens = |v: f64| normal_pdf(v / st) / st;
    let lam = model.lamperti();
    let (lo, hi) = {
        let (a, b) = lam.image();
        (a.max(-14.0 * st), b.min(14.0 * st))
    };
    let q = quad();
    let inv = |v: f64| lam.psi_inv(v).unwrap_or(f64::NAN);
    // point of the Lamperti line where X crosses zero, if any
    let zero = lam.psi(0.0).ok().filter(|v| *v > lo && *v < hi);
    let smooth = |f: &dyn Fn(f64) -> f64, brk: Option<f64>| -> Result<f64> {
        let mut pts = vec![lo];
        if let Some(b) = brk {
            pts.push(b);
        }
        pts.push(hi);
        Ok(q.gk_points(|v| f(inv(v)) * k(v) * dens(v), &pts)?.value)
    };
    match spec {
        DistributionSpec::Delta { y } => {
            let d = lam.psi(*y)?;
            Ok(k(d) * dens(d) / model.sigma_at(*y))
        }
        DistributionSpec::Heaviside { y } => {
            let d = lam.psi(*y)?;
            if d <= lo {
                return Ok(0.0);
            }
            Ok(q.gk(|v| k(v) * dens(v), lo, d.min(hi))?.value)
        }
        DistributionSpec::LogAbs => match zero {
            Some(z) => {
                let g = |v: f64| inv(v).abs().ln() * k(v) * dens(v);
                Ok(q.tanh_sinh(g, lo, z)?.value + q.tanh_sinh(g, z, hi)?.value)
            }
            None => smooth(&|x: f64| x.abs().ln(), None),
        },
        DistributionSpec::XLogAbsMinusX => smooth(&|x: f64| if x == 0.0 { 0.0 } else { x * x.abs().ln() - x }, zero),
        DistributionSpec::PrincipalValueRecip => match zero {
            Some(z) => {
                let g = |v: f64| k(v) * dens(v) / inv(v);
                let reach = (z - lo).max(hi - z);
                let sym = |r: f64| {
                    let (a, b) = (z + r, z - r);
                    (if a < hi { g(a) } else { 0.0 }) + (if b > lo { g(b) } else { 0.0 })
                };
                Ok(q.gk_points(sym, &[0.0, 1e-3 * reach, reach])?.value)
            }
            None => smooth(&|x: f64| 1.0 / x, None),
        },
        DistributionSpec::Smooth(s) => smooth(&|x: f64| s.eval(x), None),
        DistributionSpec::DeltaDerivative { .. } => {
            Err(Error::Unsupported("duality pairing of delta derivatives is not implemented".into()))
        }
    }
}

/// `∫_0^T G(t) dt` through `t = T r²`, which absorbs `t^{-1/2}` at the origin.
fn time_integral(horizon: f64, g: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let mut err = None;
    let r = quad().gk(
        |r| match g(horizon * r * r) {
            Ok(v) => 2.0 * horizon * r * v,
            Err(e) => {
                err.get_or_insert(e);
                f64::NAN
            }
        },
        0.0,
        1.0,
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok(r?.value)
}

fn require_lamperti(model: &DiffusionModel, what: &str) -> Result<()> {
    if model.is_stratonovich_symmetric() {
        Ok(())
    } else {
        Err(Error::Unsupported(format!("{what} needs the Stratonovich-symmetric drift")))
    }
}

/// `∫_0^T E[Λ(X_t) D_t J] dt` by quadrature, with `D_tJ` replaced by its
/// conditional expectation given `w_t`.
pub fn pairing_rhs(spec: &DistributionSpec, model: &DiffusionModel, j: &TestFunctional, horizon: f64) -> Result<f64> {
    require_lamperti(model, "pairing right-hand side")?;
    j.validate(horizon)?;
    if *j == TestFunctional::Constant {
        return Ok(0.0);
    }
    time_integral(horizon, |t| pulled_back_expectation(model, spec, t, &|v| j.conditional_derivative(t, v)))
}

/// Monte Carlo pairing with its extrapolation diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairingEstimate {
    pub spec: String,
    pub functional: String,
    /// Extrapolated in ε and in the step.
    pub estimate: Estimate,
    /// Change made by the ε extrapolation (extrapolated minus finest-ε value).
    pub eps_correction: Estimate,
    /// Change made by the step extrapolation.
    pub step_correction: Estimate,
    pub levels: Vec<LevelMean>,
    pub variance_explosion: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelMean {
    pub eps: f64,
    pub steps: usize,
    pub mean: f64,
    pub stderr: f64,
}

fn require_nested(ens: &PathEnsemble) -> Result<()> {
    if ens.steps() % 2 != 0 || ens.steps() < 2 {
        return Err(Error::invalid("step extrapolation needs an even number of steps (coarse grid = every other point)"));
    }
    Ok(())
}

/// Itô sums `Σ Λ_ε(X_{t_k}) Δw_k` on the ensemble grid and on every other
/// point, for each mollifier.
fn ito_sums(mols: &[Mollified], w: &[f64], x: &[f64], out: &mut [f64]) {
    let k = w.len() - 1;
    for (m, mol) in mols.iter().enumerate() {
        let (mut fine, mut coarse) = (0.0, 0.0);
        let mut j = 0;
        while j < k {
            let a = mol.eval(x[j]);
            fine += a * (w[j + 1] - w[j]) + mol.eval(x[j + 1]) * (w[j + 2] - w[j + 1]);
            coarse += a * (w[j + 2] - w[j]);
            j += 2;
        }
        out[2 * m] = fine;
        out[2 * m + 1] = coarse;
    }
}

/// Estimates `E[(∫_0^T Λ(X_t) dw_t) J]` for every `(spec, J)` pair in one
/// pass over the ensemble; results are spec-major.
pub fn pairing_lhs_matrix(
    ens: &PathEnsemble,
    specs: &[DistributionSpec],
    schedule: &EpsSchedule,
    functionals: &[TestFunctional],
) -> Result<Vec<PairingEstimate>> {
    require_nested(ens)?;
    let levels = schedule.levels();
    let nl = levels.len();
    let mols: Vec<Mollified> = specs
        .iter()
        .flat_map(|s| levels.iter().map(move |&e| Mollified::new(s, e)))
        .collect::<Result<_>>()?;
    let bound: Vec<BoundFunctional> = functionals.iter().map(|j| j.bind(ens.grid())).collect::<Result<_>>()?;
    let (c1, c2) = schedule.weights_at(schedule.last());
    let last = schedule.last();
    // per case: extrapolated, eps correction, step correction, raw levels (fine, coarse)
    let per_case = 3 + 2 * nl;
    let width = specs.len() * bound.len() * per_case;
    let stats = ens.reduce(width, |w, x, out| {
        let mut sums = vec![0.0; 2 * mols.len()];
        ito_sums(&mols, w, x, &mut sums);
        let jv: Vec<f64> = bound.iter().map(|b| b.value(w)).collect();
        for s in 0..specs.len() {
            let lv = |e: usize, fine: bool| sums[2 * (s * nl + e) + usize::from(!fine)];
            let step = |e: usize| 2.0 * lv(e, true) - lv(e, false);
            let extrap = c1 * step(last - 1) + c2 * step(last);
            let eps_only = c1 * lv(last - 1, true) + c2 * lv(last, true);
            for (jn, j) in jv.iter().enumerate() {
                let base = (s * bound.len() + jn) * per_case;
                out[base] = extrap * j;
                out[base + 1] = (extrap - step(last)) * j;
                out[base + 2] = (extrap - eps_only) * j;
                for e in 0..nl {
                    out[base + 3 + 2 * e] = lv(e, true) * j;
                    out[base + 4 + 2 * e] = lv(e, false) * j;
                }
            }
        }
    });
    let mut res = Vec::with_capacity(specs.len() * bound.len());
    for (s, spec) in specs.iter().enumerate() {
        for (jn, j) in functionals.iter().enumerate() {
            let base = (s * bound.len() + jn) * per_case;
            let mut lvls = Vec::with_capacity(2 * nl);
            for (e, &eps) in levels.iter().enumerate() {
                for (o, steps) in [(3, ens.steps()), (4, ens.steps() / 2)] {
                    let est = stats[base + o + 2 * e].estimate();
                    lvls.push(LevelMean { eps, steps, mean: est.value, stderr: est.stderr });
                }
            }
            res.push(PairingEstimate {
                spec: spec.to_string(),
                functional: j.to_string(),
                estimate: stats[base].estimate(),
                eps_correction: stats[base + 1].estimate(),
                step_correction: stats[base + 2].estimate(),
                levels: lvls,
                variance_explosion: stats[base].exploding(),
            });
        }
    }
    Ok(res)
}

pub fn pairing_lhs(ens: &PathEnsemble, spec: &DistributionSpec, schedule: &EpsSchedule, j: &TestFunctional) -> Result<PairingEstimate> {
    Ok(pairing_lhs_matrix(ens, std::slice::from_ref(spec), schedule, std::slice::from_ref(j))?.remove(0))
}

// ---------------------------------------------------------------- Itô formula

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ItoCase {
    /// `f = u` with `Lu = δ_y` (Tanaka-type formula).
    Tanaka { y: f64 },
    /// `f(x) = x log|x| - x`, `Af = log|x|`, `Lf = ½ p.v. 1/x` (Brownian).
    PrincipalValue,
}

impl fmt::Display for ItoCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tanaka { y } => write!(f, "tanaka@{y}"),
            Self::PrincipalValue => f.write_str("pv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Term {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
    pub method: String,
}

/// JSON verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItoReport {
    pub case: String,
    pub functional: String,
    pub terms: Vec<Term>,
    /// `E[(f(X_T) - f(x) - ∫Af dw) J] - ∫E[Lf(X_t) J]dt`.
    pub residual: f64,
    pub residual_stderr: f64,
    /// Gap between the two deterministic evaluations of `E[(f(X_T) - f(x)) J]`.
    pub oracle_gap: f64,
    pub oracles_agree: bool,
    pub pass: bool,
}

impl ItoReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Tolerance on the agreement of the two deterministic oracles.
pub const ORACLE_AGREEMENT: f64 = 1e-8;

/// A function of the Lamperti coordinate tabulated on either side of a kink.
struct KinkTable {
    at: f64,
    left: Option<UniformTable>,
    right: Option<UniformTable>,
}

impl KinkTable {
    fn new(f: impl Fn(f64) -> f64, lo: f64, at: f64, hi: f64, points: usize) -> Self {
        let side = |a: f64, b: f64| (b - a > 1e-9).then(|| UniformTable::from_fn(&f, a, b, points));
        Self { at, left: side(lo, at.min(hi)), right: side(at.max(lo), hi) }
    }

    fn eval(&self, v: f64, fallback: impl Fn(f64) -> f64) -> f64 {
        let t = if v < self.at { &self.left } else { &self.right };
        match t {
            Some(t) if t.contains(v) => t.eval(v),
            _ => fallback(v),
        }
    }
}

struct TanakaParts {
    fs: FundamentalSolution,
    u_x: f64,
    /// `v ↦ u(ψ⁻¹(v))` and `v ↦ Au(ψ⁻¹(v))`.
    u: KinkTable,
    au: KinkTable,
    d: f64,
}

impl TanakaParts {
    fn new(model: &DiffusionModel, y: f64, horizon: f64) -> Result<Self> {
        let fs = model.fundamental_solution(y)?;
        let lam = model.lamperti();
        let d = lam.psi(y)?;
        let (lo, hi) = lamperti_window(model, horizon);
        let inv = |v: f64| lam.psi_inv(v).unwrap_or(f64::NAN);
        let u = KinkTable::new(|v| fs.u(inv(v)).unwrap_or(f64::NAN), lo, d, hi, 4000);
        let au = KinkTable::new(|v| fs.au(inv(v)).unwrap_or(f64::NAN), lo, d, hi, 4000);
        Ok(Self { u_x: fs.u(model.start())?, fs, u, au, d })
    }
}

/// Checks `f(X_T) - f(x) = ∫_0^T Af(X_t) dw_t + ∫_0^T Lf(X_t) dt` paired
/// against `J` (which must read the path only up to `T`).
///
/// Path terms are Monte Carlo (left-point Itô sums, extrapolated in the step,
/// and in ε where `Af` is mollified); the time-integral term is evaluated from
/// the exact density. Independently, `E[(f(X_T) - f(x)) J]` is computed once
/// by Gaussian quadrature and once as the sum of the two deterministic
/// right-hand terms; these must agree to [`ORACLE_AGREEMENT`].
pub fn ito_verify(ens: &PathEnsemble, case: ItoCase, j: &TestFunctional, schedule: &EpsSchedule) -> Result<ItoReport> {
    let model = ens.model();
    require_lamperti(model, "Itô verification")?;
    require_nested(ens)?;
    let horizon = ens.grid().horizon();
    j.validate(horizon)?;
    let bound = j.bind(ens.grid())?;
    let lam = model.lamperti();
    let st = horizon.sqrt();
    let dens_t = |v: f64| normal_pdf(v / st) / st;
    let (lo, hi) = {
        let (a, b) = lam.image();
        (a.max(-14.0 * st), b.min(14.0 * st))
    };
    let q = quad();
    let (c1, c2) = schedule.weights_at(schedule.last());
    let last = schedule.last();

    match case {
        ItoCase::Tanaka { y } => {
            let parts = TanakaParts::new(model, y, horizon)?;
            let d = parts.d;
            let inv = |v: f64| lam.psi_inv(v).unwrap_or(f64::NAN);
            let u_direct = |v: f64| parts.fs.u(inv(v)).unwrap_or(f64::NAN);
            let au_direct = |v: f64| parts.fs.au(inv(v)).unwrap_or(f64::NAN);
            // oracle A: Gaussian quadrature of the left side
            let mut pts = vec![lo];
            if d > lo && d < hi {
                pts.push(d);
            }
            pts.push(hi);
            let lhs_oracle = q
                .gk_points(|v| (u_direct(v) - parts.u_x) * j.conditional_value(horizon, v) * dens_t(v), &pts)?
                .value;
            // oracle B: stochastic term by duality plus the time term
            let stoch_oracle = if *j == TestFunctional::Constant {
                0.0
            } else {
                time_integral(horizon, |t| {
                    let s = t.sqrt();
                    // the window must follow the law of w_t, not of w_T
                    let (a, b) = lam.image();
                    let (lo, hi) = (a.max(-14.0 * s), b.min(14.0 * s));
                    let mut p = vec![lo];
                    if d > lo && d < hi {
                        p.push(d);
                    }
                    p.push(hi);
                    Ok(q.gk_points(|v| au_direct(v) * j.conditional_derivative(t, v) * normal_pdf(v / s) / s, &p)?.value)
                })?
            };
            let sy = model.sigma_at(y);
            let time_term = time_integral(horizon, |t| {
                let s = t.sqrt();
                Ok(j.conditional_value(t, d) * normal_pdf(d / s) / (s * sy))
            })?;
            let rhs_oracle = stoch_oracle + time_term;
            // Monte Carlo: per path (f(X_T) - f(x) - Σ Af ΔW) J, step-extrapolated
            let stats = ens.reduce(3, |w, _x, out| {
                let k = w.len() - 1;
                let uu = |v: f64| parts.u.eval(v, u_direct);
                let au = |v: f64| parts.au.eval(v, au_direct);
                let (mut fine, mut coarse) = (0.0, 0.0);
                let mut i = 0;
                while i < k {
                    let a = au(w[i]);
                    fine += a * (w[i + 1] - w[i]) + au(w[i + 1]) * (w[i + 2] - w[i + 1]);
                    coarse += a * (w[i + 2] - w[i]);
                    i += 2;
                }
                let jv = bound.value(w);
                let lhs = (uu(w[k]) - parts.u_x) * jv;
                let stoch = (2.0 * fine - coarse) * jv;
                out[0] = lhs;
                out[1] = stoch;
                out[2] = lhs - stoch;
            });
            let (lhs, stoch, res) = (stats[0].estimate(), stats[1].estimate(), stats[2].estimate());
            let residual = res.value - time_term;
            let oracle_gap = (lhs_oracle - rhs_oracle).abs();
            let oracles_agree = oracle_gap <= ORACLE_AGREEMENT;
            Ok(ItoReport {
                case: case.to_string(),
                functional: j.to_string(),
                terms: vec![
                    term("E[(u(X_T) - u(x)) J]", lhs, "monte-carlo"),
                    term("E[(∫ Au(X_t) dw_t) J]", stoch, "monte-carlo ito sum, step-extrapolated"),
                    term("∫ E[δ_y(X_t) J] dt", Estimate::exact(time_term), "quadrature (exact density)"),
                    term("E[(u(X_T) - u(x)) J] oracle", Estimate::exact(lhs_oracle), "gaussian quadrature"),
                    term("∫ E[Au(X_t) D_tJ] dt + ∫ E[δ_y(X_t) J] dt oracle", Estimate::exact(rhs_oracle), "quadrature"),
                ],
                residual,
                residual_stderr: res.stderr,
                oracle_gap,
                oracles_agree,
                pass: oracles_agree && residual.abs() < 3.0 * res.stderr,
            })
        }
        ItoCase::PrincipalValue => {
            if !matches!(model.sigma(), Sigma::Unit) || model.start() != 0.0 {
                return Err(Error::Unsupported("the principal-value case is for Brownian motion started at 0".into()));
            }
            let f = |x: f64| if x == 0.0 { 0.0 } else { x * x.abs().ln() - x };
            let lhs_oracle = q.gk_points(|v| f(v) * j.conditional_value(horizon, v) * dens_t(v), &[lo, 0.0, hi])?.value;
            let brownian = DiffusionModel::stratonovich(Sigma::Unit, 0.0)?;
            let stoch_oracle = pairing_rhs(&DistributionSpec::LogAbs, &brownian, j, horizon)?;
            let time_term = 0.5
                * time_integral(horizon, |t| {
                    pulled_back_expectation(&brownian, &DistributionSpec::PrincipalValueRecip, t, &|v| j.conditional_value(t, v))
                })?;
            let rhs_oracle = stoch_oracle + time_term;
            let mols: Vec<Mollified> =
                schedule.levels().iter().map(|&e| Mollified::new(&DistributionSpec::LogAbs, e)).collect::<Result<_>>()?;
            let stats = ens.reduce(3, |w, x, out| {
                let mut sums = vec![0.0; 2 * mols.len()];
                ito_sums(&mols, w, x, &mut sums);
                let step = |e: usize| 2.0 * sums[2 * e] - sums[2 * e + 1];
                let stoch = c1 * step(last - 1) + c2 * step(last);
                let jv = bound.value(w);
                let lhs = f(w[w.len() - 1]) * jv;
                out[0] = lhs;
                out[1] = stoch * jv;
                out[2] = lhs - stoch * jv;
            });
            let (lhs, stoch, res) = (stats[0].estimate(), stats[1].estimate(), stats[2].estimate());
            let residual = res.value - time_term;
            let oracle_gap = (lhs_oracle - rhs_oracle).abs();
            let oracles_agree = oracle_gap <= ORACLE_AGREEMENT;
            Ok(ItoReport {
                case: case.to_string(),
                functional: j.to_string(),
                terms: vec![
                    term("E[(f(w_T) - f(0)) J]", lhs, "monte-carlo"),
                    term("E[(∫ log|w_t| dw_t) J]", stoch, "monte-carlo ito sum, mollified, ε- and step-extrapolated"),
                    term("½ ∫ E[(p.v. 1/x)(w_t) J] dt", Estimate::exact(time_term), "quadrature (exact density)"),
                    term("E[(f(w_T) - f(0)) J] oracle", Estimate::exact(lhs_oracle), "gaussian quadrature"),
                    term("∫ E[log|w_t| D_tJ] dt + ½ ∫ E[(p.v. 1/x)(w_t) J] dt oracle", Estimate::exact(rhs_oracle), "quadrature"),
                ],
                residual,
                residual_stderr: res.stderr,
                oracle_gap,
                oracles_agree,
                pass: oracles_agree && residual.abs() < 3.0 * res.stderr,
            })
        }
    }
}

fn term(name: &str, e: Estimate, method: &str) -> Term {
    Term { name: name.into(), estimate: e.value, stderr: e.stderr, method: method.into() }
}

// ---------------------------------------------------------------- local time

/// Weights `w_i` with `Σ w_i p(ε_i) = p(0)` for every polynomial `p` of
/// degree below the number of levels.
fn zero_limit_weights(eps: &[f64]) -> Vec<f64> {
    (0..eps.len())
        .map(|i| {
            eps.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &e)| e / (e - eps[i]))
                .product()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalTimeEstimate {
    pub level: f64,
    /// `E[σ(y)² ∫_0^T δ_y(X_t) dt]`, extrapolated in ε and step.
    pub mean: Estimate,
    /// Second moment, extrapolated the same way.
    pub second_moment: Estimate,
    /// `σ(y)² ∫_0^T p_t(x, y) dt`.
    pub mean_oracle: f64,
    pub levels: Vec<LevelMean>,
    /// With three or more ε levels: the extrapolation from all levels but the
    /// coarsest minus the one from all levels but the finest, i.e. the change
    /// when every bandwidth is halved (for a halving schedule).
    pub eps_shift: Option<Estimate>,
    pub variance_explosion: bool,
    /// The same two moments without mollification or step bias: each step
    /// contributes the conditional moments of the local time of the Brownian
    /// bridge between its endpoints (steps are conditionally independent).
    pub bridge_mean: Estimate,
    pub bridge_second_moment: Estimate,
}

/// `(E[L], E[L²])` for the local time at 0 of a Brownian bridge from `a` to
/// `b` over time `dt`, normalized as `∫δ_0(w_s)ds`. Uses
/// `P(L > l) = exp(-((|a|+|b|+l)² - (b-a)²)/(2dt))`.
pub fn bridge_local_time_moments(a: f64, b: f64, dt: f64) -> (f64, f64) {
    // probability that the bridge reaches 0 at all
    let q = (a.abs() * b.abs() + a * b) / dt;
    if q > 36.0 {
        return (0.0, 0.0);
    }
    let c = a.abs() + b.abs();
    let hit = (-q).exp();
    let sd = dt.sqrt();
    let x = c / sd;
    let r = mills_ratio(x);
    (sd * hit * r, 2.0 * dt * hit * (1.0 - x * r))
}

/// `σ(y)² ∫_0^T p_t(x, y) dt`.
pub fn local_time_mean(model: &DiffusionModel, y: f64, horizon: f64) -> Result<f64> {
    require_lamperti(model, "local-time mean")?;
    let d = model.lamperti().psi(y)?;
    Ok(model.sigma_at(y) * heat_time_integral(d, 0.0, horizon))
}

/// Occupation-time estimate of `σ(y)² ∫_0^T (δ_y * κ_ε)(X_t) dt` by left
/// Riemann sums on the ensemble grid and on every other point.
pub fn mc_local_time(ens: &PathEnsemble, y: f64, schedule: &EpsSchedule) -> Result<LocalTimeEstimate> {
    require_nested(ens)?;
    let model = ens.model();
    let levels = schedule.levels();
    let nl = levels.len();
    let mols: Vec<Mollified> =
        levels.iter().map(|&e| Mollified::new(&DistributionSpec::delta(y), e)).collect::<Result<_>>()?;
    let s2 = model.sigma_at(y).powi(2);
    let dt: Vec<f64> = ens.grid().times.windows(2).map(|w| w[1] - w[0]).collect();
    // the ε-bias of the mean is a power series in ε (with a linear term when
    // y is the start point), so levels are combined by polynomial extrapolation
    let all = zero_limit_weights(levels);
    let shift = (nl >= 3).then(|| {
        let mut w = vec![0.0; nl];
        for (i, c) in zero_limit_weights(&levels[1..]).into_iter().enumerate() {
            w[i + 1] += c;
        }
        for (i, c) in zero_limit_weights(&levels[..nl - 1]).into_iter().enumerate() {
            w[i] -= c;
        }
        w
    });
    // outputs: mean, second moment, shift under halving, raw levels (fine,
    // coarse), bridge mean and second moment
    let d = model.lamperti().psi(y)?;
    let sy = model.sigma_at(y);
    let width = 5 + 2 * nl;
    let stats = ens.reduce(width, |w, x, out| {
        let k = x.len() - 1;
        let mut vals = vec![0.0; 2 * nl];
        for (e, m) in mols.iter().enumerate() {
            let (mut fine, mut coarse) = (0.0, 0.0);
            let mut i = 0;
            while i < k {
                let a = m.eval(x[i]);
                fine += a * dt[i] + m.eval(x[i + 1]) * dt[i + 1];
                coarse += a * (dt[i] + dt[i + 1]);
                i += 2;
            }
            vals[2 * e] = s2 * fine;
            vals[2 * e + 1] = s2 * coarse;
        }
        let step = |e: usize| 2.0 * vals[2 * e] - vals[2 * e + 1];
        let step_sq = |e: usize| 2.0 * vals[2 * e].powi(2) - vals[2 * e + 1].powi(2);
        out[0] = all.iter().enumerate().map(|(e, c)| c * step(e)).sum();
        out[1] = all.iter().enumerate().map(|(e, c)| c * step_sq(e)).sum();
        out[2] = shift.as_ref().map_or(0.0, |w| w.iter().enumerate().map(|(e, c)| c * step(e)).sum());
        out[3..3 + 2 * nl].copy_from_slice(&vals);
        let (mut first, mut var) = (0.0, 0.0);
        for (i, h) in dt.iter().enumerate() {
            let (m1, m2) = bridge_local_time_moments(w[i] - d, w[i + 1] - d, *h);
            first += m1;
            var += m2 - m1 * m1;
        }
        out[3 + 2 * nl] = sy * first;
        out[4 + 2 * nl] = sy * sy * (first * first + var);
    });
    let mut lvls = Vec::with_capacity(2 * nl);
    for (e, &eps) in levels.iter().enumerate() {
        for (o, steps) in [(3, ens.steps()), (4, ens.steps() / 2)] {
            let est = stats[o + 2 * e].estimate();
            lvls.push(LevelMean { eps, steps, mean: est.value, stderr: est.stderr });
        }
    }
    Ok(LocalTimeEstimate {
        level: y,
        mean: stats[0].estimate(),
        second_moment: stats[1].estimate(),
        mean_oracle: local_time_mean(model, y, ens.grid().horizon())?,
        levels: lvls,
        eps_shift: shift.map(|_| stats[2].estimate()),
        variance_explosion: stats[0].exploding(),
        bridge_mean: stats[3 + 2 * nl].estimate(),
        bridge_second_moment: stats[4 + 2 * nl].estimate(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::special::{mean_log_abs_gaussian, EULER_GAMMA};
    use std::f64::consts::{LN_2, PI};

    fn brownian() -> DiffusionModel {
        DiffusionModel::stratonovich(Sigma::Unit, 0.0).unwrap()
    }

    #[test]
    fn grids_nest_under_refinement() {
        for g in [
            TimeGrid::uniform(2.0, 8).unwrap(),
            TimeGrid::graded(1.0, 8, 2.0).unwrap(),
            TimeGrid::geometric(1.0, 8, 0.5).unwrap(),
            TimeGrid::from_times(vec![0.0, 0.1, 0.5, 1.0]).unwrap(),
        ] {
            let f = g.refine();
            assert_eq!(f.steps(), 2 * g.steps());
            for (i, t) in g.times().iter().enumerate() {
                let j = f.index_of(*t).unwrap();
                if g.kind() != GridKind::Geometric(0.5) || i > 0 {
                    assert!(j == 2 * i || i == 0, "{:?} {i}", g.kind());
                }
            }
        }
        assert!(TimeGrid::from_times(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::uniform(0.0, 4).is_err());
    }

    #[test]
    fn ensembles_are_reproducible() {
        let g = TimeGrid::uniform(1.0, 16).unwrap();
        let a = simulate(&brownian(), 11, 100, g.clone()).unwrap();
        let b = simulate(&brownian(), 11, 100, g.clone()).unwrap();
        assert_eq!(a.path(37), b.path(37));
        let c = simulate(&brownian(), 12, 100, g).unwrap();
        assert_ne!(a.path(37), c.path(37));
        let e1 = a.mean_of(|w, _| w[16] * w[16]);
        let e2 = b.mean_of(|w, _| w[16] * w[16]);
        assert_eq!(e1, e2);
    }

    #[test]
    fn brownian_terminal_variance_and_sanity() {
        let ens = simulate(&brownian(), 3, 40_000, TimeGrid::uniform(2.0, 8).unwrap()).unwrap();
        let v = ens.mean_of(|w, _| w[8] * w[8]);
        assert!(v.within(2.0, 5.0), "{v:?}");
        assert!(ens.sanity().pass, "{:?}", ens.sanity());
    }

    #[test]
    fn antithetic_pairs_reflect() {
        let ens = simulate(&brownian(), 5, 10, TimeGrid::uniform(1.0, 4).unwrap()).unwrap().with_antithetic(true);
        let (a, _) = ens.path(4);
        let (b, _) = ens.path(5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn sinh_paths_match_gaussian_moments() {
        // σ(z) = sqrt(1+z²) from 0: X_T = sinh(w_T)
        let m = DiffusionModel::stratonovich(Sigma::Sqrt1pZ2, 0.0).unwrap();
        let ens = simulate(&m, 9, 20_000, TimeGrid::uniform(0.5, 4).unwrap()).unwrap();
        let (w, x) = ens.path(3);
        for (a, b) in w.iter().zip(&x) {
            assert!((a.sinh() - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
        // E sinh(W)² = (e^{2T} - 1)/2
        let e = ens.mean_of(|_, x| x[4] * x[4]);
        assert!(e.within(0.5 * (1f64.exp() - 1.0), 4.0), "{e:?}");
    }

    #[test]
    fn euler_for_general_drift() {
        let m = DiffusionModel::new(Sigma::Unit, "const:0.5".parse().unwrap(), 0.0).unwrap();
        let ens = simulate(&m, 1, 20_000, TimeGrid::uniform(1.0, 10).unwrap()).unwrap();
        assert_eq!(ens.scheme(), PathScheme::EulerMaruyama);
        let e = ens.mean_of(|_, x| x[10]);
        assert!(e.within(0.5, 4.0), "{e:?}");
    }

    #[test]
    fn fast_mollifiers_match_reference() {
        for spec in ["logabs", "pv1x", "xlogabs", "delta@0.3", "heaviside@-0.2"] {
            let s: DistributionSpec = spec.parse().unwrap();
            for &eps in &[0.05, 0.3] {
                let m = Mollified::new(&s, eps).unwrap();
                for &x in &[-3.0, -0.41, -0.01, 0.0, 0.013, 0.2, 1.7, 2.5, 9.0] {
                    let fast = m.eval(x);
                    let exact = mollified_eval(&s, eps, x).unwrap();
                    assert!((fast - exact).abs() < 1e-9 * (1.0 + exact.abs()), "{spec} ε={eps} x={x}: {fast} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn functional_derivatives_match_bumps() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let ens = simulate(&brownian(), 2, 20, g.clone()).unwrap();
        for j in [
            TestFunctional::Hermite { n: 3, t_star: 0.6 },
            TestFunctional::IncrementPower { a: 0.2, b: 0.9, k: 2 },
            TestFunctional::Constant,
        ] {
            let b = j.bind(&g).unwrap();
            for i in 0..5 {
                let (w, _) = ens.path(i);
                for k in 0..10 {
                    let fd = b.bumped_difference(k, &w, 1e-6);
                    let d = b.derivative(k, &w);
                    assert!((fd - d).abs() < 1e-4 * (1.0 + d.abs()), "{j} k={k}: {fd} vs {d}");
                }
            }
        }
    }

    #[test]
    fn conditional_expectations_by_mc() {
        // E[J | w_t] integrated against the law of w_t gives E J
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let ens = simulate(&brownian(), 4, 20_000, g.clone()).unwrap();
        for j in [TestFunctional::Hermite { n: 2, t_star: 0.5 }, TestFunctional::IncrementPower { a: 0.3, b: 0.8, k: 2 }] {
            let b = j.bind(&g).unwrap();
            for &ti in &[2usize, 6, 9] {
                let t = g.times()[ti];
                let direct = ens.mean_of(|w, _| b.value(w) * w[ti]);
                let cond = ens.mean_of(|w, _| j.conditional_value(t, w[ti]) * w[ti]);
                assert!((direct.value - cond.value).abs() < 4.0 * direct.stderr, "{j} t={t}");
            }
        }
        assert_eq!(TestFunctional::parse("H2", 2.0).unwrap(), TestFunctional::Hermite { n: 2, t_star: 2.0 });
        assert_eq!(TestFunctional::parse("wT", 1.0).unwrap(), TestFunctional::IncrementPower { a: 0.0, b: 1.0, k: 1 });
        assert!(TestFunctional::parse("H2@3", 1.0).is_err());
    }

    #[test]
    fn pairing_rhs_closed_forms() {
        let m = brownian();
        let h1 = TestFunctional::Hermite { n: 1, t_star: 1.0 };
        let h2 = TestFunctional::Hermite { n: 2, t_star: 1.0 };
        let d0 = DistributionSpec::delta(0.0);
        assert_eq!(pairing_rhs(&d0, &m, &TestFunctional::Constant, 1.0).unwrap(), 0.0);
        assert!((pairing_rhs(&d0, &m, &h1, 1.0).unwrap() - (2.0 / PI).sqrt()).abs() < 1e-10);
        assert!(pairing_rhs(&d0, &m, &h2, 1.0).unwrap().abs() < 1e-12);
        // delta@y, H₂: 2/T ∫ y p_t(0, y) dt
        let y = 0.7;
        let h2t = TestFunctional::Hermite { n: 2, t_star: 2.0 };
        let expect = 2.0 / 2.0 * y * heat_time_integral(y, 0.0, 2.0);
        assert!((pairing_rhs(&DistributionSpec::delta(y), &m, &h2t, 2.0).unwrap() - expect).abs() < 1e-10);
        let hv = DistributionSpec::heaviside(0.0);
        assert!((pairing_rhs(&hv, &m, &h1, 1.0).unwrap() - 0.5).abs() < 1e-10);
        let expect = -4.0 / 3.0 / (2.0 * PI).sqrt();
        assert!((pairing_rhs(&hv, &m, &h2, 1.0).unwrap() - expect).abs() < 1e-10);
        // log: ∫ (½ log t + L₀) dt with L₀ = -(γ + ln 2)/2
        let l0 = -(EULER_GAMMA + LN_2) / 2.0;
        assert!((l0 - mean_log_abs_gaussian()).abs() < 1e-15);
        assert!((pairing_rhs(&DistributionSpec::LogAbs, &m, &h1, 1.0).unwrap() - (l0 - 0.5)).abs() < 1e-9);
        assert!(pairing_rhs(&DistributionSpec::LogAbs, &m, &h2, 1.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn small_pairing_matrix() {
        let ens = simulate(&brownian(), 7, 20_000, TimeGrid::graded(1.0, 64, 2.0).unwrap()).unwrap();
        let specs = [DistributionSpec::heaviside(0.0), DistributionSpec::LogAbs];
        let js = [TestFunctional::Constant, TestFunctional::Hermite { n: 1, t_star: 1.0 }];
        let sched = EpsSchedule::halving(0.1, 2).unwrap();
        let res = pairing_lhs_matrix(&ens, &specs, &sched, &js).unwrap();
        for (r, (s, j)) in res.iter().zip(specs.iter().flat_map(|s| js.iter().map(move |j| (s, j)))) {
            let rhs = pairing_rhs(s, &brownian(), j, 1.0).unwrap();
            assert!(r.estimate.within(rhs, 4.0), "{} {}: {:?} vs {rhs}", r.spec, r.functional, r.estimate);
        }
        assert!(EpsSchedule::new(vec![0.1, 0.1]).is_err());
        assert!(EpsSchedule::new(vec![0.1]).is_err());
    }

    #[test]
    fn far_level_local_time_is_negligible() {
        let ens = simulate(&brownian(), 1, 2_000, TimeGrid::graded(1.0, 32, 2.0).unwrap()).unwrap();
        let e = mc_local_time(&ens, 5.0, &EpsSchedule::halving(0.1, 2).unwrap()).unwrap();
        assert!(e.mean.value.abs() < 1e-5, "{:?}", e.mean);
        assert!(e.mean_oracle < 1e-5);
    }

    #[test]
    fn zero_limit_weights_reproduce_polynomials() {
        let eps = [0.1, 0.05, 0.025, 0.0125];
        let w = zero_limit_weights(&eps);
        for deg in 0..4 {
            let p = |e: f64| 0.7 + (1..=deg).map(|k| (k as f64 + 0.5) * e.powi(k)).sum::<f64>();
            let v: f64 = w.iter().zip(&eps).map(|(c, e)| c * p(*e)).sum();
            assert!((v - 0.7).abs() < 1e-12, "degree {deg}: {v}");
        }
        let sched = EpsSchedule::new(vec![0.05, 0.025]).unwrap();
        let (c1, c2) = sched.weights_at(1);
        let w = zero_limit_weights(&[0.05, 0.025]);
        assert!((w[0] - c1).abs() < 1e-15 && (w[1] - c2).abs() < 1e-15);
    }

    #[test]
    fn bridge_local_time_moments_match_quadrature() {
        // pinned at the level: P(L > l) = exp(-l²/2dt)
        let (m1, m2) = bridge_local_time_moments(0.0, 0.0, 0.5);
        assert!((m1 - (PI * 0.5 / 2.0).sqrt()).abs() < 1e-14);
        assert!((m2 - 1.0).abs() < 1e-14);
        // the mean is the time integral of the bridge density at 0
        let q = Quad::new(1e-14, 1e-12);
        for (a, b, dt) in [(0.3, -0.1, 0.5), (0.2, 0.4, 0.1), (-1.0, -0.5, 2.0), (0.05, 3.0, 0.01)] {
            let dens = |s: f64| {
                let var = s * (dt - s) / dt;
                let mean = a + (b - a) * s / dt;
                normal_pdf(mean / var.sqrt()) / var.sqrt()
            };
            let direct = q.tanh_sinh(dens, 0.0, dt).unwrap().value;
            let (m1, m2) = bridge_local_time_moments(a, b, dt);
            assert!((m1 - direct).abs() < 1e-11 * (1.0 + direct), "{a} {b} {dt}: {m1} vs {direct}");
            assert!(m2 >= m1 * m1);
        }
        assert_eq!(bridge_local_time_moments(3.0, 3.0, 0.01), (0.0, 0.0));
    }

    #[test]
    fn local_time_moments_match_chaos_norm() {
        use crate::localtime::local_time_chaos_norm;
        for (model, y) in [(brownian(), 0.0), (DiffusionModel::stratonovich(Sigma::Sqrt1pZ2, 0.0).unwrap(), 0.3)] {
            let ens = simulate(&model, 17, 100_000, TimeGrid::graded(1.0, 16, 2.0).unwrap()).unwrap();
            let e = mc_local_time(&ens, y, &EpsSchedule::halving(0.1, 2).unwrap()).unwrap();
            assert!(e.bridge_mean.within(e.mean_oracle, 4.0), "{:?} vs {}", e.bridge_mean, e.mean_oracle);
            let norm = local_time_chaos_norm(&model, y, 0.0, 256).unwrap();
            // the chaos norm is of σ(y)∫δ_y(X_t)dt, one factor σ(y) short
            let chaos = model.sigma_at(y).powi(2) * (norm.value.powi(2) + norm.tail_sq.unwrap_or(0.0));
            let m2 = e.bridge_second_moment;
            assert!((m2.value - chaos).abs() < 4.0 * m2.stderr + 1e-3, "{m2:?} vs {chaos}");
        }
    }

    #[test]
    fn path_summary_csv() {
        let ens = simulate(&brownian(), 3, 5, TimeGrid::uniform(1.0, 4).unwrap()).unwrap();
        let mut buf = Vec::new();
        ens.write_summary_csv(3, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path,w_final,x_final,x_min,x_max");
        assert_eq!(lines.len(), 4);
        let (w, _) = ens.path(2);
        assert!(lines[3].starts_with(&format!("2,{}", w[4])));
    }
}
