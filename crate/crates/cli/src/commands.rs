//! One function per subcommand. Each fills its defaults into the config (so
//! the report echoes exactly what ran), calls the library and collects
//! outputs, a table and verification gates.

use std::fmt;

use chaoslab::chaos::{
    default_window, estimate_critical_index, expand, partial_sums, smoothing_norm, sobolev_norm, SobolevIndex,
};
use chaoslab::diffusion::{bessel_delta_kernel, bessel_lp_trend, DiffusionModel, Drift, Sigma};
use chaoslab::distcat::DistributionSpec;
use chaoslab::hermite::{hermite_eval, hermite_normalized, hermite_zero_value};
use chaoslab::localtime::{density_holder_check, write_holder_csv, HolderExperiment};
use chaoslab::mcverify::{
    ito_verify, mc_local_time, simulate, EpsSchedule, ItoCase, TestFunctional, TimeGrid, ORACLE_AGREEMENT,
};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::report::{num, Outcome, Table};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, values or input files (exit 2).
    Usage(String),
    /// The computation itself failed (exit 1).
    Failure(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<chaoslab::Error> for CliError {
    fn from(e: chaoslab::Error) -> Self {
        use chaoslab::Error as E;
        match e {
            E::InvalidArgument(_) | E::Parse(_) | E::Unsupported(_) | E::Ellipticity(_) | E::Divergent(_) | E::Io(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Failure(e.to_string()),
        }
    }
}

type Run = Result<Outcome, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn dist(c: &mut ExperimentConfig, default: &str) -> Result<DistributionSpec, CliError> {
    let text = c.dist.get_or_insert_with(|| default.to_string());
    Ok(text.parse::<DistributionSpec>()?)
}

fn model(c: &mut ExperimentConfig) -> Result<DiffusionModel, CliError> {
    let sigma: Sigma = c.model.get_or_insert_with(|| "unit".into()).parse()?;
    let drift: Drift = c.drift.get_or_insert_with(|| "strat".into()).parse()?;
    let x = *c.start.get_or_insert(0.0);
    Ok(DiffusionModel::new(sigma, drift, x)?)
}

/// `y` and `y + 10^{-3}, …, y + 10^{-1}` (five log-spaced separations).
fn holder_pairs(y: f64) -> Vec<(f64, f64)> {
    (0..5).map(|k| (y, y + 10f64.powf(-3.0 + 0.5 * k as f64))).collect()
}

fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// `hermite --n 5 --x 0.5`: `H_k(x)`, `H_k(0)` and the normalized functions for `k ≤ n`.
pub fn hermite(c: &mut ExperimentConfig) -> Run {
    let n = *c.n.get_or_insert(5);
    let x = *c.x.get_or_insert(0.5);
    let mut out = Outcome::default();
    let mut table = Table::new(&["k", "h_k_x", "h_k_zero", "normalized_k_x", "err_est"]);
    for k in 0..=n {
        let v = hermite_eval(k, x)?;
        // three-term recurrence: relative rounding grows at most linearly in k
        let err = (k as f64 + 1.0) * f64::EPSILON * v.abs();
        table.push(vec![k.to_string(), num(v), num(hermite_zero_value(k)), num(hermite_normalized(k, x)?), num(err)]);
    }
    let v = hermite_eval(n, x)?;
    out.output("value", json!({ "value": v, "err": (n as f64 + 1.0) * f64::EPSILON * v.abs() }));
    out.output("zero_value", json!({ "value": hermite_zero_value(n), "err": 0.0 }));
    out.provenance("order", n);
    out.table = table;
    Ok(out)
}

/// `chaos --dist delta@0 --t 1 --T 1 --N 8`: the pairings `a_n` and `‖J_n‖²`.
pub fn chaos(c: &mut ExperimentConfig) -> Run {
    let spec = dist(c, "delta@0")?;
    let horizon = *c.horizon.get_or_insert(1.0);
    let t = *c.t.get_or_insert(horizon);
    let n = *c.truncation.get_or_insert(8);
    let v = expand(&spec, t, horizon, n)?;
    let mut out = Outcome::default();
    let mut buf = Vec::new();
    v.write_csv(&mut buf).map_err(CliError::from)?;
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    let header: Vec<String> = rdr.headers().map_err(|e| CliError::Failure(e.to_string()))?.iter().map(String::from).collect();
    let mut table = Table { header, rows: Vec::new() };
    for r in rdr.records() {
        table.rows.push(r.map_err(|e| CliError::Failure(e.to_string()))?.iter().map(String::from).collect());
    }
    let terms: Vec<_> = (0..=n)
        .map(|k| {
            let b = v.normalized()[k];
            let e = v.err_estimates()[k];
            json!({ "n": k, "pairing": v.pairing(k), "l2_term": v.l2_term(k), "err": e * (2.0 * b.abs() + e) })
        })
        .collect();
    out.output("spec", spec.to_string());
    out.output("terms", terms);
    out.provenance("truncation", n);
    out.provenance("t", t);
    out.provenance("T", horizon);
    out.table = table;
    Ok(out)
}

/// `norm --dist delta@0 --s -0.6 --N 1000`: truncated `‖Λ(w(t))‖_{2,s}` with tail fit.
pub fn norm(c: &mut ExperimentConfig) -> Run {
    let spec = dist(c, "delta@0")?;
    let horizon = *c.horizon.get_or_insert(1.0);
    let t = *c.t.get_or_insert(horizon);
    let n = *c.truncation.get_or_insert(1000);
    let s = *c.s.get_or_insert(-0.6);
    let v = expand(&spec, t, horizon, n)?;
    let value = sobolev_norm(&v, SobolevIndex::new(s)?)?;
    let mut out = Outcome::default();
    let mut table = Table::new(&["n", "partial_sum"]);
    for (k, p) in partial_sums(&v, s).iter().enumerate() {
        table.push(vec![k.to_string(), num(*p)]);
    }
    out.output("norm", &value);
    out.provenance("truncation", n);
    out.provenance("fit_window", default_window(n));
    out.table = table;
    Ok(out)
}

/// `smoothing --dist delta@0 --s -0.8 --T 1 --N 300`: both sides of the smoothing identity.
pub fn smoothing(c: &mut ExperimentConfig) -> Run {
    let spec = dist(c, "delta@0")?;
    let s = *c.s.get_or_insert(-0.8);
    let horizon = *c.horizon.get_or_insert(1.0);
    let n = *c.truncation.get_or_insert(300);
    let pair = smoothing_norm(&spec, s, horizon, n)?;
    let ratio = if pair.lhs == pair.rhs { 1.0 } else { pair.lhs / pair.rhs };
    let mut out = Outcome::default();
    out.output("lhs", &pair.lhs);
    out.output("rhs", &pair.rhs);
    out.output("ratio", ratio);
    out.output("max_term_gap", pair.max_term_gap);
    out.output("divergent", pair.divergent);
    out.gate("smoothing identity", (ratio - 1.0).abs() <= 1e-12, format!("lhs/rhs - 1 = {:e}", ratio - 1.0));
    out.gate("term-by-term agreement", pair.max_term_gap <= 1e-12, format!("max term gap {:e}", pair.max_term_gap));
    let mut table = Table::new(&["lhs", "rhs", "ratio", "max_term_gap"]);
    table.push(vec![num(pair.lhs), num(pair.rhs), num(ratio), num(pair.max_term_gap)]);
    out.provenance("truncation", n);
    out.table = table;
    Ok(out)
}

/// `index --dist delta@0 --N 5000`: critical Sobolev index from the chaos tail.
pub fn index(c: &mut ExperimentConfig) -> Run {
    let spec = dist(c, "delta@0")?;
    let n = *c.truncation.get_or_insert(5000);
    let window = default_window(n).ok_or_else(|| usage(format!("N = {n} is too small for a tail fit")))?;
    let est = estimate_critical_index(&spec, n, window)?;
    let mut out = Outcome::default();
    out.output("estimate", &est);
    let mut table = Table::new(&["spec", "s_star", "stderr", "alpha", "window_lo", "window_hi", "residual"]);
    table.push(vec![
        spec.to_string(),
        num(est.s_star),
        num(est.stderr),
        num(est.alpha),
        window.0.to_string(),
        window.1.to_string(),
        num(est.residual),
    ]);
    out.provenance("truncation", n);
    out.provenance("fit_window", window);
    out.table = table;
    Ok(out)
}

/// `kv-kernel --model unit --n 0 --t 1 --a 0.5`: `Aⁿp_t(x, a)` and its profile on `x ± 4`.
pub fn kv_kernel(c: &mut ExperimentConfig) -> Run {
    let m = model(c)?;
    let n = *c.n.get_or_insert(0);
    let t = *c.t.get_or_insert(1.0);
    let a = *c.a.get_or_insert(m.start() + 0.5);
    // closed form through ψ; the only numerical step is ψ itself
    let err_of = |v: f64| 1e-12 * (1.0 + v.abs());
    let v = m.kv_kernel(n, t, a)?;
    let mut out = Outcome::default();
    out.output("value", json!({ "value": v, "err": err_of(v) }));
    let mut table = Table::new(&["a", "kernel", "err_est"]);
    for k in 0..=80 {
        let z = m.start() - 4.0 + 0.1 * k as f64;
        let v = m.kv_kernel(n, t, z)?;
        table.push(vec![num(z), num(v), num(err_of(v))]);
    }
    out.provenance("lamperti_round_trip_error", m.lamperti().round_trip_error());
    out.table = table;
    Ok(out)
}

/// `scale-speed --model unit --drift strat --y 0`: scale/speed densities and the
/// fundamental solution `u`, `Au` on `x ± 3`.
pub fn scale_speed(c: &mut ExperimentConfig) -> Run {
    let m = model(c)?;
    let y = *c.y.get_or_insert(m.start());
    let ss = m.scale_speed()?;
    let fs = m.fundamental_solution(y)?;
    let mut table = Table::new(&["z", "scale_density", "scale", "speed_density", "u", "au"]);
    for k in 0..=60 {
        let z = m.start() - 3.0 + 0.1 * k as f64;
        table.push(vec![
            num(z),
            num(ss.scale_density(z)?),
            num(ss.scale(z)?),
            num(ss.speed_density(z)?),
            num(fs.u(z)?),
            num(fs.au(z)?),
        ]);
    }
    let mut out = Outcome::default();
    out.output("u_at_level", json!({ "value": fs.u(y)?, "err": 0.0 }));
    out.output("speed_density_at_level", json!({ "value": ss.speed_density(y)?, "err": 1e-13 }));
    out.provenance("quadrature_tolerance", 1e-15);
    out.table = table;
    Ok(out)
}

/// `holder --model unit --s 0 --beta 0.45 --N 256 --y 0`: difference norms
/// against the bound `c|y - z|^β` for five separations.
pub fn holder(c: &mut ExperimentConfig) -> Run {
    let m = model(c)?;
    let s = *c.s.get_or_insert(0.0);
    let beta = *c.beta.get_or_insert(0.9 * (0.5 - s));
    let n = *c.truncation.get_or_insert(256);
    let y = *c.y.get_or_insert(m.start());
    let exp = HolderExperiment { model: m, s, beta, pairs: holder_pairs(y), truncation: n };
    exp.validate()?;
    let rows = exp.run()?;
    let mut out = Outcome::default();
    let worst = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    out.gate("norm below bound", worst <= 1.0, format!("largest norm/bound = {worst:e}"));
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| ((r.y - r.z).abs(), r.norm)).collect();
    if let Some(slope) = log_log_slope(&pts) {
        out.gate("log-log slope", slope >= beta - 0.05, format!("slope {slope:.4} vs β - 0.05 = {:.4}", beta - 0.05));
        out.output("slope", slope);
    }
    let mut buf = Vec::new();
    write_holder_csv(&rows, &mut buf)?;
    out.table = table_from_csv(&buf)?;
    out.output("rows", &rows);
    out.provenance("truncation", n);
    Ok(out)
}

fn table_from_csv(buf: &[u8]) -> Result<Table, CliError> {
    let fail = |e: csv::Error| CliError::Failure(e.to_string());
    let mut rdr = csv::Reader::from_reader(buf);
    let header = rdr.headers().map_err(fail)?.iter().map(String::from).collect();
    let mut table = Table { header, rows: Vec::new() };
    for r in rdr.records() {
        table.rows.push(r.map_err(fail)?.iter().map(String::from).collect());
    }
    Ok(table)
}

/// `density-holder --model unit --beta 0.45 --N 256 --y 0`: Hölder ratios of
/// the occupation density.
pub fn density_holder(c: &mut ExperimentConfig) -> Run {
    let m = model(c)?;
    let beta = *c.beta.get_or_insert(0.45);
    let n = *c.truncation.get_or_insert(256);
    let y = *c.y.get_or_insert(m.start());
    let report = density_holder_check(&m, &holder_pairs(y), beta, n)?;
    let mut out = Outcome::default();
    out.gate("ratio bounded", report.bounded, format!("largest ratio {:e}", report.max_ratio));
    out.gate("dominated by difference norm", report.dominated, String::new());
    let mut table = Table::new(&["y", "z", "delta", "ratio", "norm"]);
    for r in &report.rows {
        table.push(vec![num(r.y), num(r.z), num(r.delta), num(r.ratio), num(r.norm)]);
    }
    out.output("report", &report);
    out.provenance("truncation", n);
    out.table = table;
    Ok(out)
}

/// `bessel-kernel --s -0.5 --p 1.8`: `L^p` trend of `(1-Δ)^{s/2}δ_y` near its singularity.
pub fn bessel_kernel(c: &mut ExperimentConfig) -> Run {
    let s = *c.s.get_or_insert(-0.5);
    let p = *c.p.get_or_insert(1.8);
    let x = *c.x.get_or_insert(1.0);
    let y = *c.y.get_or_insert(0.0);
    // the power law only dominates well inside |x - y| < 0.1
    let cutoffs: Vec<f64> = (3..=9).map(|k| 10f64.powi(-k)).collect();
    let trend = bessel_lp_trend(s, p, &cutoffs)?;
    let critical = 1.0 / (1.0 + s);
    let mut out = Outcome::default();
    out.output("kernel", json!({ "value": bessel_delta_kernel(s, y, x)?, "err": 1e-10 }));
    out.output("trend", &trend);
    out.output("critical_p", critical);
    out.gate(
        "trend matches p < 1/(1+s)",
        trend.finite_trend == (p < critical),
        format!("finite trend {} at p = {p}, critical {critical}", trend.finite_trend),
    );
    let mut table = Table::new(&["cutoff", "integral"]);
    for (d, v) in trend.cutoffs.iter().zip(&trend.integrals) {
        table.push(vec![num(*d), num(*v)]);
    }
    out.provenance("outer_radius", chaoslab::diffusion::LP_OUTER_RADIUS);
    out.provenance("quadrature_tolerance", 1e-10);
    out.table = table;
    Ok(out)
}

fn mc_setup(c: &mut ExperimentConfig, default_steps: usize, default_eps: &str) -> Result<(TimeGrid, EpsSchedule), CliError> {
    let horizon = *c.horizon.get_or_insert(1.0);
    let steps = *c.steps.get_or_insert(default_steps);
    c.paths.get_or_insert(100_000);
    c.seed.get_or_insert(7);
    let schedule: EpsSchedule = c.eps.get_or_insert_with(|| default_eps.into()).parse()?;
    Ok((TimeGrid::graded(horizon, steps, 2.0)?, schedule))
}

/// `ito-verify --case tanaka --y 0.5 --J 1 --M 100000 --K 256 --seed 7`.
pub fn ito(c: &mut ExperimentConfig) -> Run {
    let m = model(c)?;
    let (grid, schedule) = mc_setup(c, 256, "0.05,0.025")?;
    let case = match c.case.get_or_insert_with(|| "tanaka".into()).as_str() {
        "tanaka" => ItoCase::Tanaka { y: *c.y.get_or_insert(m.start() + 0.5) },
        "pv" => ItoCase::PrincipalValue,
        other => return Err(usage(format!("unknown case '{other}' (expected tanaka or pv)"))),
    };
    let j = TestFunctional::parse(c.functional.get_or_insert_with(|| "1".into()), grid.horizon())?;
    let ens = simulate(&m, c.seed.unwrap_or_default(), c.paths.unwrap_or_default(), grid)?;
    let sanity = ens.sanity();
    let report = ito_verify(&ens, case, &j, &schedule)?;
    let mut out = Outcome::default();
    out.gate("increment sanity", sanity.pass, format!("{sanity:?}"));
    out.gate(
        "deterministic oracles agree",
        report.oracles_agree,
        format!("gap {:e} (limit {ORACLE_AGREEMENT:e})", report.oracle_gap),
    );
    out.gate(
        "residual within 3 stderr",
        report.residual.abs() < 3.0 * report.residual_stderr,
        format!("residual {:e} ± {:e}", report.residual, report.residual_stderr),
    );
    let mut table = Table::new(&["name", "estimate", "stderr", "method"]);
    for t in &report.terms {
        table.push(vec![t.name.clone(), num(t.estimate), num(t.stderr), t.method.clone()]);
    }
    out.output("report", &report);
    out.output("sanity", sanity);
    out.provenance("paths", ens.paths());
    out.provenance("steps", ens.grid().steps());
    out.provenance("grid", "graded, t_k = T (k/K)^2");
    out.provenance("eps", schedule.levels());
    out.provenance("seed", ens.seed());
    out.table = table;
    Ok(out)
}

/// `local-time-mc --y 0 --M 100000 --K 256 --eps 0.1,0.05,0.025,0.0125`.
pub fn local_time(c: &mut ExperimentConfig) -> Run {
    let m = model(c)?;
    let (grid, schedule) = mc_setup(c, 256, "0.1,0.05,0.025,0.0125")?;
    let y = *c.y.get_or_insert(m.start());
    let ens = simulate(&m, c.seed.unwrap_or_default(), c.paths.unwrap_or_default(), grid)?;
    let est = mc_local_time(&ens, y, &schedule)?;
    let mut out = Outcome::default();
    let z = (est.mean.value - est.mean_oracle) / est.mean.stderr;
    out.gate("mollified mean within 3 stderr", z.abs() < 3.0, format!("z = {z:.3}"));
    let zb = (est.bridge_mean.value - est.mean_oracle) / est.bridge_mean.stderr;
    out.gate("bridge mean within 3 stderr", zb.abs() < 3.0, format!("z = {zb:.3}"));
    if let Some(shift) = est.eps_shift {
        out.gate(
            "ε-halving bias gate",
            shift.value.abs() < est.mean.stderr,
            format!("shift {:e} vs stderr {:e}", shift.value, est.mean.stderr),
        );
    }
    let mut table = Table::new(&["eps", "steps", "mean", "stderr"]);
    for l in &est.levels {
        table.push(vec![num(l.eps), l.steps.to_string(), num(l.mean), num(l.stderr)]);
    }
    out.output("estimate", &est);
    out.provenance("paths", ens.paths());
    out.provenance("steps", ens.grid().steps());
    out.provenance("grid", "graded, t_k = T (k/K)^2");
    out.provenance("eps", schedule.levels());
    out.provenance("seed", ens.seed());
    out.table = table;
    Ok(out)
}
