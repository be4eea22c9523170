//! Chaos vectors along a single Gaussian direction, Sobolev-Watanabe norms
//! `‖F‖²_{2,s} = Σ (1+n)^s ‖J_n F‖²`, the time-scaling and smoothing
//! identities for `Λ(w(t))`, and critical-index estimation from the tail.
//!
//! Convention: the chaos expansion of `Λ(cZ)` is `Σ (a_n / n!) H_n(Z)` with
//! pairings `a_n = E[Λ(cZ) H_n(Z)]`, so `‖J_n‖² = a_n² / n!`. A vector stores
//! the normalized pairings `b_n = a_n / sqrt(n!)`; then `‖J_n‖² = b_n²` and
//! nothing overflows at thousands of terms.

use std::io::Write;

use serde::Serialize;

use crate::distcat::{pairings_normalized, DistributionSpec, PairingMethod};
use crate::error::{Error, Result};
use crate::numerics::special::ln_factorial;
use crate::numerics::{NeumaierSum, Quad};

/// Differentiability index `s` with integrability fixed at `p = 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobolevIndex {
    pub s: f64,
}

impl SobolevIndex {
    pub fn new(s: f64) -> Result<Self> {
        if !s.is_finite() {
            return Err(Error::invalid(format!("Sobolev index must be finite, got {s}")));
        }
        Ok(Self { s })
    }

    pub fn p(&self) -> u32 {
        2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaosVector {
    spec: String,
    t: f64,
    horizon: f64,
    scale: f64,
    normalized: Vec<f64>,
    err: Vec<f64>,
}

impl ChaosVector {
    /// Builds a vector from normalized pairings `b_n` and their error estimates.
    pub fn from_normalized(spec: impl Into<String>, scale: f64, normalized: Vec<f64>, err: Vec<f64>) -> Result<Self> {
        if normalized.len() != err.len() || normalized.is_empty() {
            return Err(Error::invalid("pairings and error estimates must be nonempty and of equal length"));
        }
        if normalized.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("chaos pairings must be finite"));
        }
        if err.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::invalid("error estimates must be nonnegative"));
        }
        Ok(Self { spec: spec.into(), t: scale * scale, horizon: scale * scale, scale, normalized, err })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            spec: "zero".into(),
            t: 1.0,
            horizon: 1.0,
            scale: 1.0,
            normalized: vec![0.0; n + 1],
            err: vec![0.0; n + 1],
        }
    }

    pub fn spec(&self) -> &str {
        &self.spec
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Truncation order `N` (the vector holds `N + 1` terms).
    pub fn truncation(&self) -> usize {
        self.normalized.len() - 1
    }

    /// `b_n = a_n / sqrt(n!)`.
    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn err_estimates(&self) -> &[f64] {
        &self.err
    }

    /// Raw pairing `a_n`; `±inf` once it leaves the `f64` range.
    pub fn pairing(&self, n: usize) -> f64 {
        let b = self.normalized[n];
        if b == 0.0 {
            return 0.0;
        }
        b.signum() * (b.abs().ln() + 0.5 * ln_factorial(n)).exp()
    }

    /// `‖J_n‖²₂ = a_n² / n!`.
    pub fn l2_term(&self, n: usize) -> f64 {
        self.normalized[n] * self.normalized[n]
    }

    /// CSV with columns `n,pairing,l2_term,err_est`. Pairings beyond the `f64`
    /// range are written in decimal scientific notation with a wide exponent.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "pairing", "l2_term", "err_est"])?;
        for n in 0..self.normalized.len() {
            let err = self.err[n] * (self.normalized[n].abs() * 2.0 + self.err[n]);
            wtr.write_record([
                n.to_string(),
                format_pairing(self.normalized[n], n),
                format!("{:e}", self.l2_term(n)),
                format!("{:e}", err),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `b sqrt(n!)` as text, exact `f64` formatting when it fits.
pub fn format_pairing(b: f64, n: usize) -> String {
    if b == 0.0 {
        return "0e0".to_string();
    }
    let log10 = b.abs().log10() + 0.5 * ln_factorial(n) / std::f64::consts::LN_10;
    if log10 < 300.0 {
        let v = b.signum() * (b.abs().ln() + 0.5 * ln_factorial(n)).exp();
        return format!("{v:e}");
    }
    let e = log10.floor();
    let m = 10f64.powf(log10 - e);
    let sign = if b < 0.0 { "-" } else { "" };
    format!("{sign}{m:.15}e{e}")
}

fn check_times(t: f64, horizon: f64) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    if !(t > 0.0 && t <= horizon) {
        return Err(Error::invalid(format!("t must lie in (0, T], got t={t}, T={horizon}")));
    }
    Ok(())
}

/// Chaos vector of `Λ(sqrt(T/t) w(t))` along `w(t)/sqrt(t)`.
///
/// Since `sqrt(T/t) w(t)` has the law of `w(T)`, the pairings are those of
/// `Λ(sqrt(T) Z)` whatever `t` is; `t` only labels the direction.
pub fn expand(spec: &DistributionSpec, t: f64, horizon: f64, n: usize) -> Result<ChaosVector> {
    expand_with(spec, t, horizon, n, PairingMethod::Exact)
}

pub fn expand_with(
    spec: &DistributionSpec,
    t: f64,
    horizon: f64,
    n: usize,
    method: PairingMethod,
) -> Result<ChaosVector> {
    check_times(t, horizon)?;
    let scale = horizon.sqrt();
    let terms = pairings_normalized(spec, scale, n, method)?;
    let mut v = ChaosVector::from_normalized(
        spec.to_string(),
        scale,
        terms.iter().map(|p| p.normalized).collect(),
        terms.iter().map(|p| p.err).collect(),
    )?;
    v.t = t;
    v.horizon = horizon;
    Ok(v)
}

/// `Σ_{n≤N} (1+n)^s ‖J_n‖²` with compensated summation.
pub fn sobolev_norm_sq_partial(v: &ChaosVector, s: f64) -> f64 {
    let mut acc = NeumaierSum::new();
    for (n, b) in v.normalized.iter().enumerate() {
        acc.add((1.0 + n as f64).powf(s) * b * b);
    }
    acc.value()
}

/// Running partial sums of `Σ (1+n)^s ‖J_n‖²`.
pub fn partial_sums(v: &ChaosVector, s: f64) -> Vec<f64> {
    let mut acc = NeumaierSum::new();
    v.normalized
        .iter()
        .enumerate()
        .map(|(n, b)| {
            acc.add((1.0 + n as f64).powf(s) * b * b);
            acc.value()
        })
        .collect()
}

/// Which subsequence a tail fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
    /// Every order, averaged in blocks of four to wash out oscillation in `n`.
    All,
}

/// Power-law fit `‖J_n‖² ≈ C n^{-α}` of a chaos tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndexEstimate {
    pub alpha: f64,
    /// `s* = α - 1`: the series converges for `s < s*`.
    pub s_star: f64,
    pub stderr: f64,
    pub prefactor: f64,
    pub window: (usize, usize),
    pub parity: Parity,
    /// Root mean square of the weighted log residuals.
    pub residual: f64,
    pub points: usize,
}

impl IndexEstimate {
    /// Divergence rule: `s ≥ s* − 2·stderr`.
    pub fn diverges_at(&self, s: f64) -> bool {
        s >= self.s_star - 2.0 * self.stderr
    }

    /// Estimate of `Σ_{n>N} (1+n)^s ‖J_n‖²` from the fitted law,
    /// `ρ C N^{s-s*} / (s* - s)` with `ρ` the fraction of nonzero orders.
    pub fn tail_bound(&self, s: f64, n: usize) -> f64 {
        if self.diverges_at(s) {
            return f64::INFINITY;
        }
        let rho = if self.parity == Parity::All { 1.0 } else { 0.5 };
        rho * self.prefactor * (n as f64).powf(s - self.s_star) / (self.s_star - s)
    }
}

const MIN_FIT_POINTS: usize = 10;
const TINY: f64 = 1e-300;

fn detect_parity(b: &[f64], lo: usize, hi: usize) -> Parity {
    let zero = |n: usize| b[n].abs() <= TINY;
    let odd_zero = (lo..=hi).filter(|n| n % 2 == 1).all(zero);
    let even_zero = (lo..=hi).filter(|n| n % 2 == 0).all(zero);
    if odd_zero && !even_zero {
        Parity::Even
    } else if even_zero && !odd_zero {
        Parity::Odd
    } else {
        Parity::All
    }
}

struct Fit {
    slope: f64,
    intercept: f64,
    stderr: f64,
    rms: f64,
}

/// Weighted least squares of `y` on `x` with weights `w`.
fn weighted_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<Fit> {
    let m = x.len();
    if m < 3 {
        return Err(Error::IllConditioned(format!("only {m} points")));
    }
    let sw: f64 = w.iter().sum();
    let xb = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let yb = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - xb).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - xb) * (c - yb)).sum();
    if !(sxx > 1e-12 * sw) {
        return Err(Error::IllConditioned("window spans too narrow a range of log n".into()));
    }
    let slope = sxy / sxx;
    let intercept = yb - slope * xb;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, c), b)| b * (c - intercept - slope * a).powi(2))
        .sum();
    let sigma2 = ssr / (m as f64 - 2.0);
    Ok(Fit { slope, intercept, stderr: (sigma2 / sxx).sqrt(), rms: (ssr / sw).sqrt() })
}

/// Tail fit of `ln ‖J_n‖²` against `ln n` over `window = (n_lo, n_hi)`,
/// weighted by `1/n`. The uncertainty combines the regression standard error
/// with half the gap between fits on the two halves of the window, which
/// captures curvature from sub-leading corrections.
pub fn estimate_index(v: &ChaosVector, window: (usize, usize)) -> Result<IndexEstimate> {
    let (lo, hi) = window;
    let lo = lo.max(1);
    if hi > v.truncation() || lo >= hi {
        return Err(Error::invalid(format!(
            "fit window ({}, {hi}) must lie inside [1, {}]",
            window.0,
            v.truncation()
        )));
    }
    let b = &v.normalized;
    if (lo..=hi).all(|n| b[n].abs() <= TINY) {
        return Err(Error::IllConditioned("all-zero tail: no power law to fit".into()));
    }
    let parity = detect_parity(b, lo, hi);
    let (xs, ys, ws) = fit_points(b, lo, hi, parity);
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::invalid(format!(
            "fit window holds {} usable points, need at least {MIN_FIT_POINTS}",
            xs.len()
        )));
    }
    let fit = weighted_fit(&xs, &ys, &ws)?;
    let mid = (xs.len() / 2).max(3);
    let halves = if xs.len() - mid >= 3 {
        let a = weighted_fit(&xs[..mid], &ys[..mid], &ws[..mid]);
        let c = weighted_fit(&xs[mid..], &ys[mid..], &ws[mid..]);
        match (a, c) {
            (Ok(a), Ok(c)) => 0.5 * (a.slope - c.slope).abs(),
            _ => 0.0,
        }
    } else {
        0.0
    };
    let alpha = -fit.slope;
    Ok(IndexEstimate {
        alpha,
        s_star: alpha - 1.0,
        stderr: (fit.stderr * fit.stderr + halves * halves).sqrt(),
        prefactor: fit.intercept.exp(),
        window: (lo, hi),
        parity,
        residual: fit.rms,
        points: xs.len(),
    })
}

fn fit_points(b: &[f64], lo: usize, hi: usize, parity: Parity) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
    match parity {
        Parity::Even | Parity::Odd => {
            let want = if parity == Parity::Even { 0 } else { 1 };
            for n in (lo..=hi).filter(|n| n % 2 == want) {
                let v = b[n] * b[n];
                if v > 0.0 {
                    xs.push((n as f64).ln());
                    ys.push(v.ln());
                    ws.push(1.0 / n as f64);
                }
            }
        }
        Parity::All => {
            let mut n = lo;
            while n + 3 <= hi {
                let avg = (n..n + 4).map(|k| b[k] * b[k]).sum::<f64>() / 4.0;
                if avg > 0.0 {
                    let centre = n as f64 + 1.5;
                    xs.push(centre.ln());
                    ys.push(avg.ln());
                    ws.push(1.0 / centre);
                }
                n += 4;
            }
        }
    }
    (xs, ys, ws)
}

/// Expands `spec` at `t = T = 1` to order `n` and fits its tail.
pub fn estimate_critical_index(spec: &DistributionSpec, n: usize, window: (usize, usize)) -> Result<IndexEstimate> {
    if window.1 > n {
        return Err(Error::invalid(format!("fit window end {} exceeds truncation {n}", window.1)));
    }
    let v = expand(spec, 1.0, 1.0, n)?;
    estimate_index(&v, window)
}

/// Default tail window `[max(10, N/10), N]`, or `None` when `N` is too small.
pub fn default_window(n: usize) -> Option<(usize, usize)> {
    if n < 4 * MIN_FIT_POINTS {
        return None;
    }
    Some(((n / 10).max(10), n))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormValue {
    /// `(Σ_{n≤N} (1+n)^s ‖J_n‖²)^{1/2}`.
    pub value: f64,
    pub s: f64,
    pub truncation: usize,
    pub divergent: bool,
    /// Estimated squared-norm tail beyond `N` (`None` when no fit was possible,
    /// zero when the tail vanishes numerically).
    pub tail_sq: Option<f64>,
    pub index: Option<IndexEstimate>,
}

/// Truncated Sobolev-Watanabe norm with a divergence verdict from the tail fit.
pub fn sobolev_norm(v: &ChaosVector, idx: SobolevIndex) -> Result<NormValue> {
    let value = sobolev_norm_sq_partial(v, idx.s).sqrt();
    let n = v.truncation();
    let mut out = NormValue { value, s: idx.s, truncation: n, divergent: false, tail_sq: None, index: None };
    if let Some(window) = default_window(n) {
        let b = &v.normalized;
        if (window.0..=window.1).all(|k| b[k].abs() <= TINY) {
            out.tail_sq = Some(0.0);
            return Ok(out);
        }
        if let Ok(est) = estimate_index(v, window) {
            out.divergent = est.diverges_at(idx.s);
            out.tail_sq = Some(est.tail_bound(idx.s, n));
            out.index = Some(est);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityPair {
    pub lhs: f64,
    pub rhs: f64,
}

impl IdentityPair {
    pub fn ratio(&self) -> f64 {
        if self.lhs == self.rhs {
            1.0
        } else {
            self.lhs / self.rhs
        }
    }

    pub fn rel_gap(&self) -> f64 {
        let scale = self.lhs.abs().max(self.rhs.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.lhs - self.rhs).abs() / scale
        }
    }
}

/// Both sides of `‖(T/t)^{1/2} Λ((T/t)^{1/2} w(t))‖_{2,s} = (T/t)^{1/2} ‖Λ(w(T))‖_{2,s}`.
///
/// The left side expands `Λ` at scale `(T/t)^{1/2}·t^{1/2}` and multiplies the
/// pairings by `(T/t)^{1/2}` before summing; the right side expands at
/// `T^{1/2}` and scales the norm.
pub fn scaled_norm_identity(spec: &DistributionSpec, t: f64, horizon: f64, s: f64, n: usize) -> Result<IdentityPair> {
    check_times(t, horizon)?;
    let idx = SobolevIndex::new(s)?;
    let ratio = (horizon / t).sqrt();
    let c_left = ratio * t.sqrt();
    let left = pairings_normalized(spec, c_left, n, PairingMethod::Exact)?;
    let mut acc = NeumaierSum::new();
    for (k, p) in left.iter().enumerate() {
        let b = ratio * p.normalized;
        acc.add((1.0 + k as f64).powf(idx.s) * b * b);
    }
    let lhs = acc.value().sqrt();
    let right = expand(spec, horizon, horizon, n)?;
    let rhs = ratio * sobolev_norm_sq_partial(&right, idx.s).sqrt();
    Ok(IdentityPair { lhs, rhs })
}

/// `E[(∫_0^T t^{-1/2} H_n(w(t)/√t) dt)²] = 4T n!/(n+1)`; overflows past `n ≈ 170`.
pub fn time_integral_chaos_l2(n: usize, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    Ok((ln_factorial(n) + (4.0 * horizon / (n as f64 + 1.0)).ln()).exp())
}

/// The same moment divided by `n!`: `4T/(n+1)`.
pub fn time_integral_chaos_l2_normalized(n: usize, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    Ok(4.0 * horizon / (n as f64 + 1.0))
}

/// Companion evaluation of the same moment from its covariance kernel,
/// `E[H_n(w_t/√t) H_n(w_s/√s)] = n! (t∧s / t∨s)^{n/2}`, integrated over the
/// full square `[0,T]²` as twice the triangle `t < s` by nested quadrature.
pub fn time_integral_chaos_l2_quadrature(n: usize, horizon: f64) -> Result<(f64, f64)> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    let quad = Quad::new(1e-14, 1e-13);
    let half = 0.5 * n as f64;
    let mut inner_err = 0.0f64;
    let mut fail: Option<Error> = None;
    let outer = quad.tanh_sinh(
        |s: f64| {
            let r = quad.tanh_sinh(|t: f64| (t / s).powf(half) / (t * s).sqrt(), 0.0, s);
            match r {
                Ok(r) => {
                    inner_err = inner_err.max(r.abs_err);
                    r.value
                }
                Err(e) => {
                    fail.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        0.0,
        horizon,
    );
    if let Some(e) = fail {
        return Err(e);
    }
    let outer = outer?;
    let scale = 2.0 * ln_factorial(n).exp();
    Ok((scale * outer.value, scale * (outer.abs_err + horizon * inner_err)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothingPair {
    /// `‖∫_0^T √(T/t) Λ(√(T/t) w(t)) dt‖²_{2,s+1}`, truncated.
    pub lhs: f64,
    /// `4T² ‖Λ(w(T))‖²_{2,s}`, truncated.
    pub rhs: f64,
    /// Largest term-by-term relative gap.
    pub max_term_gap: f64,
    /// Both series diverge as `N → ∞` (from the tail fit of the base vector).
    pub divergent: bool,
}

/// Both sides of the smoothing identity, assembled term by term: the `n`-th
/// chaos of the time integral has squared norm `b_n² · T · 4T/(n+1)`.
pub fn smoothing_norm(spec: &DistributionSpec, s: f64, horizon: f64, n: usize) -> Result<SmoothingPair> {
    let idx = SobolevIndex::new(s)?;
    let v = expand(spec, horizon, horizon, n)?;
    let mut lhs = NeumaierSum::new();
    let mut rhs = NeumaierSum::new();
    let mut gap = 0.0f64;
    let four_t2 = 4.0 * horizon * horizon;
    for (k, b) in v.normalized.iter().enumerate() {
        let w = 1.0 + k as f64;
        let l = w.powf(idx.s + 1.0) * b * b * horizon * time_integral_chaos_l2_normalized(k, horizon)?;
        let r = four_t2 * w.powf(idx.s) * b * b;
        let scale = l.abs().max(r.abs());
        if scale > 0.0 {
            gap = gap.max((l - r).abs() / scale);
        }
        lhs.add(l);
        rhs.add(r);
    }
    let norm = sobolev_norm(&v, idx)?;
    Ok(SmoothingPair { lhs: lhs.value(), rhs: rhs.value(), max_term_gap: gap, divergent: norm.divergent })
}
