//! One-dimensional tempered distributions and their Gaussian pairings
//! `E[Λ(cZ) H_n(Z)]`.
//!
//! Pairings come in two flavours: [`pair_gaussian`] returns the raw value
//! `a_n`, which grows like `sqrt(n!)` and overflows past `n ~ 170`, and
//! [`pairings_normalized`] returns `b_n = a_n / sqrt(n!)` for a whole range of
//! orders at once. The chaos module works with `b_n` exclusively.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hermite::{
    default_node_count, gauss_hermite_rule, hermite_eval, hermite_normalized, weighted_normalized_hermite,
    GaussHermiteRule,
};
use crate::numerics::special::{
    ln_even_double_factorial, ln_factorial, mean_log_abs_gaussian, normal_cdf, normal_pdf, pv_gaussian_hilbert,
};
use crate::numerics::Quad;

/// `|f(x)| <= constant * exp(rate * |x|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthBound {
    pub constant: f64,
    pub rate: f64,
}

/// Largest `rate * c` accepted for smooth pairings at scale `c`. Beyond it the
/// Gauss-Hermite rule is no longer trustworthy for the tail.
pub const MAX_GROWTH_EXPONENT: f64 = 8.0;

/// A smooth test function with a name (used in the text form) and growth bound.
#[derive(Clone)]
pub struct SmoothFn {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    growth: GrowthBound,
}

impl SmoothFn {
    pub fn new(name: impl Into<String>, growth: GrowthBound, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f), growth }
    }

    /// Built-in functions addressable from the text form `smooth:<name>`.
    pub fn named(name: &str) -> Result<Self> {
        let bounded = GrowthBound { constant: 1.0, rate: 0.0 };
        Ok(match name {
            "sin" => Self::new("sin", bounded, f64::sin),
            "cos" => Self::new("cos", bounded, f64::cos),
            "tanh" => Self::new("tanh", bounded, f64::tanh),
            "exp" => Self::new("exp", GrowthBound { constant: 1.0, rate: 1.0 }, f64::exp),
            "sq" => Self::new("sq", GrowthBound { constant: 2.0, rate: 1.0 }, |x| x * x),
            _ => return Err(Error::Parse(format!("unknown smooth function '{name}'"))),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn growth(&self) -> GrowthBound {
        self.growth
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
}

impl fmt::Debug for SmoothFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothFn").field("name", &self.name).field("growth", &self.growth).finish()
    }
}

#[derive(Debug, Clone)]
pub enum DistributionSpec {
    Delta { y: f64 },
    /// `k`-th derivative of `δ_y`, `k >= 1`.
    DeltaDerivative { y: f64, k: usize },
    /// Indicator of `(-∞, y)`.
    Heaviside { y: f64 },
    LogAbs,
    PrincipalValueRecip,
    XLogAbsMinusX,
    Smooth(SmoothFn),
}

impl DistributionSpec {
    pub fn delta(y: f64) -> Self {
        Self::Delta { y }
    }

    pub fn heaviside(y: f64) -> Self {
        Self::Heaviside { y }
    }

    /// Set for the positive distributions (Delta and Heaviside), whose pull-backs
    /// are Bochner integrable in time by positivity alone.
    pub fn is_positive(&self) -> bool {
        matches!(self, Self::Delta { .. } | Self::Heaviside { .. })
    }

    pub fn location(&self) -> Option<f64> {
        match self {
            Self::Delta { y } | Self::DeltaDerivative { y, .. } | Self::Heaviside { y } => Some(*y),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Delta { y } | Self::Heaviside { y } if !y.is_finite() => {
                Err(Error::invalid(format!("location must be finite, got {y}")))
            }
            Self::DeltaDerivative { y, k } => {
                if !y.is_finite() {
                    Err(Error::invalid(format!("location must be finite, got {y}")))
                } else if *k == 0 {
                    Err(Error::invalid("delta derivative order must be at least 1"))
                } else {
                    Ok(())
                }
            }
            Self::Smooth(s) if !(s.growth.rate >= 0.0 && s.growth.constant >= 0.0) => {
                Err(Error::invalid("growth bound must be nonnegative"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Delta { y } => write!(f, "delta@{y}"),
            Self::DeltaDerivative { y, k } => write!(f, "ddelta^{k}@{y}"),
            Self::Heaviside { y } => write!(f, "heaviside@{y}"),
            Self::LogAbs => f.write_str("logabs"),
            Self::PrincipalValueRecip => f.write_str("pv1x"),
            Self::XLogAbsMinusX => f.write_str("xlogabs"),
            Self::Smooth(s) => write!(f, "smooth:{}", s.name),
        }
    }
}

fn parse_location(s: &str, text: &str) -> Result<f64> {
    let y: f64 = s.trim().parse().map_err(|_| Error::Parse(format!("bad location in '{text}'")))?;
    if !y.is_finite() {
        return Err(Error::Parse(format!("location must be finite in '{text}'")));
    }
    // normalize -0 so the text form is canonical
    Ok(if y == 0.0 { 0.0 } else { y })
}

impl FromStr for DistributionSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let t = text.trim();
        match t {
            "logabs" => return Ok(Self::LogAbs),
            "pv1x" => return Ok(Self::PrincipalValueRecip),
            "xlogabs" => return Ok(Self::XLogAbsMinusX),
            _ => {}
        }
        if let Some(name) = t.strip_prefix("smooth:") {
            return Ok(Self::Smooth(SmoothFn::named(name)?));
        }
        let (head, loc) = t
            .split_once('@')
            .ok_or_else(|| Error::Parse(format!("unknown distribution '{text}'")))?;
        let y = parse_location(loc, text)?;
        match head {
            "delta" => Ok(Self::Delta { y }),
            "heaviside" => Ok(Self::Heaviside { y }),
            _ => {
                let k = head
                    .strip_prefix("ddelta^")
                    .ok_or_else(|| Error::Parse(format!("unknown distribution '{text}'")))?;
                let k: usize = k.parse().map_err(|_| Error::Parse(format!("bad derivative order in '{text}'")))?;
                if k == 0 {
                    return Err(Error::Parse(format!("derivative order must be >= 1 in '{text}'")));
                }
                Ok(Self::DeltaDerivative { y, k })
            }
        }
    }
}

/// Normalized pairings `E[log|Z| H_n(Z)] / sqrt(n!)`: zero for odd `n`,
/// `-(γ + ln 2)/2` at `n = 0` and `(-1)^k (2k)!! / sqrt((2k+2)!)` at
/// `n = 2k + 2`.
fn log_abs_normalized(n: usize) -> f64 {
    if n == 0 {
        return mean_log_abs_gaussian();
    }
    if n % 2 == 1 {
        return 0.0;
    }
    let k = n / 2 - 1;
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    sign * (ln_even_double_factorial(k) - 0.5 * ln_factorial(n)).exp()
}

/// Unnormalized `E[log|Z| H_n(Z)]`.
fn log_abs_raw(n: usize) -> f64 {
    if n == 0 {
        return mean_log_abs_gaussian();
    }
    if n % 2 == 1 {
        return 0.0;
    }
    let k = n / 2 - 1;
    let mut v = 1.0f64;
    for j in 1..=k {
        v *= (2 * j) as f64;
    }
    if k % 2 == 0 { v } else { -v }
}

/// How smooth-kind and log-type pairings are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairingMethod {
    /// Closed forms where they exist (every kind except `Smooth`), Gauss-Hermite
    /// otherwise.
    #[default]
    Exact,
    /// Direct quadrature of the pairing integral: split at the singular point
    /// with a tanh-sinh change of variable for the log kinds, symmetric
    /// truncation with Richardson extrapolation in the cut-off for `pv1x`.
    Quadrature,
}

/// One normalized pairing `b_n = a_n / sqrt(n!)` with an absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairingTerm {
    pub normalized: f64,
    pub err: f64,
}

fn check_scale(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("scale must be positive and finite, got {c}")))
    }
}

fn check_growth(s: &SmoothFn, c: f64) -> Result<()> {
    if s.growth.rate * c > MAX_GROWTH_EXPONENT {
        return Err(Error::Unsupported(format!(
            "smooth function '{}' with growth rate {} at scale {c} exceeds exponent limit {MAX_GROWTH_EXPONENT}",
            s.name, s.growth.rate
        )));
    }
    Ok(())
}

/// `E[Λ(cZ) H_n(Z)]` for a standard Gaussian `Z`. Overflows to `±inf` for large
/// orders; see [`pairings_normalized`].
pub fn pair_gaussian(spec: &DistributionSpec, c: f64, n: usize) -> Result<f64> {
    spec.validate()?;
    check_scale(c)?;
    Ok(match spec {
        DistributionSpec::Delta { y } => {
            let u = y / c;
            hermite_eval(n, u)? * normal_pdf(u) / c
        }
        DistributionSpec::DeltaDerivative { y, k } => {
            let u = y / c;
            hermite_eval(n + k, u)? * normal_pdf(u) * c.powi(-(*k as i32 + 1))
        }
        DistributionSpec::Heaviside { y } => {
            let u = y / c;
            if n == 0 {
                normal_cdf(u)
            } else {
                -hermite_eval(n - 1, u)? * normal_pdf(u)
            }
        }
        DistributionSpec::LogAbs => log_abs_raw(n) + if n == 0 { c.ln() } else { 0.0 },
        DistributionSpec::PrincipalValueRecip => log_abs_raw(n + 1) / c,
        DistributionSpec::XLogAbsMinusX => match n {
            0 => 0.0,
            1 => c * (c.ln() + log_abs_raw(0)),
            _ => c * log_abs_raw(n - 1),
        },
        DistributionSpec::Smooth(_) => {
            let b = pairings_normalized(spec, c, n, PairingMethod::Exact)?;
            let v = b[n].normalized;
            v * (0.5 * ln_factorial(n)).exp()
        }
    })
}

/// Normalized pairings `b_n = E[Λ(cZ) H_n(Z)] / sqrt(n!)` for `n = 0..=n_max`.
pub fn pairings_normalized(
    spec: &DistributionSpec,
    c: f64,
    n_max: usize,
    method: PairingMethod,
) -> Result<Vec<PairingTerm>> {
    spec.validate()?;
    check_scale(c)?;
    let rounding = |v: f64, n: usize| 4.0 * f64::EPSILON * (n as f64 + 1.0).sqrt() * v.abs();
    let exact = |vals: Vec<f64>| -> Vec<PairingTerm> {
        vals.into_iter()
            .enumerate()
            .map(|(n, v)| PairingTerm { normalized: v, err: rounding(v, n) })
            .collect()
    };
    match (spec, method) {
        (DistributionSpec::Delta { y }, _) => {
            let u = y / c;
            let mut out = vec![0.0; n_max + 1];
            weighted_normalized_hermite(u, log_density(u) - c.ln(), &mut out);
            Ok(exact(out))
        }
        (DistributionSpec::DeltaDerivative { y, k }, _) => {
            let u = y / c;
            let mut h = vec![0.0; n_max + k + 1];
            weighted_normalized_hermite(u, log_density(u) - (*k as f64 + 1.0) * c.ln(), &mut h);
            let out = (0..=n_max)
                .map(|n| h[n + k] * (0.5 * (ln_factorial(n + k) - ln_factorial(n))).exp())
                .collect();
            Ok(exact(out))
        }
        (DistributionSpec::Heaviside { y }, _) => {
            let u = y / c;
            let mut h = vec![0.0; n_max.max(1)];
            weighted_normalized_hermite(u, log_density(u), &mut h);
            let mut out = Vec::with_capacity(n_max + 1);
            out.push(normal_cdf(u));
            for n in 1..=n_max {
                out.push(-h[n - 1] / (n as f64).sqrt());
            }
            Ok(exact(out))
        }
        (DistributionSpec::LogAbs, PairingMethod::Exact) => {
            let mut out: Vec<f64> = (0..=n_max).map(log_abs_normalized).collect();
            out[0] += c.ln();
            Ok(exact(out))
        }
        (DistributionSpec::PrincipalValueRecip, PairingMethod::Exact) => {
            // a_n = L_{n+1} / c
            let out = (0..=n_max)
                .map(|n| log_abs_normalized(n + 1) * ((n + 1) as f64).sqrt() / c)
                .collect();
            Ok(exact(out))
        }
        (DistributionSpec::XLogAbsMinusX, PairingMethod::Exact) => {
            let out = (0..=n_max)
                .map(|n| match n {
                    0 => 0.0,
                    _ => {
                        let mut l = log_abs_normalized(n - 1);
                        if n == 1 {
                            l += c.ln();
                        }
                        c * l / (n as f64).sqrt()
                    }
                })
                .collect();
            Ok(exact(out))
        }
        (DistributionSpec::LogAbs, PairingMethod::Quadrature) => log_quadrature(c, n_max, false),
        (DistributionSpec::XLogAbsMinusX, PairingMethod::Quadrature) => log_quadrature(c, n_max, true),
        (DistributionSpec::PrincipalValueRecip, PairingMethod::Quadrature) => pv_quadrature(c, n_max),
        (DistributionSpec::Smooth(s), _) => {
            check_growth(s, c)?;
            let m = default_node_count(n_max);
            let coarse = gauss_hermite_rule(m)?.normalized_projections(|z| s.eval(c * z), n_max);
            let fine = gauss_hermite_rule(m + 16)?.normalized_projections(|z| s.eval(c * z), n_max);
            Ok(fine
                .iter()
                .zip(&coarse)
                .enumerate()
                .map(|(n, (&f, &g))| PairingTerm { normalized: f, err: (f - g).abs() + rounding(f, n) })
                .collect())
        }
    }
}

/// `ln φ(u)`.
fn log_density(u: f64) -> f64 {
    -0.5 * u * u - 0.5 * (2.0 * PI).ln()
}

/// Normalized Hermite function `H_n(z) φ(z) / sqrt(n!)`, bounded for all `z`.
fn hermite_density(n: usize, z: f64, buf: &mut Vec<f64>) -> f64 {
    buf.resize(n + 1, 0.0);
    weighted_normalized_hermite(z, log_density(z), buf);
    buf[n]
}

const PAIRING_QUAD_TOL: f64 = 1e-13;

fn quad_err(what: &str, e: Error) -> Error {
    match e {
        Error::NonConvergence { estimate, .. } => Error::no_conv(what, estimate),
        other => other,
    }
}

/// `∫ g(z) h_n(z) dz` with `g` having an integrable singularity at 0 only:
/// tanh-sinh on `[0, 1]` (endpoint singularity), Gauss-Kronrod beyond.
fn split_at_zero(mut g: impl FnMut(f64) -> f64, quad: &Quad) -> Result<(f64, f64)> {
    let a = quad.tanh_sinh(&mut g, 0.0, 1.0)?;
    let b = quad.half_line(&mut g, 1.0)?;
    Ok((a.value + b.value, a.abs_err + b.abs_err))
}

fn log_quadrature(c: f64, n_max: usize, xlog: bool) -> Result<Vec<PairingTerm>> {
    let quad = Quad::new(PAIRING_QUAD_TOL, PAIRING_QUAD_TOL);
    let lc = c.ln();
    let mut out = Vec::with_capacity(n_max + 1);
    let mut buf = Vec::new();
    for n in 0..=n_max {
        // even symmetry of log|cz| pairs z and -z: E[f(cZ)h_n] = ∫_0^∞ f(cz)(h_n(z) + h_n(-z))
        let sym = if n % 2 == 0 { 2.0 } else { 0.0 };
        let anti = if n % 2 == 1 { 2.0 } else { 0.0 };
        let (v, e) = if xlog {
            // x log|x| - x is odd
            if anti == 0.0 {
                (0.0, 0.0)
            } else {
                split_at_zero(
                    |z| {
                        let x = c * z;
                        anti * (x * (lc + z.ln()) - x) * hermite_density(n, z, &mut buf)
                    },
                    &quad,
                )
                .map_err(|e| quad_err("x log|x| pairing quadrature", e))?
            }
        } else if sym == 0.0 {
            (0.0, 0.0)
        } else {
            split_at_zero(|z| sym * (lc + z.ln()) * hermite_density(n, z, &mut buf), &quad)
                .map_err(|e| quad_err("log|x| pairing quadrature", e))?
        };
        out.push(PairingTerm { normalized: v, err: e });
    }
    Ok(out)
}

/// Symmetric truncation `∫_{|z|>δ} h_n(z) / (cz) dz` at `δ` and `δ/2`, then one
/// Richardson step. The truncated integrand is even in `z` for odd `n` only, so
/// even orders vanish identically.
fn pv_quadrature(c: f64, n_max: usize) -> Result<Vec<PairingTerm>> {
    let quad = Quad::new(PAIRING_QUAD_TOL, PAIRING_QUAD_TOL);
    let delta = 1e-3;
    let mut out = Vec::with_capacity(n_max + 1);
    let mut buf = Vec::new();
    for n in 0..=n_max {
        if n % 2 == 0 {
            out.push(PairingTerm { normalized: 0.0, err: 0.0 });
            continue;
        }
        let mut truncated = |d: f64| -> Result<QuadPair> {
            let r = quad
                .half_line(|z| 2.0 * hermite_density(n, z, &mut buf) / (c * z), d)
                .map_err(|e| quad_err("principal value pairing quadrature", e))?;
            Ok(QuadPair { value: r.value, err: r.abs_err })
        };
        let i1 = truncated(delta)?;
        let i2 = truncated(0.5 * delta)?;
        let i4 = truncated(0.25 * delta)?;
        let r12 = 2.0 * i2.value - i1.value;
        let r24 = 2.0 * i4.value - i2.value;
        out.push(PairingTerm { normalized: r24, err: (r24 - r12).abs() + i1.err + i2.err + i4.err });
    }
    Ok(out)
}

struct QuadPair {
    value: f64,
    err: f64,
}

/// `(Λ * κ_ε)(x)` with `κ_ε` the centred Gaussian density of standard deviation `ε`.
pub fn mollified_eval(spec: &DistributionSpec, eps: f64, x: f64) -> Result<f64> {
    spec.validate()?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {eps}")));
    }
    if x.is_infinite() {
        return Ok(mollified_limit(spec, x));
    }
    if !x.is_finite() {
        return Err(Error::invalid("evaluation point must not be NaN"));
    }
    Ok(match spec {
        DistributionSpec::Delta { y } => normal_pdf((x - y) / eps) / eps,
        DistributionSpec::DeltaDerivative { y, k } => {
            let v = (x - y) / eps;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * eps.powi(-(*k as i32) - 1) * hermite_eval(*k, v)? * normal_pdf(v)
        }
        DistributionSpec::Heaviside { y } => normal_cdf((y - x) / eps),
        DistributionSpec::PrincipalValueRecip => pv_gaussian_hilbert(x / eps) / eps,
        DistributionSpec::LogAbs => eps.ln() + mean_log_abs_shifted(x / eps)?,
        DistributionSpec::XLogAbsMinusX => {
            let a = x / eps;
            eps * (eps.ln() * a + mean_x_log_abs_shifted(a)?) - x
        }
        DistributionSpec::Smooth(s) => {
            check_growth(s, eps)?;
            smoothing_rule().expect(|z| s.eval(x + eps * z))
        }
    })
}

fn mollified_limit(spec: &DistributionSpec, x: f64) -> f64 {
    match spec {
        DistributionSpec::Delta { .. } | DistributionSpec::DeltaDerivative { .. } => 0.0,
        DistributionSpec::Heaviside { .. } => {
            if x < 0.0 {
                1.0
            } else {
                0.0
            }
        }
        DistributionSpec::PrincipalValueRecip => 0.0,
        DistributionSpec::LogAbs => f64::INFINITY,
        DistributionSpec::XLogAbsMinusX => x,
        DistributionSpec::Smooth(s) => s.eval(x),
    }
}

fn smoothing_rule() -> &'static GaussHermiteRule {
    static RULE: std::sync::OnceLock<GaussHermiteRule> = std::sync::OnceLock::new();
    RULE.get_or_init(|| gauss_hermite_rule(64).expect("64-node rule"))
}

/// `E[log|a + Z|]`, split at the singular point `z = -a`:
/// `∫_0^∞ log(r) (φ(r - a) + φ(r + a)) dr`.
pub fn mean_log_abs_shifted(a: f64) -> Result<f64> {
    if a.abs() > 40.0 {
        // log|a + Z| = log|a| + log|1 + Z/a|, expand in 1/a
        let r = 1.0 / (a * a);
        return Ok(a.abs().ln() - 0.5 * r * (1.0 + r * (1.5 + r * 5.0)));
    }
    let quad = Quad::new(PAIRING_QUAD_TOL, PAIRING_QUAD_TOL);
    let g = |r: f64| r.ln() * (normal_pdf(r - a) + normal_pdf(r + a));
    let head = quad.tanh_sinh(g, 0.0, 1.0).map_err(|e| quad_err("mollified log", e))?;
    let tail = quad
        .gk_points(g, &[1.0, (a.abs() - 8.0).max(1.0), a.abs().max(1.0), a.abs() + 12.0, a.abs() + 40.0])
        .map_err(|e| quad_err("mollified log", e))?;
    Ok(head.value + tail.value)
}

/// `E[(a + Z) log|a + Z|] = ∫_0^∞ r log(r) (φ(r - a) - φ(r + a)) dr`.
pub fn mean_x_log_abs_shifted(a: f64) -> Result<f64> {
    let quad = Quad::new(PAIRING_QUAD_TOL, PAIRING_QUAD_TOL);
    let g = |r: f64| r * r.ln() * (normal_pdf(r - a) - normal_pdf(r + a));
    let head = quad.tanh_sinh(g, 0.0, 1.0).map_err(|e| quad_err("mollified x log", e))?;
    let tail = quad
        .gk_points(g, &[1.0, (a.abs() - 8.0).max(1.0), a.abs().max(1.0), a.abs() + 12.0, a.abs() + 40.0])
        .map_err(|e| quad_err("mollified x log", e))?;
    Ok(head.value + tail.value)
}

/// `E[Λ(cZ) H_n(Z)] / sqrt(n!)` for a single order.
pub fn pair_gaussian_normalized(spec: &DistributionSpec, c: f64, n: usize) -> Result<f64> {
    if let DistributionSpec::Smooth(_) = spec {
        return Ok(pairings_normalized(spec, c, n, PairingMethod::Exact)?[n].normalized);
    }
    match spec {
        DistributionSpec::Delta { y } => {
            let u = y / c;
            Ok(hermite_normalized(n, u)? * normal_pdf(u) / c)
        }
        _ => Ok(pairings_normalized(spec, c, n, PairingMethod::Exact)?[n].normalized),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::special::INV_SQRT_2PI;

    fn d(s: &str) -> DistributionSpec {
        s.parse().unwrap()
    }

    #[test]
    fn text_form_round_trips() {
        for s in ["delta@0.5", "ddelta^2@0", "heaviside@-1", "pv1x", "logabs", "xlogabs", "smooth:sin"] {
            assert_eq!(d(s).to_string(), s);
        }
        assert_eq!(d("delta@-0").to_string(), "delta@0");
        assert_eq!(d("ddelta^2@0.0").to_string(), "ddelta^2@0");
        for bad in ["delta", "delta@x", "ddelta^0@1", "dirac@0", "smooth:nope", "delta@inf"] {
            assert!(bad.parse::<DistributionSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn positivity_flag() {
        assert!(d("delta@1").is_positive());
        assert!(d("heaviside@0").is_positive());
        for s in ["ddelta^1@0", "logabs", "pv1x", "xlogabs", "smooth:cos"] {
            assert!(!d(s).is_positive());
        }
    }

    #[test]
    fn delta_examples() {
        let v = pair_gaussian(&d("delta@0"), 1.0, 2).unwrap();
        assert!((v + INV_SQRT_2PI).abs() < 1e-16);
    }

    #[test]
    fn log_abs_examples() {
        assert_eq!(pair_gaussian(&DistributionSpec::LogAbs, 1.0, 2).unwrap(), 1.0);
        assert_eq!(pair_gaussian(&DistributionSpec::LogAbs, 1.0, 4).unwrap(), -2.0);
        assert_eq!(pair_gaussian(&DistributionSpec::LogAbs, 1.0, 6).unwrap(), 8.0);
        assert_eq!(pair_gaussian(&DistributionSpec::PrincipalValueRecip, 1.0, 1).unwrap(), 1.0);
    }

    #[test]
    fn normalized_matches_raw() {
        let specs = ["delta@0.3", "ddelta^1@-0.5", "ddelta^3@0.2", "heaviside@0.7", "logabs", "pv1x", "xlogabs"];
        for s in specs {
            let spec = d(s);
            for &c in &[0.5, 1.0, 2.0] {
                let b = pairings_normalized(&spec, c, 30, PairingMethod::Exact).unwrap();
                for (n, term) in b.iter().enumerate() {
                    let a = pair_gaussian(&spec, c, n).unwrap() / (0.5 * ln_factorial(n)).exp();
                    assert!(
                        (term.normalized - a).abs() <= 1e-12 * a.abs().max(1e-3),
                        "{s} c={c} n={n}: {} vs {a}",
                        term.normalized
                    );
                }
            }
        }
    }

    #[test]
    fn log_quadrature_matches_closed_form() {
        for s in ["logabs", "xlogabs"] {
            let spec = d(s);
            for &c in &[1.0, 1.7] {
                let q = pairings_normalized(&spec, c, 24, PairingMethod::Quadrature).unwrap();
                let e = pairings_normalized(&spec, c, 24, PairingMethod::Exact).unwrap();
                for n in 0..=24 {
                    assert!(
                        (q[n].normalized - e[n].normalized).abs() < 1e-11,
                        "{s} c={c} n={n}: {} vs {}",
                        q[n].normalized,
                        e[n].normalized
                    );
                }
            }
        }
    }

    #[test]
    fn pv_quadrature_matches_closed_form() {
        let spec = DistributionSpec::PrincipalValueRecip;
        let q = pairings_normalized(&spec, 1.3, 20, PairingMethod::Quadrature).unwrap();
        let e = pairings_normalized(&spec, 1.3, 20, PairingMethod::Exact).unwrap();
        for n in 0..=20 {
            assert!((q[n].normalized - e[n].normalized).abs() < 1e-9, "n={n}");
            if n % 2 == 0 {
                assert_eq!(q[n].normalized, 0.0);
            }
        }
    }

    #[test]
    fn parity_zeros() {
        let delta = pairings_normalized(&d("delta@0"), 1.0, 101, PairingMethod::Exact).unwrap();
        let pv = pairings_normalized(&DistributionSpec::PrincipalValueRecip, 1.0, 101, PairingMethod::Exact).unwrap();
        for n in 0..=101 {
            if n % 2 == 1 {
                assert_eq!(delta[n].normalized, 0.0);
            } else {
                assert_eq!(pv[n].normalized, 0.0);
            }
        }
    }

    #[test]
    fn scaling_covariance() {
        for &(y, c) in &[(0.4, 2.0), (-1.0, 0.5), (0.0, 3.0)] {
            for n in 0..12 {
                let lhs = pair_gaussian(&d(&format!("delta@{y}")), c, n).unwrap();
                let rhs = pair_gaussian(&DistributionSpec::delta(y / c), 1.0, n).unwrap() / c;
                assert!((lhs - rhs).abs() <= 1e-14 * rhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn smooth_matches_direct_quadrature() {
        let spec = d("smooth:sin");
        let b = pairings_normalized(&spec, 1.0, 20, PairingMethod::Exact).unwrap();
        // E[sin Z H_n(Z)] = e^{-1/2} (-1)^{(n-1)/2} for odd n
        for (n, t) in b.iter().enumerate() {
            let expect = if n % 2 == 1 {
                let s = if (n / 2) % 2 == 0 { 1.0 } else { -1.0 };
                s * (-0.5f64).exp() / (0.5 * ln_factorial(n)).exp()
            } else {
                0.0
            };
            assert!((t.normalized - expect).abs() < 1e-14, "n={n}");
        }
        let too_fast = DistributionSpec::Smooth(SmoothFn::named("exp").unwrap());
        assert!(pairings_normalized(&too_fast, 9.0, 4, PairingMethod::Exact).is_err());
    }

    #[test]
    fn mollified_examples() {
        let eps = 0.2;
        let v = mollified_eval(&d("delta@0"), eps, 0.0).unwrap();
        assert!((v - INV_SQRT_2PI / eps).abs() < 1e-15);
        assert_eq!(mollified_eval(&d("heaviside@0"), eps, f64::NEG_INFINITY).unwrap(), 1.0);
        assert!((mollified_eval(&d("heaviside@0"), eps, -3.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(mollified_eval(&d("delta@0"), 0.0, 0.0).is_err());
        assert!(mollified_eval(&d("delta@0"), -1.0, 0.0).is_err());
    }

    #[test]
    fn mollified_pv_matches_truncated_quadrature() {
        let (eps, x) = (0.1, 1.0);
        let v = mollified_eval(&DistributionSpec::PrincipalValueRecip, eps, x).unwrap();
        let quad = Quad::new(1e-14, 1e-14);
        let k = |u: f64| normal_pdf((x - u) / eps) / eps / u;
        let trunc = |delta: f64| {
            quad.gk_points(k, &[x - 20.0 * eps, -delta]).unwrap().value
                + quad.gk_points(k, &[delta, x, x + 20.0 * eps]).unwrap().value
        };
        let r = 2.0 * trunc(5e-4) - trunc(1e-3);
        assert!((v - r).abs() < 1e-6, "{v} vs {r}");
    }

    #[test]
    fn mollified_log_derivative_is_pv() {
        // d/dx (log|.| * κ_ε)(x) = (p.v. 1/x * κ_ε)(x)
        let eps = 0.3;
        let h = 1e-4;
        for &x in &[-0.7, 0.05, 0.4, 2.0] {
            let fd = (mollified_eval(&DistributionSpec::LogAbs, eps, x + h).unwrap()
                - mollified_eval(&DistributionSpec::LogAbs, eps, x - h).unwrap())
                / (2.0 * h);
            let pv = mollified_eval(&DistributionSpec::PrincipalValueRecip, eps, x).unwrap();
            assert!((fd - pv).abs() < 1e-7, "x={x}: {fd} vs {pv}");
            let fd = (mollified_eval(&DistributionSpec::XLogAbsMinusX, eps, x + h).unwrap()
                - mollified_eval(&DistributionSpec::XLogAbsMinusX, eps, x - h).unwrap())
                / (2.0 * h);
            let l = mollified_eval(&DistributionSpec::LogAbs, eps, x).unwrap();
            assert!((fd - l).abs() < 1e-7, "x={x}: {fd} vs {l}");
        }
        let far = mollified_eval(&DistributionSpec::LogAbs, 0.01, 1.0).unwrap();
        assert!(far.abs() < 1e-4);
    }

    #[test]
    fn mollifier_consistency_orders() {
        let quad = Quad::new(1e-15, 1e-13);
        let cases: [(&str, usize, f64); 3] = [("delta@0.3", 2, 1.0), ("smooth:sin", 3, 1.9), ("heaviside@0.2", 3, 1.9)];
        for (s, n, min_order) in cases {
            let spec = d(s);
            let exact = pair_gaussian(&spec, 1.0, n).unwrap();
            let errs: Vec<f64> = [0.1, 0.05, 0.025]
                .iter()
                .map(|&eps| {
                    let g = |z: f64| mollified_eval(&spec, eps, z).unwrap() * hermite_eval(n, z).unwrap() * normal_pdf(z);
                    let y = spec.location().unwrap_or(0.0);
                    let v = quad.gk_points(g, &[-14.0, y - 0.5, y, y + 0.5, 14.0]).unwrap().value;
                    (v - exact).abs()
                })
                .collect();
            let order = (errs[1] / errs[2]).log2();
            assert!(order > min_order, "{s}: errors {errs:?}");
        }
    }
}
