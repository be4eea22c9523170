//! Chaos norms of diffusion local times `σ(y)∫_0^1 δ_y(X_t) dt`, the
//! Hölder-difference norms between two levels, the explicit bound constant
//! `c(s, β)` and the Hölder continuity of `y ↦ σ(y)∫_0^1 p_t(x, y) dt`.
//!
//! With `q_n(v) = H_n(v) φ(v) / sqrt(n!)` and `ψ` the Lamperti map, the `n`-th
//! chaos of `σ(y)∫_0^1 δ_y(X_t) dt - σ(z)∫_0^1 δ_z(X_t) dt` has squared norm
//!
//! `I_n = 8 ∬_{0<ρ<τ<1} (ρ/τ)^n D_n(ρ) D_n(τ) dρ dτ`,
//! `D_n(ρ) = q_n(ψ(y)/ρ) - q_n(ψ(z)/ρ)`,
//!
//! after the substitution `t = τ²` that removes the `t^{-(n+1)/2}` endpoint
//! blow-up; σ cancels. The integral is evaluated on geometric panels in `τ`
//! whose width shrinks like `1/N`, with Gauss-Legendre nodes. Off-diagonal
//! panel pairs factorize and are summed by a rescaled running recursion;
//! within a panel the triangle `ρ < τ` uses spectral integration on the same
//! nodes. All orders `n ≤ N` come out of one Hermite recurrence per node.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::chaos::{default_window, estimate_index, ChaosVector, IndexEstimate};
use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::hermite::{hermite_zero_value_normalized, weighted_normalized_hermite_batch};
use crate::numerics::quad::{gauss_legendre, gauss_legendre_integration_matrix};
use crate::numerics::special::{heat_time_integral, ln_factorial, ln_gamma_fn};
use crate::numerics::{NeumaierSum, Quad};

/// `E[(∫_{0≤t_1<…<t_n≤t} dw…dw)²] = tⁿ/n!`.
pub fn iterated_integral_l2(n: usize, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("time must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    Ok((n as f64 * t.ln() - ln_factorial(n)).exp())
}

/// Quadrature controls for the `I_n` engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PanelOptions {
    /// Panel width in `ln τ`; `None` uses `min(0.25, 2/N)`.
    pub log_width: Option<f64>,
    /// Gauss-Legendre nodes per panel.
    pub order: usize,
}

impl Default for PanelOptions {
    fn default() -> Self {
        Self { log_width: None, order: 12 }
    }
}

impl PanelOptions {
    fn width(&self, n_max: usize) -> f64 {
        self.log_width.unwrap_or_else(|| (2.0 / (n_max.max(1) as f64)).min(0.25))
    }
}

fn log_density(v: f64) -> f64 {
    -0.5 * v * v - 0.5 * (2.0 * PI).ln()
}

/// `8 ∬_{0<ρ<τ<1} (ρ/τ)^n f_n(ρ) g_n(τ)` for each requested `(f, g)` pair,
/// where profiles are linear combinations of the level functions
/// `ρ ↦ q_n(ψ_l/ρ)`.
///
/// On a panel `[a, b]` the inner integral `∫_a^τ (ρ/τ)^n f_n(ρ) dρ` at the
/// Gauss nodes comes from the spectral integration matrix on the same nodes,
/// so every node is evaluated once.
fn panel_integrals(
    psis: &[f64],
    profiles: &[Vec<f64>],
    pairs: &[(usize, usize)],
    n_max: usize,
    opts: &PanelOptions,
) -> Result<Vec<Vec<f64>>> {
    let n1 = n_max + 1;
    let width = opts.width(n_max);
    if !(width > 0.0 && width * n_max as f64 <= 200.0) || opts.order < 2 {
        return Err(Error::invalid("panel width must be positive and at most 200/N, with at least two nodes"));
    }
    // Below `lo` every level off the start point is negligible and every level
    // at it is the constant q_n(0); that strip is integrated in closed form.
    let reach = 2.0 * (n_max as f64).sqrt() + 40.0;
    let lo = psis
        .iter()
        .filter(|p| **p != 0.0)
        .fold(1.0f64, |a, p| a.min(p.abs() / reach));
    let panels = ((-lo.ln()) / width).ceil() as usize;
    let edges: Vec<f64> = (0..=panels).map(|j| (-((panels - j) as f64) * width).exp().max(lo)).collect();

    let q = opts.order;
    let (gx, gw) = gauss_legendre(q);
    let smat = gauss_legendre_integration_matrix(q);
    let np = profiles.len();

    let zero_level = start_point_values(n_max);
    let strip: Vec<Vec<f64>> = profiles
        .iter()
        .map(|coef| {
            let c: f64 = coef.iter().zip(psis).filter(|(_, p)| **p == 0.0).map(|(c, _)| c).sum();
            zero_level.iter().map(|v| c * v).collect()
        })
        .collect();
    // running[k][n] = ∫_0^{a_j} (ρ/a_j)^n f_k(ρ) dρ at the current edge a_j
    let mut running: Vec<Vec<f64>> =
        strip.iter().map(|c| c.iter().enumerate().map(|(n, v)| v * lo / (n as f64 + 1.0)).collect()).collect();
    let mut total: Vec<Vec<NeumaierSum>> = pairs
        .iter()
        .map(|&(f, g)| {
            (0..n1)
                .map(|n| {
                    let mut acc = NeumaierSum::new();
                    acc.add(strip[f][n] * strip[g][n] * lo * lo / (2.0 * (n as f64 + 1.0)));
                    acc
                })
                .collect()
        })
        .collect();

    let mut levels = vec![vec![vec![0.0; n1]; q]; psis.len()];
    let mut vals = vec![vec![vec![0.0; n1]; q]; np];
    let mut up = vec![vec![0.0; n1]; q];
    let mut down = vec![vec![0.0; n1]; q];
    let mut back = vec![vec![0.0; n1]; q];
    let mut diag = vec![0.0; n1];
    let mut inner = vec![vec![vec![0.0; n1]; q]; np];
    let mut a_hat = vec![vec![0.0; n1]; np];
    let mut b_hat = vec![vec![0.0; n1]; np];
    let (mut xs, mut lws) = (vec![0.0; q], vec![0.0; q]);

    for j in 0..panels {
        let (a, b) = (edges[j], edges[j + 1]);
        if b <= a {
            continue;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let rho: Vec<f64> = gx.iter().map(|x| mid + half * x).collect();
        for (l, &p) in psis.iter().enumerate() {
            for i in 0..q {
                xs[i] = p / rho[i];
                lws[i] = log_density(xs[i]);
            }
            weighted_normalized_hermite_batch(&xs, &lws, &mut levels[l]);
        }
        for (k, coef) in profiles.iter().enumerate() {
            for i in 0..q {
                let o = &mut vals[k][i];
                o.iter_mut().for_each(|x| *x = 0.0);
                for (l, &c) in coef.iter().enumerate() {
                    if c != 0.0 {
                        for (x, v) in o.iter_mut().zip(&levels[l][i]) {
                            *x += c * v;
                        }
                    }
                }
            }
        }
        // up = w (ρ/b)^n, down = w (a/ρ)^n, back = w (b/ρ)^n
        for i in 0..q {
            let (ru, rd, rb) = (rho[i] / b, a / rho[i], b / rho[i]);
            let w = half * gw[i];
            let (mut pu, mut pd, mut pb) = (w, w, w);
            for ((u, d), bk) in up[i].iter_mut().zip(down[i].iter_mut()).zip(back[i].iter_mut()) {
                *u = pu;
                *d = pd;
                *bk = pb;
                pu *= ru;
                pd *= rd;
                pb *= rb;
            }
        }
        for k in 0..np {
            a_hat[k].iter_mut().for_each(|x| *x = 0.0);
            b_hat[k].iter_mut().for_each(|x| *x = 0.0);
            for i in 0..q {
                let v = &vals[k][i];
                for (((ah, bh), u), (d, x)) in
                    a_hat[k].iter_mut().zip(b_hat[k].iter_mut()).zip(&up[i]).zip(down[i].iter().zip(v))
                {
                    *ah += u * x;
                    *bh += d * x;
                }
            }
            // inner[k][i][n] = ∫_a^{ρ_i} (ρ/b)^n f_k(ρ) dρ
            for i in 0..q {
                let row = &mut inner[k][i];
                row.iter_mut().for_each(|x| *x = 0.0);
                for (m, &sij) in smat[i].iter().enumerate() {
                    let c = sij / gw[m];
                    for ((r, u), x) in row.iter_mut().zip(&up[m]).zip(&vals[k][m]) {
                        *r += c * u * x;
                    }
                }
            }
        }
        for (p, &(f, g)) in pairs.iter().enumerate() {
            diag.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..q {
                for (((dg, bk), x), y) in diag.iter_mut().zip(&back[i]).zip(&vals[g][i]).zip(&inner[f][i]) {
                    *dg += bk * x * y;
                }
            }
            for (n, dg) in diag.iter().enumerate() {
                total[p][n].add(b_hat[g][n] * running[f][n] + dg);
            }
        }
        let ratio = a / b;
        for k in 0..np {
            let mut pw = 1.0;
            for (r, ah) in running[k].iter_mut().zip(&a_hat[k]) {
                *r = pw * *r + ah;
                pw *= ratio;
            }
        }
    }
    Ok(total.into_iter().map(|v| v.into_iter().map(|s| 8.0 * s.value()).collect()).collect())
}

/// `I_n` for `n ≤ N` of the single level with Lamperti coordinate `psi`.
fn single_level_terms(psi: f64, n_max: usize, opts: &PanelOptions) -> Result<Vec<f64>> {
    let r = panel_integrals(&[psi], &[vec![1.0]], &[(0, 0)], n_max, opts)?;
    Ok(r.into_iter().next().unwrap_or_default())
}

/// `q_n(0) = H_n(0) φ(0) / sqrt(n!)`.
fn start_point_values(n_max: usize) -> Vec<f64> {
    (0..=n_max).map(|n| hermite_zero_value_normalized(n) / (2.0 * PI).sqrt()).collect()
}

/// Closed form at the start point: `D_n` is constant in `ρ`, so
/// `I_n = 4 q_n(0)² / (n+1)`.
pub fn start_point_terms(n_max: usize) -> Vec<f64> {
    start_point_values(n_max)
        .iter()
        .enumerate()
        .map(|(n, q)| 4.0 * q * q / (n as f64 + 1.0))
        .collect()
}

/// A norm `(Σ_{n≤N} (1+n)^s I_n)^{1/2}` with its terms and tail verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesNorm {
    pub value: f64,
    pub s: f64,
    pub truncation: usize,
    /// `I_n`, the squared norm of the `n`-th chaos.
    pub terms: Vec<f64>,
    pub divergent: bool,
    pub index: Option<IndexEstimate>,
    /// Fitted tail `Σ_{n>N} (1+n)^s I_n` when a fit was possible.
    pub tail_sq: Option<f64>,
}

impl SeriesNorm {
    fn from_terms(terms: Vec<f64>, s: f64, label: &str, theoretical_critical: Option<f64>) -> Result<Self> {
        let n = terms.len() - 1;
        let mut acc = NeumaierSum::new();
        for (k, t) in terms.iter().enumerate() {
            acc.add((1.0 + k as f64).powf(s) * t);
        }
        let b: Vec<f64> = terms.iter().map(|t| t.max(0.0).sqrt()).collect();
        let v = ChaosVector::from_normalized(label, 1.0, b, vec![0.0; n + 1])?;
        let index = default_window(n).and_then(|w| estimate_index(&v, w).ok());
        let divergent = match (&index, theoretical_critical) {
            (Some(e), _) => e.diverges_at(s),
            (None, Some(c)) => s >= c,
            (None, None) => false,
        };
        let tail_sq = index.as_ref().map(|e| e.tail_bound(s, n));
        Ok(Self { value: acc.value().max(0.0).sqrt(), s, truncation: n, terms, divergent, index, tail_sq })
    }

    /// Running partial sums of `Σ (1+n)^s I_n`.
    pub fn partial_sums(&self) -> Vec<f64> {
        let mut acc = NeumaierSum::new();
        self.terms
            .iter()
            .enumerate()
            .map(|(k, t)| {
                acc.add((1.0 + k as f64).powf(self.s) * t);
                acc.value()
            })
            .collect()
    }
}

/// `‖σ(y)∫_0^1 δ_y(X_t) dt‖_{2,s}` truncated at `N`. The series converges
/// exactly for `s < 1/2`; the divergence flag comes from a tail fit when `N`
/// allows one.
pub fn local_time_chaos_norm(model: &DiffusionModel, y: f64, s: f64, n: usize) -> Result<SeriesNorm> {
    local_time_chaos_norm_with(model, y, s, n, &PanelOptions::default())
}

pub fn local_time_chaos_norm_with(
    model: &DiffusionModel,
    y: f64,
    s: f64,
    n: usize,
    opts: &PanelOptions,
) -> Result<SeriesNorm> {
    require_symmetric(model)?;
    if !s.is_finite() {
        return Err(Error::invalid("index must be finite"));
    }
    let psi = model.lamperti().psi(y)?;
    let terms = single_level_terms(psi, n, opts)?;
    SeriesNorm::from_terms(terms, s, "local time", Some(0.5))
}

fn require_symmetric(model: &DiffusionModel) -> Result<()> {
    if model.is_stratonovich_symmetric() {
        Ok(())
    } else {
        Err(Error::Unsupported("local-time chaos needs the Stratonovich-symmetric drift".into()))
    }
}

/// One Hölder-difference configuration; the horizon is fixed to 1.
#[derive(Debug, Clone)]
pub struct HolderExperiment {
    pub model: DiffusionModel,
    pub s: f64,
    pub beta: f64,
    pub pairs: Vec<(f64, f64)>,
    pub truncation: usize,
}

/// `I_n` of the difference of two levels, computed twice: directly from
/// `D_n = q_n(ψ_y/·) - q_n(ψ_z/·)`, and from the bilinear expansion
/// `B(y,y) - 2B(y,z) + B(z,z)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifferenceTerms {
    pub direct: Vec<f64>,
    pub bilinear: Vec<f64>,
}

pub fn difference_terms(model: &DiffusionModel, y: f64, z: f64, n: usize, opts: &PanelOptions) -> Result<DifferenceTerms> {
    require_symmetric(model)?;
    let psis = [model.lamperti().psi(y)?, model.lamperti().psi(z)?];
    let profiles = vec![vec![1.0, -1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
    let pairs = [(0, 0), (1, 1), (1, 2), (2, 1), (2, 2)];
    let r = panel_integrals(&psis, &profiles, &pairs, n, opts)?;
    let bilinear = (0..=n).map(|k| r[1][k] - r[2][k] - r[3][k] + r[4][k]).collect();
    Ok(DifferenceTerms { direct: r[0].clone(), bilinear })
}

/// `‖σ(y)∫_0^1 δ_y(X_t)dt - σ(z)∫_0^1 δ_z(X_t)dt‖_{2,s}` truncated at `N`.
pub fn holder_difference_norm(model: &DiffusionModel, y: f64, z: f64, s: f64, n: usize) -> Result<SeriesNorm> {
    holder_difference_norm_with(model, y, z, s, n, &PanelOptions::default())
}

pub fn holder_difference_norm_with(
    model: &DiffusionModel,
    y: f64,
    z: f64,
    s: f64,
    n: usize,
    opts: &PanelOptions,
) -> Result<SeriesNorm> {
    require_symmetric(model)?;
    if y == z {
        return SeriesNorm::from_terms(vec![0.0; n + 1], s, "difference", None);
    }
    let psis = [model.lamperti().psi(y)?, model.lamperti().psi(z)?];
    let terms = panel_integrals(&psis, &[vec![1.0, -1.0]], &[(0, 0)], n, opts)?
        .pop()
        .unwrap_or_default();
    SeriesNorm::from_terms(terms, s, "difference", Some(0.5))
}

/// The explicit constant `c(s, β)` with
/// `c² = c₂²/(1-β) Σ_n (1+n)^s 2^{n+β+1} Γ((n+β+1)/2)² / (n! (n-β+1))`,
/// `c₂ = 1/(π λ^{β/2})`, such that the difference norm is at most `c |y-z|^β`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderBound {
    pub s: f64,
    pub beta: f64,
    pub lambda: f64,
    pub truncation: usize,
    /// `c` including the fitted tail.
    pub constant: f64,
    pub partial_sq: f64,
    pub tail_sq: f64,
    /// Terms of the series before the `c₂²/(1-β)` prefactor, in log space.
    pub log_terms: Vec<f64>,
}

pub fn holder_bound_constant(s: f64, beta: f64, lambda: f64, n: usize) -> Result<HolderBound> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(format!("β must lie in (0, 1), got {beta}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) || !s.is_finite() {
        return Err(Error::invalid("λ must be positive and s finite"));
    }
    if s + beta >= 0.5 {
        return Err(Error::Divergent(format!("s + β = {} ≥ 1/2", s + beta)));
    }
    let log_terms: Vec<f64> = (0..=n)
        .map(|k| {
            let kf = k as f64;
            s * (1.0 + kf).ln() + (kf + beta + 1.0) * std::f64::consts::LN_2
                + 2.0 * ln_gamma_fn(0.5 * (kf + beta + 1.0))
                - ln_factorial(k)
                - (kf - beta + 1.0).ln()
        })
        .collect();
    let log_pref = -2.0 * (PI.ln() + 0.5 * beta * lambda.ln()) - (1.0 - beta).ln();
    let mut acc = NeumaierSum::new();
    for t in &log_terms {
        acc.add((t + log_pref).exp());
    }
    // tail from the n^{s+β-3/2} law anchored at the last term
    let e = s + beta - 1.5;
    let last = (log_terms[n] + log_pref).exp();
    let nn = n.max(1) as f64;
    let tail = last * nn / (-(e + 1.0)) * ((nn + 1.0) / nn).powf(e);
    let partial = acc.value();
    Ok(HolderBound {
        s,
        beta,
        lambda,
        truncation: n,
        constant: (partial + tail).sqrt(),
        partial_sq: partial,
        tail_sq: tail,
        log_terms,
    })
}

/// Fitted exponent of the bound-series terms over `[n_lo, n_hi]`.
pub fn bound_tail_exponent(bound: &HolderBound, n_lo: usize, n_hi: usize) -> Result<f64> {
    if n_hi > bound.truncation || n_lo + 10 > n_hi {
        return Err(Error::invalid("tail window must hold at least ten terms inside the truncation"));
    }
    let xs: Vec<f64> = (n_lo..=n_hi).map(|k| (k as f64).ln()).collect();
    let ys: Vec<f64> = (n_lo..=n_hi).map(|k| bound.log_terms[k]).collect();
    let m = xs.len() as f64;
    let xb = xs.iter().sum::<f64>() / m;
    let yb = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xb) * (y - yb)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xb).powi(2)).sum();
    Ok(sxy / sxx)
}

/// One row of a Hölder experiment table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderRow {
    pub y: f64,
    pub z: f64,
    pub s: f64,
    pub beta: f64,
    pub norm: f64,
    pub bound: f64,
    pub ratio: f64,
}

impl HolderExperiment {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) || self.s + self.beta >= 0.5 {
            return Err(Error::invalid(format!("need 0 < β < 1 and s + β < 1/2, got s={}, β={}", self.s, self.beta)));
        }
        Ok(())
    }

    pub fn run(&self) -> Result<Vec<HolderRow>> {
        self.validate()?;
        let (lambda, _) = self.model.ellipticity();
        let c = holder_bound_constant(self.s, self.beta, lambda, self.truncation.max(2000))?.constant;
        self.pairs
            .par_iter()
            .map(|&(y, z)| {
                let norm = holder_difference_norm(&self.model, y, z, self.s, self.truncation)?.value;
                let bound = c * (y - z).abs().powf(self.beta);
                let ratio = if bound > 0.0 { norm / bound } else { 0.0 };
                Ok(HolderRow { y, z, s: self.s, beta: self.beta, norm, bound, ratio })
            })
            .collect()
    }
}

pub fn write_holder_csv<W: Write>(rows: &[HolderRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// `F(y) = σ(y) ∫_0^1 p_t(x, y) dt = ∫_0^1 φ(ψ(y)/√t)/√t dt`, by quadrature.
pub fn occupation_density(model: &DiffusionModel, y: f64) -> Result<f64> {
    let d = model.lamperti().psi(y)?;
    let quad = Quad::new(1e-15, 1e-13);
    // t = r², dt/√t = 2 dr
    let r = quad.tanh_sinh(|r: f64| 2.0 * (-0.5 * (d / r) * (d / r)).exp() / (2.0 * PI).sqrt(), 0.0, 1.0)?;
    Ok(r.value)
}

/// Closed form of [`occupation_density`]:
/// `sqrt(2/π) e^{-d²/2} - |d| erfc(|d|/√2)`, `d = ψ(y)`.
pub fn occupation_density_closed_form(model: &DiffusionModel, y: f64) -> Result<f64> {
    let d = model.lamperti().psi(y)?;
    Ok(heat_time_integral(d, 0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityHolderRow {
    pub y: f64,
    pub z: f64,
    pub delta: f64,
    pub ratio: f64,
    /// Difference norm at `s = -1/2`, which dominates `|Δ|`.
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityHolderReport {
    pub beta: f64,
    pub rows: Vec<DensityHolderRow>,
    pub max_ratio: f64,
    /// The ratio stays bounded: it does not grow as `|y - z|` shrinks.
    pub bounded: bool,
    pub dominated: bool,
}

/// Hölder ratios `|F(y) - F(z)| / |y - z|^β` over the given pairs, plus the
/// domination `|F(y) - F(z)| ≤ ‖…‖_{2,-1/2}` by the difference norm.
pub fn density_holder_check(model: &DiffusionModel, pairs: &[(f64, f64)], beta: f64, n: usize) -> Result<DensityHolderReport> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(format!("β must lie in (0, 1), got {beta}")));
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for &(y, z) in pairs {
        let delta = occupation_density(model, y)? - occupation_density(model, z)?;
        let sep = (y - z).abs();
        let ratio = if sep > 0.0 { delta.abs() / sep.powf(beta) } else { 0.0 };
        let norm = holder_difference_norm(model, y, z, -0.5, n)?.value;
        rows.push(DensityHolderRow { y, z, delta, ratio, norm });
    }
    let max_ratio = rows.iter().fold(0.0f64, |m, r| m.max(r.ratio));
    // ratios at the smallest separations must not exceed those at larger ones by much
    let mut sorted: Vec<&DensityHolderRow> = rows.iter().filter(|r| r.y != r.z).collect();
    sorted.sort_by(|a, b| (a.y - a.z).abs().total_cmp(&(b.y - b.z).abs()));
    let bounded = max_ratio.is_finite() && {
        let k = (sorted.len() / 2).max(1).min(sorted.len());
        let small = sorted[..k].iter().fold(0.0f64, |m, r| m.max(r.ratio));
        let large = sorted[k..].iter().fold(0.0f64, |m, r| m.max(r.ratio));
        sorted.len() < 2 || small <= 2.0 * large.max(f64::MIN_POSITIVE) || small <= 1.0
    };
    let dominated = rows.iter().all(|r| r.delta.abs() <= r.norm * (1.0 + 1e-10) + 1e-14);
    Ok(DensityHolderReport { beta, rows, max_ratio, bounded, dominated })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(s: &str) -> DiffusionModel {
        DiffusionModel::stratonovich(s.parse().unwrap(), 0.0).unwrap()
    }

    #[test]
    fn iterated_integral_examples() {
        assert_eq!(iterated_integral_l2(0, 1.0).unwrap(), 1.0);
        assert!((iterated_integral_l2(2, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((iterated_integral_l2(3, 0.5).unwrap() - 0.125 / 6.0).abs() < 1e-16);
    }

    #[test]
    fn brownian_start_point_norm() {
        let m = model("unit");
        let v = local_time_chaos_norm(&m, 0.0, 0.0, 0).unwrap();
        assert!((v.terms[0] - 2.0 / PI).abs() < 1e-15);
        // Σ_n I_n = E[(∫δ_0(w_t)dt)²] = E[Z²] = 1
        let v = local_time_chaos_norm(&m, 0.0, 0.0, 20000).unwrap();
        let tail = v.tail_sq.unwrap();
        assert!((v.value * v.value + tail - 1.0).abs() < 1e-4, "{} + {tail}", v.value * v.value);
    }

    #[test]
    fn panel_engine_matches_start_point_closed_form() {
        let exact = start_point_terms(40);
        let at = single_level_terms(0.0, 40, &PanelOptions::default()).unwrap();
        // a level just off the start point approaches the closed form
        let near = single_level_terms(1e-9, 40, &PanelOptions::default()).unwrap();
        for n in 0..=40 {
            assert!((at[n] - exact[n]).abs() < 1e-15, "n={n}");
            assert!((near[n] - exact[n]).abs() < 1e-8, "n={n}: {} vs {}", near[n], exact[n]);
        }
    }

    #[test]
    fn zeroth_term_is_squared_mean() {
        for s in ["unit", "sin2", "sqrt1pz2"] {
            let m = model(s);
            for &y in &[0.3, -0.8] {
                let v = local_time_chaos_norm(&m, y, 1.7, 0).unwrap();
                let f = occupation_density_closed_form(&m, y).unwrap();
                assert!((v.terms[0] - f * f).abs() < 1e-10, "{s} y={y}");
                assert!((v.value - f).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn occupation_density_quadrature_matches_closed_form() {
        let m = model("sin2");
        for &y in &[-2.0, -0.1, 0.0, 0.4, 3.0] {
            let a = occupation_density(&m, y).unwrap();
            let b = occupation_density_closed_form(&m, y).unwrap();
            assert!((a - b).abs() < 1e-12, "y={y}: {a} vs {b}");
        }
    }

    #[test]
    fn single_level_engine_converges_under_refinement() {
        let m = model("unit");
        let psi = m.lamperti().psi(0.7).unwrap();
        let a = single_level_terms(psi, 60, &PanelOptions::default()).unwrap();
        let fine = PanelOptions { log_width: Some(1.0 / 60.0), order: 16 };
        let b = single_level_terms(psi, 60, &fine).unwrap();
        for n in 0..=60 {
            assert!((a[n] - b[n]).abs() < 1e-10, "n={n}: {} vs {}", a[n], b[n]);
            assert!(a[n] > -1e-12);
        }
    }

    #[test]
    fn two_routes_agree() {
        for s in ["unit", "sin2"] {
            let m = model(s);
            let d = difference_terms(&m, 0.0, 0.1, 64, &PanelOptions::default()).unwrap();
            for n in 0..=64 {
                assert!((d.direct[n] - d.bilinear[n]).abs() < 1e-8, "{s} n={n}");
                assert!(d.direct[n] >= -1e-12);
            }
        }
    }

    #[test]
    fn difference_norm_trivial_cases() {
        let m = model("unit");
        assert_eq!(holder_difference_norm(&m, 0.4, 0.4, 0.0, 30).unwrap().value, 0.0);
        let a = holder_difference_norm(&m, 0.0, 0.1, 0.0, 50).unwrap().value;
        let b = holder_difference_norm(&m, 0.1, 0.0, 0.0, 50).unwrap().value;
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn bound_constant_behaviour() {
        assert!(holder_bound_constant(0.0, 0.49, 1.0, 100).is_ok());
        assert!(matches!(holder_bound_constant(0.0, 0.51, 1.0, 100), Err(Error::Divergent(_))));
        let b = holder_bound_constant(0.1, 0.3, 1.0, 2000).unwrap();
        let e = bound_tail_exponent(&b, 200, 2000).unwrap();
        assert!((e - (0.1 + 0.3 - 1.5)).abs() < 0.1, "{e}");
        let grid = [1e-3, 1e-2, 0.1, 0.2, 0.3, 0.4];
        let cs: Vec<f64> = grid.iter().map(|&beta| holder_bound_constant(0.0, beta, 1.0, 4000).unwrap().constant).collect();
        assert!(cs.windows(2).all(|w| w[0] < w[1]), "{cs:?}");
        assert!((cs[0] - cs[1]).abs() < 0.05 * cs[0]);
    }

    #[test]
    fn difference_below_bound() {
        let m = model("unit");
        let b = holder_bound_constant(0.0, 0.4, 1.0, 4000).unwrap();
        for &(y, z) in &[(0.0, 0.1), (0.2, -0.3), (0.5, 0.55)] {
            let v = holder_difference_norm(&m, y, z, 0.0, 128).unwrap().value;
            assert!(v <= b.constant * f64::abs(y - z).powf(0.4), "({y},{z}): {v}");
        }
    }

    #[test]
    fn density_holder_for_brownian() {
        let m = model("unit");
        let pairs: Vec<(f64, f64)> = [1e-3, 1e-2, 0.1, 0.5, 1.0].iter().flat_map(|&h| [(0.0, h), (-1.0, -1.0 + h)]).collect();
        let r = density_holder_check(&m, &pairs, 0.9, 32).unwrap();
        assert!(r.bounded && r.dominated, "{r:?}");
        let r0 = density_holder_check(&m, &[(0.3, 0.3)], 0.9, 8).unwrap();
        assert_eq!(r0.rows[0].delta, 0.0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn difference_terms_symmetric_and_consistent(y in -1.5f64..1.5, dz in 0.01f64..1.0) {
            let m = model("unit");
            let z = y + dz;
            let a = difference_terms(&m, y, z, 24, &PanelOptions::default()).unwrap();
            let b = difference_terms(&m, z, y, 24, &PanelOptions::default()).unwrap();
            for n in 0..=24 {
                proptest::prop_assert!(a.direct[n] >= -1e-12);
                proptest::prop_assert!((a.direct[n] - a.bilinear[n]).abs() < 1e-8);
                proptest::prop_assert!((a.direct[n] - b.direct[n]).abs() < 1e-12);
            }
        }

        #[test]
        fn norm_increases_with_index(y in -1.0f64..1.0, s in -1.0f64..0.4) {
            let m = model("sin2");
            let lo = local_time_chaos_norm(&m, y, s, 40).unwrap().value;
            let hi = local_time_chaos_norm(&m, y, s + 0.05, 40).unwrap().value;
            proptest::prop_assert!(hi >= lo);
        }
    }
}
