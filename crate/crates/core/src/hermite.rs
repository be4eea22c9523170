//! Probabilists' Hermite polynomials `H_n` (`H_0 = 1`, `H_1 = x`,
//! `H_n = x H_{n-1} - (n-1) H_{n-2}`), normalized Hermite functions and
//! Gauss-Hermite rules for the standard Gaussian weight.
//!
//! `H_n(x)` grows like `sqrt(n!)` in the oscillatory region, so plain `f64`
//! evaluation overflows past `n ~ 300` at moderate `x`. The recurrence here
//! carries a separate power-of-two exponent (see [`ScaledValue`]), which is
//! exact, so [`hermite_eval`] returns the same bits as the naive recurrence
//! whenever the naive recurrence does not overflow. All chaos computations
//! use the normalized functions `H_n(x) exp(-x^2/4) / sqrt(n!)` instead, which
//! stay bounded by one.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::special::ln_factorial;

/// Orders above this switch the recurrence to exponent tracking in
/// [`HermiteEvaluator::eval`]; below it values fit comfortably in `f64`.
pub const EXTENDED_RANGE_ORDER: usize = 300;

const RESCALE_BITS: i32 = 600;

/// `mantissa * 2^exp2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledValue {
    pub mantissa: f64,
    pub exp2: i64,
}

impl ScaledValue {
    pub fn to_f64(self) -> f64 {
        let mut v = self.mantissa;
        let mut e = self.exp2;
        while e > 0 {
            let step = e.min(1000) as i32;
            v *= 2f64.powi(step);
            e -= step as i64;
        }
        while e < 0 {
            let step = (-e).min(1000) as i32;
            v *= 2f64.powi(-step);
            e += step as i64;
        }
        v
    }

    /// `ln |value|`.
    pub fn ln_abs(self) -> f64 {
        self.mantissa.abs().ln() + self.exp2 as f64 * std::f64::consts::LN_2
    }

    pub fn signum(self) -> f64 {
        if self.mantissa == 0.0 { 0.0 } else { self.mantissa.signum() }
    }
}

fn check_x(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("Hermite argument must be finite, got {x}")))
    }
}

/// `H_n(x)` with an unbounded exponent.
pub fn hermite_eval_scaled(n: usize, x: f64) -> Result<ScaledValue> {
    check_x(x)?;
    if n == 0 {
        return Ok(ScaledValue { mantissa: 1.0, exp2: 0 });
    }
    let (mut p0, mut p1) = (1.0, x);
    let mut exp2 = 0i64;
    let big = 2f64.powi(RESCALE_BITS);
    let shrink = 2f64.powi(-RESCALE_BITS);
    for k in 2..=n {
        let p2 = x * p1 - (k - 1) as f64 * p0;
        p0 = p1;
        p1 = p2;
        if p1.abs() > big {
            p0 *= shrink;
            p1 *= shrink;
            exp2 += RESCALE_BITS as i64;
        }
    }
    Ok(ScaledValue { mantissa: p1, exp2 })
}

/// `H_n(x)` by the three-term recurrence. Overflows to `±inf` once the true
/// value leaves the `f64` range.
pub fn hermite_eval(n: usize, x: f64) -> Result<f64> {
    Ok(hermite_eval_scaled(n, x)?.to_f64())
}

/// `H_n(0)`: zero for odd `n`, `(-1)^k (2k-1)!!` for `n = 2k`.
pub fn hermite_zero_value(n: usize) -> f64 {
    if n % 2 == 1 {
        return 0.0;
    }
    let k = n / 2;
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    let mut v = 1.0f64;
    for j in 1..=k {
        v *= (2 * j - 1) as f64;
        if v.is_infinite() {
            break;
        }
    }
    sign * v
}

/// `H_n(0) / sqrt(n!)`, bounded and computed in log space.
pub fn hermite_zero_value_normalized(n: usize) -> f64 {
    if n % 2 == 1 {
        return 0.0;
    }
    // H_{2j}(0)/sqrt((2j)!) = -sqrt((2j-1)/(2j)) H_{2j-2}(0)/sqrt((2j-2)!)
    let mut v = 1.0f64;
    for j in 1..=n / 2 {
        let m = 2 * j;
        v *= -(((m - 1) as f64) / m as f64).sqrt();
    }
    v
}

/// Fills `out[k] = H_k(x) exp(-x^2/4) / sqrt(k!)` for `k < out.len()`.
///
/// These are bounded by one in absolute value for every `x` and `k`.
pub fn normalized_hermite_functions(x: f64, out: &mut [f64]) {
    weighted_normalized_hermite(x, -0.25 * x * x, out);
}

/// Fills `out[k] = H_k(x) exp(log_weight) / sqrt(k!)`.
///
/// The recurrence keeps a running log-scale, so a weight that underflows on
/// its own (large `|x|`) still yields correct values for the orders whose
/// turning point `2 sqrt(k)` exceeds `|x|`.
pub fn weighted_normalized_hermite(x: f64, log_weight: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let mut log_scale = log_weight;
    let mut scale = log_scale.exp();
    let (mut p0, mut p1) = (1.0f64, x);
    out[0] = scale;
    if out.len() == 1 {
        return;
    }
    out[1] = p1 * scale;
    let (roots, inv) = sqrt_tables();
    for k in 2..out.len() {
        let (r_prev, r_inv) = if k < roots.len() {
            (roots[k - 1], inv[k])
        } else {
            (((k - 1) as f64).sqrt(), 1.0 / (k as f64).sqrt())
        };
        let p2 = (x * p1 - r_prev * p0) * r_inv;
        p0 = p1;
        p1 = p2;
        if p1.abs() > 1e150 {
            p0 *= 1e-150;
            p1 *= 1e-150;
            log_scale += 150.0 * std::f64::consts::LN_10;
            scale = if log_scale < -745.0 { 0.0 } else { log_scale.exp() };
        }
        out[k] = p1 * scale;
    }
}

const LANES: usize = 4;

/// [`weighted_normalized_hermite`] for several points at once: fills
/// `out[i][k]` for `x = xs[i]`, `log_weight = log_weights[i]`. The recurrences
/// are interleaved, which hides their latency.
pub fn weighted_normalized_hermite_batch(xs: &[f64], log_weights: &[f64], out: &mut [Vec<f64>]) {
    assert!(xs.len() == log_weights.len() && xs.len() == out.len(), "batch lengths differ");
    let len = out.first().map_or(0, Vec::len);
    if len < 2 || out.iter().any(|o| o.len() != len) {
        for ((&x, &lw), o) in xs.iter().zip(log_weights).zip(out.iter_mut()) {
            weighted_normalized_hermite(x, lw, o);
        }
        return;
    }
    let (roots, inv) = sqrt_tables();
    for start in (0..xs.len()).step_by(LANES) {
        let m = (xs.len() - start).min(LANES);
        let mut x = [0.0; LANES];
        let mut log_scale = [0.0; LANES];
        x[..m].copy_from_slice(&xs[start..start + m]);
        log_scale[..m].copy_from_slice(&log_weights[start..start + m]);
        let mut scale = log_scale.map(f64::exp);
        let mut p0 = [1.0; LANES];
        let mut p1 = x;
        for l in 0..m {
            out[start + l][0] = scale[l];
            out[start + l][1] = p1[l] * scale[l];
        }
        for k in 2..len {
            let (r_prev, r_inv) = if k < roots.len() {
                (roots[k - 1], inv[k])
            } else {
                (((k - 1) as f64).sqrt(), 1.0 / (k as f64).sqrt())
            };
            for l in 0..LANES {
                let p2 = (x[l] * p1[l] - r_prev * p0[l]) * r_inv;
                p0[l] = p1[l];
                p1[l] = p2;
            }
            for l in 0..m {
                if p1[l].abs() > 1e150 {
                    p0[l] *= 1e-150;
                    p1[l] *= 1e-150;
                    log_scale[l] += 150.0 * std::f64::consts::LN_10;
                    scale[l] = if log_scale[l] < -745.0 { 0.0 } else { log_scale[l].exp() };
                }
                out[start + l][k] = p1[l] * scale[l];
            }
        }
    }
}

const SQRT_TABLE_LEN: usize = 1 << 16;

/// `sqrt(k)` and `1/sqrt(k)` for `k < 2^16`; computed once.
fn sqrt_tables() -> (&'static [f64], &'static [f64]) {
    static TABLE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (r, i) = TABLE.get_or_init(|| {
        let r: Vec<f64> = (0..SQRT_TABLE_LEN).map(|k| (k as f64).sqrt()).collect();
        let i = r.iter().map(|v| if *v > 0.0 { 1.0 / v } else { 0.0 }).collect();
        (r, i)
    });
    (r, i)
}

/// Normalized value `H_n(x) / sqrt(n!)` (without the Gaussian factor).
pub fn hermite_normalized(n: usize, x: f64) -> Result<f64> {
    check_x(x)?;
    let s = hermite_eval_scaled(n, x)?;
    if s.mantissa == 0.0 {
        return Ok(0.0);
    }
    Ok(s.signum() * (s.ln_abs() - 0.5 * ln_factorial(n)).exp())
}

/// Evaluator for orders `0..=max_order`, optionally with precomputed monomial
/// coefficient tables (only sensible for small orders).
#[derive(Debug, Clone)]
pub struct HermiteEvaluator {
    max_order: usize,
    coefficients: Option<Vec<Vec<f64>>>,
}

impl HermiteEvaluator {
    pub fn new(max_order: usize) -> Self {
        Self { max_order, coefficients: None }
    }

    /// Precomputes `H_n(x) = sum_j c_{n,j} x^j`. Coefficients are exact integers
    /// up to about order 40.
    pub fn with_coefficient_tables(max_order: usize) -> Self {
        let mut table: Vec<Vec<f64>> = Vec::with_capacity(max_order + 1);
        table.push(vec![1.0]);
        if max_order >= 1 {
            table.push(vec![0.0, 1.0]);
        }
        for n in 2..=max_order {
            let mut c = vec![0.0; n + 1];
            for (j, v) in table[n - 1].iter().enumerate() {
                c[j + 1] += v;
            }
            for (j, v) in table[n - 2].iter().enumerate() {
                c[j] -= (n - 1) as f64 * v;
            }
            table.push(c);
        }
        Self { max_order, coefficients: Some(table) }
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    fn check_order(&self, n: usize) -> Result<()> {
        if n > self.max_order {
            return Err(Error::invalid(format!("order {n} exceeds evaluator maximum {}", self.max_order)));
        }
        Ok(())
    }

    pub fn eval(&self, n: usize, x: f64) -> Result<f64> {
        self.check_order(n)?;
        hermite_eval(n, x)
    }

    /// Horner evaluation from the coefficient table, when present.
    pub fn eval_from_table(&self, n: usize, x: f64) -> Result<f64> {
        self.check_order(n)?;
        check_x(x)?;
        let table = self
            .coefficients
            .as_ref()
            .ok_or_else(|| Error::invalid("evaluator built without coefficient tables"))?;
        Ok(table[n].iter().rev().fold(0.0, |acc, c| acc * x + c))
    }

    pub fn coefficients(&self, n: usize) -> Option<&[f64]> {
        self.coefficients.as_ref().and_then(|t| t.get(n)).map(|v| v.as_slice())
    }

    /// `H_0(x), ..., H_{max_order}(x)`.
    pub fn eval_all(&self, x: f64) -> Result<Vec<f64>> {
        check_x(x)?;
        let mut out = Vec::with_capacity(self.max_order + 1);
        out.push(1.0);
        if self.max_order >= 1 {
            out.push(x);
        }
        for k in 2..=self.max_order {
            let v = x * out[k - 1] - (k - 1) as f64 * out[k - 2];
            out.push(v);
        }
        Ok(out)
    }

    /// `H_n'(x) = n H_{n-1}(x)`.
    pub fn derivative(&self, n: usize, x: f64) -> Result<f64> {
        self.check_order(n)?;
        if n == 0 {
            check_x(x)?;
            return Ok(0.0);
        }
        Ok(n as f64 * hermite_eval(n - 1, x)?)
    }
}

/// Gauss-Hermite rule for the standard Gaussian density: `sum w_i f(x_i)`
/// approximates `E[f(Z)]`, exactly for polynomials of degree `2m - 1`.
#[derive(Debug, Clone)]
pub struct GaussHermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Node count used for pairings up to order `n_max`.
pub fn default_node_count(n_max: usize) -> usize {
    n_max + 32
}

/// Golub-Welsch eigenvalues of the Jacobi matrix, polished by Newton steps on
/// the normalized recurrence, with Christoffel weights
/// `w_i = 1 / sum_{k<m} (H_k(x_i)^2 / k!)`.
pub fn gauss_hermite_rule(m: usize) -> Result<GaussHermiteRule> {
    if m == 0 {
        return Err(Error::invalid("Gauss-Hermite rule needs at least one node"));
    }
    if m == 1 {
        return Ok(GaussHermiteRule { nodes: vec![0.0], weights: vec![1.0] });
    }
    let jacobi = DMatrix::from_fn(m, m, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = nalgebra::SymmetricEigen::try_new(jacobi, 1e-15, 10_000)
        .ok_or_else(|| Error::no_conv("symmetric tridiagonal eigenproblem", f64::NAN))?;
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);

    let mut buf = vec![0.0; m + 1];
    for x in nodes.iter_mut() {
        for _ in 0..4 {
            normalized_hermite_functions(*x, &mut buf);
            if buf[m - 1] == 0.0 {
                break;
            }
            let dx = buf[m] / ((m as f64).sqrt() * buf[m - 1]);
            *x -= dx;
            if dx.abs() <= 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
    }
    // exact symmetry
    for i in 0..m / 2 {
        let v = 0.5 * (nodes[m - 1 - i] - nodes[i]);
        nodes[i] = -v;
        nodes[m - 1 - i] = v;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    let mut weights = Vec::with_capacity(m);
    for &x in &nodes {
        normalized_hermite_functions(x, &mut buf[..m]);
        let s: f64 = buf[..m].iter().map(|v| v * v).sum();
        let g = (-0.5 * x * x).exp();
        weights.push(if s > 0.0 { g / s } else { 0.0 });
    }
    Ok(GaussHermiteRule { nodes, weights })
}

impl GaussHermiteRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(Z)]`.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum::<crate::numerics::NeumaierSum>()
            .value()
    }

    /// `E[f(Z) H_n(Z) / sqrt(n!)]` for `n = 0..=n_max`, accumulated with the
    /// Gaussian factor split between weight and Hermite function so that no
    /// intermediate overflows.
    pub fn normalized_projections(&self, f: impl Fn(f64) -> f64, n_max: usize) -> Vec<f64> {
        let mut acc = vec![crate::numerics::NeumaierSum::new(); n_max + 1];
        let mut buf = vec![0.0; n_max + 1];
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            let fx = f(x);
            normalized_hermite_functions(x, &mut buf);
            // w * H_k / sqrt(k!) = (w e^{x^2/4}) * buf[k]
            let lw = w.ln() + 0.25 * x * x;
            let scale = fx * lw.exp();
            for (a, b) in acc.iter_mut().zip(&buf) {
                a.add(scale * b);
            }
        }
        acc.iter().map(|a| a.value()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::special::ln_odd_double_factorial;

    #[test]
    fn small_orders() {
        assert_eq!(hermite_eval(0, 3.7).unwrap(), 1.0);
        assert_eq!(hermite_eval(1, -2.5).unwrap(), -2.5);
        assert_eq!(hermite_eval(3, 2.0).unwrap(), 2.0);
        assert_eq!(hermite_eval(4, 0.0).unwrap(), 3.0);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(hermite_eval(3, f64::NAN).is_err());
        assert!(hermite_eval(3, f64::INFINITY).is_err());
    }

    #[test]
    fn zero_values() {
        assert_eq!(hermite_zero_value(1), 0.0);
        assert_eq!(hermite_zero_value(2), -1.0);
        assert_eq!(hermite_zero_value(6), -15.0);
        assert_eq!(hermite_zero_value(6), hermite_eval(6, 0.0).unwrap());
        for n in 0..200 {
            let a = hermite_zero_value(n);
            let b = hermite_eval(n, 0.0).unwrap();
            assert!((a - b).abs() <= 1e-13 * b.abs(), "n={n}: {a} vs {b}");
        }
    }

    #[test]
    fn extended_range_matches_log_space_zero_value() {
        let n = 1000;
        let s = hermite_eval_scaled(n, 0.0).unwrap();
        let expect = ln_odd_double_factorial(n / 2);
        assert!((s.ln_abs() - expect).abs() < 1e-10);
        assert_eq!(s.signum(), 1.0);
        assert!(hermite_eval(n, 0.0).unwrap().is_infinite());
        let z = hermite_zero_value_normalized(n);
        assert!((z - (expect - 0.5 * ln_factorial(n)).exp()).abs() < 1e-11 * z);
    }

    #[test]
    fn coefficient_table_matches_recurrence() {
        let ev = HermiteEvaluator::with_coefficient_tables(20);
        assert_eq!(ev.coefficients(3).unwrap(), &[0.0, -3.0, 0.0, 1.0]);
        for n in 0..=20 {
            for &x in &[-2.3, -0.4, 0.0, 1.1, 3.0] {
                let a = ev.eval(n, x).unwrap();
                let b = ev.eval_from_table(n, x).unwrap();
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "n={n} x={x}");
            }
        }
        assert!(ev.eval(21, 0.0).is_err());
    }

    #[test]
    fn derivative_identity_by_finite_differences() {
        let ev = HermiteEvaluator::new(25);
        let h = 1e-5;
        for n in 1..=25 {
            let scale = (ln_factorial(n) * 0.5).exp() * 10f64.powi(2);
            for k in 0..=20 {
                let x = -4.0 + 0.4 * k as f64;
                let fd = (hermite_eval(n, x + h).unwrap() - hermite_eval(n, x - h).unwrap()) / (2.0 * h);
                let exact = ev.derivative(n, x).unwrap();
                assert!((fd - exact).abs() <= 1e-6 * scale * (1.0 + x.abs()).powi(n as i32 / 4), "n={n} x={x}");
            }
        }
    }

    #[test]
    fn normalized_functions_match_direct() {
        let mut buf = vec![0.0; 60];
        for &x in &[-7.0, -1.3, 0.0, 0.5, 4.2, 9.0] {
            normalized_hermite_functions(x, &mut buf);
            for (k, v) in buf.iter().enumerate() {
                let direct = hermite_normalized(k, x).unwrap() * (-0.25 * x * x).exp();
                assert!((v - direct).abs() <= 1e-12 * direct.abs().max(1e-3), "k={k} x={x}");
            }
        }
        // large argument, large order: turning point 2 sqrt(k) > |x|
        let mut big = vec![0.0; 5001];
        normalized_hermite_functions(100.0, &mut big);
        assert!(big[5000].abs() > 1e-5 && big[5000].abs() <= 1.0);
        assert_eq!(big[10], 0.0);
    }

    #[test]
    fn batch_matches_single_point() {
        let xs = [-30.0, -2.5, 0.0, 0.7, 3.3, 12.0, 55.0];
        let lws: Vec<f64> = xs.iter().map(|x| -0.5 * x * x).collect();
        let mut batch = vec![vec![0.0; 3000]; xs.len()];
        weighted_normalized_hermite_batch(&xs, &lws, &mut batch);
        let mut one = vec![0.0; 3000];
        for (i, (&x, &lw)) in xs.iter().zip(&lws).enumerate() {
            weighted_normalized_hermite(x, lw, &mut one);
            assert_eq!(one, batch[i], "x={x}");
        }
    }

    #[test]
    fn gauss_hermite_basic_rules() {
        let r = gauss_hermite_rule(1).unwrap();
        assert_eq!(r.nodes, vec![0.0]);
        assert_eq!(r.weights, vec![1.0]);
        let r = gauss_hermite_rule(5).unwrap();
        assert!((r.expect(|x| x * x) - 1.0).abs() < 1e-14);
        assert!(gauss_hermite_rule(0).is_err());
    }

    #[test]
    fn gauss_hermite_weights_sum_to_one() {
        for m in [2, 7, 20, 64, 96, 200] {
            let r = gauss_hermite_rule(m).unwrap();
            let s: f64 = r.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14, "m={m}: {s}");
            assert!((r.expect(|x| x * x) - 1.0).abs() < 1e-13, "m={m}");
        }
    }

    #[test]
    fn hermite_orthogonality_under_quadrature() {
        // degree guard: products up to degree 2m-1 are exact
        let m = 20;
        let r = gauss_hermite_rule(m).unwrap();
        for a in 0..m {
            for b in 0..m {
                if a + b > 2 * m - 1 {
                    continue;
                }
                let e = r.expect(|x| hermite_eval(a, x).unwrap() * hermite_eval(b, x).unwrap());
                let expect = if a == b { ln_factorial(a).exp() } else { 0.0 };
                let scale = (0.5 * (ln_factorial(a) + ln_factorial(b))).exp();
                assert!((e - expect).abs() <= 1e-10 * scale, "a={a} b={b}: {e}");
            }
        }
    }
}
