//! Adaptive Gauss-Kronrod, tanh-sinh and Gauss-Legendre quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_err: f64,
    pub evals: usize,
}

/// Quadrature driver with absolute/relative tolerances.
#[derive(Debug, Clone, Copy)]
pub struct Quad {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
    pub max_levels: usize,
}

impl Default for Quad {
    fn default() -> Self {
        Self { abs_tol: 1e-13, rel_tol: 1e-12, max_intervals: 4000, max_levels: 12 }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
    resabs: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut resabs = fc.abs() * WGK[7];
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        kron += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    (kron * h, ((kron - gauss) * h).abs(), resabs * h.abs())
}

impl Quad {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self { abs_tol, rel_tol, ..Self::default() }
    }

    pub fn with_max_intervals(mut self, n: usize) -> Self {
        self.max_intervals = n;
        self
    }

    fn target(&self, value: f64, resabs: f64) -> f64 {
        self.abs_tol
            .max(self.rel_tol * value.abs())
            .max(64.0 * f64::EPSILON * resabs)
    }

    /// Globally adaptive 15-point Gauss-Kronrod on a finite interval.
    pub fn gk<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> Result<QuadResult> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::invalid("gk: interval bounds must be finite"));
        }
        if a == b {
            return Ok(QuadResult { value: 0.0, abs_err: 0.0, evals: 0 });
        }
        let (v, e, r) = gk15(&mut f, a, b);
        let mut evals = 15;
        let mut heap = BinaryHeap::new();
        heap.push(Segment { a, b, value: v, err: e, resabs: r });
        let (mut total, mut total_err, mut total_abs) = (v, e, r);
        loop {
            if !total.is_finite() {
                return Err(Error::no_conv("gauss-kronrod (non-finite integrand)", f64::INFINITY));
            }
            if total_err <= self.target(total, total_abs) {
                break;
            }
            if heap.len() >= self.max_intervals {
                return Err(Error::no_conv("gauss-kronrod", total_err));
            }
            let seg = heap.pop().expect("heap is never empty");
            let mid = 0.5 * (seg.a + seg.b);
            if mid <= seg.a || mid >= seg.b {
                // interval can no longer be split in floating point
                return Err(Error::no_conv("gauss-kronrod (interval underflow)", total_err));
            }
            let (v1, e1, r1) = gk15(&mut f, seg.a, mid);
            let (v2, e2, r2) = gk15(&mut f, mid, seg.b);
            evals += 30;
            total += v1 + v2 - seg.value;
            total_err += e1 + e2 - seg.err;
            total_abs += r1 + r2 - seg.resabs;
            heap.push(Segment { a: seg.a, b: mid, value: v1, err: e1, resabs: r1 });
            heap.push(Segment { a: mid, b: seg.b, value: v2, err: e2, resabs: r2 });
        }
        // re-sum in a fixed order to limit drift from the running updates
        let mut segs: Vec<Segment> = heap.into_vec();
        segs.sort_by(|x, y| x.a.total_cmp(&y.a));
        let value = segs.iter().map(|s| s.value).sum::<super::NeumaierSum>().value();
        let abs_err = segs.iter().map(|s| s.err).sum();
        Ok(QuadResult { value, abs_err, evals })
    }

    /// Adaptive Gauss-Kronrod over a list of breakpoints.
    pub fn gk_points<F: FnMut(f64) -> f64>(&self, mut f: F, points: &[f64]) -> Result<QuadResult> {
        let mut acc = super::NeumaierSum::new();
        let mut err = 0.0;
        let mut evals = 0;
        for w in points.windows(2) {
            let r = self.gk(&mut f, w[0], w[1])?;
            acc.add(r.value);
            err += r.abs_err;
            evals += r.evals;
        }
        Ok(QuadResult { value: acc.value(), abs_err: err, evals })
    }

    /// Integral over `[a, +inf)` through `x = a + s/(1-s)`.
    pub fn half_line<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64) -> Result<QuadResult> {
        self.gk(
            |s| {
                if s >= 1.0 {
                    return 0.0;
                }
                let om = 1.0 - s;
                let v = f(a + s / om) / (om * om);
                if v.is_finite() { v } else { 0.0 }
            },
            0.0,
            1.0,
        )
    }

    /// Integral over the real line, split at `center`.
    pub fn real_line<F: FnMut(f64) -> f64>(&self, mut f: F, center: f64) -> Result<QuadResult> {
        let right = self.half_line(&mut f, center)?;
        let left = self.half_line(|x| f(2.0 * center - x), center)?;
        Ok(QuadResult {
            value: right.value + left.value,
            abs_err: right.abs_err + left.abs_err,
            evals: right.evals + left.evals,
        })
    }

    /// Tanh-sinh (double exponential) rule on `[a, b]`; tolerates integrable
    /// endpoint singularities. Abscissae are generated from their distance to
    /// the nearest endpoint so that points close to a singular endpoint keep
    /// full relative precision.
    pub fn tanh_sinh<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> Result<QuadResult> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::invalid("tanh_sinh: interval bounds must be finite"));
        }
        if a == b {
            return Ok(QuadResult { value: 0.0, abs_err: 0.0, evals: 0 });
        }
        let c = 0.5 * (a + b);
        let d = 0.5 * (b - a);
        let mut evals = 1;
        let f0 = f(c);
        let mut sum = FRAC_PI_2 * f0;
        let mut abs_sum = sum.abs();
        let mut h = 1.0;
        // level 0: integer nodes
        let mut add_nodes = |h: f64, start: usize, step: usize, sum: &mut f64, abs_sum: &mut f64, evals: &mut usize| {
            let mut k = start;
            loop {
                let t = k as f64 * h;
                let u = (FRAC_PI_2 * t.sinh()).exp();
                let u2 = u * u;
                if !u2.is_finite() {
                    break;
                }
                let dist = d * 2.0 / (u2 + 1.0);
                let w = FRAC_PI_2 * t.cosh() * 4.0 * u2 / ((u2 + 1.0) * (u2 + 1.0));
                if dist == 0.0 || w < 1e-300 {
                    break;
                }
                let fr = f(b - dist);
                let fl = f(a + dist);
                *evals += 2;
                let contrib = w * (fr + fl);
                if contrib.is_finite() {
                    *sum += contrib;
                    *abs_sum += w * (fr.abs() + fl.abs());
                }
                if (w * (fr.abs() + fl.abs())) < 1e-18 * abs_sum.max(1e-300) && t > 3.0 {
                    break;
                }
                k += step;
            }
        };
        add_nodes(h, 1, 1, &mut sum, &mut abs_sum, &mut evals);
        let mut prev = sum * h * d;
        let mut err = f64::INFINITY;
        for level in 1..=self.max_levels {
            h *= 0.5;
            add_nodes(h, 1, 2, &mut sum, &mut abs_sum, &mut evals);
            let cur = sum * h * d;
            err = (cur - prev).abs();
            prev = cur;
            let tol = self
                .abs_tol
                .max(self.rel_tol * cur.abs())
                .max(64.0 * f64::EPSILON * abs_sum * h * d.abs());
            // error of the previous level; the current level is far more accurate
            if level >= 3 && err <= tol {
                return Ok(QuadResult { value: cur, abs_err: err, evals });
            }
        }
        Err(Error::no_conv("tanh-sinh", err))
    }
}

/// Spectral integration matrix on the `q` Gauss-Legendre nodes:
/// `∫_{-1}^{x_i} f ≈ Σ_j S[i][j] f(x_j)`, exact for polynomials of degree `< q`.
pub fn gauss_legendre_integration_matrix(q: usize) -> Vec<Vec<f64>> {
    let (x, w) = gauss_legendre(q);
    // P_k at a point, k = 0..=q
    let legendre = |t: f64| {
        let mut p = vec![0.0; q + 1];
        p[0] = 1.0;
        if q >= 1 {
            p[1] = t;
        }
        for k in 2..=q {
            p[k] = ((2 * k - 1) as f64 * t * p[k - 1] - (k - 1) as f64 * p[k - 2]) / k as f64;
        }
        p
    };
    let at_nodes: Vec<Vec<f64>> = x.iter().map(|&t| legendre(t)).collect();
    (0..q)
        .map(|i| {
            let p = &at_nodes[i];
            // ∫_{-1}^{x_i} P_k = (P_{k+1} - P_{k-1}) / (2k + 1), and x_i + 1 for k = 0
            let integrals: Vec<f64> = (0..q)
                .map(|k| if k == 0 { x[i] + 1.0 } else { (p[k + 1] - p[k - 1]) / (2 * k + 1) as f64 })
                .collect();
            (0..q)
                .map(|j| {
                    w[j] * (0..q).map(|k| 0.5 * (2 * k + 1) as f64 * at_nodes[j][k] * integrals[k]).sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    let n = q as f64;
    for i in 0..q.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=q {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let p = if q == 0 { 1.0 } else if q == 1 { x } else { p1 };
            let pm1 = if q == 1 { 1.0 } else { p0 };
            dp = n * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[q - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk_polynomial_and_oscillatory() {
        let q = Quad::default();
        let r = q.gk(|x| x * x, 0.0, 3.0).unwrap();
        assert!((r.value - 9.0).abs() < 1e-13);
        let r = q.gk(|x| (50.0 * x).sin(), 0.0, std::f64::consts::PI).unwrap();
        assert!(r.value.abs() < 1e-12);
    }

    #[test]
    fn tanh_sinh_endpoint_singularities() {
        let q = Quad::new(1e-14, 1e-13);
        let r = q.tanh_sinh(|x| 1.0 / x.sqrt(), 0.0, 1.0).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12, "{}", r.value);
        let r = q.tanh_sinh(|x: f64| x.ln(), 0.0, 1.0).unwrap();
        assert!((r.value + 1.0).abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn half_line_gaussian() {
        let q = Quad::default();
        let r = q.real_line(|x| (-0.5 * x * x).exp(), 0.0).unwrap();
        assert!((r.value - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_exactness() {
        let (x, w) = gauss_legendre(12);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(22)).sum();
        assert!((s - 2.0 / 23.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let (x, w) = gauss_legendre(1);
        assert_eq!(x, vec![0.0]);
        assert!((w[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn integration_matrix_is_exact_on_polynomials() {
        let q = 10;
        let (x, _) = gauss_legendre(q);
        let s = gauss_legendre_integration_matrix(q);
        for i in 0..q {
            let approx: f64 = (0..q).map(|j| s[i][j] * (x[j].powi(9) - 2.0 * x[j].powi(4))).sum();
            let exact = (x[i].powi(10) - 1.0) / 10.0 - 2.0 * (x[i].powi(5) + 1.0) / 5.0;
            assert!((approx - exact).abs() < 1e-14, "{i}: {approx} vs {exact}");
        }
    }
}
