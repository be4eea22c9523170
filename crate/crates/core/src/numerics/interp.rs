//! Piecewise cubic interpolation.

use crate::error::{Error, Result};

#[inline]
fn hermite(h: f64, s: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> (f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let v = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
    let dv = ((6.0 * s2 - 6.0 * s) * (y0 - y1)) / h + (3.0 * s2 - 4.0 * s + 1.0) * d0 + (3.0 * s2 - 2.0 * s) * d1;
    (v, dv)
}

/// Monotone piecewise cubic (Fritsch-Carlson) through tabulated points.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::invalid("monotone cubic needs at least two (x, y) pairs"));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) || xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::invalid("monotone cubic abscissae must be finite and strictly increasing"));
        }
        let n = xs.len();
        let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
        let mut ds = vec![0.0; n];
        ds[0] = delta[0];
        ds[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                ds[i] = 0.0;
            } else {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                let w1 = 2.0 * h1 + h0;
                let w2 = h1 + 2.0 * h0;
                ds[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        Ok(Self { xs, ys, ds })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Value and derivative; linear extrapolation outside the table.
    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return (self.ys[0] + self.ds[0] * (x - self.xs[0]), self.ds[0]);
        }
        if x >= self.xs[n - 1] {
            return (self.ys[n - 1] + self.ds[n - 1] * (x - self.xs[n - 1]), self.ds[n - 1]);
        }
        let i = self.xs.partition_point(|&v| v <= x) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        hermite(h, (x - self.xs[i]) / h, self.ys[i], self.ys[i + 1], self.ds[i], self.ds[i + 1])
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_with_derivative(x).0
    }
}

/// Cubic Hermite table on a uniform grid.
#[derive(Debug, Clone)]
pub struct UniformTable {
    lo: f64,
    h: f64,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl UniformTable {
    /// Tabulates `f` and its derivative `df` at `n + 1` equispaced points.
    pub fn with_derivative(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Self {
        let h = (hi - lo) / n as f64;
        let xs = (0..=n).map(|i| lo + i as f64 * h);
        let (ys, ds) = xs.map(|x| (f(x), df(x))).unzip();
        Self { lo, h, ys, ds }
    }

    /// Tabulates `f` with derivatives from fourth-order finite differences of
    /// the table itself.
    pub fn from_fn(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Self {
        assert!(n >= 4, "table needs at least five points");
        let h = (hi - lo) / n as f64;
        let ys: Vec<f64> = (0..=n).map(|i| f(lo + i as f64 * h)).collect();
        let mut ds = vec![0.0; n + 1];
        for i in 0..=n {
            ds[i] = if i >= 2 && i + 2 <= n {
                (ys[i - 2] - 8.0 * ys[i - 1] + 8.0 * ys[i + 1] - ys[i + 2]) / (12.0 * h)
            } else if i < 2 {
                (-25.0 * ys[i] + 48.0 * ys[i + 1] - 36.0 * ys[i + 2] + 16.0 * ys[i + 3] - 3.0 * ys[i + 4]) / (12.0 * h)
            } else {
                (25.0 * ys[i] - 48.0 * ys[i - 1] + 36.0 * ys[i - 2] - 16.0 * ys[i - 3] + 3.0 * ys[i - 4]) / (12.0 * h)
            };
        }
        Self { lo, h, ys, ds }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.lo + self.h * (self.ys.len() - 1) as f64)
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        let (a, b) = self.domain();
        x >= a && x <= b
    }

    /// Interpolated value; clamps to the table ends.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let last = self.ys.len() - 1;
        let p = ((x - self.lo) / self.h).max(0.0);
        let i = (p as usize).min(last - 1);
        let s = (p - i as f64).min(1.0);
        hermite(self.h, s, self.ys[i], self.ys[i + 1], self.ds[i], self.ds[i + 1]).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_cubic_preserves_monotonicity() {
        let xs = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = vec![0.0, 0.1, 3.0, 3.05, 8.0];
        let m = MonotoneCubic::new(xs, ys).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=400 {
            let v = m.eval(k as f64 * 0.01);
            assert!(v >= prev);
            prev = v;
        }
        assert_eq!(m.eval(2.0), 3.0);
    }

    #[test]
    fn uniform_table_accuracy() {
        let t = UniformTable::from_fn(|x: f64| x.sin(), -3.0, 3.0, 600);
        let err = (0..1000).map(|k| -3.0 + 6.0 * k as f64 / 999.0).map(|x| (t.eval(x) - x.sin()).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }
}
