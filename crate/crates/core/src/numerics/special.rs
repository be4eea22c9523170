//! Gaussian helpers, log-factorials and the Dawson function.

use std::f64::consts::{PI, SQRT_2};

use std::sync::OnceLock;

use super::quad::Quad;
use super::sum::NeumaierSum;

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

const LN_FACTORIAL_TABLE: usize = 20_000;

/// `ln n!`, from a compensated running sum of `ln k` for moderate `n` (the
/// library `lgamma` loses a few ulps of the large value there) and `ln_gamma` beyond.
pub fn ln_factorial(n: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    if n >= LN_FACTORIAL_TABLE {
        return libm::lgamma(n as f64 + 1.0);
    }
    let t = TABLE.get_or_init(|| {
        let mut acc = NeumaierSum::new();
        let mut out = Vec::with_capacity(LN_FACTORIAL_TABLE);
        out.push(0.0);
        for k in 1..LN_FACTORIAL_TABLE {
            acc.add((k as f64).ln());
            out.push(acc.value());
        }
        out
    });
    t[n]
}

pub fn ln_gamma_fn(x: f64) -> f64 {
    libm::lgamma(x)
}

pub fn gamma_fn(x: f64) -> f64 {
    libm::tgamma(x)
}

/// `ln((2k)!!) = k ln 2 + ln k!`.
pub fn ln_even_double_factorial(k: usize) -> f64 {
    k as f64 * std::f64::consts::LN_2 + ln_factorial(k)
}

/// `ln((2k-1)!!) = ln (2k)! - ln (2k)!!`.
pub fn ln_odd_double_factorial(k: usize) -> f64 {
    ln_factorial(2 * k) - ln_even_double_factorial(k)
}

/// `E[log|Z|]` for a standard Gaussian `Z`.
pub fn mean_log_abs_gaussian() -> f64 {
    -0.5 * (EULER_GAMMA + std::f64::consts::LN_2)
}

/// Dawson's integral `F(b) = exp(-b^2) \int_0^b exp(t^2) dt`, by quadrature of
/// the bounded integrand `exp(t^2 - b^2)`.
pub fn dawson(b: f64) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    let s = b.signum();
    let b = b.abs();
    if b > 50.0 {
        // asymptotic series 1/(2b) (1 + 1/(2b^2) + 3/(4b^4) + 15/(8 b^6))
        let r = 1.0 / (2.0 * b * b);
        return s * (1.0 + r * (1.0 + r * (3.0 + 15.0 * r))) / (2.0 * b);
    }
    // e^{t^2-b^2} = e^{-(b-t)(b+t)}; substitute v = b - t
    let quad = Quad::new(1e-300, 1e-15);
    let r = quad
        .gk(|v| (-(v * (2.0 * b - v))).exp(), 0.0, b)
        .expect("Dawson integrand is smooth and bounded");
    s * r.value
}

/// Principal value `p.v. E[1/(a - Z)] = sqrt(2) F(a / sqrt(2))`.
pub fn pv_gaussian_hilbert(a: f64) -> f64 {
    SQRT_2 * dawson(a / SQRT_2)
}

/// `\int_{v_0}^{v_1} (2 pi v)^{-1/2} exp(-d^2/(2v)) dv` in closed form.
pub fn heat_time_integral(d: f64, v0: f64, v1: f64) -> f64 {
    let prim = |v: f64| -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        let ad = d.abs();
        (2.0 * v / PI).sqrt() * (-d * d / (2.0 * v)).exp() - ad * erfc(ad / (2.0 * v).sqrt())
    };
    prim(v1) - prim(v0)
}

/// Mills ratio `R(x) = (1 - Φ(x))/φ(x)` for `x ≥ 0` (continued fraction in
/// the tail, where the quotient of `erfc` and the density loses digits).
pub fn mills_ratio(x: f64) -> f64 {
    if x < 6.0 {
        return normal_cdf(-x) / normal_pdf(x);
    }
    // R = 1/(x + 1/(x + 2/(x + 3/(x + …))))
    let mut tail = x;
    for k in (1..=30).rev() {
        tail = x + k as f64 / tail;
    }
    1.0 / tail
}
