//! Embedded Dormand-Prince 5(4) integrator for scalar ODEs `y' = g(u, y)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct DormandPrince {
    pub rtol: f64,
    pub atol: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for DormandPrince {
    fn default() -> Self {
        Self { rtol: 1e-13, atol: 1e-14, min_step: 1e-14, max_steps: 200_000 }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

impl DormandPrince {
    /// Integrates from `u0` to `u1` (either direction) starting at `y0`.
    pub fn solve<G: FnMut(f64, f64) -> f64>(&self, mut g: G, u0: f64, y0: f64, u1: f64) -> Result<f64> {
        let span = u1 - u0;
        if span == 0.0 {
            return Ok(y0);
        }
        let dir = span.signum();
        let mut u = u0;
        let mut y = y0;
        let mut h = dir * (span.abs() * 0.01).min(0.05).max(self.min_step);
        let mut k = [0.0; 7];
        for _ in 0..self.max_steps {
            if (u1 - u) * dir <= 0.0 {
                return Ok(y);
            }
            if (u + h - u1) * dir > 0.0 {
                h = u1 - u;
            }
            k[0] = g(u, y);
            for s in 1..7 {
                let mut acc = y;
                for j in 0..s {
                    acc += h * A[s][j] * k[j];
                }
                k[s] = g(u + C[s] * h, acc);
            }
            let mut y5 = y;
            let mut y4 = y;
            for s in 0..7 {
                y5 += h * B5[s] * k[s];
                y4 += h * B4[s] * k[s];
            }
            let scale = self.atol + self.rtol * y.abs().max(y5.abs());
            let err = ((y5 - y4) / scale).abs();
            if !y5.is_finite() {
                return Err(Error::no_conv("dormand-prince (non-finite state)", f64::INFINITY));
            }
            if err <= 1.0 {
                u += h;
                y = y5;
                if (u1 - u) * dir <= 0.0 {
                    return Ok(y);
                }
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= factor;
            if h.abs() < self.min_step * span.abs().max(1.0) {
                return Err(Error::no_conv("dormand-prince (step-size underflow)", err));
            }
        }
        Err(Error::no_conv("dormand-prince (too many steps)", f64::NAN))
    }
}
