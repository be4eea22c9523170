//! One-dimensional diffusions `dX = σ(X)∘dw` (and, for the scale/speed
//! objects, Itô drifts `b`): Lamperti map, flow of `A = σ d/dz`,
//! Krylov-Veretennikov kernels `Aⁿ_x p_t(x, a)`, scale and speed,
//! the fundamental solution of `Lu = δ_y`, and the Bessel kernel of `δ_y`.
//!
//! Drift convention: the generator is `L = ½σ² d² + b d`. The
//! Stratonovich-symmetric case `b = σσ′/2` gives `L = ½A²`, which commutes
//! with `A`; only that case has Krylov-Veretennikov kernels here.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hermite::hermite_eval;
use crate::numerics::interp::MonotoneCubic;
use crate::numerics::ode::DormandPrince;
use crate::numerics::special::{gamma_fn, normal_pdf};
use crate::numerics::Quad;

/// Diffusion coefficient σ.
#[derive(Clone)]
pub enum Sigma {
    /// σ ≡ 1.
    Unit,
    /// σ(z) = √(1 + z²).
    Sqrt1pZ2,
    /// σ(z) = 2 + sin z.
    Sin2,
    Constant(f64),
    /// Monotone-cubic interpolation of a `(z, σ(z))` table, extended linearly.
    Tabulated { source: String, table: Arc<MonotoneCubic> },
}

impl Sigma {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Sigma::Unit => 1.0,
            Sigma::Sqrt1pZ2 => z.hypot(1.0),
            Sigma::Sin2 => 2.0 + z.sin(),
            Sigma::Constant(c) => *c,
            Sigma::Tabulated { table, .. } => table.eval(z),
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Sigma::Unit | Sigma::Constant(_) => 0.0,
            Sigma::Sqrt1pZ2 => z / z.hypot(1.0),
            Sigma::Sin2 => z.cos(),
            Sigma::Tabulated { table, .. } => table.eval_with_derivative(z).1,
        }
    }

    /// Reads a headerless or headed two-column CSV of `z, sigma` pairs.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Parse(format!("cannot read σ table {}: {e}", path.display())))?;
        let (mut zs, mut ss) = (Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::Parse(format!("{}: line {} needs two columns", path.display(), i + 1)));
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(z), Ok(s)) => {
                    zs.push(z);
                    ss.push(s);
                }
                _ if i == 0 => continue,
                _ => return Err(Error::Parse(format!("{}: bad number on line {}", path.display(), i + 1))),
            }
        }
        let table = MonotoneCubic::new(zs, ss)?;
        Ok(Sigma::Tabulated { source: path.display().to_string(), table: Arc::new(table) })
    }
}

impl fmt::Display for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sigma::Unit => f.write_str("unit"),
            Sigma::Sqrt1pZ2 => f.write_str("sqrt1pz2"),
            Sigma::Sin2 => f.write_str("sin2"),
            Sigma::Constant(c) => write!(f, "const:{c}"),
            Sigma::Tabulated { source, .. } => write!(f, "table:{source}"),
        }
    }
}

impl fmt::Debug for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sigma({self})")
    }
}

impl std::str::FromStr for Sigma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "unit" => Ok(Sigma::Unit),
            "sqrt1pz2" => Ok(Sigma::Sqrt1pZ2),
            "sin2" => Ok(Sigma::Sin2),
            _ => {
                if let Some(c) = s.strip_prefix("const:") {
                    let c: f64 = c.parse().map_err(|_| Error::Parse(format!("bad constant in '{s}'")))?;
                    if !(c > 0.0 && c.is_finite()) {
                        return Err(Error::Parse(format!("constant sigma must be positive in '{s}'")));
                    }
                    Ok(Sigma::Constant(c))
                } else if let Some(p) = s.strip_prefix("table:") {
                    Sigma::from_csv(Path::new(p))
                } else {
                    Err(Error::Parse(format!("unknown model '{s}' (expected unit, sqrt1pz2, sin2, const:<c>, table:<csv>)")))
                }
            }
        }
    }
}

/// Itô drift `b` in `L = ½σ² d² + b d`.
#[derive(Clone)]
pub enum Drift {
    /// `b = σσ′/2`, i.e. `dX = σ(X)∘dw`.
    StratonovichSymmetric,
    Constant(f64),
    Custom { name: String, b: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
}

impl Drift {
    pub fn custom(name: impl Into<String>, b: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Drift::Custom { name: name.into(), b: Arc::new(b) }
    }
}

impl fmt::Display for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::StratonovichSymmetric => f.write_str("strat"),
            Drift::Constant(b) => write!(f, "const:{b}"),
            Drift::Custom { name, .. } => write!(f, "custom:{name}"),
        }
    }
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Drift({self})")
    }
}

impl std::str::FromStr for Drift {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "strat" {
            return Ok(Drift::StratonovichSymmetric);
        }
        if let Some(b) = s.strip_prefix("const:") {
            let b: f64 = b.parse().map_err(|_| Error::Parse(format!("bad drift constant in '{s}'")))?;
            if !b.is_finite() {
                return Err(Error::Parse(format!("drift must be finite in '{s}'")));
            }
            return Ok(Drift::Constant(b));
        }
        Err(Error::Parse(format!("unknown drift '{s}' (expected strat or const:<b>)")))
    }
}

/// The Lamperti image must reach `±LAMPERTI_REACH` inside the working domain:
/// Gaussian mass beyond `LAMPERTI_REACH / sqrt(t)` is below 1e-14 for `t ≤ 2`.
pub const LAMPERTI_REACH: f64 = 12.0;
const MAX_RADIUS: f64 = 1e7;
const ELLIPTICITY_GRID: usize = 4001;

/// A diffusion with start point `x`, working domain `[x - R, x + R]` and
/// ellipticity bounds `λ ≤ σ² ≤ κ` checked on that domain.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    sigma: Sigma,
    drift: Drift,
    x: f64,
    radius: f64,
    lambda: f64,
    kappa: f64,
    lamperti: Arc<LampertiMap>,
}

impl DiffusionModel {
    pub fn new(sigma: Sigma, drift: Drift, x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::invalid(format!("start point must be finite, got {x}")));
        }
        let q = Quad::new(1e-15, 1e-14);
        let mut radius = 8.0f64;
        let reach = |r: f64| -> Result<(f64, f64)> {
            let up = q.gk(|z| 1.0 / sigma.eval(z), x, x + r)?.value;
            let down = q.gk(|z| 1.0 / sigma.eval(z), x - r, x)?.value;
            Ok((up, down))
        };
        loop {
            // quick floor check before integrating 1/σ over a larger range
            check_sigma_grid(&sigma, x - radius, x + radius, 0.0)?;
            let (up, down) = reach(radius)?;
            if up >= LAMPERTI_REACH && down >= LAMPERTI_REACH {
                break;
            }
            radius *= 2.0;
            if radius > MAX_RADIUS {
                return Err(Error::Ellipticity(format!(
                    "1/σ is not integrable far enough: Lamperti image stays below {LAMPERTI_REACH}"
                )));
            }
        }
        let (lambda, kappa) = check_sigma_grid(&sigma, x - radius, x + radius, 0.0)?;
        let lamperti = Arc::new(LampertiMap::build(&sigma, x, radius)?);
        Ok(Self { sigma, drift, x, radius, lambda, kappa, lamperti })
    }

    pub fn stratonovich(sigma: Sigma, x: f64) -> Result<Self> {
        Self::new(sigma, Drift::StratonovichSymmetric, x)
    }

    /// Rejects the model unless `σ² ≥ lambda` on the working domain.
    pub fn require_ellipticity(self, lambda: f64) -> Result<Self> {
        if self.lambda < lambda {
            return Err(Error::Ellipticity(format!(
                "min σ² = {} on [{}, {}] is below the floor {lambda}",
                self.lambda,
                self.x - self.radius,
                self.x + self.radius
            )));
        }
        Ok(self)
    }

    /// Same σ and drift started from `x`.
    pub fn with_start(&self, x: f64) -> Result<Self> {
        Self::new(self.sigma.clone(), self.drift.clone(), x)
    }

    pub fn sigma(&self) -> &Sigma {
        &self.sigma
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    pub fn start(&self) -> f64 {
        self.x
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x - self.radius, self.x + self.radius)
    }

    /// `(λ, κ)`: min and max of σ² over the working domain grid.
    pub fn ellipticity(&self) -> (f64, f64) {
        (self.lambda, self.kappa)
    }

    pub fn is_stratonovich_symmetric(&self) -> bool {
        matches!(self.drift, Drift::StratonovichSymmetric)
    }

    pub fn sigma_at(&self, z: f64) -> f64 {
        self.sigma.eval(z)
    }

    /// Itô drift `b(z)`.
    pub fn drift_at(&self, z: f64) -> f64 {
        match &self.drift {
            Drift::StratonovichSymmetric => 0.5 * self.sigma.eval(z) * self.sigma.derivative(z),
            Drift::Constant(b) => *b,
            Drift::Custom { b, .. } => b(z),
        }
    }

    pub fn lamperti(&self) -> &LampertiMap {
        &self.lamperti
    }

    /// The point `e^{uA}(x)`: solution of `dφ/du = σ(φ)`, `φ(0) = x`.
    pub fn flow(&self, u: f64) -> Result<f64> {
        flow_from(&self.sigma, self.x, u)
    }

    /// `Aⁿ_x p_t(x, a) = t^{-(n+1)/2} H_n(ψ(a)/√t) φ(ψ(a)/√t) / σ(a)`.
    pub fn kv_kernel(&self, n: usize, t: f64, a: f64) -> Result<f64> {
        self.require_symmetric("Krylov-Veretennikov kernel")?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::invalid(format!("time must be positive, got {t}")));
        }
        let v = self.lamperti.psi(a)? / t.sqrt();
        Ok(t.powf(-0.5 * (n as f64 + 1.0)) * hermite_eval(n, v)? * normal_pdf(v) / self.sigma.eval(a))
    }

    /// Transition density `p_t(x, a)`.
    pub fn transition_density(&self, t: f64, a: f64) -> Result<f64> {
        self.kv_kernel(0, t, a)
    }

    /// Transition density from another start point `z`, through `ψ_z = ψ - ψ(z)`.
    pub fn transition_density_from(&self, z: f64, t: f64, a: f64) -> Result<f64> {
        self.require_symmetric("transition density")?;
        if !(t > 0.0) {
            return Err(Error::invalid(format!("time must be positive, got {t}")));
        }
        let v = (self.lamperti.psi(a)? - self.lamperti.psi(z)?) / t.sqrt();
        Ok(normal_pdf(v) / (t.sqrt() * self.sigma.eval(a)))
    }

    fn require_symmetric(&self, what: &str) -> Result<()> {
        if self.is_stratonovich_symmetric() {
            Ok(())
        } else {
            Err(Error::Unsupported(format!("{what} needs the Stratonovich-symmetric drift, model has {}", self.drift)))
        }
    }

    pub fn scale_speed(&self) -> Result<ScaleSpeed> {
        ScaleSpeed::build(self)
    }

    pub fn fundamental_solution(&self, y: f64) -> Result<FundamentalSolution> {
        let ss = Arc::new(self.scale_speed()?);
        FundamentalSolution::new(ss, y)
    }
}

fn check_sigma_grid(sigma: &Sigma, lo: f64, hi: f64, floor: f64) -> Result<(f64, f64)> {
    let mut lambda = f64::INFINITY;
    let mut kappa = 0.0f64;
    for i in 0..ELLIPTICITY_GRID {
        let z = lo + (hi - lo) * i as f64 / (ELLIPTICITY_GRID - 1) as f64;
        let s = sigma.eval(z);
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Ellipticity(format!("σ({z}) = {s} is not positive")));
        }
        lambda = lambda.min(s * s);
        kappa = kappa.max(s * s);
    }
    if lambda <= floor {
        return Err(Error::Ellipticity(format!("min σ² = {lambda} not above {floor}")));
    }
    Ok((lambda, kappa))
}

fn flow_from(sigma: &Sigma, x: f64, u: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::invalid(format!("flow time must be finite, got {u}")));
    }
    DormandPrince::default().solve(|_, y| sigma.eval(y), 0.0, x, u)
}

/// `ψ(a) = ∫_x^a dz/σ(z)` from a table of checkpoints plus a short
/// Gauss-Kronrod remainder; inverse by safeguarded Newton.
#[derive(Debug, Clone)]
pub struct LampertiMap {
    sigma: Sigma,
    x: f64,
    zs: Vec<f64>,
    psis: Vec<f64>,
    quad: Quad,
    round_trip_error: f64,
}

impl LampertiMap {
    fn build(sigma: &Sigma, x: f64, radius: f64) -> Result<Self> {
        let quad = Quad::new(1e-15, 2e-15);
        // offsets: uniform 0.5 near x, then geometric
        let mut offsets = vec![0.0];
        let mut d = 0.0f64;
        while d < radius {
            d = if d < 20.0 { d + 0.5 } else { d * 1.1 };
            offsets.push(d.min(radius));
        }
        let mut zs: Vec<f64> = offsets.iter().rev().map(|o| x - o).collect();
        zs.extend(offsets.iter().skip(1).map(|o| x + o));
        let centre = offsets.len() - 1;
        let mut psis = vec![0.0; zs.len()];
        for i in centre + 1..zs.len() {
            psis[i] = psis[i - 1] + quad.gk(|z| 1.0 / sigma.eval(z), zs[i - 1], zs[i])?.value;
        }
        for i in (0..centre).rev() {
            psis[i] = psis[i + 1] - quad.gk(|z| 1.0 / sigma.eval(z), zs[i], zs[i + 1])?.value;
        }
        if psis.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Ellipticity("numerical Lamperti map is not strictly increasing".into()));
        }
        let mut map = Self { sigma: sigma.clone(), x, zs, psis, quad, round_trip_error: 0.0 };
        let mut worst = 0.0f64;
        for k in -40..=40 {
            let u = k as f64 * 0.25;
            let back = map.psi(map.psi_inv(u)?)?;
            worst = worst.max((back - u).abs());
        }
        map.round_trip_error = worst;
        Ok(map)
    }

    pub fn start(&self) -> f64 {
        self.x
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.zs[0], self.zs[self.zs.len() - 1])
    }

    /// `(ψ(lo), ψ(hi))` over the working domain.
    pub fn image(&self) -> (f64, f64) {
        (self.psis[0], self.psis[self.psis.len() - 1])
    }

    /// Largest `|ψ(ψ⁻¹(u)) - u|` seen on the grid `u ∈ [-10, 10]` at construction.
    pub fn round_trip_error(&self) -> f64 {
        self.round_trip_error
    }

    pub fn psi(&self, a: f64) -> Result<f64> {
        if !a.is_finite() {
            return Err(Error::invalid(format!("Lamperti argument must be finite, got {a}")));
        }
        let i = self.zs.partition_point(|&z| z <= a).saturating_sub(1);
        let r = self.quad.gk(|z| 1.0 / self.sigma.eval(z), self.zs[i], a)?;
        Ok(self.psis[i] + r.value)
    }

    /// `dψ/da = 1/σ(a)`.
    pub fn psi_derivative(&self, a: f64) -> f64 {
        1.0 / self.sigma.eval(a)
    }

    pub fn psi_inv(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::invalid(format!("inverse Lamperti argument must be finite, got {u}")));
        }
        let n = self.psis.len();
        if u <= self.psis[0] || u >= self.psis[n - 1] {
            // outside the table: start from the flow, which is the exact inverse
            let (z0, p0) = if u <= self.psis[0] { (self.zs[0], self.psis[0]) } else { (self.zs[n - 1], self.psis[n - 1]) };
            let z = flow_from(&self.sigma, z0, u - p0)?;
            return self.newton(u, z, z.min(z0) - 1.0, z.max(z0) + 1.0);
        }
        let i = self.psis.partition_point(|&p| p <= u) - 1;
        let (lo, hi) = (self.zs[i], self.zs[i + 1]);
        let frac = (u - self.psis[i]) / (self.psis[i + 1] - self.psis[i]);
        self.newton(u, lo + frac * (hi - lo), lo, hi)
    }

    fn newton(&self, u: f64, mut z: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
        for _ in 0..100 {
            let f = self.psi(z)? - u;
            if f == 0.0 {
                return Ok(z);
            }
            if f > 0.0 {
                hi = hi.min(z);
            } else {
                lo = lo.max(z);
            }
            let mut next = z - f * self.sigma.eval(z);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - z).abs() <= 1e-15 * z.abs().max(1.0) {
                return Ok(next);
            }
            z = next;
        }
        Err(Error::no_conv("inverse Lamperti map", (self.psi(z)? - u).abs()))
    }
}

/// Scale density `s′(z) = exp(-∫_0^z 2b/σ²)`, scale `s(z) = ∫_0^z s′` and
/// speed density `m′ = 2/(σ² s′)`, from checkpoint tables on `[-R, R]`.
#[derive(Debug, Clone)]
pub struct ScaleSpeed {
    model: DiffusionModel,
    zs: Vec<f64>,
    /// `∫_0^z 2b/σ²` at the checkpoints.
    expo: Vec<f64>,
    /// `s(z)` at the checkpoints.
    scale: Vec<f64>,
    quad: Quad,
}

const SCALE_SPACING: f64 = 0.25;
const SCALE_RADIUS: f64 = 20.0;

impl ScaleSpeed {
    fn build(model: &DiffusionModel) -> Result<Self> {
        let quad = Quad::new(1e-15, 2e-15);
        let m = (SCALE_RADIUS / SCALE_SPACING) as i64;
        let zs: Vec<f64> = (-m..=m).map(|k| k as f64 * SCALE_SPACING).collect();
        let centre = m as usize;
        let g = |z: f64| 2.0 * model.drift_at(z) / model.sigma_at(z).powi(2);
        let mut expo = vec![0.0; zs.len()];
        for i in centre + 1..zs.len() {
            expo[i] = expo[i - 1] + quad.gk(g, zs[i - 1], zs[i])?.value;
        }
        for i in (0..centre).rev() {
            expo[i] = expo[i + 1] - quad.gk(g, zs[i], zs[i + 1])?.value;
        }
        let mut out = Self { model: model.clone(), zs, expo, scale: Vec::new(), quad };
        let mut scale = vec![0.0; out.zs.len()];
        for i in centre + 1..out.zs.len() {
            scale[i] = scale[i - 1] + out.integrate_density(out.zs[i - 1], out.zs[i], i - 1)?;
        }
        for i in (0..centre).rev() {
            scale[i] = scale[i + 1] - out.integrate_density(out.zs[i], out.zs[i + 1], i)?;
        }
        out.scale = scale;
        Ok(out)
    }

    fn integrate_density(&self, a: f64, b: f64, anchor: usize) -> Result<f64> {
        let z0 = self.zs[anchor];
        let e0 = self.expo[anchor];
        let g = |z: f64| 2.0 * self.model.drift_at(z) / self.model.sigma_at(z).powi(2);
        Ok(self
            .quad
            .gk(
                |z| {
                    let inner = self.quad.gk(g, z0, z).map(|r| r.value).unwrap_or(f64::NAN);
                    (-(e0 + inner)).exp()
                },
                a,
                b,
            )?
            .value)
    }

    fn anchor(&self, z: f64) -> usize {
        self.zs.partition_point(|&v| v <= z).saturating_sub(1).min(self.zs.len() - 2)
    }

    /// `∫_0^z 2b/σ²`; for the symmetric drift `b = σσ′/2` this is `ln σ(z)/σ(0)`.
    pub fn exponent(&self, z: f64) -> Result<f64> {
        if self.model.is_stratonovich_symmetric() {
            return Ok((self.model.sigma_at(z) / self.model.sigma_at(0.0)).ln());
        }
        let i = self.anchor(z);
        let g = |v: f64| 2.0 * self.model.drift_at(v) / self.model.sigma_at(v).powi(2);
        Ok(self.expo[i] + self.quad.gk(g, self.zs[i], z)?.value)
    }

    pub fn scale_density(&self, z: f64) -> Result<f64> {
        Ok((-self.exponent(z)?).exp())
    }

    pub fn scale(&self, z: f64) -> Result<f64> {
        if self.model.is_stratonovich_symmetric() {
            let lam = self.model.lamperti();
            return Ok(self.model.sigma_at(0.0) * (lam.psi(z)? - lam.psi(0.0)?));
        }
        let i = self.anchor(z);
        let (a, b) = if z >= self.zs[i] { (self.zs[i], z) } else { (z, self.zs[i]) };
        let part = self.integrate_density(a, b, i)?;
        Ok(self.scale[i] + if z >= self.zs[i] { part } else { -part })
    }

    pub fn speed_density(&self, z: f64) -> Result<f64> {
        Ok(2.0 / (self.model.sigma_at(z).powi(2) * self.scale_density(z)?))
    }

    pub fn model(&self) -> &DiffusionModel {
        &self.model
    }
}

/// `u(z) = m′(y)/2 · |s(z) - s(y)|`, solving `Lu = δ_y`, and
/// `Au(z) = sgn(z-y) exp(-∫_y^z 2b/σ²) σ(z)/σ(y)²`.
///
/// At the kink `z = y`, `u` is 0 and `Au` returns its right limit `1/σ(y)`.
#[derive(Debug, Clone)]
pub struct FundamentalSolution {
    ss: Arc<ScaleSpeed>,
    y: f64,
    half_speed: f64,
    scale_y: f64,
    expo_y: f64,
}

impl FundamentalSolution {
    fn new(ss: Arc<ScaleSpeed>, y: f64) -> Result<Self> {
        if !y.is_finite() {
            return Err(Error::invalid("level y must be finite"));
        }
        Ok(Self {
            half_speed: 0.5 * ss.speed_density(y)?,
            scale_y: ss.scale(y)?,
            expo_y: ss.exponent(y)?,
            ss,
            y,
        })
    }

    pub fn level(&self) -> f64 {
        self.y
    }

    pub fn u(&self, z: f64) -> Result<f64> {
        if z == self.y {
            return Ok(0.0);
        }
        Ok(self.half_speed * (self.ss.scale(z)? - self.scale_y).abs())
    }

    pub fn au(&self, z: f64) -> Result<f64> {
        let sign = if z >= self.y { 1.0 } else { -1.0 };
        let m = &self.ss.model;
        let sy = m.sigma_at(self.y);
        Ok(sign * (-(self.ss.exponent(z)? - self.expo_y)).exp() * m.sigma_at(z) / (sy * sy))
    }
}

/// `(1-Δ)^{s/2} δ_y (x) = Γ(-s/2)^{-1} ∫_0^∞ t^{-s/2-1} e^{-t} p_t(x,y) dt` with
/// `p_t = (4πt)^{-1/2} exp(-|x-y|²/4t)`, for `-1 < s < 0`.
pub fn bessel_delta_kernel(s: f64, y: f64, x: f64) -> Result<f64> {
    if !(s > -1.0 && s < 0.0) {
        return Err(Error::invalid(format!("index must lie in (-1, 0), got {s}")));
    }
    let r = (x - y).abs();
    if r == 0.0 {
        return Err(Error::invalid("kernel is singular at x = y"));
    }
    if !r.is_finite() {
        return Err(Error::invalid("points must be finite"));
    }
    Ok(bessel_time_integral(s, r)? / gamma_fn(-0.5 * s))
}

/// `∫_0^∞ t^{-s/2-1} e^{-t} p_t(r) dt` by quadrature in `log t`.
fn bessel_time_integral(s: f64, r: f64) -> Result<f64> {
    let quad = Quad::new(1e-300, 1e-13);
    let g = |tau: f64| {
        let t = tau.exp();
        (t.ln() * (-0.5 * s - 0.5) - t - r * r / (4.0 * t)).exp() / (4.0 * PI).sqrt()
    };
    // the integrand peaks near t ≈ r/2 for small r and decays like exp(-e^τ) on the right
    let lo = (r * r).ln() - 8.0;
    let peak = (0.5 * r).max(1e-300).ln();
    let hi = 4.2f64.max(peak + 4.0);
    let mut pts = vec![lo];
    if peak > lo && peak < hi {
        pts.push(peak);
    }
    pts.push(hi);
    Ok(quad.gk_points(g, &pts)?.value)
}

/// Closed form `2 (r/2)^ν K_ν(r) / (Γ(-s/2) √(4π))`, `ν = -(s+1)/2`, with
/// `K_ν(r) = ∫_0^∞ exp(-r cosh u) cosh(νu) du` by quadrature.
pub fn bessel_delta_kernel_closed_form(s: f64, r: f64) -> Result<f64> {
    if !(s > -1.0 && s < 0.0 && r > 0.0) {
        return Err(Error::invalid("need -1 < s < 0 and r > 0"));
    }
    let nu = -0.5 * (s + 1.0);
    Ok(2.0 * (0.5 * r).powf(nu) * bessel_k(nu, r)? / (gamma_fn(-0.5 * s) * (4.0 * PI).sqrt()))
}

/// Modified Bessel function of the second kind by its integral representation.
pub fn bessel_k(nu: f64, r: f64) -> Result<f64> {
    let quad = Quad::new(1e-300, 1e-14);
    // scale out e^{-r} so small and large r both keep relative accuracy
    let f = |u: f64| (-r * (u.cosh() - 1.0)).exp() * (nu * u).cosh();
    // r (cosh u - 1) exceeds 800 beyond this point
    let upper = (1600.0 / r + 2.0).ln() + 1.0;
    Ok((-r).exp() * quad.gk(f, 0.0, upper)?.value)
}

/// Slope of `ln kernel` against `ln |x-y|` over `r ∈ [r_lo, r_hi]`; the
/// short-distance law is `r^{-(1+s)}`.
pub fn bessel_power_law_exponent(s: f64, r_lo: f64, r_hi: f64) -> Result<f64> {
    let a = bessel_delta_kernel(s, 0.0, r_lo)?;
    let b = bessel_delta_kernel(s, 0.0, r_hi)?;
    Ok((b.ln() - a.ln()) / (r_hi.ln() - r_lo.ln()))
}

/// `∫_{δ ≤ |x-y| ≤ 40} |kernel|^p dx` for a decreasing sequence of cut-offs.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LpTrend {
    pub s: f64,
    pub p: f64,
    pub cutoffs: Vec<f64>,
    pub integrals: Vec<f64>,
    /// Growth of the integral between successive cut-offs.
    pub increments: Vec<f64>,
    /// Ratios of successive increments: below one means a convergent trend.
    pub ratios: Vec<f64>,
    pub finite_trend: bool,
}

pub const LP_OUTER_RADIUS: f64 = 40.0;

pub fn bessel_lp_trend(s: f64, p: f64, cutoffs: &[f64]) -> Result<LpTrend> {
    if cutoffs.len() < 3 || cutoffs.windows(2).any(|w| !(w[1] < w[0] && w[1] > 0.0)) {
        return Err(Error::invalid("need at least three positive, strictly decreasing cut-offs"));
    }
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("p must be at least 1, got {p}")));
    }
    let quad = Quad::new(1e-300, 1e-10);
    let mut fail = None;
    let mut piece = |a: f64, b: f64| -> f64 {
        let r = quad.gk(
            |rho: f64| {
                let r = rho.exp();
                match bessel_delta_kernel(s, 0.0, r) {
                    Ok(k) => 2.0 * k.abs().powf(p) * r,
                    Err(e) => {
                        fail.get_or_insert(e);
                        0.0
                    }
                }
            },
            a.ln(),
            b.ln(),
        );
        r.map(|r| r.value).unwrap_or(f64::NAN)
    };
    let mut integrals = Vec::with_capacity(cutoffs.len());
    let mut acc = piece(cutoffs[0], LP_OUTER_RADIUS);
    integrals.push(acc);
    for w in cutoffs.windows(2) {
        acc += piece(w[1], w[0]);
        integrals.push(acc);
    }
    if let Some(e) = fail {
        return Err(e);
    }
    let increments: Vec<f64> = integrals.windows(2).map(|w| w[1] - w[0]).collect();
    let ratios: Vec<f64> = increments.windows(2).map(|w| w[1] / w[0]).collect();
    let finite_trend = ratios.iter().all(|&q| q < 1.0);
    Ok(LpTrend { s, p, cutoffs: cutoffs.to_vec(), integrals, increments, ratios, finite_trend })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(s: &str, x: f64) -> DiffusionModel {
        DiffusionModel::stratonovich(s.parse().unwrap(), x).unwrap()
    }

    #[test]
    fn lamperti_examples() {
        let m = model("unit", 0.0);
        for &z in &[-3.0, 0.0, 2.5] {
            assert!((m.lamperti().psi(z).unwrap() - z).abs() < 1e-14);
        }
        let m = model("sqrt1pz2", 0.0);
        let mut worst = 0.0f64;
        for k in 0..=100 {
            let z = -5.0 + 0.1 * k as f64;
            worst = worst.max((m.lamperti().psi(z).unwrap() - z.asinh()).abs());
        }
        assert!(worst < 1e-9, "{worst}");
        let m = model("const:2", 1.0);
        assert!((m.lamperti().psi(3.0).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(m.lamperti().psi(1.0).unwrap(), 0.0);
    }

    #[test]
    fn lamperti_round_trip() {
        for s in ["unit", "sqrt1pz2", "sin2"] {
            let m = model(s, 0.3);
            assert!(m.lamperti().round_trip_error() < 1e-12, "{s}");
            for &u in &[-11.0, -2.0, 0.0, 0.7, 13.0] {
                let z = m.lamperti().psi_inv(u).unwrap();
                assert!((m.lamperti().psi(z).unwrap() - u).abs() < 1e-10, "{s} u={u}");
            }
        }
    }

    #[test]
    fn flow_examples() {
        let m = model("unit", 0.4);
        assert!((m.flow(1.3).unwrap() - 1.7).abs() < 1e-13);
        let m = model("sqrt1pz2", 0.0);
        for k in 0..=12 {
            let u = -3.0 + 0.5 * k as f64;
            assert!((m.flow(u).unwrap() - u.sinh()).abs() < 1e-9);
        }
        let m = model("sin2", 0.2);
        let a = m.flow(0.7).unwrap();
        let b = m.with_start(a).unwrap().flow(-1.1).unwrap();
        assert!((b - m.flow(-0.4).unwrap()).abs() < 1e-9);
        assert!((m.lamperti().psi(m.flow(0.9).unwrap()).unwrap() - 0.9).abs() < 1e-9);
    }

    #[test]
    fn ellipticity_rejection() {
        assert!(DiffusionModel::stratonovich(Sigma::Constant(0.0), 0.0).is_err());
        let t = Sigma::Tabulated {
            source: "mem".into(),
            table: Arc::new(MonotoneCubic::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.1]).unwrap()),
        };
        assert!(DiffusionModel::stratonovich(t, 0.0).is_err());
        let m = model("sin2", 0.0);
        let (l, k) = m.ellipticity();
        assert!((l - 1.0).abs() < 1e-4 && (k - 9.0).abs() < 1e-4);
        assert!(m.clone().require_ellipticity(0.9).is_ok());
        assert!(m.require_ellipticity(1.5).is_err());
    }

    #[test]
    fn gaussian_kernel_for_unit_sigma() {
        let m = model("unit", 0.5);
        for n in 0..5 {
            for &a in &[-1.0, 0.2, 1.7] {
                let t: f64 = 0.3;
                let v = (a - 0.5) / t.sqrt();
                let direct = t.powf(-0.5 * (n as f64 + 1.0)) * hermite_eval(n, v).unwrap() * normal_pdf(v);
                assert!((m.kv_kernel(n, t, a).unwrap() - direct).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn density_normalization() {
        for s in ["unit", "sqrt1pz2", "sin2"] {
            let m = model(s, 0.1);
            for &t in &[0.1f64, 0.5, 1.0] {
                let pts: Vec<f64> = (-9..=9).map(|k| m.lamperti().psi_inv(k as f64 * t.sqrt()).unwrap()).collect();
                let q = Quad::new(1e-15, 1e-13);
                let total = q.gk_points(|a| m.transition_density(t, a).unwrap(), &pts).unwrap().value;
                assert!((total - 1.0).abs() < 1e-8, "{s} t={t}: {total}");
            }
        }
    }

    #[test]
    fn chapman_kolmogorov() {
        let m = model("sin2", 0.0);
        let (s, t) = (0.3, 0.4);
        let q = Quad::new(1e-14, 1e-12);
        let pts: Vec<f64> = (-9..=9).map(|k| m.lamperti().psi_inv(k as f64 * 0.6).unwrap()).collect();
        for &a in &[-0.8, 0.1, 1.4] {
            let lhs = q
                .gk_points(
                    |z| m.transition_density(s, z).unwrap() * m.transition_density_from(z, t, a).unwrap(),
                    &pts,
                )
                .unwrap()
                .value;
            let rhs = m.transition_density(s + t, a).unwrap();
            assert!((lhs - rhs).abs() < 1e-6 * rhs.max(1e-3), "a={a}");
        }
    }

    #[test]
    fn kv_rejects_general_drift() {
        let m = DiffusionModel::new(Sigma::Unit, Drift::Constant(1.0), 0.0).unwrap();
        assert!(m.kv_kernel(1, 1.0, 0.0).is_err());
        assert!(model("unit", 0.0).kv_kernel(1, 0.0, 0.0).is_err());
    }

    #[test]
    fn scale_speed_examples() {
        let ss = DiffusionModel::new(Sigma::Unit, Drift::Constant(0.0), 0.0).unwrap().scale_speed().unwrap();
        for &z in &[-2.0, 0.3, 4.1] {
            assert!((ss.scale(z).unwrap() - z).abs() < 1e-13);
            assert!((ss.speed_density(z).unwrap() - 2.0).abs() < 1e-14);
        }
        let ss = DiffusionModel::new(Sigma::Unit, Drift::Constant(1.0), 0.0).unwrap().scale_speed().unwrap();
        for &z in &[-1.5, 0.0, 0.8, 3.0] {
            assert!((ss.scale_density(z).unwrap() - (-2.0 * z).exp()).abs() < 1e-12 * (-2.0 * z).exp());
            let s_exact = (1.0 - (-2.0 * z).exp()) / 2.0;
            assert!((ss.scale(z).unwrap() - s_exact).abs() < 1e-11 * s_exact.abs().max(1.0));
        }
        let m = model("sqrt1pz2", 0.0);
        let ss = m.scale_speed().unwrap();
        for &z in &[-4.0, -0.5, 0.0, 1.3, 7.0] {
            let v = ss.scale_density(z).unwrap() * m.sigma_at(z);
            assert!((v - 1.0).abs() < 1e-8, "z={z}");
        }
    }

    #[test]
    fn fundamental_solution_examples() {
        let m = DiffusionModel::new(Sigma::Unit, Drift::Constant(0.0), 0.0).unwrap();
        let f = m.fundamental_solution(0.0).unwrap();
        for &z in &[-1.3, 0.4, 2.0] {
            assert!((f.u(z).unwrap() - z.abs()).abs() < 1e-13);
            assert_eq!(f.au(z).unwrap(), z.signum());
        }
        assert_eq!(f.u(0.0).unwrap(), 0.0);
        assert_eq!(f.au(0.0).unwrap(), 1.0);
        let m = DiffusionModel::new(Sigma::Unit, Drift::Constant(1.0), 0.0).unwrap();
        let f = m.fundamental_solution(0.0).unwrap();
        for &z in &[-0.7f64, 0.5, 1.9] {
            let s: f64 = (1.0 - (-2.0 * z).exp()) / 2.0;
            assert!((f.u(z).unwrap() - s.abs()).abs() < 1e-9);
        }
        for s in ["sin2", "sqrt1pz2"] {
            let m = model(s, 0.0);
            let f = m.fundamental_solution(0.35).unwrap();
            assert_eq!(f.u(0.35).unwrap(), 0.0);
            // Au = σ u′ by finite differences
            let h = 1e-5;
            for &z in &[-1.0, 0.9, 2.2] {
                let fd = (f.u(z + h).unwrap() - f.u(z - h).unwrap()) / (2.0 * h) * m.sigma_at(z);
                assert!((fd - f.au(z).unwrap()).abs() < 1e-7, "{s} z={z}");
            }
        }
    }

    #[test]
    fn bessel_kernel_matches_closed_form() {
        for &s in &[-0.9, -0.5, -0.1] {
            for &r in &[1e-4, 0.05, 0.7, 3.0, 12.0] {
                let a = bessel_delta_kernel(s, 0.0, r).unwrap();
                let b = bessel_delta_kernel_closed_form(s, r).unwrap();
                assert!((a - b).abs() < 1e-10 * b.abs(), "s={s} r={r}: {a} vs {b}");
            }
        }
        assert_eq!(bessel_delta_kernel(-0.5, 0.3, 1.1).unwrap(), bessel_delta_kernel(-0.5, 1.1, 0.3).unwrap());
        assert!(bessel_delta_kernel(-0.5, 0.0, 0.0).is_err());
        assert!(bessel_delta_kernel(0.2, 0.0, 1.0).is_err());
    }

    #[test]
    fn bessel_kernel_small_s_limit() {
        // Γ(-s/2)·kernel → e^{-r}/r as s → 0⁻
        let r: f64 = 0.8;
        let f = |s: f64| bessel_delta_kernel(s, 0.0, r).unwrap() * gamma_fn(-0.5 * s);
        let (s1, s2) = (-2e-3, -1e-3);
        let extrap = 2.0 * f(s2) - f(s1);
        assert!((extrap - (-r).exp() / r).abs() < 1e-6);
    }

    #[test]
    fn bessel_short_distance_power_law() {
        let e = bessel_power_law_exponent(-0.5, 1e-7, 1e-5).unwrap();
        assert!((e + 0.5).abs() < 1e-3, "{e}");
    }
}
