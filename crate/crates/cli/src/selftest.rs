//! `--selftest`: the closed-form examples of the module behind each
//! subcommand, each checked against its exact value.

use std::f64::consts::PI;

use chaoslab::chaos::{expand, scaled_norm_identity, sobolev_norm, ChaosVector, SobolevIndex};
use chaoslab::diffusion::{bessel_delta_kernel, DiffusionModel, Drift, Sigma};
use chaoslab::distcat::{mollified_eval, pair_gaussian, DistributionSpec};
use chaoslab::hermite::{gauss_hermite_rule, hermite_eval, hermite_zero_value};
use chaoslab::localtime::{density_holder_check, holder_difference_norm, iterated_integral_l2, local_time_chaos_norm};
use chaoslab::mcverify::{
    local_time_mean, pairing_lhs, pairing_rhs, simulate, EpsSchedule, TestFunctional, TimeGrid,
};
use chaoslab::Result;

/// Outcome of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn close(name: &'static str, got: Result<f64>, want: f64, tol: f64) -> Check {
    match got {
        Ok(v) => Check { name, pass: (v - want).abs() <= tol, detail: format!("got {v:e}, want {want:e} ± {tol:e}") },
        Err(e) => Check { name, pass: false, detail: e.to_string() },
    }
}

fn holds(name: &'static str, got: Result<bool>, detail: &str) -> Check {
    match got {
        Ok(pass) => Check { name, pass, detail: detail.into() },
        Err(e) => Check { name, pass: false, detail: e.to_string() },
    }
}

fn phi0() -> f64 {
    1.0 / (2.0 * PI).sqrt()
}

fn hermite() -> Vec<Check> {
    vec![
        close("H_0(3.7) = 1", hermite_eval(0, 3.7), 1.0, 0.0),
        close("H_3(2) = 2", hermite_eval(3, 2.0), 2.0, 1e-15),
        close("H_1(0) = 0", Ok(hermite_zero_value(1)), 0.0, 0.0),
        close("H_2(0) = -1", Ok(hermite_zero_value(2)), -1.0, 0.0),
        holds(
            "one-node rule is the mean",
            gauss_hermite_rule(1).map(|r| r.nodes == [0.0] && (r.weights[0] - 1.0).abs() < 1e-15),
            "node 0, weight 1",
        ),
        close("five-node rule integrates x^2", gauss_hermite_rule(5).map(|r| r.expect(|x| x * x)), 1.0, 1e-14),
    ]
}

fn distcat() -> Vec<Check> {
    let delta = DistributionSpec::delta(0.0);
    let eps = 0.1;
    vec![
        close("<delta_0, H_2 phi> = -phi(0)", pair_gaussian(&delta, 1.0, 2), -phi0(), 1e-15),
        close("<pv 1/x, x phi> = 1", pair_gaussian(&DistributionSpec::PrincipalValueRecip, 1.0, 1), 1.0, 1e-10),
        close("mollified delta peak", mollified_eval(&delta, eps, 0.0), phi0() / eps, 1e-12),
        close("mollified Heaviside total mass", mollified_eval(&DistributionSpec::heaviside(0.0), eps, -1e3), 1.0, 1e-15),
    ]
}

fn chaos() -> Vec<Check> {
    let mut out = distcat();
    let p = phi0();
    let want = [p, 0.0, -p, 0.0, 3.0 * p];
    out.push(holds(
        "delta_0 pairings (phi, 0, -phi, 0, 3 phi)",
        expand(&DistributionSpec::delta(0.0), 1.0, 1.0, 4)
            .map(|v| (0..=4).all(|n| (v.pairing(n) - want[n]).abs() <= 1e-14)),
        "n = 0..4",
    ));
    out.push(close(
        "zero vector has norm 0",
        SobolevIndex::new(-0.3).and_then(|s| sobolev_norm(&ChaosVector::zero(10), s)).map(|n| n.value),
        0.0,
        0.0,
    ));
    out.push(close(
        "a_0 = 1 only has norm 1 at s = 7",
        ChaosVector::from_normalized("const", 1.0, vec![1.0, 0.0, 0.0], vec![0.0; 3])
            .and_then(|v| sobolev_norm(&v, SobolevIndex::new(7.0)?))
            .map(|n| n.value),
        1.0,
        1e-15,
    ));
    out.push(close(
        "scaled identity at t = T",
        scaled_norm_identity(&DistributionSpec::heaviside(0.0), 1.0, 1.0, -0.3, 50).map(|p| p.ratio()),
        1.0,
        1e-14,
    ));
    out
}

fn diffusion() -> Vec<Check> {
    let unit = |x| DiffusionModel::stratonovich(Sigma::Unit, x);
    let drift = |b| DiffusionModel::new(Sigma::Unit, Drift::Constant(b), 0.0);
    let t = 0.7;
    vec![
        close("sigma = 1: psi(z) = z", unit(0.0).and_then(|m| m.lamperti().psi(1.3)), 1.3, 1e-12),
        close(
            "sigma = 2, x = 1: psi(3) = 1",
            DiffusionModel::stratonovich(Sigma::Constant(2.0), 1.0).and_then(|m| m.lamperti().psi(3.0)),
            1.0,
            1e-12,
        ),
        close("sigma = 1: flow(u) = x + u", unit(0.4).and_then(|m| m.flow(1.1)), 1.5, 1e-9),
        holds(
            "flow semigroup law",
            DiffusionModel::stratonovich(Sigma::Sqrt1pZ2, 0.2).and_then(|m| {
                let mid = m.flow(0.6)?;
                Ok((m.with_start(mid)?.flow(0.5)? - m.flow(1.1)?).abs() <= 1e-9)
            }),
            "flow(0.6) then 0.5 vs flow(1.1)",
        ),
        close(
            "sigma = 1, n = 0: Gaussian density",
            unit(0.0).and_then(|m| m.kv_kernel(0, t, 0.5)),
            (-0.25 / (2.0 * t)).exp() / (2.0 * PI * t).sqrt(),
            1e-14,
        ),
        holds(
            "b = 0: s(x) = x and m' = 2",
            unit(0.0).and_then(|m| m.scale_speed()).and_then(|ss| {
                Ok((ss.scale(0.8)? - 0.8).abs() < 1e-12 && (ss.speed_density(-0.3)? - 2.0).abs() < 1e-12)
            }),
            "at x = 0.8 and -0.3",
        ),
        close("b = 1: s'(x) = exp(-2x)", drift(1.0).and_then(|m| m.scale_speed()?.scale_density(0.6)), (-1.2f64).exp(), 1e-10),
        holds(
            "Tanaka: u = |z|, Au = sgn z",
            unit(0.0).and_then(|m| m.fundamental_solution(0.0)).and_then(|fs| {
                Ok((fs.u(-0.7)? - 0.7).abs() < 1e-12 && (fs.au(-0.7)? + 1.0).abs() < 1e-12 && (fs.au(0.4)? - 1.0).abs() < 1e-12)
            }),
            "at z = -0.7 and 0.4",
        ),
        close(
            "u(y) = 0",
            DiffusionModel::stratonovich(Sigma::Sqrt1pZ2, 0.0).and_then(|m| m.fundamental_solution(0.3)?.u(0.3)),
            0.0,
            1e-14,
        ),
        holds(
            "Bessel kernel is symmetric",
            bessel_delta_kernel(-0.5, 0.2, 0.9)
                .and_then(|a| Ok((a - bessel_delta_kernel(-0.5, 0.9, 0.2)?).abs() <= 1e-14 * a.abs())),
            "(y, x) = (0.2, 0.9)",
        ),
    ]
}

fn catalog(sigma: Sigma) -> DiffusionModel {
    DiffusionModel::stratonovich(sigma, 0.0).expect("catalog models are valid")
}

fn localtime() -> Vec<Check> {
    let unit = catalog(Sigma::Unit);
    let sqrt = catalog(Sigma::Sqrt1pZ2);
    vec![
        close("n = 0, t = 1", iterated_integral_l2(0, 1.0), 1.0, 0.0),
        close("n = 2, t = 1", iterated_integral_l2(2, 1.0), 0.5, 1e-16),
        close("n = 3, t = 0.5", iterated_integral_l2(3, 0.5), 0.125 / 6.0, 1e-16),
        holds(
            "N = 0 norm is the mean",
            (|| {
                let v = local_time_chaos_norm(&sqrt, 0.4, 0.7, 0)?.value;
                // zeroth chaos of σ(y)∫δ_y(X) is σ(y)∫p_t(x, y)dt
                let want = local_time_mean(&sqrt, 0.4, 1.0)? / sqrt.sigma_at(0.4);
                Ok((v - want).abs() <= 1e-8 * want)
            })(),
            "sqrt1pz2, y = 0.4, s = 0.7",
        ),
        close("y = z gives 0", holder_difference_norm(&unit, 0.3, 0.3, 0.0, 8).map(|n| n.value), 0.0, 0.0),
        holds(
            "difference norm is symmetric",
            (|| {
                let a = holder_difference_norm(&unit, 0.0, 0.1, 0.0, 8)?.value;
                let b = holder_difference_norm(&unit, 0.1, 0.0, 0.0, 8)?.value;
                Ok((a - b).abs() <= 1e-12 * a)
            })(),
            "(0, 0.1) vs (0.1, 0)",
        ),
        close(
            "y = z gives zero density difference",
            density_holder_check(&unit, &[(0.2, 0.2)], 0.5, 4).map(|r| r.rows[0].delta),
            0.0,
            0.0,
        ),
    ]
}

fn mcverify() -> Vec<Check> {
    match mc_checks() {
        Ok(c) => c,
        Err(e) => vec![Check { name: "simulation", pass: false, detail: e.to_string() }],
    }
}

fn mc_checks() -> Result<Vec<Check>> {
    let unit = catalog(Sigma::Unit);
    let paths = 20_000;
    let ens = simulate(&unit, 11, paths, TimeGrid::uniform(1.0, 16)?)?;
    let ens2 = simulate(&unit, 11, paths, TimeGrid::uniform(1.0, 16)?)?;
    let schedule: EpsSchedule = "0.2,0.1".parse()?;
    let pairing = |spec: DistributionSpec| -> Result<bool> {
        let est = pairing_lhs(&ens, &spec, &schedule, &TestFunctional::Constant)?;
        Ok(est.estimate.within(0.0, 5.0))
    };
    Ok(vec![
        holds(
            "sigma = 1: terminal variance T within 5 sigma",
            Ok(ens.mean_of(|_, w| w.last().unwrap().powi(2)).within(1.0, 5.0)),
            "E w_T^2 = 1",
        ),
        holds("fixed seed reproduces the ensemble", Ok(ens.path(123) == ens2.path(123)), "path 123"),
        holds("Heaviside, J = 1 pairs to 0", pairing(DistributionSpec::heaviside(0.0)), "within 5 stderr"),
        holds("log|x|, J = 1 pairs to 0", pairing(DistributionSpec::LogAbs), "within 5 stderr"),
        close(
            "J = 1: right side 0",
            pairing_rhs(&DistributionSpec::delta(0.3), &unit, &TestFunctional::Constant, 1.0),
            0.0,
            0.0,
        ),
        holds("far level: mean below 1e-5", local_time_mean(&unit, 5.0, 1.0).map(|m| m < 1e-5), "|y - x| = 5"),
    ])
}

/// Examples for a subcommand; `None` for an unknown command.
pub fn checks(command: &str) -> Option<Vec<Check>> {
    Some(match command {
        "hermite" => hermite(),
        "chaos" | "norm" | "smoothing" | "index" => chaos(),
        "kv-kernel" | "scale-speed" | "bessel-kernel" => diffusion(),
        "holder" | "density-holder" => localtime(),
        "ito-verify" | "local-time-mc" => mcverify(),
        _ => return None,
    })
}
