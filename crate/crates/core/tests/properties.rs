//! Randomized invariants across modules.

use chaoslab::chaos::{expand, partial_sums};
use chaoslab::diffusion::DiffusionModel;
use chaoslab::distcat::{pair_gaussian, DistributionSpec};
use chaoslab::hermite::{gauss_hermite_rule, hermite_eval, hermite_zero_value};
use proptest::prelude::*;

fn model(sigma: &str, x: f64) -> DiffusionModel {
    DiffusionModel::stratonovich(sigma.parse().unwrap(), x).unwrap()
}

const SIGMAS: [&str; 3] = ["unit", "sqrt1pz2", "sin2"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hermite_derivative_identity(n in 1usize..40, x in -6.0f64..6.0) {
        // H_n' = n H_{n-1}, with H_n' by a fourth-order central difference
        let h = 1e-3;
        let f = |x| hermite_eval(n, x).unwrap();
        let fd = (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h);
        let exact = n as f64 * hermite_eval(n - 1, x).unwrap();
        let scale = (1.0 + x.abs()).powi(n as i32) * (1..=n).map(|k| k as f64).product::<f64>().sqrt();
        prop_assert!((fd - exact).abs() <= 1e-8 * scale, "n={n} x={x}: {fd} vs {exact}");
    }

    #[test]
    fn hermite_zero_value_matches_recurrence(n in 0usize..120) {
        let a = hermite_zero_value(n);
        let b = hermite_eval(n, 0.0).unwrap();
        prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * a.abs(), "n={n}: {a} vs {b}");
    }

    #[test]
    fn delta_pairing_scaling_covariance(y in -3.0f64..3.0, c in 0.2f64..5.0, n in 0usize..30) {
        let lhs = pair_gaussian(&DistributionSpec::delta(y), c, n).unwrap();
        let rhs = pair_gaussian(&DistributionSpec::delta(y / c), 1.0, n).unwrap() / c;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn norms_are_monotone_in_s(y in -2.0f64..2.0, s1 in -2.0f64..1.0, ds in 0.0f64..1.5) {
        let v = expand(&DistributionSpec::heaviside(y), 1.0, 1.0, 60).unwrap();
        let a = partial_sums(&v, s1);
        let b = partial_sums(&v, s1 + ds);
        for (p, q) in a.iter().zip(&b) {
            prop_assert!(p <= q);
        }
    }

    #[test]
    fn flow_inverts_lamperti(kind in 0usize..3, x in -2.0f64..2.0, u in -3.0f64..3.0) {
        let m = model(SIGMAS[kind], x);
        let z = m.flow(u).unwrap();
        prop_assert!((m.lamperti().psi(z).unwrap() - u).abs() < 1e-9);
    }

    #[test]
    fn fundamental_solution_vanishes_at_its_level(kind in 0usize..3, y in -2.0f64..2.0) {
        let fs = model(SIGMAS[kind], 0.0).fundamental_solution(y).unwrap();
        prop_assert!(fs.u(y).unwrap().abs() < 1e-12);
        prop_assert!(fs.u(y + 0.3).unwrap() > 0.0 && fs.u(y - 0.3).unwrap() > 0.0);
    }
}

#[test]
fn hermite_orthogonality_under_quadrature() {
    let rule = gauss_hermite_rule(40).unwrap();
    let mut fact = vec![1.0f64; 41];
    for k in 1..=40 {
        fact[k] = fact[k - 1] * k as f64;
    }
    for m in 0..=20 {
        for n in 0..=20 {
            let e = rule.expect(|x| hermite_eval(m, x).unwrap() * hermite_eval(n, x).unwrap());
            let want = if m == n { fact[n] } else { 0.0 };
            let scale = (fact[m] * fact[n]).sqrt();
            assert!((e - want).abs() <= 1e-10 * scale, "m={m} n={n}: {e}");
        }
    }
}

#[test]
fn parity_of_pairings() {
    for n in (1..40).step_by(2) {
        assert_eq!(pair_gaussian(&DistributionSpec::delta(0.0), 1.0, n).unwrap(), 0.0);
    }
    for n in (0..40).step_by(2) {
        let v = pair_gaussian(&DistributionSpec::PrincipalValueRecip, 1.0, n).unwrap();
        assert!(v.abs() < 1e-12, "n={n}: {v}");
    }
}

#[test]
fn spec_text_round_trips() {
    for s in ["delta@0.5", "ddelta^2@0", "heaviside@-1", "pv1x", "logabs", "xlogabs", "smooth:sin"] {
        let d: DistributionSpec = s.parse().unwrap();
        let again: DistributionSpec = d.to_string().parse().unwrap();
        assert_eq!(again.to_string(), d.to_string(), "{s}");
    }
}
