//! Moderate-size Monte Carlo checks of the Itô identity and the ensemble
//! contracts (the million-path runs live in the acceptance suite).

use chaoslab::diffusion::DiffusionModel;
use chaoslab::distcat::DistributionSpec;
use chaoslab::mcverify::{ito_verify, pairing_lhs, simulate, EpsSchedule, ItoCase, PathEnsemble, TestFunctional, TimeGrid};

fn ensemble(sigma: &str, paths: usize, seed: u64) -> PathEnsemble {
    let m = DiffusionModel::stratonovich(sigma.parse().unwrap(), 0.0).unwrap();
    simulate(&m, seed, paths, TimeGrid::graded(1.0, 128, 2.0).unwrap()).unwrap()
}

#[test]
fn ito_identity_for_hermite_functionals() {
    let ens = ensemble("unit", 200_000, 31);
    let schedule: EpsSchedule = "0.05,0.025".parse().unwrap();
    for case in [ItoCase::Tanaka { y: 0.5 }, ItoCase::PrincipalValue] {
        for j in ["1", "H1", "H2"] {
            let r = ito_verify(&ens, case, &TestFunctional::parse(j, 1.0).unwrap(), &schedule).unwrap();
            assert!(r.oracles_agree, "{case} {j}: oracle gap {}", r.oracle_gap);
            assert!(r.pass, "{case} {j}: residual {} ± {}", r.residual, r.residual_stderr);
        }
    }
}

#[test]
fn tanaka_identity_for_a_non_brownian_model() {
    let ens = ensemble("sqrt1pz2", 200_000, 5);
    let schedule: EpsSchedule = "0.05,0.025".parse().unwrap();
    let r = ito_verify(&ens, ItoCase::Tanaka { y: 0.3 }, &TestFunctional::Constant, &schedule).unwrap();
    assert!(r.oracles_agree && r.pass, "{r:?}");
}

#[test]
fn antithetic_variates_stay_within_confidence() {
    let schedule: EpsSchedule = "0.1,0.05".parse().unwrap();
    let spec = DistributionSpec::delta(0.0);
    let j = TestFunctional::parse("H1", 1.0).unwrap();
    let plain = pairing_lhs(&ensemble("unit", 100_000, 9), &spec, &schedule, &j).unwrap().estimate;
    let anti = pairing_lhs(&ensemble("unit", 100_000, 9).with_antithetic(true), &spec, &schedule, &j).unwrap().estimate;
    let combined = (plain.stderr.powi(2) + anti.stderr.powi(2)).sqrt();
    assert!((plain.value - anti.value).abs() < 4.0 * combined, "{plain:?} vs {anti:?}");
}

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| {
        ensemble("sin2", 5000, 17).mean_of(|_, x| x.last().unwrap().sin())
    });
    let b = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| {
        ensemble("sin2", 5000, 17).mean_of(|_, x| x.last().unwrap().sin())
    });
    assert_eq!(a, b);
}
