//! Fixtures shared by the benchmarks in `benches/`.

use std::sync::Arc;

use ndarray::Array1;
use perturbvamp::harness::{build_trial, calibrate, ExperimentSpec, PerturbationKind, SignalSource};
use perturbvamp::{BernoulliGaussianPrior, Mode, Problem, VampConfig};

pub const SEED: u64 = 7;

pub fn prior() -> BernoulliGaussianPrior {
    BernoulliGaussianPrior::new(0.2, 0.0, 1.0).expect("valid prior")
}

/// A half-sampled problem at SNR_w = 30 dB, SNR_e = 20 dB, with its truth.
pub fn problem(kind: PerturbationKind, n: usize) -> (Problem, Array1<f64>) {
    let spec = ExperimentSpec {
        name: "bench".into(),
        n,
        ratio: 0.5,
        prior: prior(),
        perturbation: kind,
        snr_w_db: 30.0,
        snr_e_db: vec![20.0],
        trials: 1,
        seed: SEED,
        modes: Mode::ALL.to_vec(),
        solver: VampConfig::default(),
        signal: SignalSource::Prior,
    };
    let setup = build_trial(&spec, SEED).expect("trial setup");
    let cal = calibrate(setup.a.view(), setup.x.view(), &setup.perturbation, 30.0, 20.0, SEED).expect("calibration");
    let y = setup.a.dot(&setup.x) + setup.perturbation.apply(cal.e.view(), setup.x.view()).expect("apply") + &cal.w;
    let p = Problem::new(y, setup.a, cal.gamma_w, cal.gamma_e, Arc::clone(&setup.perturbation)).expect("problem");
    (p, setup.x)
}
