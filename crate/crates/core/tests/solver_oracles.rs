//! End-to-end solver behavior against closed forms and alternative paths.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Inverse, Solve};
use perturbvamp::harness::{calibrate, gen_matrix, gen_signal};
use perturbvamp::model::{CirculantPerturbation, GenericBasis, MatrixRestricted};
use perturbvamp::rng::seeded;
use perturbvamp::solver::{colored_lmmse, lmmse, run, run_batch, PcRoute, SpectralLmmse};
use perturbvamp::{BernoulliGaussianPrior, Mode, PerturbationModel, Problem, RunTrace, VampConfig};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian_vector(n: usize, seed: u64, stream: u64) -> Array1<f64> {
    let mut rng = seeded(seed, stream);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn sparse_prior() -> BernoulliGaussianPrior {
    BernoulliGaussianPrior::new(0.2, 0.0, 1.0).unwrap()
}

/// A calibrated problem at SNR_w = 30 dB and the given SNR_e, with its truth.
fn perturbed_problem(m: usize, n: usize, model: PerturbationModel, snr_e: f64, seed: u64) -> (Problem, Array1<f64>) {
    let mut x = gen_signal(&sparse_prior(), n, seed);
    if x.iter().all(|&v| v == 0.0) {
        x[0] = 1.0;
    }
    let a = gen_matrix(m, n, seed);
    let model = Arc::new(model);
    let cal = calibrate(a.view(), x.view(), &model, 30.0, snr_e, seed).unwrap();
    let y = a.dot(&x) + model.apply(cal.e.view(), x.view()).unwrap() + &cal.w;
    (Problem::new(y, a, cal.gamma_w, cal.gamma_e, model).unwrap(), x)
}

fn assert_traces_close(a: &RunTrace, b: &RunTrace, tol: f64, what: &str) {
    assert_eq!(a.records.len(), b.records.len(), "{what}: lengths");
    let close = |p: f64, q: f64| (p - q).abs() <= tol * (1.0 + p.abs().max(q.abs()));
    for (ra, rb) in a.records.iter().zip(&b.records) {
        let k = ra.iteration;
        assert!(close(ra.eta1, rb.eta1), "{what} it {k}: eta1 {} vs {}", ra.eta1, rb.eta1);
        assert!(close(ra.eta2, rb.eta2), "{what} it {k}: eta2 {} vs {}", ra.eta2, rb.eta2);
        assert!(close(ra.gamma1, rb.gamma1), "{what} it {k}: gamma1 {} vs {}", ra.gamma1, rb.gamma1);
        assert!(close(ra.gamma2, rb.gamma2), "{what} it {k}: gamma2 {} vs {}", ra.gamma2, rb.gamma2);
        if let (Some(p), Some(q)) = (ra.nmse_db, rb.nmse_db) {
            assert!(close(p, q), "{what} it {k}: nmse {p} vs {q}");
        }
    }
    for (p, q) in a.xhat.iter().zip(b.xhat.iter()) {
        assert!(close(*p, *q), "{what}: xhat {p} vs {q}");
    }
}

#[test]
fn lmmse_routes_match_dense_solve_oracle() {
    let mut rng = seeded(5, 0);
    let a = Array2::from_shape_simple_fn((8, 12), || rng.sample::<f64, _>(StandardNormal));
    let y = gaussian_vector(8, 5, 1);
    let r2 = gaussian_vector(12, 5, 2);
    let (gamma_w, gamma2) = (3.5, 0.8);

    let p = a.t().dot(&a) * gamma_w + Array2::<f64>::eye(12) * gamma2;
    let rhs = a.t().dot(&y) * gamma_w + &r2 * gamma2;
    let x_oracle = p.solve(&rhs).unwrap();
    let eta_oracle = 12.0 / p.inv().unwrap().diag().sum();

    let check = |x: &Array1<f64>, eta: f64, what: &str| {
        assert!(x.iter().zip(x_oracle.iter()).all(|(p, q)| (p - q).abs() < 1e-10), "{what}");
        assert!((eta - eta_oracle).abs() < 1e-10 * eta_oracle, "{what}: {eta} vs {eta_oracle}");
    };
    let out = lmmse(a.view(), y.view(), gamma_w, r2.view(), gamma2).unwrap();
    check(&out.xhat, out.eta, "lmmse");
    let out = SpectralLmmse::new(a.view(), y.view())
        .unwrap()
        .estimate(a.view(), y.view(), gamma_w, r2.view(), gamma2)
        .unwrap();
    check(&out.xhat, out.eta, "spectral");
    let cov = Array2::<f64>::eye(8) / gamma_w;
    let out = colored_lmmse(a.view(), Some(&a.dot(&a.t())), y.view(), &cov, r2.view(), gamma2).unwrap();
    check(&out.xhat, out.eta, "colored");
}

#[test]
fn lmmse_prior_dominates_at_huge_gamma2() {
    let a = gen_matrix(6, 10, 3);
    let y = gaussian_vector(6, 3, 1);
    let r2 = gaussian_vector(10, 3, 2);
    let out = lmmse(a.view(), y.view(), 5.0, r2.view(), 1e12).unwrap();
    assert!(out.xhat.iter().zip(r2.iter()).all(|(p, q)| (p - q).abs() < 1e-6));
    assert!((out.eta - 1e12).abs() < 1e-4 * 1e12);
}

#[test]
fn gaussian_prior_fixed_point_is_exact_mmse() {
    for instance in 0..20u64 {
        let (m, n) = (5 + (instance as usize % 7) * 3, 8 + (instance as usize % 5) * 4);
        let (mu, s2) = (0.3 * (instance as f64 - 10.0) / 10.0, 0.5 + instance as f64 * 0.1);
        let prior = BernoulliGaussianPrior::new(1.0, mu, s2).unwrap();
        let a = gen_matrix(m, n, instance);
        let y = gaussian_vector(m, instance, 7);
        let gamma_w = 20.0;
        let problem = Problem::exact(y.clone(), a.clone(), gamma_w).unwrap();
        let config = VampConfig {
            mode: Mode::Oracle,
            max_iters: 30,
            ..VampConfig::default()
        };
        let trace = run(&problem, &prior, &config, None).unwrap();

        let p = a.t().dot(&a) * gamma_w + Array2::<f64>::eye(n) / s2;
        let rhs = a.t().dot(&y) * gamma_w + Array1::from_elem(n, mu / s2);
        let exact = p.solve(&rhs).unwrap();
        let err = trace.xhat.iter().zip(exact.iter()).fold(0.0f64, |e, (p, q)| e.max((p - q).abs()));
        assert!(err < 1e-6, "instance {instance}: {err:e}");
    }
}

#[test]
fn noiseless_identity_recovers_sparse_truth_quickly() {
    let n = 64;
    let mut x = gen_signal(&sparse_prior(), n, 11);
    x[3] = 1.5;
    let problem = Problem::new(x.clone(), Array2::eye(n), 1e12, f64::INFINITY, Arc::new(PerturbationModel::none(n, n))).unwrap();
    let config = VampConfig {
        mode: Mode::Oracle,
        max_iters: 5,
        ..VampConfig::default()
    };
    let trace = run(&problem, &sparse_prior(), &config, Some(&x)).unwrap();
    let err = trace.xhat.iter().zip(x.iter()).fold(0.0f64, |e, (p, q)| e.max((p - q).abs()));
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn iid_fast_path_equals_explicit_basis_whitening() {
    for seed in 0..6u64 {
        let (m, n) = (8 + seed as usize, 16);
        let (problem, x) = perturbed_problem(m, n, PerturbationModel::Iid { rows: m, cols: n }, 20.0, seed);
        let expanded = Problem::new(
            problem.y().clone(),
            problem.a().clone(),
            problem.gamma_w(),
            problem.gamma_e(),
            Arc::new(PerturbationModel::GenericBasis(problem.perturbation().expand())),
        )
        .unwrap();
        let config = VampConfig::with_mode(Mode::PerturbationCorrected);
        let fast = run(&problem, &sparse_prior(), &config, Some(&x)).unwrap();
        let slow = run(&expanded, &sparse_prior(), &config, Some(&x)).unwrap();
        assert_traces_close(&fast, &slow, 1e-8, "iid fast path");
    }
}

#[test]
fn whitened_and_direct_routes_agree() {
    let models = |m: usize, n: usize, seed: u64| {
        let mut rng = seeded(seed, 3);
        vec![
            PerturbationModel::GenericBasis(GenericBasis::gaussian(m, n, n, &mut rng)),
            PerturbationModel::Circulant(
                CirculantPerturbation::new(n, Some(gen_matrix(m, n, seed + 1))).unwrap(),
            ),
            PerturbationModel::MatrixRestricted(
                MatrixRestricted::new(gen_matrix(m, m, seed + 2), gen_matrix(n, n, seed + 3)).unwrap(),
            ),
        ]
    };
    for (m, n) in [(12, 24), (24, 24)] {
        for model in models(m, n, 40) {
            let kind = model.kind_name();
            let (problem, x) = perturbed_problem(m, n, model, 15.0, 41);
            let whitened = VampConfig::with_mode(Mode::PerturbationCorrected);
            let direct = VampConfig {
                pc_route: PcRoute::Direct,
                ..whitened.clone()
            };
            let a = run(&problem, &sparse_prior(), &whitened, Some(&x)).unwrap();
            let b = run(&problem, &sparse_prior(), &direct, Some(&x)).unwrap();
            assert_traces_close(&a, &b, 1e-7, kind);
        }
    }
}

#[test]
fn batched_runs_equal_individual_runs() {
    let (m, n) = (20, 40);
    let mut rng = seeded(50, 3);
    let shared = Arc::new(PerturbationModel::GenericBasis(GenericBasis::gaussian(m, n, n, &mut rng)));
    let x = gen_signal(&sparse_prior(), n, 50);
    let a = gen_matrix(m, n, 50);
    let problems: Vec<Problem> = [10.0, 20.0, 40.0]
        .iter()
        .map(|&snr| {
            let cal = calibrate(a.view(), x.view(), &shared, 30.0, snr, 51).unwrap();
            let y = a.dot(&x) + shared.apply(cal.e.view(), x.view()).unwrap() + &cal.w;
            Problem::new(y, a.clone(), cal.gamma_w, cal.gamma_e, Arc::clone(&shared)).unwrap()
        })
        .collect();
    let refs: Vec<&Problem> = problems.iter().collect();
    for mode in Mode::ALL {
        if mode == Mode::Oracle {
            continue;
        }
        let config = VampConfig::with_mode(mode);
        let batch = run_batch(&refs, &sparse_prior(), &config, &[Some(&x); 3]);
        for (p, b) in problems.iter().zip(batch) {
            let single = run(p, &sparse_prior(), &config, Some(&x)).unwrap();
            assert_traces_close(&single, &b.unwrap(), 1e-9, mode.label());
        }
    }
}

#[test]
fn degenerate_prior_is_counted_not_fatal() {
    let (problem, x) = perturbed_problem(10, 20, PerturbationModel::Iid { rows: 10, cols: 20 }, 20.0, 60);
    let prior = BernoulliGaussianPrior::new(0.0, 0.0, 1.0).unwrap();
    let trace = run(&problem, &prior, &VampConfig::with_mode(Mode::PerturbationIgnorant), Some(&x)).unwrap();
    assert!(trace.total_clamps() >= trace.records.len());
    assert!(trace.xhat.iter().all(|&v| v == 0.0));
}

#[test]
fn oracle_mode_rejects_perturbed_problem() {
    let (problem, x) = perturbed_problem(6, 10, PerturbationModel::Iid { rows: 6, cols: 10 }, 20.0, 70);
    assert!(run(&problem, &sparse_prior(), &VampConfig::with_mode(Mode::Oracle), Some(&x)).is_err());
}

#[test]
fn stop_tol_ends_early_and_records_are_bounded() {
    let (problem, x) = perturbed_problem(30, 60, PerturbationModel::Iid { rows: 30, cols: 60 }, 40.0, 80);
    let config = VampConfig {
        stop_tol: 1e-6,
        ..VampConfig::with_mode(Mode::PerturbationCorrected)
    };
    let trace = run(&problem, &sparse_prior(), &config, Some(&x)).unwrap();
    assert!(trace.records.len() < config.max_iters);
    let full = run(&problem, &sparse_prior(), &VampConfig::with_mode(Mode::PerturbationCorrected), Some(&x)).unwrap();
    assert_eq!(full.records.len(), 60);
}

fn any_model(kind: u8, m: usize, n: usize, seed: u64) -> PerturbationModel {
    let mut rng = seeded(seed, 3);
    match kind {
        0 => PerturbationModel::GenericBasis(GenericBasis::gaussian(m, n, 4, &mut rng)),
        1 => PerturbationModel::Iid { rows: m, cols: n },
        2 => PerturbationModel::Circulant(CirculantPerturbation::new(n, Some(gen_matrix(m, n, seed))).unwrap()),
        _ => PerturbationModel::MatrixRestricted(
            MatrixRestricted::new(gen_matrix(m, 3, seed), gen_matrix(4, n, seed + 1)).unwrap(),
        ),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn disabled_perturbation_makes_pc_equal_pi(seed in 0u64..100_000, kind in 0u8..4, n in 8usize..128, frac in 0.3f64..1.0) {
        let m = ((n as f64 * frac) as usize).max(2);
        let (p, x) = perturbed_problem(m, n, any_model(kind, m, n, seed), 20.0, seed);
        let off = Problem::new(p.y().clone(), p.a().clone(), p.gamma_w(), f64::INFINITY, p.perturbation_handle()).unwrap();
        let pi = run(&off, &sparse_prior(), &VampConfig::with_mode(Mode::PerturbationIgnorant), Some(&x)).unwrap();
        let pc = run(&off, &sparse_prior(), &VampConfig::with_mode(Mode::PerturbationCorrected), Some(&x)).unwrap();
        assert_traces_close(&pi, &pc, 1e-8, "pc vs pi");
    }

    #[test]
    fn traces_are_finite_and_extrinsic_identity_holds(seed in 0u64..100_000, kind in 0u8..4, snr_e in 5.0f64..45.0) {
        let (m, n) = (12, 24);
        let (p, x) = perturbed_problem(m, n, any_model(kind, m, n, seed), snr_e, seed);
        for mode in [Mode::PerturbationIgnorant, Mode::PerturbationCorrected] {
            let trace = run(&p, &sparse_prior(), &VampConfig::with_mode(mode), Some(&x)).unwrap();
            prop_assert!(trace.records.len() <= 60);
            for (k, rec) in trace.records.iter().enumerate() {
                prop_assert!(rec.eta1.is_finite() && rec.eta2.is_finite() && rec.gamma1.is_finite() && rec.gamma2.is_finite());
                prop_assert!(rec.nmse_db.unwrap().is_finite());
                prop_assert!(rec.gamma1 >= 1e-8 && rec.gamma2 >= 1e-8);
                if rec.unclamped {
                    // Natural parameters of the two messages add up to the belief.
                    prop_assert!((rec.gamma1 + rec.gamma2 - rec.eta1).abs() <= 1e-9 * rec.eta1);
                    if let Some(next) = trace.records.get(k + 1) {
                        prop_assert!((rec.gamma2 + next.gamma1 - rec.eta2).abs() <= 1e-9 * rec.eta2);
                    }
                }
            }
            prop_assert!(trace.xhat.iter().all(|v| v.is_finite()));
        }
    }
}
