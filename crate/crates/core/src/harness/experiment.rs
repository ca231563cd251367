//! Monte-Carlo experiments: build a problem per trial, run every requested
//! mode on the same realization, and reduce the results in trial order.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::generate::{calibrate, gen_matrix, gen_signal, stream, Calibration};
use super::metrics::{nmse_db, psnr_db};
use crate::denoiser::BernoulliGaussianPrior;
use crate::error::{check_len, Error, Result};
use crate::linalg::frobenius_sq;
use crate::model::{CirculantPerturbation, GenericBasis, MatrixRestricted, PerturbationModel, Problem};
use crate::rng::seeded;
use crate::solver::{run_batch, IterationRecord, Mode, RunTrace, VampConfig};

/// Geometric decay of the circulant generator row, `a_i = DECAY^i`.
pub const CIRCULANT_DECAY: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationKind {
    /// `q = N` dense Gaussian basis matrices.
    Gaussian,
    /// Every entry of `A` perturbed independently.
    Iid,
    /// `A = Φ·Circ(a)` perturbed by `Φ`-compressed cyclic shifts.
    Circulant,
    /// `D·E·C` with random positive diagonal `D` and `C`.
    Restricted,
}

impl PerturbationKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Iid => "iid",
            Self::Circulant => "circulant",
            Self::Restricted => "restricted",
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Self::Gaussian),
            "iid" => Ok(Self::Iid),
            "circulant" => Ok(Self::Circulant),
            "restricted" => Ok(Self::Restricted),
            other => Err(Error::InvalidParameter(format!(
                "unknown perturbation kind `{other}` (expected gaussian, iid, circulant or restricted)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SignalSource {
    /// A fresh draw from the prior in every trial.
    Prior,
    /// The same coefficient vector in every trial.
    Fixed(Arc<Array1<f64>>),
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub n: usize,
    /// `M / N`; the row count is `round(ratio · N)`.
    pub ratio: f64,
    pub prior: BernoulliGaussianPrior,
    pub perturbation: PerturbationKind,
    pub snr_w_db: f64,
    /// Signal-to-perturbation ratios; `+∞` entries switch the perturbation off.
    pub snr_e_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub modes: Vec<Mode>,
    /// Shared solver settings; the mode field is overridden per run.
    pub solver: VampConfig,
    pub signal: SignalSource,
}

impl ExperimentSpec {
    pub fn rows(&self) -> usize {
        (self.ratio * self.n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) || self.rows() == 0 {
            return Err(Error::InvalidParameter(format!(
                "ratio must lie in (0, 1] and give at least one row, got {}",
                self.ratio
            )));
        }
        if !self.snr_w_db.is_finite() {
            return Err(Error::InvalidParameter("snr_w_db must be finite".into()));
        }
        if self.snr_e_db.is_empty() {
            return Err(Error::InvalidParameter("snr_e_db needs at least one value".into()));
        }
        if let Some(bad) = self.snr_e_db.iter().find(|v| v.is_nan() || **v == f64::NEG_INFINITY) {
            return Err(Error::InvalidParameter(format!("invalid snr_e_db value {bad}")));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::InvalidParameter("at least one mode is required".into()));
        }
        if let SignalSource::Fixed(x) = &self.signal {
            check_len("coefficient vector", self.n, x.len())?;
        }
        self.solver.validate(self.n)
    }
}

/// The data shared by every SNR point and mode of one trial.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub x: Array1<f64>,
    pub a: Array2<f64>,
    pub perturbation: Arc<PerturbationModel>,
}

/// Builds `A = Φ·Circ(a)` with `a_i = 0.3^i` and its matching shift
/// perturbation, scaled together so that `‖A‖²_F = N`. `Φ` is Gaussian when
/// `m < n` and absent when `m = n`.
pub fn circulant_operator(m: usize, n: usize, seed: u64) -> Result<(Array2<f64>, PerturbationModel)> {
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!(
            "circulant operator needs 1 <= m <= n, got m = {m}, n = {n}"
        )));
    }
    let row: Array1<f64> = (0..n).map(|i| CIRCULANT_DECAY.powi(i as i32)).collect();
    let compression = (m < n).then(|| {
        let mut rng = seeded(seed, stream::COMPRESSION);
        let sd = (1.0 / n as f64).sqrt();
        Array2::from_shape_simple_fn((m, n), || sd * rng.sample::<f64, _>(StandardNormal))
    });
    let unscaled = CirculantPerturbation::new(n, compression.clone())?;
    let a0 = unscaled.compressed_times_circulant(row.view());
    let scale = (n as f64 / frobenius_sq(a0.view())).sqrt();
    let a = a0 * scale;
    let perturbation = match compression {
        Some(phi) => CirculantPerturbation::new(n, Some(phi * scale))?,
        // Without compression the scale is immaterial: calibration rescales e.
        None => unscaled,
    };
    Ok((a, PerturbationModel::Circulant(perturbation)))
}

/// Draws the signal, sensing matrix and perturbation family of one trial.
pub fn build_trial(spec: &ExperimentSpec, trial_seed: u64) -> Result<TrialSetup> {
    let (m, n) = (spec.rows(), spec.n);
    let x = match &spec.signal {
        SignalSource::Prior => gen_signal(&spec.prior, n, trial_seed),
        SignalSource::Fixed(x) => x.as_ref().clone(),
    };
    let (a, perturbation) = match spec.perturbation {
        PerturbationKind::Gaussian => {
            let mut rng = seeded(trial_seed, stream::BASIS);
            let basis = GenericBasis::gaussian(m, n, n, &mut rng);
            (gen_matrix(m, n, trial_seed), PerturbationModel::GenericBasis(basis))
        }
        PerturbationKind::Iid => (gen_matrix(m, n, trial_seed), PerturbationModel::Iid { rows: m, cols: n }),
        PerturbationKind::Circulant => circulant_operator(m, n, trial_seed)?,
        PerturbationKind::Restricted => {
            let mut rng = seeded(trial_seed, stream::WEIGHTS);
            let mut weights = |k: usize| Array2::from_diag(&(0..k).map(|_| rng.random_range(0.5..1.5)).collect::<Array1<f64>>());
            let left = weights(m);
            let right = weights(n);
            (
                gen_matrix(m, n, trial_seed),
                PerturbationModel::MatrixRestricted(MatrixRestricted::new(left, right)?),
            )
        }
    };
    Ok(TrialSetup {
        x,
        a,
        perturbation: Arc::new(perturbation),
    })
}

#[derive(Debug, Clone)]
pub struct ModeOutcome {
    pub mode: Mode,
    /// Empty when the run diverged.
    pub records: Vec<IterationRecord>,
    pub final_nmse_db: Option<f64>,
    pub final_psnr_db: Option<f64>,
    pub clamps: usize,
    /// Why the run was abandoned, if it was.
    pub failure: Option<String>,
}

impl ModeOutcome {
    pub fn diverged(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    /// Requested SNR_e point.
    pub snr_e_db: f64,
    pub calibration: Calibration,
    pub outcomes: Vec<ModeOutcome>,
}

impl TrialResult {
    pub fn outcome(&self, mode: Mode) -> Option<&ModeOutcome> {
        self.outcomes.iter().find(|o| o.mode == mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub mode: Mode,
    pub snr_e_db: f64,
    /// Mean of the per-trial dB values over non-diverged trials.
    pub mean_nmse_db: Option<f64>,
    pub mean_psnr_db: Option<f64>,
    pub trials: usize,
    pub diverged: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub name: String,
    /// Trial-major, then in the order of the SNR_e grid.
    pub trials: Vec<TrialResult>,
    /// SNR_e-major, then in the order of the requested modes.
    pub aggregate: Vec<AggregateRow>,
}

impl ExperimentResult {
    pub fn row(&self, mode: Mode, snr_e_db: f64) -> Option<&AggregateRow> {
        self.aggregate
            .iter()
            .find(|r| r.mode == mode && r.snr_e_db.total_cmp(&snr_e_db).is_eq())
    }

    pub fn total_diverged(&self) -> usize {
        self.aggregate.iter().map(|r| r.diverged).sum()
    }

    /// True when at least one run exists and every run diverged.
    pub fn all_diverged(&self) -> bool {
        self.aggregate.iter().all(|r| r.trials == 0)
    }
}

fn outcome(mode: Mode, x: &Array1<f64>, result: Result<RunTrace>) -> ModeOutcome {
    match result {
        Ok(trace) => ModeOutcome {
            mode,
            final_nmse_db: Some(nmse_db(x.view(), trace.xhat.view())),
            final_psnr_db: Some(psnr_db(x.view(), trace.xhat.view())),
            clamps: trace.total_clamps(),
            records: trace.records,
            failure: None,
        },
        Err(err) => {
            log::warn!("{} run failed: {err}", mode.label());
            ModeOutcome {
                mode,
                records: Vec::new(),
                final_nmse_db: None,
                final_psnr_db: None,
                clamps: 0,
                failure: Some(err.to_string()),
            }
        }
    }
}

/// Runs every SNR_e point and mode of one trial. The noise and perturbation
/// draws are the same standard-normal vectors rescaled per SNR point, and the
/// SNR points of one mode advance in lockstep so the perturbation family is
/// read once per iteration.
pub fn run_trial(spec: &ExperimentSpec, trial: usize) -> Result<Vec<TrialResult>> {
    let seed = spec.seed.wrapping_add(trial as u64);
    let setup = build_trial(spec, seed)?;
    let clean = setup.a.dot(&setup.x);
    let mut calibrations = Vec::with_capacity(spec.snr_e_db.len());
    let mut problems = Vec::with_capacity(spec.snr_e_db.len());
    for &snr_e in &spec.snr_e_db {
        let cal = calibrate(
            setup.a.view(),
            setup.x.view(),
            &setup.perturbation,
            spec.snr_w_db,
            snr_e,
            seed,
        )?;
        let y = &clean + &setup.perturbation.apply(cal.e.view(), setup.x.view())? + &cal.w;
        problems.push(Problem::new(
            y,
            setup.a.clone(),
            cal.gamma_w,
            cal.gamma_e,
            Arc::clone(&setup.perturbation),
        )?);
        calibrations.push(cal);
    }

    let truths = vec![Some(&setup.x); problems.len()];
    let mut per_mode = Vec::with_capacity(spec.modes.len());
    for &mode in &spec.modes {
        let config = VampConfig {
            mode,
            ..spec.solver.clone()
        };
        let results: Vec<Result<RunTrace>> = if mode == Mode::Oracle {
            let realized = problems
                .iter()
                .zip(&calibrations)
                .map(|(p, c)| p.realized(c.e.view()))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Problem> = realized.iter().collect();
            run_batch(&refs, &spec.prior, &config, &truths)
        } else {
            let refs: Vec<&Problem> = problems.iter().collect();
            run_batch(&refs, &spec.prior, &config, &truths)
        };
        per_mode.push(results.into_iter().map(|r| outcome(mode, &setup.x, r)).collect::<Vec<_>>());
    }

    let mut out = Vec::with_capacity(spec.snr_e_db.len());
    let mut columns: Vec<_> = per_mode.into_iter().map(|v| v.into_iter()).collect();
    for (&snr_e, cal) in spec.snr_e_db.iter().zip(calibrations) {
        out.push(TrialResult {
            trial,
            seed,
            snr_e_db: snr_e,
            calibration: cal,
            outcomes: columns
                .iter_mut()
                .map(|c| c.next().expect("one outcome per point"))
                .collect(),
        });
    }
    Ok(out)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn aggregate(spec: &ExperimentSpec, trials: &[TrialResult]) -> Vec<AggregateRow> {
    let mut rows = Vec::with_capacity(spec.snr_e_db.len() * spec.modes.len());
    for (point, &snr_e) in spec.snr_e_db.iter().enumerate() {
        for &mode in &spec.modes {
            let mut nmse = Vec::new();
            let mut psnr = Vec::new();
            let mut diverged = 0;
            let at_point = trials.iter().skip(point).step_by(spec.snr_e_db.len());
            for outcome in at_point.filter_map(|t| t.outcome(mode)) {
                match (outcome.final_nmse_db, outcome.final_psnr_db) {
                    (Some(n), Some(p)) => {
                        nmse.push(n);
                        psnr.push(p);
                    }
                    _ => diverged += 1,
                }
            }
            rows.push(AggregateRow {
                mode,
                snr_e_db: snr_e,
                mean_nmse_db: mean(&nmse),
                mean_psnr_db: mean(&psnr),
                trials: nmse.len(),
                diverged,
            });
        }
    }
    rows
}

/// Runs all trials (in parallel on the current rayon pool) and reduces them
/// in trial order, so the result depends only on the spec.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let per_trial: Vec<Vec<TrialResult>> = (0..spec.trials)
        .into_par_iter()
        .map(|t| run_trial(spec, t))
        .collect::<Result<_>>()?;
    let trials: Vec<TrialResult> = per_trial.into_iter().flatten().collect();
    let aggregate = aggregate(spec, &trials);
    Ok(ExperimentResult {
        name: spec.name.clone(),
        trials,
        aggregate,
    })
}
