//! Vector AMP on the perturbed model.
//!
//! Each iteration denoises the pseudo-measurement `(r₁, γ₁)`, passes the
//! extrinsic message `(r₂, γ₂)` to the linear stage, and feeds the linear
//! stage's extrinsic message back as the next `(r₁, γ₁)`. The modes differ
//! only in the linear stage:
//!
//! * [`Mode::Oracle`] and [`Mode::PerturbationIgnorant`] treat the problem's
//!   matrix as exact with white noise of precision `γ_w`. An oracle run is
//!   given the realized matrix `A + Σ e_i E_i` (see [`Problem::realized`]).
//! * [`Mode::PerturbationCorrected`] replaces the signal-dependent noise
//!   covariance by its expectation under `N(r₂, γ₂⁻¹ I)` at every iteration
//!   and whitens the likelihood before the LMMSE step. For i.i.d.
//!   perturbations the covariance is a multiple of the identity and only the
//!   equivalent scalar precision is updated.

mod lmmse;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};

pub use lmmse::{colored_lmmse, lmmse, LmmseOutput, SpectralLmmse};

use crate::denoiser::{denoise, extrinsic, BernoulliGaussianPrior, GAMMA_MIN};
use crate::error::{check_len, Error, Result};
use crate::harness::nmse_db;
use crate::linalg::{add_to_diagonal, gram_rows, is_all_finite, norm_sq};
use crate::model::{variance_from_precision, Problem};
use crate::whitening::whiten_floored;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Oracle,
    PerturbationIgnorant,
    PerturbationCorrected,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Oracle, Mode::PerturbationIgnorant, Mode::PerturbationCorrected];

    pub fn label(self) -> &'static str {
        match self {
            Mode::Oracle => "oracle",
            Mode::PerturbationIgnorant => "pi",
            Mode::PerturbationCorrected => "pc",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oracle" => Ok(Mode::Oracle),
            "pi" | "ignorant" => Ok(Mode::PerturbationIgnorant),
            "pc" | "corrected" => Ok(Mode::PerturbationCorrected),
            other => Err(Error::InvalidParameter(format!(
                "unknown mode `{other}` (expected oracle, pi or pc)"
            ))),
        }
    }
}

/// How the corrected mode turns the expected covariance into an LMMSE estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PcRoute {
    /// Symmetric inverse square root, renormalized white model, then LMMSE.
    #[default]
    Whitened,
    /// Cholesky solve against the covariance in measurement space. Same
    /// estimate, no eigendecomposition.
    Direct,
}

impl PcRoute {
    pub fn label(self) -> &'static str {
        match self {
            PcRoute::Whitened => "whitened",
            PcRoute::Direct => "direct",
        }
    }
}

impl FromStr for PcRoute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "whitened" => Ok(PcRoute::Whitened),
            "direct" => Ok(PcRoute::Direct),
            other => Err(Error::InvalidParameter(format!(
                "unknown route `{other}` (expected whitened or direct)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VampConfig {
    pub mode: Mode,
    pub max_iters: usize,
    pub gamma1_init: f64,
    /// Initial `r₁`; zero when `None`.
    pub r1_init: Option<Array1<f64>>,
    pub gamma_min: f64,
    /// Weight on the new message, in `(0, 1]`; 1 disables damping.
    pub damping: f64,
    /// Stop once `‖x̂₁ₖ - x̂₁ₖ₋₁‖ ≤ stop_tol ‖x̂₁ₖ₋₁‖`; 0 runs all iterations.
    pub stop_tol: f64,
    pub pc_route: PcRoute,
}

impl Default for VampConfig {
    fn default() -> Self {
        Self {
            mode: Mode::PerturbationCorrected,
            max_iters: 60,
            gamma1_init: 1e-4,
            r1_init: None,
            gamma_min: GAMMA_MIN,
            damping: 1.0,
            stop_tol: 0.0,
            pc_route: PcRoute::Whitened,
        }
    }
}

impl VampConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.gamma1_init > 0.0 && self.gamma1_init.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma1_init must be positive, got {}",
                self.gamma1_init
            )));
        }
        if !(self.gamma_min > 0.0) {
            return Err(Error::InvalidParameter("gamma_min must be positive".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidParameter("stop_tol must be non-negative".into()));
        }
        if let Some(r1) = &self.r1_init {
            check_len("r1_init", n, r1.len())?;
        }
        Ok(())
    }
}

/// The messages and beliefs of one iteration.
#[derive(Debug, Clone)]
pub struct VampState {
    pub iteration: usize,
    pub r1: Array1<f64>,
    pub gamma1: f64,
    pub xhat1: Array1<f64>,
    pub eta1: f64,
    pub r2: Array1<f64>,
    pub gamma2: f64,
    pub xhat2: Array1<f64>,
    pub eta2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// NMSE of `x̂₁` in dB when the truth was supplied.
    pub nmse_db: Option<f64>,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Precision clamps fired in this iteration (denoiser cap included).
    pub clamps: usize,
    /// Whether the extrinsic steps of this iteration ran unclamped.
    pub unclamped: bool,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub mode: Mode,
    pub records: Vec<IterationRecord>,
    pub xhat: Array1<f64>,
    pub final_state: VampState,
}

impl RunTrace {
    pub fn total_clamps(&self) -> usize {
        self.records.iter().map(|r| r.clamps).sum()
    }

    pub fn final_nmse_db(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.nmse_db)
    }
}

enum LinearStage<'a> {
    White {
        factored: SpectralLmmse,
        gamma_w: f64,
    },
    IidCorrected {
        factored: SpectralLmmse,
        noise_var: f64,
        perturbation_var: f64,
    },
    Whitened {
        problem: &'a Problem,
    },
    Direct {
        problem: &'a Problem,
        aat: Option<Array2<f64>>,
    },
}

impl<'a> LinearStage<'a> {
    fn new(problem: &'a Problem, config: &VampConfig) -> Result<Self> {
        let a = problem.a().view();
        let y = problem.y().view();
        match config.mode {
            // Γ = γ_w⁻¹ I exactly once the perturbation has zero variance.
            Mode::PerturbationCorrected if problem.gamma_e() == f64::INFINITY => Ok(LinearStage::White {
                factored: SpectralLmmse::new(a, y)?,
                gamma_w: problem.gamma_w(),
            }),
            Mode::Oracle | Mode::PerturbationIgnorant => Ok(LinearStage::White {
                factored: SpectralLmmse::new(a, y)?,
                gamma_w: problem.gamma_w(),
            }),
            Mode::PerturbationCorrected if problem.perturbation().is_iid() => Ok(LinearStage::IidCorrected {
                factored: SpectralLmmse::new(a, y)?,
                noise_var: 1.0 / problem.gamma_w(),
                perturbation_var: variance_from_precision(problem.gamma_e(), "gamma_e")?,
            }),
            Mode::PerturbationCorrected => match config.pc_route {
                PcRoute::Whitened => Ok(LinearStage::Whitened { problem }),
                PcRoute::Direct => {
                    let aat = (problem.rows() < problem.cols()).then(|| gram_rows(a));
                    Ok(LinearStage::Direct { problem, aat })
                }
            },
        }
    }

    /// Whether the stage consumes `Σ E_i (r₂r₂ᵀ + γ₂⁻¹I) E_iᵀ` each iteration.
    fn needs_gram(&self) -> bool {
        match self {
            LinearStage::Whitened { problem } | LinearStage::Direct { problem, .. } => {
                !problem.perturbation_disabled()
            }
            _ => false,
        }
    }

    /// `gram` is the expected perturbation Gram matrix when
    /// [`needs_gram`](Self::needs_gram) holds.
    fn estimate(
        &self,
        problem: &Problem,
        r2: ArrayView1<'_, f64>,
        gamma2: f64,
        gram: Option<Array2<f64>>,
    ) -> Result<LmmseOutput> {
        let a = problem.a().view();
        let y = problem.y().view();
        let covariance = || -> Result<Array2<f64>> {
            let vw = 1.0 / problem.gamma_w();
            let mut cov = match gram {
                Some(g) => g * variance_from_precision(problem.gamma_e(), "gamma_e")?,
                None => {
                    return problem
                        .perturbation()
                        .expected_covariance(problem.gamma_e(), problem.gamma_w(), r2, gamma2)
                }
            };
            add_to_diagonal(&mut cov, vw);
            Ok(cov)
        };
        match self {
            LinearStage::White { factored, gamma_w } => factored.estimate(a, y, *gamma_w, r2, gamma2),
            LinearStage::IidCorrected {
                factored,
                noise_var,
                perturbation_var,
            } => {
                let n = r2.len() as f64;
                let equivalent = 1.0 / (noise_var + perturbation_var * (norm_sq(r2) + n / gamma2));
                factored.estimate(a, y, equivalent, r2, gamma2)
            }
            LinearStage::Whitened { .. } => {
                // The white-noise term bounds the spectrum from below.
                let white = whiten_floored(y, a, covariance()?.view(), 1.0 / problem.gamma_w())?;
                lmmse(white.a2k.view(), white.y2k.view(), white.gamma_w2k, r2, gamma2)
            }
            LinearStage::Direct { aat, .. } => colored_lmmse(a, aat.as_ref(), y, &covariance()?, r2, gamma2),
        }
    }
}

fn damp(new: Array1<f64>, old: &Array1<f64>, weight: f64) -> Array1<f64> {
    if weight >= 1.0 {
        new
    } else {
        new * weight + old * (1.0 - weight)
    }
}

fn damp_scalar(new: f64, old: f64, weight: f64) -> f64 {
    if weight >= 1.0 {
        new
    } else {
        weight * new + (1.0 - weight) * old
    }
}

fn ensure_finite(iteration: usize, quantity: &'static str, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Diverged { iteration, quantity })
    }
}

/// Denoiser half of an iteration, waiting for the linear stage.
struct Pending {
    xhat1: Array1<f64>,
    eta1: f64,
    r2: Array1<f64>,
    gamma2: f64,
    clamps: usize,
    unclamped: bool,
}

/// One VAMP run, advanced half an iteration at a time so that several runs
/// can share the expensive perturbation Gram evaluation.
struct Session<'a> {
    problem: &'a Problem,
    prior: &'a BernoulliGaussianPrior,
    config: &'a VampConfig,
    truth: Option<&'a Array1<f64>>,
    stage: LinearStage<'a>,
    r1: Array1<f64>,
    gamma1: f64,
    prev_r2: Option<(Array1<f64>, f64)>,
    prev_xhat1: Option<Array1<f64>>,
    records: Vec<IterationRecord>,
    state: Option<VampState>,
    pending: Option<Pending>,
    done: bool,
}

impl<'a> Session<'a> {
    fn new(
        problem: &'a Problem,
        prior: &'a BernoulliGaussianPrior,
        config: &'a VampConfig,
        truth: Option<&'a Array1<f64>>,
    ) -> Result<Self> {
        let n = problem.cols();
        config.validate(n)?;
        if let Some(t) = truth {
            check_len("truth", n, t.len())?;
        }
        if config.mode == Mode::Oracle && !problem.perturbation_disabled() {
            return Err(Error::InvalidParameter(
                "oracle mode expects the realized matrix with the perturbation removed".into(),
            ));
        }
        Ok(Self {
            problem,
            prior,
            config,
            truth,
            stage: LinearStage::new(problem, config)?,
            r1: config.r1_init.clone().unwrap_or_else(|| Array1::zeros(n)),
            gamma1: config.gamma1_init,
            prev_r2: None,
            prev_xhat1: None,
            records: Vec::with_capacity(config.max_iters),
            state: None,
            pending: None,
            done: false,
        })
    }

    /// Denoises and forms the extrinsic message `(r₂, γ₂)`.
    fn denoise_half(&mut self, k: usize) -> Result<()> {
        let config = self.config;
        let mut clamps = 0;
        let den = denoise(self.prior, self.r1.view(), self.gamma1)?;
        if den.degenerate {
            clamps += 1;
        }
        ensure_finite(k, "denoiser output", is_all_finite(&den.xhat) && den.eta.is_finite())?;

        let ext1 = extrinsic(den.xhat.view(), den.eta, self.r1.view(), self.gamma1, config.gamma_min)?;
        clamps += usize::from(ext1.clamped);
        let (r2, gamma2) = match &self.prev_r2 {
            Some((old_r, old_g)) => (
                damp(ext1.r, old_r, config.damping),
                damp_scalar(ext1.gamma, *old_g, config.damping),
            ),
            None => (ext1.r, ext1.gamma),
        };
        ensure_finite(k, "r2", is_all_finite(&r2) && gamma2.is_finite())?;
        self.pending = Some(Pending {
            xhat1: den.xhat,
            eta1: den.eta,
            r2,
            gamma2,
            clamps,
            unclamped: !ext1.clamped,
        });
        Ok(())
    }

    fn message(&self) -> (ArrayView1<'_, f64>, f64) {
        let p = self.pending.as_ref().expect("denoiser half ran");
        (p.r2.view(), p.gamma2)
    }

    /// Runs the linear stage and feeds its extrinsic message back.
    fn linear_half(&mut self, k: usize, gram: Option<Array2<f64>>) -> Result<()> {
        let config = self.config;
        let Pending {
            xhat1,
            eta1,
            r2,
            gamma2,
            mut clamps,
            mut unclamped,
        } = self.pending.take().expect("denoiser half ran");

        let lin = self.stage.estimate(self.problem, r2.view(), gamma2, gram)?;
        ensure_finite(k, "LMMSE output", is_all_finite(&lin.xhat) && lin.eta.is_finite())?;

        let ext2 = extrinsic(lin.xhat.view(), lin.eta, r2.view(), gamma2, config.gamma_min)?;
        unclamped &= !ext2.clamped;
        clamps += usize::from(ext2.clamped);
        let next_r1 = damp(ext2.r, &self.r1, config.damping);
        let next_gamma1 = damp_scalar(ext2.gamma, self.gamma1, config.damping);
        ensure_finite(k, "r1", is_all_finite(&next_r1) && next_gamma1.is_finite())?;

        self.records.push(IterationRecord {
            iteration: k,
            nmse_db: self.truth.map(|t| nmse_db(t.view(), xhat1.view())),
            eta1,
            eta2: lin.eta,
            gamma1: self.gamma1,
            gamma2,
            clamps,
            unclamped,
        });

        let converged = match &self.prev_xhat1 {
            Some(prev) if config.stop_tol > 0.0 => {
                let diff = norm_sq((&xhat1 - prev).view()).sqrt();
                diff <= config.stop_tol * norm_sq(prev.view()).sqrt()
            }
            _ => false,
        };

        let r1 = std::mem::replace(&mut self.r1, next_r1);
        self.state = Some(VampState {
            iteration: k,
            r1,
            gamma1: self.gamma1,
            xhat1: xhat1.clone(),
            eta1,
            r2: r2.clone(),
            gamma2,
            xhat2: lin.xhat,
            eta2: lin.eta,
        });
        self.prev_xhat1 = Some(xhat1);
        self.prev_r2 = Some((r2, gamma2));
        self.gamma1 = next_gamma1;
        self.done = converged || k + 1 == config.max_iters;
        Ok(())
    }

    fn finish(self) -> RunTrace {
        let final_state = self.state.expect("max_iters >= 1");
        RunTrace {
            mode: self.config.mode,
            xhat: final_state.xhat1.clone(),
            records: self.records,
            final_state,
        }
    }
}

/// Runs VAMP in `config.mode` and returns the per-iteration trace. The
/// estimate is `x̂₁` of the last iteration.
pub fn run(
    problem: &Problem,
    prior: &BernoulliGaussianPrior,
    config: &VampConfig,
    truth: Option<&Array1<f64>>,
) -> Result<RunTrace> {
    let mut session = Session::new(problem, prior, config, truth)?;
    for k in 0..config.max_iters {
        session.denoise_half(k)?;
        session.linear_half(k, None)?;
        if session.done {
            break;
        }
    }
    Ok(session.finish())
}

/// Runs several problems in lockstep with one configuration. Problems that
/// share one perturbation family (the same `Arc`) have their per-iteration
/// expected Gram matrices evaluated in a single batched pass. Each result
/// equals what [`run`] returns for that problem alone.
pub fn run_batch(
    problems: &[&Problem],
    prior: &BernoulliGaussianPrior,
    config: &VampConfig,
    truths: &[Option<&Array1<f64>>],
) -> Vec<Result<RunTrace>> {
    assert_eq!(problems.len(), truths.len(), "one truth slot per problem");
    let mut slots: Vec<std::result::Result<Session<'_>, Error>> = problems
        .iter()
        .zip(truths)
        .map(|(p, t)| Session::new(p, prior, config, *t))
        .collect();

    for k in 0..config.max_iters {
        for slot in slots.iter_mut() {
            if let Ok(session) = slot {
                if !session.done {
                    if let Err(e) = session.denoise_half(k) {
                        *slot = Err(e);
                    }
                }
            }
        }

        // Group the sessions that need a Gram matrix by perturbation family.
        let mut grams: Vec<Option<Array2<f64>>> = vec![None; slots.len()];
        let mut waiting: Vec<usize> = slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                Ok(session) if !session.done && session.stage.needs_gram() => Some(i),
                _ => None,
            })
            .collect();
        let mut failed = Vec::new();
        while let Some(&first) = waiting.first() {
            let family = problems[first].perturbation_handle();
            let (group, rest): (Vec<usize>, Vec<usize>) = waiting
                .iter()
                .partition(|&&i| std::sync::Arc::ptr_eq(&problems[i].perturbation_handle(), &family));
            waiting = rest;
            let requests: Vec<_> = group
                .iter()
                .map(|&i| slots[i].as_ref().expect("live session").message())
                .collect();
            match family.expected_grams(&requests) {
                Ok(batch) => {
                    for (i, g) in group.iter().zip(batch) {
                        grams[*i] = Some(g);
                    }
                }
                // Retry one by one so each session gets its own error.
                Err(_) => {
                    for (&i, (r, gamma2)) in group.iter().zip(&requests) {
                        match family.expected_gram(*r, *gamma2) {
                            Ok(g) => grams[i] = Some(g),
                            Err(e) => failed.push((i, e)),
                        }
                    }
                }
            }
        }

        for (i, e) in failed {
            slots[i] = Err(e);
        }

        let mut active = false;
        for (slot, gram) in slots.iter_mut().zip(grams) {
            if let Ok(session) = slot {
                if !session.done {
                    if let Err(e) = session.linear_half(k, gram) {
                        *slot = Err(e);
                        continue;
                    }
                    active |= !session.done;
                }
            }
        }
        if !active {
            break;
        }
    }
    slots.into_iter().map(|s| s.map(Session::finish)).collect()
}
