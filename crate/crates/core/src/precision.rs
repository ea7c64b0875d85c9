//! Precision design drivers: one-step and steady-state optimization with iterative
//! reweighting, bisection rescaling of the noise level, and pruning.
//!
//! Every solution returned here has been re-checked with the filtering routines of
//! [`crate::estimation`]; the SDP certificate is never trusted on its own.

use nalgebra::DMatrix;

use crate::error::{numerical, Error, Result};
use crate::estimation::{
    kalman_gain, posterior_with_gain, rde_monotone_check, restrict_to_precision, solve_dare, GaussianBelief,
};
use crate::linalg::masked_trace;
use crate::lmi::{assemble_thm1, assemble_thm2, default_eps, reweight, AssembledProblem};
use crate::sdpsolve::{solve_with, SolveResult, SolveStatus, SolverSettings};
use crate::sysmodel::{
    build_lifted, check_detectability_stabilizability, LiftedSystem, PeriodicAugmentedSystem, TimeVaryingLinearSystem,
};

/// Relative threshold below which a precision is treated as exactly zero during verification.
pub const DROP_TOL: f64 = 1e-9;
/// Relative threshold defining the support (active channels) of a precision vector.
pub const SUPPORT_TOL: f64 = 1e-6;
/// Slack allowed between the verified trace and the budget.
pub const VERIFY_SLACK: f64 = 1e-6;
/// Largest eigenvalue-based constraint violation accepted from a solve that stopped short of
/// the requested tolerances.
const ACCEPT_VIOLATION: f64 = 1e-6;

const DARE_TOL: f64 = 1e-12;
const DARE_MAX_ITER: usize = 200_000;
const MONOTONE_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptions {
    /// Number of solve/reweight rounds (at least 1).
    pub rew_iters: usize,
    /// Reweighting offset; `None` selects `1e−6·max(1, ‖s‖∞)` each round.
    pub eps: Option<f64>,
    pub solver: SolverSettings,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            rew_iters: 5,
            eps: None,
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionSolution {
    /// Per-channel precision before scaling.
    pub s: Vec<f64>,
    /// Gain returned by the SDP.
    pub gain: DMatrix<f64>,
    /// `F` for the one-step design, `P^d_∞` for the steady-state design.
    pub certificate: DMatrix<f64>,
    pub cert_trace: f64,
    /// Noise multiplier from bisection; reported precisions are `s/xi`. 1 when not scaled.
    pub xi: f64,
    pub verified_trace: f64,
    pub gamma_d: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub history: Vec<Vec<f64>>,
    /// Weights used in the last solve.
    pub weights: Vec<f64>,
    /// Whether the Riccati recursion from the certificate is non-increasing (steady-state only).
    pub monotone: Option<bool>,
}

impl PrecisionSolution {
    pub fn scaled_precision(&self) -> Vec<f64> {
        self.s.iter().map(|v| v / self.xi).collect()
    }

    pub fn support(&self) -> Vec<usize> {
        support(&self.s)
    }
}

/// Indices with `sᵢ > 1e−6·‖s‖∞`.
pub fn support(s: &[f64]) -> Vec<usize> {
    crate::estimation::active_channels(s, SUPPORT_TOL)
}

fn check_budget(gamma_d: f64) -> Result<()> {
    if !(gamma_d > 0.0) || !gamma_d.is_finite() {
        return Err(Error::InfeasibleBudget(format!(
            "gamma_d = {gamma_d} cannot be met by any finite precision"
        )));
    }
    Ok(())
}

/// True if the solve can be used: optimal, or stopped early with a nearly feasible iterate.
fn usable(res: &SolveResult) -> bool {
    match res.status {
        SolveStatus::Optimal => true,
        SolveStatus::MaxIter | SolveStatus::NumericalFailure => {
            res.primal_residual <= ACCEPT_VIOLATION && res.x.iter().all(|v| v.is_finite())
        }
        SolveStatus::Infeasible | SolveStatus::Unbounded => false,
    }
}

struct Round {
    result: SolveResult,
    problem: AssembledProblem,
    s: Vec<f64>,
    weights: Vec<f64>,
}

/// Solve/reweight loop shared by both designs. `W₁ = I`; stops early once the support repeats.
fn reweighted<F>(ny: usize, s_max: &[f64], opts: &DesignOptions, mut assemble: F) -> Result<(Round, usize, Vec<Vec<f64>>)>
where
    F: FnMut(&[f64]) -> Result<AssembledProblem>,
{
    if opts.rew_iters == 0 {
        return Err(Error::Config("rew_iters must be at least 1".into()));
    }
    let mut w = vec![1.0; ny];
    let mut history = Vec::new();
    let mut last: Option<Round> = None;
    let mut iterations = 0;
    for round in 0..opts.rew_iters {
        let problem = assemble(&w)?;
        let result = solve_with(&problem.problem, &opts.solver)?;
        log::debug!(
            "reweighting round {round}: status {:?}, objective {:.6e}, {} solver iterations",
            result.status,
            result.objective,
            result.iterations
        );
        if !usable(&result) {
            if last.is_some() {
                log::warn!("reweighting round {round} ended with {:?}; keeping the previous round", result.status);
                break;
            }
            return match result.status {
                SolveStatus::Infeasible => Err(Error::InfeasibleBudget(
                    "the precision design problem is infeasible for this budget and s_max".into(),
                )),
                other => numerical(format!("SDP solve failed with status {other:?}")),
            };
        }
        iterations += 1;
        let sg = problem.layout.group("s");
        let s: Vec<f64> = sg
            .extract(&result.x)
            .iter()
            .zip(s_max)
            .map(|(&v, &hi)| v.clamp(0.0, hi))
            .collect();
        history.push(s.clone());
        let previous_support = last.as_ref().map(|r| support(&r.s));
        let same = previous_support.map_or(false, |p| p == support(&s));
        let eps = opts.eps.unwrap_or_else(|| default_eps(&s));
        let next_w = reweight(&w, &s, eps);
        last = Some(Round {
            result,
            problem,
            s,
            weights: w,
        });
        if same {
            break;
        }
        w = next_w;
    }
    let last = last.expect("at least one usable round");
    Ok((last, iterations, history))
}

/// Posterior trace of the last state of the window under the optimal gain for precisions `s`.
pub fn onestep_verified_trace(lift: &LiftedSystem, p_minus: &DMatrix<f64>, s: &[f64]) -> Result<f64> {
    let (c, r, keep) = restrict_to_precision(&lift.cal_c, s, DROP_TOL);
    let post = if keep.is_empty() {
        p_minus.clone()
    } else {
        let k = kalman_gain(p_minus, &c, &r)?;
        posterior_with_gain(p_minus, &c, &r, &k)
    };
    Ok(masked_trace(&lift.mask_m, &post))
}

/// One-step precision design over the window starting at `start`.
pub fn optimize_onestep(
    sys: &TimeVaryingLinearSystem,
    prior: &GaussianBelief,
    start: usize,
    gamma_d: f64,
    s_max: &[f64],
    opts: &DesignOptions,
) -> Result<PrecisionSolution> {
    check_budget(gamma_d)?;
    let lift = build_lifted(sys, start)?;
    let p_minus = lift.prior_covariance(&prior.cov);
    let (round, iterations, history) = reweighted(lift.ny(), s_max, opts, |w| {
        assemble_thm1(&lift, &p_minus, gamma_d, w, s_max)
    })?;
    let layout = &round.problem.layout;
    let certificate = layout.group("F").extract(&round.result.x);
    let verified = onestep_verified_trace(&lift, &p_minus, &round.s)?;
    if verified > gamma_d + VERIFY_SLACK {
        return numerical(format!(
            "verification failed: posterior trace {verified:.9e} exceeds gamma_d = {gamma_d:.9e}"
        ));
    }
    Ok(PrecisionSolution {
        s: round.s,
        gain: round.problem.gain(&round.result.x),
        cert_trace: certificate.trace(),
        certificate,
        xi: 1.0,
        verified_trace: verified,
        gamma_d,
        status: round.result.status,
        iterations,
        history,
        weights: round.weights,
        monotone: None,
    })
}

/// Steady-state prior covariance for precisions `s`, noise multiplied by `xi`.
pub fn steady_state_covariance(aug: &PeriodicAugmentedSystem, s: &[f64], xi: f64) -> Result<DMatrix<f64>> {
    let (c, r, _) = restrict_to_precision(&aug.cm, s, DROP_TOL);
    solve_dare(&aug.am, &c, &aug.qeff(), &(r * xi), DARE_TOL, DARE_MAX_ITER)
}

/// `trace(M_x P∞ M_xᵀ)` for precisions `s` with noise multiplier `xi`.
pub fn steady_state_trace(aug: &PeriodicAugmentedSystem, s: &[f64], xi: f64) -> Result<f64> {
    let p = steady_state_covariance(aug, s, xi)?;
    Ok(masked_trace(&aug.mask_mx, &p))
}

fn require_detectable(aug: &PeriodicAugmentedSystem, s: &[f64]) -> Result<()> {
    let report = check_detectability_stabilizability(aug, s)?;
    if !report.ok() {
        return Err(Error::Detectability(format!(
            "channels {:?}: undetectable modes {:?}, unstabilizable modes {:?}",
            report.retained_channels, report.undetectable_modes, report.unstabilizable_modes
        )));
    }
    Ok(())
}

/// Steady-state precision design for the periodic augmented system.
pub fn optimize_steadystate(
    aug: &PeriodicAugmentedSystem,
    gamma_d: f64,
    delta: f64,
    s_max: &[f64],
    opts: &DesignOptions,
) -> Result<PrecisionSolution> {
    check_budget(gamma_d)?;
    require_detectable(aug, &vec![1.0; aug.ny()])?;
    let (round, iterations, history) = reweighted(aug.ny(), s_max, opts, |w| {
        assemble_thm2(aug, gamma_d, delta, w, s_max)
    })?;
    let layout = &round.problem.layout;
    let certificate = layout.group("P").extract(&round.result.x);
    let cert_trace = masked_trace(&aug.mask_mx, &certificate);

    let kept: Vec<f64> = {
        let top = round.s.iter().cloned().fold(0.0, f64::max);
        round.s.iter().map(|&v| if v > DROP_TOL * top { v } else { 0.0 }).collect()
    };
    require_detectable(aug, &kept)?;
    let verified = steady_state_trace(aug, &round.s, 1.0)?;
    if verified > gamma_d + VERIFY_SLACK {
        return numerical(format!(
            "verification failed: steady-state trace {verified:.9e} exceeds gamma_d = {gamma_d:.9e}"
        ));
    }
    let (c, r, _) = restrict_to_precision(&aug.cm, &round.s, DROP_TOL);
    let monotone = rde_monotone_check(&certificate, &aug.am, &c, &aug.qeff(), &r, MONOTONE_STEPS);
    if !monotone {
        log::warn!("Riccati recursion from the returned certificate is not monotone");
    }
    Ok(PrecisionSolution {
        s: round.s,
        gain: round.problem.gain(&round.result.x),
        certificate,
        cert_trace,
        xi: 1.0,
        verified_trace: verified,
        gamma_d,
        status: round.result.status,
        iterations,
        history,
        weights: round.weights,
        monotone: Some(monotone),
    })
}

/// Trace of one bisection probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionStep {
    pub xi: f64,
    pub trace: f64,
    pub xi_min: f64,
    pub xi_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bisection {
    /// Final lower end of the bracket: the largest probed noise multiplier meeting the budget.
    pub xi: f64,
    /// Steady-state trace at `xi`.
    pub trace: f64,
    pub steps: Vec<BisectionStep>,
}

/// Bisection on the noise multiplier `ξ ∈ (0, 10³)` for the noise `ξ·diag(s)⁻¹`.
///
/// Each probe solves the Riccati equation and moves `ξ_min` up when the trace is below the
/// budget, otherwise moves `ξ_max` down.
pub fn bisection_scale(aug: &PeriodicAugmentedSystem, s: &[f64], gamma_d: f64, max_iter: usize) -> Result<Bisection> {
    check_budget(gamma_d)?;
    let (mut lo, mut hi) = (0.0_f64, 1e3_f64);
    let mut steps = Vec::with_capacity(max_iter);
    let mut trace_lo = f64::NAN;
    for _ in 0..max_iter {
        let xi = 0.5 * (lo + hi);
        let trace = steady_state_trace(aug, s, xi)?;
        if trace < gamma_d {
            lo = xi;
            trace_lo = trace;
        } else {
            hi = xi;
        }
        steps.push(BisectionStep {
            xi,
            trace,
            xi_min: lo,
            xi_max: hi,
        });
    }
    if lo == 0.0 {
        return Err(Error::InfeasibleBudget(
            "no positive noise multiplier meets the budget with these channels".into(),
        ));
    }
    Ok(Bisection {
        xi: lo,
        trace: trace_lo,
        steps,
    })
}

/// Applies bisection to a steady-state solution and records the scaled verification.
pub fn scale_solution(
    aug: &PeriodicAugmentedSystem,
    sol: &PrecisionSolution,
    gamma_d: f64,
    max_iter: usize,
) -> Result<PrecisionSolution> {
    let b = bisection_scale(aug, &sol.s, gamma_d, max_iter)?;
    let mut out = sol.clone();
    out.xi = b.xi;
    out.verified_trace = steady_state_trace(aug, &sol.s, b.xi)?;
    out.gamma_d = gamma_d;
    if out.verified_trace > gamma_d + VERIFY_SLACK {
        return numerical("scaled solution fails verification");
    }
    Ok(out)
}

/// Zeroes channels with `sᵢ < threshold·max(s)`, re-checks detectability and reruns bisection.
pub fn prune_and_rescale(
    aug: &PeriodicAugmentedSystem,
    sol: &PrecisionSolution,
    threshold: f64,
    gamma_d: f64,
    max_iter: usize,
) -> Result<PrecisionSolution> {
    if !(threshold >= 0.0) {
        return Err(Error::Config("prune threshold must be non-negative".into()));
    }
    let top = sol.s.iter().cloned().fold(0.0, f64::max);
    let pruned: Vec<f64> = sol
        .s
        .iter()
        .map(|&v| if v < threshold * top { 0.0 } else { v })
        .collect();
    require_detectable(aug, &pruned)?;
    let mut base = sol.clone();
    base.s = pruned;
    scale_solution(aug, &base, gamma_d, max_iter)
}

/// Default iteration count of [`bisection_scale`].
pub const BISECTION_ITERS: usize = 100;
