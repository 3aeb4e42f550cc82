//! Successive convex approximation over semidefinite relaxations, plus the
//! convex baseline designs it is compared against.
//!
//! Each outer iteration expands `EP_d` at the current covariance, solves
//! the relaxed subproblem, maps its solution to rank-one user covariances
//! (which keeps the objective and every constraint value), factors the result
//! into a beamformer `W†`, and steps toward it with `δ` chosen by Armijo
//! backtracking on the true `EP_d`.
//!
//! The expansion is the gradient term plus two concave terms, both zero with
//! zero gradient at the anchor: the concave part of the exact curvature
//! along the per-angle sensing powers, and a small proximal term. The first
//! turns the iteration into a projected Newton step in the quantities `EP_d`
//! depends on; a purely linear model jumps between vertices of the feasible
//! set and only creeps toward the fixed point.

mod baseline;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use baseline::{baseline, initialize, mean_f_matrix, BaselineKind};

use crate::conic::{assemble_with, solve, SolveStatus, SubproblemSolution, SurrogateTerms};
use crate::error::{IsacError, Result};
use crate::linalg::{hermitian_part, min_eigenvalue, outer, psd_lower_factor, real_inner, second_eigen_ratio, trace_re, CMatrix};
use crate::metrics::{expected_pd_with, Beamformer, Covariance, DetectionModel, TargetPriors};
use crate::scene::{SceneConfig, UserChannel};

/// Knobs of the outer loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    /// Iteration budget `T_max`.
    pub max_iters: usize,
    /// Stop once `δ ‖W† − W‖_F` drops below this (in √W).
    pub tol: f64,
    /// Backtracking contraction factor.
    pub armijo_beta: f64,
    /// Sufficient-increase coefficient.
    pub armijo_c1: f64,
    /// Eigenvalues of the sensing residual below `jitter · trace` are treated
    /// as zero when factoring it.
    pub jitter: f64,
    /// Space in which the Armijo line search interpolates.
    pub step_space: StepSpace,
    /// Weight `τ` of the proximal term `(μ/2)‖R − R^{(t)}‖_F²`, with
    /// `μ = τ λ_max(G) / P_T`; 0 drops it.
    pub proximal_weight: f64,
    /// Subtract the concave part of the per-angle curvature of `EP_d`.
    pub curvature: bool,
}

/// Where `δ` interpolates between the iterate and the subproblem solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSpace {
    /// `R ← R + δ(R̃ − R)`, `W_k ← W_k + δ(W̃_k − W_k)`, then rank-one
    /// extraction and recovery. The directional derivative is the surrogate
    /// gain, which is positive away from stationary points.
    #[default]
    Covariance,
    /// `W ← W + δ(W† − W)` on the stacked beamformer.
    Beamformer,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self { max_iters: 50, tol: 1e-4, armijo_beta: 0.5, armijo_c1: 1e-4, jitter: 1e-12, step_space: StepSpace::Covariance, proximal_weight: 0.1, curvature: true }
    }
}

impl OptimizerSettings {
    pub fn surrogate_terms(&self) -> SurrogateTerms {
        SurrogateTerms { proximal_weight: self.proximal_weight, curvature: self.curvature }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters >= 1
            && self.tol > 0.0
            && self.armijo_beta > 0.0
            && self.armijo_beta < 1.0
            && self.armijo_c1 > 0.0
            && self.armijo_c1 < 1.0
            && self.jitter >= 0.0
            && self.proximal_weight >= 0.0
            && self.proximal_weight.is_finite();
        if ok {
            Ok(())
        } else {
            Err(IsacError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Smallest Armijo step tried before the iteration is declared stalled.
pub const MIN_STEP: f64 = 1.0 / (1u64 << 30) as f64;

/// Covariance and rank-one user covariances after extraction.
#[derive(Debug, Clone)]
pub struct RankOneSolution {
    pub r_x: CMatrix,
    pub w: Vec<CMatrix>,
}

/// Map a relaxed solution to rank-one user covariances:
/// `W̃_k = W̄_k Q_k W̄_k^H / tr(Q_k W̄_k)`, `R̃_X = R̄_X`.
pub fn extract_rank1(sol: &SubproblemSolution, q_matrices: &[CMatrix]) -> Result<RankOneSolution> {
    extract_rank_one(sol.r_x_bar.0.clone(), &sol.w_bars, q_matrices)
}

/// [`extract_rank1`] on an arbitrary feasible `(R_X, W_1..W_K)`.
pub fn extract_rank_one(r_x: CMatrix, w_bars: &[CMatrix], q_matrices: &[CMatrix]) -> Result<RankOneSolution> {
    let scale = trace_re(&r_x).max(f64::MIN_POSITIVE);
    let mut w = Vec::with_capacity(q_matrices.len());
    for (k, (q, wb)) in q_matrices.iter().zip(w_bars).enumerate() {
        let gain = real_inner(q, wb);
        if !(gain > 1e-14 * trace_re(q) * scale) {
            return Err(IsacError::DegenerateUser { user: k, value: gain });
        }
        w.push(hermitian_part(&(wb * q * wb.adjoint()).unscale(gain)));
    }
    Ok(RankOneSolution { r_x, w })
}

/// Build `W† = [w̃_1 … w̃_K, W̃_s]` from a rank-one solution.
///
/// `w̃_k = W̃_k h_k / √(h_k^H W̃_k h_k)`, which makes `h_k^H w̃_k` real and
/// positive, and `W̃_s` is a lower-triangular factor of `R̃_X − Σ W̃_k`.
pub fn recover_beamformers(rank1: &RankOneSolution, channels: &[UserChannel], jitter: f64) -> Result<Beamformer> {
    let n = rank1.r_x.nrows();
    let k = rank1.w.len();
    let mut w_comm = CMatrix::zeros(n, k);
    let mut residual = rank1.r_x.clone();
    for (i, (wk, h)) in rank1.w.iter().zip(channels).enumerate() {
        let col = h.column();
        let proj = wk * &col;
        let gain = (col.adjoint() * &proj)[(0, 0)].re;
        if !(gain > 0.0) {
            return Err(IsacError::DegenerateUser { user: i, value: gain });
        }
        w_comm.set_column(i, &proj.unscale(gain.sqrt()));
        residual -= wk;
    }
    let w_sense = psd_lower_factor(&residual, jitter, 1e-6)?;
    Ok(Beamformer { w_comm, w_sense })
}

/// Checkable consequences of the rank-one construction for one iteration.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct RankOneDiagnostics {
    /// Largest `λ₂/λ₁` over the extracted `W̃_k`.
    pub max_second_eig_ratio: f64,
    /// Largest `|tr(Q W̃) − tr(Q W̄)| / tr(Q W̄)`.
    pub max_gain_rel_err: f64,
    /// `λ_min(R̃ − Σ W̃_k) / tr(R̃)`.
    pub order_min_eig_rel: f64,
    /// `‖W† W†^H − R̃‖_F / ‖R̃‖_F`.
    pub recovery_rel_err: f64,
}

pub fn rank_one_diagnostics(
    sol: &SubproblemSolution,
    q_matrices: &[CMatrix],
    rank1: &RankOneSolution,
    recovered: &Beamformer,
) -> RankOneDiagnostics {
    let mut d = RankOneDiagnostics::default();
    let mut residual = rank1.r_x.clone();
    for ((q, wb), wt) in q_matrices.iter().zip(&sol.w_bars).zip(&rank1.w) {
        d.max_second_eig_ratio = d.max_second_eig_ratio.max(second_eigen_ratio(wt));
        let before = real_inner(q, wb);
        let after = real_inner(q, wt);
        d.max_gain_rel_err = d.max_gain_rel_err.max((after - before).abs() / before);
        residual -= wt;
    }
    let tr = trace_re(&rank1.r_x).max(f64::MIN_POSITIVE);
    d.order_min_eig_rel = min_eigenvalue(&residual) / tr;
    let rebuilt = recovered.covariance().0;
    d.recovery_rel_err = (&rebuilt - &rank1.r_x).norm() / rank1.r_x.norm().max(f64::MIN_POSITIVE);
    d
}

/// One row of the optimization trace.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// `EP_d` after the update.
    pub epd: f64,
    /// Surrogate value at the subproblem optimum (constant included).
    pub surrogate: f64,
    /// Accepted Armijo step (0 when the step was rejected).
    pub step: f64,
    /// `δ ‖W† − W‖_F`.
    pub residual: f64,
    pub solver_status: SolveStatus,
    pub solver_iterations: usize,
    pub elapsed_s: f64,
    pub diagnostics: RankOneDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// Backtracking fell below [`MIN_STEP`] without sufficient increase.
    Stalled,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::Stalled => "stalled",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationTrace {
    pub initial_epd: f64,
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone)]
pub struct ScaOutcome {
    pub beamformer: Beamformer,
    pub trace: OptimizationTrace,
    pub termination: Termination,
    pub epd: f64,
}

fn require_optimal(sol: &SubproblemSolution) -> Result<()> {
    match sol.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::Infeasible => Err(IsacError::Infeasible(
            "SINR floors cannot be met within the power budget".into(),
        )),
        SolveStatus::NumericalFailure => Err(IsacError::Numerical(format!(
            "SDP solver stopped at relative gap {:e} after {} iterations",
            sol.rel_gap, sol.iterations
        ))),
    }
}

/// Run the outer loop from the Max-ESINR initializer.
pub fn sca_sdr(
    cfg: &SceneConfig,
    channels: &[UserChannel],
    priors: &TargetPriors,
    settings: &OptimizerSettings,
) -> Result<ScaOutcome> {
    let start = initialize(cfg, channels, priors)?;
    sca_sdr_from(start, cfg, channels, priors, settings)
}

/// Run the outer loop from a given feasible beamformer.
pub fn sca_sdr_from(
    initial: Beamformer,
    cfg: &SceneConfig,
    channels: &[UserChannel],
    priors: &TargetPriors,
    settings: &OptimizerSettings,
) -> Result<ScaOutcome> {
    settings.validate()?;
    let clock = Instant::now();
    let model = DetectionModel::from_config(cfg)?;
    let k = channels.len();
    let mut current = initial;
    let mut r = current.covariance().0;
    let mut epd = expected_pd_with(&model, &r, priors)?;
    let initial_epd = epd;
    let mut records = Vec::new();
    let mut termination = Termination::MaxIterations;

    for iter in 1..=settings.max_iters {
        let sp = assemble_with(&Covariance(r.clone()), priors, channels, cfg, settings.surrogate_terms())?;
        let sol = solve(&sp);
        require_optimal(&sol)?;
        let surrogate = sp.surrogate_value(&sol.r_x_bar.0);
        let rank1 = extract_rank1(&sol, &sp.q_matrices)?;
        let target = recover_beamformers(&rank1, channels, settings.jitter)?;
        let diagnostics = rank_one_diagnostics(&sol, &sp.q_matrices, &rank1, &target);
        let w = current.joint();
        let direction = target.joint() - &w;
        log::trace!(
            "iter {iter}: |R~ - R|/|R| = {:.2e}, |W+ - W| = {:.2e}",
            (&rank1.r_x - &r).norm() / r.norm(),
            direction.norm()
        );

        let accepted = match settings.step_space {
            StepSpace::Covariance => {
                let dir_r = &rank1.r_x - &r;
                let slope = real_inner(&sp.objective_matrix, &dir_r);
                let users: Vec<CMatrix> =
                    (0..k).map(|i| outer(&current.w_comm.column(i).into_owned())).collect();
                armijo(settings, epd, slope, |step| {
                    let r_c = &r + dir_r.scale(step);
                    Ok((expected_pd_with(&model, &r_c, priors)?, r_c))
                })?
                .map(|(step, epd_c, r_c)| -> Result<_> {
                    let mixed: Vec<CMatrix> =
                        users.iter().zip(&rank1.w).map(|(a, b)| a + (b - a).scale(step)).collect();
                    let rank1_c = extract_rank_one(r_c.clone(), &mixed, &sp.q_matrices)?;
                    let bf = recover_beamformers(&rank1_c, channels, settings.jitter)?;
                    Ok((step, epd_c, r_c, bf))
                })
                .transpose()?
            }
            StepSpace::Beamformer => {
                // d/dδ EP_d((W + δD)(W + δD)^H) at δ = 0 is 2 Re tr(W^H G D).
                let slope = 2.0 * real_inner(&(&sp.objective_matrix * &w), &direction);
                armijo(settings, epd, slope, |step| {
                    let w_c = &w + direction.scale(step);
                    let r_c = &w_c * w_c.adjoint();
                    Ok((expected_pd_with(&model, &r_c, priors)?, (w_c, r_c)))
                })?
                .map(|(step, epd_c, (w_c, r_c))| (step, epd_c, r_c, Beamformer::from_joint(&w_c, k)))
            }
        };
        let (step, residual) = match accepted {
            Some((step, epd_c, r_c, bf)) => {
                current = bf;
                r = r_c;
                epd = epd_c;
                (step, step * direction.norm())
            }
            None => (0.0, 0.0),
        };
        records.push(IterationRecord {
            iter,
            epd,
            surrogate,
            step,
            residual,
            solver_status: sol.status,
            solver_iterations: sol.iterations,
            elapsed_s: clock.elapsed().as_secs_f64(),
            diagnostics,
        });
        log::debug!("iter {iter}: epd={epd:.9} step={step:e} residual={residual:e}");
        if step == 0.0 {
            termination = Termination::Stalled;
            break;
        }
        if residual < settings.tol {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(ScaOutcome {
        beamformer: current,
        trace: OptimizationTrace { initial_epd, records },
        termination,
        epd,
    })
}

/// Backtracking from `δ = 1`: the first `δ` with
/// `EP_d(δ) ≥ EP_d(0) + c1 δ max(slope, 0)`, or `None` below [`MIN_STEP`].
fn armijo<T>(
    settings: &OptimizerSettings,
    epd: f64,
    slope: f64,
    mut eval: impl FnMut(f64) -> Result<(f64, T)>,
) -> Result<Option<(f64, f64, T)>> {
    let mut step = 1.0;
    while step >= MIN_STEP {
        let (epd_c, payload) = eval(step)?;
        if epd_c >= epd + settings.armijo_c1 * step * slope.max(0.0) {
            return Ok(Some((step, epd_c, payload)));
        }
        step *= settings.armijo_beta;
    }
    Ok(None)
}

/// Design schemes compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Proposed,
    #[serde(rename = "max_sinr_0deg")]
    MaxSinr0Deg,
    MaxEsinr,
    Omni,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Proposed, Scheme::MaxSinr0Deg, Scheme::MaxEsinr, Scheme::Omni];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::MaxSinr0Deg => "max_sinr_0deg",
            Scheme::MaxEsinr => "max_esinr",
            Scheme::Omni => "omni",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = IsacError;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|scheme| scheme.name() == s)
            .ok_or_else(|| IsacError::Config(format!("unknown scheme {s:?}")))
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Design a beamformer with the given scheme.
pub fn design(scheme: Scheme, cfg: &SceneConfig, channels: &[UserChannel], priors: &TargetPriors) -> Result<Beamformer> {
    match scheme {
        Scheme::Proposed => Ok(sca_sdr(cfg, channels, priors, &cfg.optimizer)?.beamformer),
        Scheme::MaxSinr0Deg => baseline(BaselineKind::MaxSinr0Deg, cfg, channels, priors),
        Scheme::MaxEsinr => baseline(BaselineKind::MaxEsinr, cfg, channels, priors),
        Scheme::Omni => baseline(BaselineKind::Omni, cfg, channels, priors),
    }
}
