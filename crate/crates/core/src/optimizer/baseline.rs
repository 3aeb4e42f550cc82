//! Convex baseline designs. Each solves one relaxed subproblem and applies
//! the same rank-one extraction and recovery as the outer loop.

use serde::{Deserialize, Serialize};

use super::{extract_rank1, recover_beamformers, require_optimal};
use crate::conic::{assemble_equal_diagonal, assemble_linear, solve};
use crate::error::Result;
use crate::linalg::CMatrix;
use crate::metrics::{Beamformer, TargetPriors};
use crate::scene::{target_f_matrix, SceneConfig, UserChannel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Maximize `tr(F(0°) R_X)`: all sensing toward broadside.
    #[serde(rename = "max_sinr_0deg")]
    MaxSinr0Deg,
    /// Maximize `tr(F̄ R_X)` with `F̄ = Σ_m w_θ(θ_m) F(θ_m)`; the reflectivity
    /// second moment is a positive constant and dropped.
    MaxEsinr,
    /// Equal per-antenna power, maximizing the smallest SINR slack.
    Omni,
}

/// Prior-averaged target matrix `F̄`.
pub fn mean_f_matrix(priors: &TargetPriors, cfg: &SceneConfig) -> CMatrix {
    let n = cfg.n_tx;
    let mut f = CMatrix::zeros(n, n);
    for (theta, w) in priors.theta.iter() {
        f += target_f_matrix(theta, cfg).scale(w);
    }
    f
}

pub fn baseline(
    kind: BaselineKind,
    cfg: &SceneConfig,
    channels: &[UserChannel],
    priors: &TargetPriors,
) -> Result<Beamformer> {
    let sp = match kind {
        BaselineKind::MaxSinr0Deg => assemble_linear(target_f_matrix(0.0, cfg), 0.0, channels, cfg),
        BaselineKind::MaxEsinr => assemble_linear(mean_f_matrix(priors, cfg), 0.0, channels, cfg),
        BaselineKind::Omni => assemble_equal_diagonal(channels, cfg),
    };
    let sol = solve(&sp);
    require_optimal(&sol)?;
    let rank1 = extract_rank1(&sol, &sp.q_matrices)?;
    recover_beamformers(&rank1, channels, cfg.optimizer.jitter)
}

/// Feasible starting point for the outer loop: the Max-ESINR design, which
/// puts strictly positive power toward every azimuth the prior supports.
pub fn initialize(cfg: &SceneConfig, channels: &[UserChannel], priors: &TargetPriors) -> Result<Beamformer> {
    baseline(BaselineKind::MaxEsinr, cfg, channels, priors)
}
