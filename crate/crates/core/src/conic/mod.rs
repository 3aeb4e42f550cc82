//! The per-iteration convex subproblem: a linear objective in `R_X` over
//! covariances that meet the SINR floors, the power budget and the order
//! constraint `R_X ⪰ Σ_k W_k`, with the rank-one constraints dropped.
//! Two optional concave terms refine the linear model: the exact concave
//! part of the curvature of `EP_d` along the per-angle sensing powers, and
//! a proximal term on `R_X` that makes the maximizer unique.
//!
//! Variables are parametrized as `W_1..W_K ⪰ 0` and `Z = R_X − Σ W_k ⪰ 0`,
//! each realized as a real `2N_t × 2N_t` PSD block through
//! [`embed`](embed::embed), and solved with the interior-point method in
//! [`sdp`]. Powers are normalized by the budget inside the solver.

pub mod embed;
pub mod sdp;

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::Result;
use crate::linalg::{hermitian_eigenvalues, hermitian_part, real_inner, CMatrix, ONE, ZERO};
use crate::metrics::{expected_pd, expected_pd_curvature, expected_pd_gradient, Covariance, TargetPriors};
use crate::scene::{target_f_matrix, SceneConfig, UserChannel};
use embed::{de_embed, embed};
use sdp::{solve_sdp, Block, BlockVec, Cone, SdpProblem, SdpSettings, SdpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubproblemKind {
    /// Maximize `tr(G R_X)`.
    Linear,
    /// Equal per-antenna power `diag(R_X) = P_T / N_t`, maximizing the
    /// smallest normalized SINR-constraint slack.
    EqualDiagonalMaxMinSlack,
}

#[derive(Debug, Clone)]
pub struct Subproblem {
    pub kind: SubproblemKind,
    /// Hermitian coefficient `G` of the linear objective `Re tr(G R_X)`.
    pub objective_matrix: CMatrix,
    /// Part of the surrogate that does not depend on `R_X`.
    pub constant_term: f64,
    /// `Q_k = h_k h_k^H`.
    pub q_matrices: Vec<CMatrix>,
    pub gamma_th: f64,
    pub power_budget: f64,
    pub comm_noise: f64,
    pub n_tx: usize,
    pub proximal: Option<Proximal>,
    pub curvature: Option<SensingCurvature>,
}

impl Subproblem {
    /// `(N_t, K)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.n_tx, self.q_matrices.len())
    }

    /// Surrogate objective at `r`: constant, linear term and concave
    /// penalties. The communication-power tie-break is not included.
    pub fn surrogate_value(&self, r: &CMatrix) -> f64 {
        let prox = self.proximal.as_ref().map_or(0.0, |p| p.penalty(r));
        let curv = self.curvature.as_ref().map_or(0.0, |c| c.penalty(r));
        self.constant_term + real_inner(&self.objective_matrix, r) - prox - curv
    }
}

/// `(μ/2) ‖R_X − R^{(t)}‖_F²`, subtracted from the surrogate.
#[derive(Debug, Clone)]
pub struct Proximal {
    pub anchor: CMatrix,
    /// `μ = τ λ_max(G) / P_T`, so `τ` is dimensionless.
    pub weight: f64,
    /// Cost per watt of `Σ_k tr(W_k)`. For a fixed `R_X` the per-user
    /// blocks are otherwise only pinned by the SINR rows, so the solver
    /// would return an arbitrary point of the optimal face.
    pub comm_weight: f64,
}

/// Ratio of the communication power tie-break to `λ_max(G)`.
pub const COMM_TIE_BREAK: f64 = 1e-3;

impl Proximal {
    pub fn new(anchor: CMatrix, gradient: &CMatrix, power_budget: f64, tau: f64) -> Self {
        let lam = hermitian_eigenvalues(gradient).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Self { anchor, weight: tau * lam / power_budget, comm_weight: COMM_TIE_BREAK * lam }
    }

    pub fn penalty(&self, r: &CMatrix) -> f64 {
        0.5 * self.weight * (r - &self.anchor).norm_squared()
    }
}

/// `½ Σ_m c_m (tr(F_m R_X) − s_m)²`, subtracted from the surrogate. The
/// weights are the concave part `c_m = max(−∂²EP_d/∂s_m², 0)` at the anchor.
#[derive(Debug, Clone)]
pub struct SensingCurvature {
    pub f_matrices: Vec<CMatrix>,
    pub anchor_power: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Nodes whose weight is below this fraction of the largest are dropped.
const CURVATURE_CUTOFF: f64 = 1e-8;

impl SensingCurvature {
    pub fn new(anchor: &Covariance, priors: &TargetPriors, cfg: &SceneConfig) -> Result<Self> {
        let second = expected_pd_curvature(anchor, priors, cfg)?;
        let top = second.iter().fold(0.0_f64, |m, h| m.max(-h));
        let mut out = Self { f_matrices: Vec::new(), anchor_power: Vec::new(), weights: Vec::new() };
        for ((theta, _), h) in priors.theta.iter().zip(second) {
            if -h > CURVATURE_CUTOFF * top && top > 0.0 {
                let f = target_f_matrix(theta, cfg);
                out.anchor_power.push(real_inner(&f, &anchor.0));
                out.f_matrices.push(f);
                out.weights.push(-h);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn penalty(&self, r: &CMatrix) -> f64 {
        self.f_matrices
            .iter()
            .zip(&self.anchor_power)
            .zip(&self.weights)
            .map(|((f, s), c)| 0.5 * c * (real_inner(f, r) - s).powi(2))
            .sum()
    }
}

/// Which concave terms [`assemble_with`] adds to the linear model.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurrogateTerms {
    /// Dimensionless proximal weight `τ`; no proximal term when 0.
    pub proximal_weight: f64,
    pub curvature: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical_failure",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub r_x_bar: Covariance,
    pub w_bars: Vec<CMatrix>,
    pub status: SolveStatus,
    /// `Re tr(G R̄_X)` for linear problems (constant excluded), or the
    /// attained min-slack for the equal-diagonal problem.
    pub objective_value: f64,
    pub rel_gap: f64,
    pub iterations: usize,
    pub solve_time: f64,
}

fn user_q_matrices(channels: &[UserChannel]) -> Vec<CMatrix> {
    channels.iter().map(UserChannel::q_matrix).collect()
}

/// Linear subproblem with a given objective coefficient.
pub fn assemble_linear(objective: CMatrix, constant: f64, channels: &[UserChannel], cfg: &SceneConfig) -> Subproblem {
    Subproblem {
        kind: SubproblemKind::Linear,
        objective_matrix: hermitian_part(&objective),
        constant_term: constant,
        q_matrices: user_q_matrices(channels),
        gamma_th: cfg.sinr_threshold_linear(),
        power_budget: cfg.total_power_w(),
        comm_noise: cfg.comm_noise_w(),
        n_tx: cfg.n_tx,
        proximal: None,
        curvature: None,
    }
}

/// Surrogate subproblem at `anchor`: the objective coefficient is the
/// prior-weighted gradient of `EP_d` and the constant collects
/// `EP_d(anchor) − ⟨∇, anchor⟩`. The concave terms follow the scene's
/// optimizer settings.
pub fn assemble(
    anchor: &Covariance,
    priors: &TargetPriors,
    channels: &[UserChannel],
    cfg: &SceneConfig,
) -> Result<Subproblem> {
    let terms = SurrogateTerms { proximal_weight: cfg.optimizer.proximal_weight, curvature: cfg.optimizer.curvature };
    assemble_with(anchor, priors, channels, cfg, terms)
}

/// [`assemble`] with explicit concave terms.
pub fn assemble_with(
    anchor: &Covariance,
    priors: &TargetPriors,
    channels: &[UserChannel],
    cfg: &SceneConfig,
    terms: SurrogateTerms,
) -> Result<Subproblem> {
    let grad = expected_pd_gradient(anchor, priors, cfg)?;
    let base = expected_pd(anchor, priors, cfg)?;
    let constant = base - real_inner(&grad.matrix, &anchor.0);
    let mut sp = assemble_linear(grad.matrix, constant, channels, cfg);
    if terms.proximal_weight > 0.0 {
        let prox = Proximal::new(anchor.0.clone(), &sp.objective_matrix, sp.power_budget, terms.proximal_weight);
        sp.proximal = Some(prox);
    }
    if terms.curvature {
        sp.curvature = Some(SensingCurvature::new(anchor, priors, cfg)?).filter(|c| !c.is_empty());
    }
    Ok(sp)
}

/// Equal per-antenna power subproblem used by the omnidirectional baseline.
pub fn assemble_equal_diagonal(channels: &[UserChannel], cfg: &SceneConfig) -> Subproblem {
    let n = cfg.n_tx;
    Subproblem {
        kind: SubproblemKind::EqualDiagonalMaxMinSlack,
        objective_matrix: CMatrix::zeros(n, n),
        constant_term: 0.0,
        q_matrices: user_q_matrices(channels),
        gamma_th: cfg.sinr_threshold_linear(),
        power_budget: cfg.total_power_w(),
        comm_noise: cfg.comm_noise_w(),
        n_tx: n,
        proximal: None,
        curvature: None,
    }
}

/// Block layout of the real SDP built from a [`Subproblem`].
struct Layout {
    users: usize,
    /// Index of the `Z` block; user blocks come first.
    z: usize,
    /// Index of the nonnegative block, if any.
    lp: Option<usize>,
    /// Position of the epigraph variable `t` inside the nonnegative block.
    t: Option<usize>,
    /// Position of the power slack inside the nonnegative block.
    power_slack: Option<usize>,
    /// Index of the proximal epigraph block `[[S, D], [D^H, I]]`.
    prox: Option<usize>,
    /// First of the consecutive 2×2 curvature epigraph blocks.
    curv: Option<usize>,
}

fn layout(sp: &Subproblem) -> (Vec<Cone>, Layout) {
    let (n, k) = sp.dims();
    let mut cones = vec![Cone::Psd(2 * n); k + 1];
    let (lp_len, t, power_slack) = match sp.kind {
        SubproblemKind::Linear => (k + 1, None, Some(k)),
        SubproblemKind::EqualDiagonalMaxMinSlack if k > 0 => (k + 1, Some(k), None),
        SubproblemKind::EqualDiagonalMaxMinSlack => (0, None, None),
    };
    let lp = (lp_len > 0).then(|| {
        cones.push(Cone::Nonneg(lp_len));
        k + 1
    });
    let prox = sp.proximal.as_ref().map(|_| {
        cones.push(Cone::Psd(4 * n));
        cones.len() - 1
    });
    let curv = sp.curvature.as_ref().map(|c| {
        let first = cones.len();
        cones.extend(std::iter::repeat_n(Cone::Psd(2), c.len()));
        first
    });
    (cones, Layout { users: k, z: k, lp, t, power_slack, prox, curv })
}

/// Real-linear coordinates of an `n × n` Hermitian matrix: for each, the
/// Hermitian `H` with `Re tr(H R) = coordinate(R)`, the `K` with
/// `2 Re tr(K^H D) = coordinate(herm(D))` for a general `D`, and the value of
/// the coordinate at the identity.
fn hermitian_basis(n: usize) -> Vec<(CMatrix, CMatrix, f64)> {
    let i_unit = num_complex::Complex64::new(0.0, 1.0);
    let mut out = Vec::with_capacity(n * n);
    for p in 0..n {
        for q in p..n {
            let mut h = CMatrix::zeros(n, n);
            h[(p, q)] += ONE * 0.5;
            h[(q, p)] += ONE * 0.5;
            out.push((h.clone(), h.scale(0.5), if p == q { 1.0 } else { 0.0 }));
            if p != q {
                let mut h = CMatrix::zeros(n, n);
                h[(p, q)] = i_unit * 0.5;
                h[(q, p)] = -i_unit * 0.5;
                out.push((h.clone(), h.scale(0.5), 0.0));
            }
        }
    }
    debug_assert!(out.iter().all(|(h, _, _)| h[(0, 0)] != ZERO || n > 0));
    out
}

/// Real SDP (minimization form) for a subproblem, in budget-normalized units.
pub fn to_sdp(sp: &Subproblem) -> SdpProblem {
    let (n, k) = sp.dims();
    let (cones, lay) = layout(sp);
    let p = sp.power_budget;
    let gamma = sp.gamma_th;
    let mut rows: Vec<BlockVec> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();

    for (user, q) in sp.q_matrices.iter().enumerate() {
        let q_hat = embed(&q.scale(p / sp.comm_noise)) * 0.5;
        let mut row = BlockVec::zeros(&cones);
        for b in 0..lay.users {
            let coef = if b == user { 1.0 } else { -gamma };
            *row.mat_mut(b) = &q_hat * coef;
        }
        *row.mat_mut(lay.z) = &q_hat * -gamma;
        let lp = lay.lp.expect("users imply a nonnegative block");
        row.vec_mut(lp)[user] = -1.0;
        let norm = row.norm();
        let mut rhs_k = gamma;
        if norm > 0.0 {
            row.scale_mut(1.0 / norm);
            rhs_k /= norm;
        }
        if let Some(t) = lay.t {
            row.vec_mut(lp)[t] = -1.0;
        }
        rows.push(row);
        rhs.push(rhs_k);
    }

    match sp.kind {
        SubproblemKind::Linear => {
            let mut row = BlockVec::zeros(&cones);
            let half_identity = DMatrix::<f64>::identity(2 * n, 2 * n) * 0.5;
            for b in 0..=lay.z {
                *row.mat_mut(b) = half_identity.clone();
            }
            let lp = lay.lp.expect("power slack block");
            row.vec_mut(lp)[lay.power_slack.expect("power slack")] = 1.0;
            rows.push(row);
            rhs.push(1.0);
        }
        SubproblemKind::EqualDiagonalMaxMinSlack => {
            for i in 0..n {
                let mut e = DMatrix::<f64>::zeros(2 * n, 2 * n);
                e[(i, i)] = 0.5;
                e[(i + n, i + n)] = 0.5;
                let mut row = BlockVec::zeros(&cones);
                for b in 0..=lay.z {
                    *row.mat_mut(b) = e.clone();
                }
                rows.push(row);
                rhs.push(1.0 / n as f64);
            }
        }
    }

    // Epigraph block T = [[S, D], [D^H, I]] ⪰ 0 gives S ⪰ D D^H, so tr(S)
    // bounds ‖D‖_F². The Hermitian part of D is tied to R̂ − R̂^{(t)}.
    let mut c = BlockVec::zeros(&cones);
    if let (Some(prox), Some(tb)) = (&sp.proximal, lay.prox) {
        let anchor = prox.anchor.unscale(p);
        for (h, k, rhs_r) in hermitian_basis(n) {
            let value = real_inner(&h, &anchor);
            let mut row = BlockVec::zeros(&cones);
            let coef = embed(&h) * 0.5;
            for b in 0..=lay.z {
                *row.mat_mut(b) = coef.clone();
            }
            let mut sel = CMatrix::zeros(2 * n, 2 * n);
            sel.view_mut((0, n), (n, n)).copy_from(&k);
            sel.view_mut((n, 0), (n, n)).copy_from(&k.adjoint());
            *row.mat_mut(tb) = embed(&sel) * -0.5;
            rows.push(row);
            rhs.push(value);

            let mut sel = CMatrix::zeros(2 * n, 2 * n);
            sel.view_mut((n, n), (n, n)).copy_from(&h);
            let mut row = BlockVec::zeros(&cones);
            *row.mat_mut(tb) = embed(&sel) * 0.5;
            rows.push(row);
            rhs.push(rhs_r);
        }
        let mut top = CMatrix::zeros(2 * n, 2 * n);
        top.view_mut((0, 0), (n, n)).fill_with_identity();
        *c.mat_mut(tb) = embed(&top) * (0.25 * prox.weight * p * p);
    }
    // Per-angle blocks [[u, d], [d, 1]] ⪰ 0 give u ≥ d², with d the change
    // in normalized sensing power divided by `tr F_m`.
    if let (Some(curv), Some(first)) = (&sp.curvature, lay.curv) {
        for (m, ((f, s0), w)) in curv.f_matrices.iter().zip(&curv.anchor_power).zip(&curv.weights).enumerate() {
            let cb = first + m;
            let sigma = f.trace().re;
            let coef = embed(f) * 0.5;
            let mut row = BlockVec::zeros(&cones);
            for b in 0..=lay.z {
                *row.mat_mut(b) = coef.clone();
            }
            *row.mat_mut(cb) = DMatrix::from_row_slice(2, 2, &[0.0, -0.5 * sigma, -0.5 * sigma, 0.0]);
            let norm = row.norm();
            row.scale_mut(1.0 / norm);
            rows.push(row);
            rhs.push(s0 / p / norm);

            let mut row = BlockVec::zeros(&cones);
            *row.mat_mut(cb) = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
            rows.push(row);
            rhs.push(1.0);
            *c.mat_mut(cb) = DMatrix::from_row_slice(2, 2, &[0.5 * w * (p * sigma).powi(2), 0.0, 0.0, 0.0]);
        }
    }
    match sp.kind {
        SubproblemKind::Linear => {
            let g = embed(&sp.objective_matrix.scale(p)) * -0.5;
            for b in 0..=lay.z {
                *c.mat_mut(b) = g.clone();
            }
            if let Some(prox) = &sp.proximal {
                let tie = DMatrix::<f64>::identity(2 * n, 2 * n) * (0.5 * prox.comm_weight * p);
                for b in 0..lay.users {
                    *c.mat_mut(b) += &tie;
                }
            }
        }
        SubproblemKind::EqualDiagonalMaxMinSlack => {
            if let (Some(lp), Some(t)) = (lay.lp, lay.t) {
                c.vec_mut(lp)[t] = -1.0;
            }
        }
    }
    debug_assert!(cones.len() > k);
    SdpProblem { cones, c, a: rows, b: DVector::from_vec(rhs) }
}

/// Solve a subproblem to KKT accuracy (relative duality gap ≤ 1e-8 on the
/// normalized problem).
pub fn solve(sp: &Subproblem) -> SubproblemSolution {
    solve_with(sp, &SdpSettings::default())
}

pub fn solve_with(sp: &Subproblem, settings: &SdpSettings) -> SubproblemSolution {
    let start = Instant::now();
    let (n, k) = sp.dims();
    let problem = to_sdp(sp);
    let sol = solve_sdp(&problem, settings);
    let p = sp.power_budget;
    let (_, lay) = layout(sp);

    let block = |b: usize| -> CMatrix {
        match &sol.x.blocks[b] {
            Block::Mat(y) => hermitian_part(&de_embed(y).scale(p)),
            Block::Vec(_) => unreachable!(),
        }
    };
    let w_bars: Vec<CMatrix> = (0..k).map(block).collect();
    let mut r = block(lay.z);
    for w in &w_bars {
        r += w;
    }
    let objective_value = match sp.kind {
        SubproblemKind::Linear => real_inner(&sp.objective_matrix, &r),
        SubproblemKind::EqualDiagonalMaxMinSlack => match (lay.lp, lay.t) {
            (Some(lp), Some(t)) => sol.x.blocks[lp].as_vec()[t],
            _ => 0.0,
        },
    };
    let status = match sol.status {
        SdpStatus::Optimal => SolveStatus::Optimal,
        SdpStatus::PrimalInfeasible => SolveStatus::Infeasible,
        SdpStatus::DualInfeasible | SdpStatus::MaxIterations | SdpStatus::NumericalError => {
            log::warn!(
                "subproblem solve ended with {:?} after {} iterations (gap {:e}, pres {:e}, dres {:e})",
                sol.status, sol.iterations, sol.rel_gap, sol.primal_res, sol.dual_res
            );
            SolveStatus::NumericalFailure
        }
    };
    debug_assert_eq!(r.nrows(), n);
    SubproblemSolution {
        r_x_bar: Covariance(r),
        w_bars,
        status,
        objective_value,
        rel_gap: sol.rel_gap,
        iterations: sol.iterations,
        solve_time: start.elapsed().as_secs_f64(),
    }
}

fn write_matrix<W: Write>(out: &mut W, m: &CMatrix) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:.17e} {:.17e}", m[(i, j)].re, m[(i, j)].im))
            .collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Plain-text dump of a subproblem.
///
/// ```text
/// # isac-subproblem v1
/// <kind> <n_tx> <num_users>
/// <gamma_th> <power_budget_w> <comm_noise_w> <constant_term>
/// objective
/// <n_tx rows of n_tx "re im" pairs, row-major>
/// q <k>            (repeated for each user, followed by its matrix)
/// proximal <mu> <comm_weight>          (optional, followed by the anchor)
/// curvature <count>                    (optional, then per node:)
/// node <m> <c_m> <s_m>                 (followed by F_m)
/// ```
///
/// The surrogate is `constant + Re tr(G R) − (μ/2)‖R − anchor‖_F²
/// − ½ Σ_m c_m (Re tr(F_m R) − s_m)²`, and the solver additionally charges
/// `comm_weight · Σ_k tr(W_k)`.
pub fn write_subproblem<W: Write>(out: &mut W, sp: &Subproblem) -> std::io::Result<()> {
    let (n, k) = sp.dims();
    let kind = match sp.kind {
        SubproblemKind::Linear => "linear",
        SubproblemKind::EqualDiagonalMaxMinSlack => "equal_diagonal",
    };
    writeln!(out, "# isac-subproblem v1")?;
    writeln!(out, "{kind} {n} {k}")?;
    writeln!(
        out,
        "{:.17e} {:.17e} {:.17e} {:.17e}",
        sp.gamma_th, sp.power_budget, sp.comm_noise, sp.constant_term
    )?;
    writeln!(out, "objective")?;
    write_matrix(out, &sp.objective_matrix)?;
    for (i, q) in sp.q_matrices.iter().enumerate() {
        writeln!(out, "q {i}")?;
        write_matrix(out, q)?;
    }
    if let Some(prox) = &sp.proximal {
        writeln!(out, "proximal {:.17e} {:.17e}", prox.weight, prox.comm_weight)?;
        write_matrix(out, &prox.anchor)?;
    }
    if let Some(curv) = &sp.curvature {
        writeln!(out, "curvature {}", curv.len())?;
        for (m, ((f, s0), c)) in curv.f_matrices.iter().zip(&curv.anchor_power).zip(&curv.weights).enumerate() {
            writeln!(out, "node {m} {c:.17e} {s0:.17e}")?;
            write_matrix(out, f)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_eigen, min_eigenvalue, outer, trace_re, CVector};
    use crate::scene::{draw_channels, steering_tx, target_f_matrix};
    use crate::verify::check_subproblem_solution;

    fn no_users() -> SceneConfig {
        SceneConfig { users: vec![], ..SceneConfig::default() }
    }

    #[test]
    fn zero_gradient_anchor_gives_zero_objective() {
        let cfg = SceneConfig::default();
        let channels = draw_channels(&cfg);
        let sp = assemble(&Covariance::zeros(16), &TargetPriors::from_config(&cfg), &channels, &cfg).unwrap();
        assert_eq!(sp.objective_matrix.norm(), 0.0);
        assert_eq!(sp.dims(), (16, 2));
        let sol = solve(&sp);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(check_subproblem_solution(&sp, &sol).is_empty());
    }

    #[test]
    fn default_scene_has_two_rank_one_q() {
        let cfg = SceneConfig::default();
        let channels = draw_channels(&cfg);
        let sp = assemble(&Covariance::isotropic(16, 0.1), &TargetPriors::from_config(&cfg), &channels, &cfg).unwrap();
        assert_eq!(sp.q_matrices.len(), 2);
        for q in &sp.q_matrices {
            let ev = crate::linalg::hermitian_eigenvalues(q);
            assert!(ev[14] <= 1e-10 * ev[15]);
        }
    }

    #[test]
    fn no_users_aligns_with_top_eigenvector() {
        let cfg = no_users();
        let priors = TargetPriors::from_config(&cfg);
        let anchor = Covariance::isotropic(16, cfg.total_power_w());
        let sp = assemble_with(&anchor, &priors, &[], &cfg, SurrogateTerms::default()).unwrap();
        let sol = solve(&sp);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let (ev, vecs) = hermitian_eigen(&sp.objective_matrix);
        let top = ev[15];
        let expected = cfg.total_power_w() * top;
        assert!((sol.objective_value / expected - 1.0).abs() < 1e-7, "{} vs {expected}", sol.objective_value);
        let v = vecs.column(15).into_owned();
        let target = outer(&v).scale(cfg.total_power_w());
        assert!((&sol.r_x_bar.0 - &target).norm() < 1e-4 * target.norm());
    }

    #[test]
    fn tiny_threshold_concentrates_on_broadside() {
        let cfg = SceneConfig { sinr_threshold_db: -200.0, ..SceneConfig::default() };
        let channels = draw_channels(&cfg);
        let sp = assemble_linear(target_f_matrix(0.0, &cfg), 0.0, &channels, &cfg);
        let sol = solve(&sp);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let expected = cfg.total_power_w() * 16.0 * 16.0;
        assert!((sol.objective_value / expected - 1.0).abs() < 1e-7);
        let a = steering_tx(0.0, 16);
        let target = outer(&a).scale(cfg.total_power_w() / 16.0);
        assert!((&sol.r_x_bar.0 - &target).norm() < 1e-4 * target.norm());
    }

    #[test]
    fn absurd_threshold_is_infeasible() {
        let cfg = SceneConfig { sinr_threshold_db: 200.0, ..SceneConfig::default() };
        let channels = draw_channels(&cfg);
        let sp = assemble_linear(target_f_matrix(0.0, &cfg), 0.0, &channels, &cfg);
        assert_eq!(solve(&sp).status, SolveStatus::Infeasible);
    }

    #[test]
    fn default_instance_meets_invariants() {
        let cfg = SceneConfig::default();
        let channels = draw_channels(&cfg);
        let priors = TargetPriors::from_config(&cfg);
        let anchor = Covariance::isotropic(16, cfg.total_power_w());
        let sp = assemble(&anchor, &priors, &channels, &cfg).unwrap();
        let sol = solve(&sp);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let issues = check_subproblem_solution(&sp, &sol);
        assert!(issues.is_empty(), "{issues:?}");
        assert!(trace_re(&sol.r_x_bar.0) <= cfg.total_power_w() + 1e-6);
        for w in &sol.w_bars {
            assert!(min_eigenvalue(w) >= -1e-7 * trace_re(w).max(1e-30));
        }
    }

    #[test]
    fn resolve_is_deterministic() {
        let cfg = SceneConfig::default();
        let channels = draw_channels(&cfg);
        let sp = assemble_linear(target_f_matrix(0.05, &cfg), 0.0, &channels, &cfg);
        let a = solve(&sp);
        let b = solve(&sp);
        assert!((a.objective_value - b.objective_value).abs() <= 1e-7 * a.objective_value.abs());
    }

    #[test]
    fn equal_diagonal_without_users_is_isotropic() {
        let cfg = no_users();
        let sp = assemble_equal_diagonal(&[], &cfg);
        let sol = solve(&sp);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let iso = Covariance::isotropic(16, cfg.total_power_w());
        assert!((&sol.r_x_bar.0 - &iso.0).norm() < 1e-9 * iso.0.norm());
    }

    #[test]
    fn proximal_solution_matches_closed_form_without_users() {
        // With no users and the budget slack, the maximizer of
        // ⟨G, R⟩ − (μ/2)‖R − A‖² over R ⪰ 0 is the PSD projection of A + G/μ.
        let cfg = no_users();
        let priors = TargetPriors::from_config(&cfg);
        let p = cfg.total_power_w();
        let anchor = Covariance::isotropic(16, 0.2 * p);
        let sp = assemble_with(&anchor, &priors, &[], &cfg, SurrogateTerms { proximal_weight: 50.0, curvature: false }).unwrap();
        let prox = sp.proximal.clone().unwrap();
        let (ev, vecs) = hermitian_eigen(&(&anchor.0 + sp.objective_matrix.unscale(prox.weight)));
        let clipped = CVector::from_iterator(ev.len(), ev.iter().map(|v| ONE * v.max(0.0)));
        let expected = &vecs * CMatrix::from_diagonal(&clipped) * vecs.adjoint();
        assert!(trace_re(&expected) < p, "budget must be slack for this oracle");
        let sol = solve(&sp);
        assert_eq!(sol.status, SolveStatus::Optimal);
        // Iterates converge like the square root of the duality gap when
        // eigenvalues are clipped to zero.
        let err = (&sol.r_x_bar.0 - &expected).norm() / expected.norm();
        assert!(err < 1e-4, "relative error {err}");
        let value = sp.surrogate_value(&sol.r_x_bar.0);
        assert!(value >= sp.surrogate_value(&expected) - 1e-9);
    }

    #[test]
    fn proximal_term_pins_stationary_anchor() {
        // A zero gradient makes the anchor itself the unique maximizer.
        let cfg = SceneConfig::default();
        let channels = draw_channels(&cfg);
        let priors = TargetPriors::from_config(&cfg);
        let base = assemble_linear(mean_f(&priors, &cfg), 0.0, &channels, &cfg);
        let start = solve(&base).r_x_bar;
        let mut sp = assemble_linear(CMatrix::zeros(16, 16), 0.0, &channels, &cfg);
        sp.proximal = Some(Proximal { anchor: start.0.clone(), weight: 1.0 / cfg.total_power_w(), comm_weight: 0.0 });
        let sol = solve(&sp);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let err = (&sol.r_x_bar.0 - &start.0).norm() / start.0.norm();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn curvature_surrogate_maximizer_beats_feasible_perturbations() {
        // For a concave surrogate, R* is a maximizer over a convex set iff no
        // feasible segment leaving it increases the value.
        use rand::{Rng, SeedableRng};
        let cfg = no_users();
        let priors = TargetPriors::from_config(&cfg);
        let p = cfg.total_power_w();
        let anchor = Covariance::isotropic(16, 0.5 * p);
        let terms = SurrogateTerms { proximal_weight: 0.1, curvature: true };
        let sp = assemble_with(&anchor, &priors, &[], &cfg, terms).unwrap();
        assert!(sp.curvature.as_ref().is_some_and(|c| c.len() > 10));
        let sol = solve(&sp);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let best = sp.surrogate_value(&sol.r_x_bar.0);
        assert!(best > sp.surrogate_value(&anchor.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let b = CMatrix::from_fn(16, 2, |_, _| num_complex::Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let x = &b * b.adjoint();
            let x = x.scale(p * rng.random::<f64>() / trace_re(&x));
            for t in [1e-3, 1e-2, 1e-1, 1.0] {
                let r = &sol.r_x_bar.0 + (&x - &sol.r_x_bar.0).scale(t);
                assert!(sp.surrogate_value(&r) <= best + 1e-8, "t={t}: {} > {best}", sp.surrogate_value(&r));
            }
        }
    }

    fn mean_f(priors: &TargetPriors, cfg: &SceneConfig) -> CMatrix {
        let mut f = CMatrix::zeros(cfg.n_tx, cfg.n_tx);
        for (theta, w) in priors.theta.iter() {
            f += target_f_matrix(theta, cfg).scale(w);
        }
        f
    }

    #[test]
    fn dump_has_documented_layout() {
        let cfg = SceneConfig::default();
        let channels = draw_channels(&cfg);
        let sp = assemble_linear(target_f_matrix(0.0, &cfg), 0.25, &channels, &cfg);
        let mut buf = Vec::new();
        write_subproblem(&mut buf, &sp).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# isac-subproblem v1");
        assert_eq!(lines[1], "linear 16 2");
        assert_eq!(lines[3], "objective");
        assert_eq!(lines[4].split_whitespace().count(), 32);
        assert_eq!(lines.len(), 4 + 16 + 2 * 17);
        let first: f64 = lines[4].split_whitespace().next().unwrap().parse().unwrap();
        assert!((first - 16.0).abs() < 1e-12);
    }
}
