//! Constraint checks that recompute everything from raw entries rather than
//! reusing the assembly or metric code paths.

use num_complex::Complex64;
use serde::Serialize;

use crate::conic::{Subproblem, SubproblemKind, SubproblemSolution};
use crate::linalg::{min_eigenvalue, CMatrix};
use crate::metrics::Beamformer;
use crate::scene::UserChannel;

pub const PSD_TOL: f64 = 1e-7;
pub const POWER_TOL: f64 = 1e-6;
pub const SINR_REL_TOL: f64 = 1e-6;

fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc.re
}

/// Violations of the subproblem's constraints by a solution (empty when all
/// hold). PSD tolerances are relative to the power budget.
pub fn check_subproblem_solution(sp: &Subproblem, sol: &SubproblemSolution) -> Vec<String> {
    let mut issues = Vec::new();
    let p = sp.power_budget;
    let r = &sol.r_x_bar.0;
    let mut residual = r.clone();
    for (k, w) in sol.w_bars.iter().enumerate() {
        let lam = min_eigenvalue(w);
        if lam < -PSD_TOL * p {
            issues.push(format!("W_{k} min eigenvalue {lam:e}"));
        }
        residual -= w;
    }
    let lam = min_eigenvalue(&residual);
    if lam < -PSD_TOL * p {
        issues.push(format!("R - sum W_k min eigenvalue {lam:e}"));
    }
    let trace: f64 = (0..r.nrows()).map(|i| r[(i, i)].re).sum();
    match sp.kind {
        SubproblemKind::Linear => {
            if trace > p + POWER_TOL {
                issues.push(format!("trace {trace} exceeds budget {p}"));
            }
        }
        SubproblemKind::EqualDiagonalMaxMinSlack => {
            let target = p / sp.n_tx as f64;
            for i in 0..r.nrows() {
                if (r[(i, i)].re - target).abs() > POWER_TOL * target.max(1.0) {
                    issues.push(format!("diag[{i}] = {} != {target}", r[(i, i)].re));
                }
            }
        }
    }
    for (k, (q, w)) in sp.q_matrices.iter().zip(&sol.w_bars).enumerate() {
        let signal = trace_product(q, w);
        let interference = trace_product(q, r) - signal;
        let sinr = signal / (interference + sp.comm_noise);
        if sinr < sp.gamma_th * (1.0 - SINR_REL_TOL) {
            issues.push(format!("user {k}: SINR {sinr:e} below {:e}", sp.gamma_th));
        }
    }
    issues
}

/// Outcome of [`check_beamformer`].
#[derive(Debug, Clone, Serialize)]
pub struct BeamformerCheck {
    pub power_w: f64,
    pub sinr: Vec<f64>,
    pub violations: Vec<String>,
}

impl BeamformerCheck {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Power and per-user SINR of a beamformer against `(γ_th, P_T)`.
pub fn check_beamformer(
    bf: &Beamformer,
    channels: &[UserChannel],
    gamma_th: f64,
    budget_w: f64,
    noise_w: f64,
) -> BeamformerCheck {
    let n = bf.w_sense.nrows();
    let mut power_w = 0.0;
    for col in bf.w_comm.column_iter().chain(bf.w_sense.column_iter()) {
        power_w += col.iter().map(|v| v.norm_sqr()).sum::<f64>();
    }
    let mut violations = Vec::new();
    if power_w > budget_w + POWER_TOL {
        violations.push(format!("power {power_w} exceeds budget {budget_w}"));
    }
    let mut sinr = Vec::with_capacity(channels.len());
    for (k, h) in channels.iter().enumerate() {
        let response = |col: nalgebra::DVectorView<'_, Complex64>| -> f64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                acc += h.row[i] * col[i];
            }
            acc.norm_sqr()
        };
        let mut signal = 0.0;
        let mut other = 0.0;
        for (i, col) in bf.w_comm.column_iter().enumerate() {
            let g = response(col);
            if i == k {
                signal = g;
            } else {
                other += g;
            }
        }
        for col in bf.w_sense.column_iter() {
            other += response(col);
        }
        let value = signal / (other + noise_w);
        if value < gamma_th * (1.0 - SINR_REL_TOL) {
            violations.push(format!("user {k}: SINR {value:e} below {gamma_th:e}"));
        }
        sinr.push(value);
    }
    BeamformerCheck { power_w, sinr, violations }
}
