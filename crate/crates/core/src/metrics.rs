//! Scalar performance functionals of a transmit design.
//!
//! With a matched-filter detector at known azimuth, the detection probability
//! for reflectivity magnitude `|α|` is
//!
//! ```text
//! P_d = ½ erfc( erfc⁻¹(2 P_f) − √( |α|² tr(F(θ) R_X) / σ_s² ) )
//! ```
//!
//! where `tr(F(θ) R_X) = N_r a(θ)^H R_X a(θ)` is the sensing power toward
//! `θ`. The block length of the probing waveform is absorbed into `R_X`
//! here (per-symbol SNR); see the detector module for the explicit-length
//! form.
//!
//! Gradients are Hermitian matrices `G` paired with perturbations through the
//! real inner product `Re tr(G^H Δ)`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{IsacError, Result};
use crate::linalg::{hermitian_defect, min_eigenvalue, quad_form, real_inner, trace_re, CMatrix};
use crate::scene::{steering_tx, target_f_matrix, SceneConfig, UserChannel};
use crate::specfun::{erfc, erfc_inv, DiscretizedPrior};

/// Transmit covariance `R_X` in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance(pub CMatrix);

impl Covariance {
    pub fn new(r_x: CMatrix) -> Self {
        Self(r_x)
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMatrix::zeros(n, n))
    }

    /// `(P / N_t) I`.
    pub fn isotropic(n: usize, power_w: f64) -> Self {
        Self(CMatrix::identity(n, n).scale(power_w / n as f64))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn power(&self) -> f64 {
        trace_re(&self.0)
    }

    /// Hermitian within 1e-10 (relative), PSD within 1e-8 of the trace, and
    /// trace at most `budget + 1e-6`.
    pub fn validate(&self, budget_w: f64) -> Result<()> {
        let scale = self.0.norm().max(f64::MIN_POSITIVE);
        if hermitian_defect(&self.0) > 1e-10 * scale {
            return Err(IsacError::InvalidCovariance("not Hermitian".into()));
        }
        let tr = self.power();
        let lam = min_eigenvalue(&self.0);
        if lam < -1e-8 * tr.abs().max(f64::MIN_POSITIVE) {
            return Err(IsacError::InvalidCovariance(format!("min eigenvalue {lam:e}")));
        }
        if tr > budget_w + 1e-6 {
            return Err(IsacError::InvalidCovariance(format!("trace {tr} exceeds {budget_w}")));
        }
        Ok(())
    }
}

/// Joint precoder `W = [W_c, W_s]`: `K` user columns and an `N_t × N_t`
/// sensing block.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer {
    pub w_comm: CMatrix,
    pub w_sense: CMatrix,
}

impl Beamformer {
    pub fn n_tx(&self) -> usize {
        self.w_sense.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.w_comm.ncols()
    }

    /// `[W_c, W_s]` as one `N_t × (K + N_t)` matrix.
    pub fn joint(&self) -> CMatrix {
        let n = self.n_tx();
        let k = self.num_users();
        let mut w = CMatrix::zeros(n, k + self.w_sense.ncols());
        w.columns_mut(0, k).copy_from(&self.w_comm);
        w.columns_mut(k, self.w_sense.ncols()).copy_from(&self.w_sense);
        w
    }

    pub fn from_joint(w: &CMatrix, num_users: usize) -> Self {
        Self {
            w_comm: w.columns(0, num_users).into_owned(),
            w_sense: w.columns(num_users, w.ncols() - num_users).into_owned(),
        }
    }

    /// `R_X = W W^H`.
    pub fn covariance(&self) -> Covariance {
        let w = self.joint();
        Covariance(&w * w.adjoint())
    }

    /// `tr(W W^H)`.
    pub fn power(&self) -> f64 {
        self.w_comm.norm_squared() + self.w_sense.norm_squared()
    }
}

/// Discretized azimuth (radians) and reflectivity-magnitude priors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetPriors {
    pub theta: DiscretizedPrior,
    pub alpha: DiscretizedPrior,
}

impl TargetPriors {
    pub fn from_config(cfg: &SceneConfig) -> Self {
        Self { theta: cfg.theta_prior(), alpha: cfg.alpha_prior() }
    }

    pub fn point(alpha_abs: f64, theta_rad: f64) -> Self {
        Self {
            theta: DiscretizedPrior::point_mass(theta_rad),
            alpha: DiscretizedPrior::point_mass(alpha_abs),
        }
    }
}

/// Constants of the detection model shared by every grid node.
#[derive(Debug, Clone, Copy)]
pub struct DetectionModel {
    pub false_alarm: f64,
    /// `erfc⁻¹(2 P_f)`.
    pub threshold: f64,
    pub noise_w: f64,
    pub n_tx: usize,
    pub n_rx: usize,
}

impl DetectionModel {
    pub fn from_config(cfg: &SceneConfig) -> Result<Self> {
        Ok(Self {
            false_alarm: cfg.false_alarm,
            threshold: erfc_inv(2.0 * cfg.false_alarm)?,
            noise_w: cfg.sense_noise_w(),
            n_tx: cfg.n_tx,
            n_rx: cfg.n_rx,
        })
    }

    /// `tr(F(θ) R) = N_r Re(a^H R a)`.
    pub fn sensing_power(&self, theta_rad: f64, r: &CMatrix) -> f64 {
        self.n_rx as f64 * quad_form(r, &steering_tx(theta_rad, self.n_tx))
    }

    /// `P_d` as a function of `|α|` and the sensing power `s = tr(F R)`.
    pub fn pd(&self, alpha_abs: f64, s: f64) -> f64 {
        let snr = alpha_abs * alpha_abs * s.max(0.0) / self.noise_w;
        if snr == 0.0 {
            // erfc(erfc⁻¹(2 P_f)) / 2 is only P_f up to rounding.
            return self.false_alarm;
        }
        (0.5 * erfc(self.threshold - snr.sqrt())).clamp(0.0, 1.0)
    }

    /// `∂P_d / ∂s`, or `None` when `s` is at or below `eps` (the derivative
    /// has a `1/√s` singularity at zero).
    pub fn pd_slope(&self, alpha_abs: f64, s: f64, eps: f64) -> Option<f64> {
        if s <= eps {
            return None;
        }
        let u = alpha_abs * (s / self.noise_w).sqrt();
        let d = self.threshold - u;
        // ½ · (2/√π) e^{-d²} · du/ds with du/ds = |α| / (2 σ √s).
        Some(alpha_abs * (-d * d).exp() / (2.0 * PI.sqrt() * self.noise_w.sqrt() * s.sqrt()))
    }

    /// `∂²P_d / ∂s²`, with the same domain as [`Self::pd_slope`].
    pub fn pd_curvature(&self, alpha_abs: f64, s: f64, eps: f64) -> Option<f64> {
        let slope = self.pd_slope(alpha_abs, s, eps)?;
        let k = alpha_abs / self.noise_w.sqrt();
        let d = self.threshold - k * s.sqrt();
        Some(slope * (d * k - 0.5 / s.sqrt()) / s.sqrt())
    }
}

fn checked_sensing_power(model: &DetectionModel, theta_rad: f64, r: &CMatrix) -> Result<f64> {
    let s = model.sensing_power(theta_rad, r);
    if s < -1e-8 {
        return Err(IsacError::InvalidCovariance(format!("tr(F R) = {s:e} is negative")));
    }
    Ok(s)
}

/// Detection probability of a target with magnitude `alpha_abs` at `theta_rad`.
pub fn detection_probability(
    alpha_abs: f64,
    theta_rad: f64,
    cov: &Covariance,
    cfg: &SceneConfig,
) -> Result<f64> {
    let model = DetectionModel::from_config(cfg)?;
    let s = checked_sensing_power(&model, theta_rad, &cov.0)?;
    Ok(model.pd(alpha_abs, s))
}

/// `EP_d = Σ_m Σ_n w_θ(θ_m) w_α(α_n) P_d(α_n, θ_m)`.
pub fn expected_pd(cov: &Covariance, priors: &TargetPriors, cfg: &SceneConfig) -> Result<f64> {
    let model = DetectionModel::from_config(cfg)?;
    expected_pd_with(&model, &cov.0, priors)
}

/// [`expected_pd`] with a prebuilt model; summation order is fixed.
pub fn expected_pd_with(model: &DetectionModel, r: &CMatrix, priors: &TargetPriors) -> Result<f64> {
    // Accumulate the excess over P_f so that a dark covariance gives P_f
    // exactly, independent of how the weights round.
    let mut excess = 0.0;
    for (theta, w_theta) in priors.theta.iter() {
        let s = checked_sensing_power(model, theta, r)?;
        let inner: f64 = priors.alpha.iter().map(|(a, w_a)| w_a * (model.pd(a, s) - model.false_alarm)).sum();
        excess += w_theta * inner;
    }
    Ok((model.false_alarm + excess).clamp(0.0, 1.0))
}

/// Gradient of `P_d` with respect to `R_X` at one grid node.
#[derive(Debug, Clone)]
pub struct PdGradient {
    pub matrix: CMatrix,
    /// Set when `tr(F R)` was too small for the analytic gradient; the
    /// matrix is then zero.
    pub degenerate: bool,
}

/// Relative floor on `tr(F R)` below which the gradient is reported as
/// degenerate, in units of the power budget.
pub const DEGENERATE_SENSING_FLOOR: f64 = 1e-15;

/// `∇_R P_d(|α|, θ) = (∂P_d/∂s) F(θ)`, a nonnegative multiple of `F(θ)`.
pub fn pd_gradient(alpha_abs: f64, theta_rad: f64, cov: &Covariance, cfg: &SceneConfig) -> Result<PdGradient> {
    let model = DetectionModel::from_config(cfg)?;
    let s = checked_sensing_power(&model, theta_rad, &cov.0)?;
    let eps = DEGENERATE_SENSING_FLOOR * cfg.total_power_w();
    let n = cfg.n_tx;
    match model.pd_slope(alpha_abs, s, eps) {
        Some(c) => Ok(PdGradient { matrix: target_f_matrix(theta_rad, cfg).scale(c), degenerate: false }),
        None => {
            log::warn!("degenerate P_d gradient at theta={theta_rad}: tr(F R) = {s:e}");
            Ok(PdGradient { matrix: CMatrix::zeros(n, n), degenerate: true })
        }
    }
}

/// Prior-weighted gradient of `EP_d` plus the number of degenerate nodes.
#[derive(Debug, Clone)]
pub struct EpdGradient {
    pub matrix: CMatrix,
    pub degenerate_nodes: usize,
}

pub fn expected_pd_gradient(
    cov: &Covariance,
    priors: &TargetPriors,
    cfg: &SceneConfig,
) -> Result<EpdGradient> {
    let model = DetectionModel::from_config(cfg)?;
    let eps = DEGENERATE_SENSING_FLOOR * cfg.total_power_w();
    let n = cfg.n_tx;
    let mut matrix = CMatrix::zeros(n, n);
    let mut degenerate_nodes = 0;
    for (theta, w_theta) in priors.theta.iter() {
        let s = checked_sensing_power(&model, theta, &cov.0)?;
        let mut coeff = 0.0;
        for (a, w_a) in priors.alpha.iter() {
            match model.pd_slope(a, s, eps) {
                Some(c) => coeff += w_a * c,
                None if a > 0.0 => degenerate_nodes += 1,
                None => {}
            }
        }
        if coeff != 0.0 {
            matrix += target_f_matrix(theta, cfg).scale(w_theta * coeff);
        }
    }
    if degenerate_nodes > 0 {
        log::warn!("{degenerate_nodes} grid nodes have degenerate P_d gradients");
    }
    Ok(EpdGradient { matrix, degenerate_nodes })
}

/// Prior-weighted `∂²EP_d / ∂s_m²` for each azimuth node `m`, where
/// `s_m = tr(F(θ_m) R)`. `EP_d` is separable in the `s_m`, so these are the
/// only nonzero second derivatives. Degenerate nodes contribute zero.
pub fn expected_pd_curvature(cov: &Covariance, priors: &TargetPriors, cfg: &SceneConfig) -> Result<Vec<f64>> {
    let model = DetectionModel::from_config(cfg)?;
    let eps = DEGENERATE_SENSING_FLOOR * cfg.total_power_w();
    priors
        .theta
        .iter()
        .map(|(theta, w_theta)| {
            let s = checked_sensing_power(&model, theta, &cov.0)?;
            let inner: f64 = priors.alpha.iter().filter_map(|(a, w_a)| model.pd_curvature(a, s, eps).map(|c| w_a * c)).sum();
            Ok(w_theta * inner)
        })
        .collect()
}

/// First-order expansion of `EP_d` around `anchor`, evaluated at `candidate`.
pub fn surrogate_epd(
    candidate: &Covariance,
    anchor: &Covariance,
    priors: &TargetPriors,
    cfg: &SceneConfig,
) -> Result<f64> {
    let base = expected_pd(anchor, priors, cfg)?;
    let grad = expected_pd_gradient(anchor, priors, cfg)?;
    Ok(base + real_inner(&grad.matrix, &(&candidate.0 - &anchor.0)))
}

/// SINR of user `user_k` (linear):
/// `|h_k^H w_k|² / (Σ_{i≠k} |h_k^H w_i|² + ‖h_k^H W_s‖² + σ_c²)`.
pub fn sinr(user_k: usize, bf: &Beamformer, channels: &[UserChannel], cfg: &SceneConfig) -> f64 {
    let h = &channels[user_k];
    let mut signal = 0.0;
    let mut interference = 0.0;
    for i in 0..bf.num_users() {
        let g = h.apply(&bf.w_comm.column(i).into_owned()).norm_sqr();
        if i == user_k {
            signal = g;
        } else {
            interference += g;
        }
    }
    let leak = (h.row.transpose() * &bf.w_sense).norm_squared();
    signal / (interference + leak + cfg.comm_noise_w())
}

/// SINR from covariances: `tr(Q W_k) / (tr(Q (R_X − W_k)) + σ_c²)`.
pub fn sinr_from_covariances(q: &CMatrix, w_k: &CMatrix, r_x: &CMatrix, noise_w: f64) -> f64 {
    let signal = real_inner(q, w_k);
    signal / (real_inner(q, &(r_x - w_k)) + noise_w)
}

/// Transmit beampattern `a(θ)^H R_X a(θ)` in watts at each angle (radians).
pub fn beampattern(cov: &Covariance, angles_rad: &[f64], cfg: &SceneConfig) -> Vec<f64> {
    angles_rad.iter().map(|&t| quad_form(&cov.0, &steering_tx(t, cfg.n_tx))).collect()
}

/// Width (in the units of `angles`) of the contiguous region around the
/// sample nearest `center` where the pattern stays at or above half of its
/// value there. Edges are interpolated linearly.
pub fn half_power_beamwidth(pattern: &[f64], angles: &[f64], center: f64) -> f64 {
    assert_eq!(pattern.len(), angles.len());
    let idx = (0..angles.len())
        .min_by(|&a, &b| (angles[a] - center).abs().total_cmp(&(angles[b] - center).abs()))
        .expect("nonempty pattern");
    let half = 0.5 * pattern[idx];
    let crossing = |i: usize, j: usize| {
        let (p0, p1) = (pattern[i], pattern[j]);
        let t = if p0 == p1 { 0.0 } else { (p0 - half) / (p0 - p1) };
        angles[i] + t * (angles[j] - angles[i])
    };
    let mut lo = angles[0];
    for i in (1..=idx).rev() {
        if pattern[i - 1] < half {
            lo = crossing(i, i - 1);
            break;
        }
    }
    let mut hi = angles[angles.len() - 1];
    for i in idx..angles.len() - 1 {
        if pattern[i + 1] < half {
            hi = crossing(i, i + 1);
            break;
        }
    }
    hi - lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{outer, CVector};
    use crate::scene::draw_channels;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize, trace: f64) -> CMatrix {
        let b = CMatrix::from_fn(n, rank, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let m = &b * b.adjoint();
        let t = m.trace().re;
        m.scale(trace / t)
    }

    fn random_beamformer(rng: &mut ChaCha8Rng, n: usize, k: usize, scale: f64) -> Beamformer {
        let mut draw = |r, c| {
            CMatrix::from_fn(r, c, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5).scale(scale))
        };
        Beamformer { w_comm: draw(n, k), w_sense: draw(n, n) }
    }

    #[test]
    fn curvature_matches_central_difference_of_slope() {
        let cfg = SceneConfig::default();
        let model = DetectionModel::from_config(&cfg).unwrap();
        let s0 = model.noise_w * 4.0;
        for alpha in [0.5, 1.0, 2.0, 3.5] {
            for s in [0.05 * s0, 0.3 * s0, s0, 3.0 * s0] {
                let h = 1e-5 * s;
                let fd = (model.pd_slope(alpha, s + h, 0.0).unwrap() - model.pd_slope(alpha, s - h, 0.0).unwrap()) / (2.0 * h);
                let an = model.pd_curvature(alpha, s, 0.0).unwrap();
                let scale = model.pd_slope(alpha, s, 0.0).unwrap() / s;
                assert!((fd - an).abs() <= 1e-6 * scale.max(an.abs()), "alpha={alpha} s={s}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn zero_alpha_gives_false_alarm() {
        let cfg = SceneConfig::default();
        let cov = Covariance::isotropic(cfg.n_tx, cfg.total_power_w());
        let pd = detection_probability(0.0, 0.1, &cov, &cfg).unwrap();
        assert_eq!(pd, cfg.false_alarm);
        // The closed form agrees to rounding.
        assert!((0.5 * erfc(erfc_inv(2.0 * cfg.false_alarm).unwrap()) - cfg.false_alarm).abs() < 1e-18);
        let priors = TargetPriors::from_config(&cfg);
        assert_eq!(expected_pd(&Covariance::zeros(cfg.n_tx), &priors, &cfg).unwrap(), cfg.false_alarm);
    }

    #[test]
    fn half_false_alarm_closed_form() {
        let cfg = SceneConfig { false_alarm: 0.5, ..SceneConfig::default() };
        let cov = Covariance::isotropic(cfg.n_tx, cfg.total_power_w());
        let alpha = 1e-6;
        let s = cfg.n_rx as f64 * cfg.total_power_w();
        let snr = alpha * alpha * s / cfg.sense_noise_w();
        let pd = detection_probability(alpha, 0.0, &cov, &cfg).unwrap();
        assert!((pd - 0.5 * erfc(-snr.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn rejects_negative_sensing_power() {
        let cfg = SceneConfig::default();
        let cov = Covariance(CMatrix::identity(16, 16).scale(-1.0));
        assert!(matches!(
            detection_probability(1e-6, 0.0, &cov, &cfg),
            Err(IsacError::InvalidCovariance(_))
        ));
    }

    #[test]
    fn point_mass_prior_reduces_to_pd() {
        let cfg = SceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cov = Covariance(random_psd(&mut rng, 16, 3, 0.05));
        let (a, t) = (2e-6, 0.04);
        let epd = expected_pd(&cov, &TargetPriors::point(a, t), &cfg).unwrap();
        assert_eq!(epd, detection_probability(a, t, &cov, &cfg).unwrap());
    }

    #[test]
    fn zero_covariance_gives_false_alarm() {
        let cfg = SceneConfig::default();
        let epd = expected_pd(&Covariance::zeros(16), &TargetPriors::from_config(&cfg), &cfg).unwrap();
        let pf = 0.5 * erfc(erfc_inv(2.0 * cfg.false_alarm).unwrap());
        assert!((epd - pf).abs() <= 1e-18);
    }

    #[test]
    fn gradient_is_nonnegative_multiple_of_f() {
        let cfg = SceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cov = Covariance(random_psd(&mut rng, 16, 16, 0.05));
        let theta = 0.05;
        let g = pd_gradient(3e-6, theta, &cov, &cfg).unwrap();
        assert!(!g.degenerate);
        let f = target_f_matrix(theta, &cfg);
        let c = g.matrix[(0, 0)].re / f[(0, 0)].re;
        assert!(c > 0.0);
        assert!((&g.matrix - f.scale(c)).norm() <= 1e-12 * g.matrix.norm());
    }

    #[test]
    fn gradient_vanishes_with_alpha() {
        let cfg = SceneConfig::default();
        let cov = Covariance::isotropic(16, 0.1);
        let mut prev = f64::INFINITY;
        for a in [1e-7, 1e-9, 1e-11, 1e-13] {
            let g = pd_gradient(a, 0.0, &cov, &cfg).unwrap().matrix.norm();
            assert!(g < prev);
            prev = g;
        }
        assert!(prev < 1e-4);
        assert_eq!(pd_gradient(0.0, 0.0, &cov, &cfg).unwrap().matrix.norm(), 0.0);
    }

    #[test]
    fn gradient_degenerate_at_zero_power() {
        let cfg = SceneConfig::default();
        let g = pd_gradient(3e-6, 0.0, &Covariance::zeros(16), &cfg).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.matrix.norm(), 0.0);
    }

    #[test]
    fn surrogate_equals_epd_at_anchor() {
        let cfg = SceneConfig::default();
        let priors = TargetPriors::from_config(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let anchor = Covariance(random_psd(&mut rng, 16, 4, 0.08));
        let f = surrogate_epd(&anchor, &anchor, &priors, &cfg).unwrap();
        let e = expected_pd(&anchor, &priors, &cfg).unwrap();
        assert!((f - e).abs() <= 1e-12);
    }

    #[test]
    fn surrogate_is_affine() {
        let cfg = SceneConfig::default();
        let priors = TargetPriors::from_config(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let anchor = Covariance(random_psd(&mut rng, 16, 4, 0.08));
        let d1 = random_psd(&mut rng, 16, 2, 0.01);
        let d2 = random_psd(&mut rng, 16, 2, 0.01);
        let at = |d: &CMatrix| surrogate_epd(&Covariance(&anchor.0 + d), &anchor, &priors, &cfg).unwrap();
        let base = at(&CMatrix::zeros(16, 16));
        let lhs = at(&(&d1 + &d2)) - base;
        let rhs = (at(&d1) - base) + (at(&d2) - base);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn surrogate_taylor_remainder_is_quadratic() {
        let cfg = SceneConfig::default();
        let priors = TargetPriors::from_config(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = cfg.total_power_w();
        let anchor = Covariance(random_psd(&mut rng, 16, 16, 0.5 * p));
        let dir = {
            let m = random_psd(&mut rng, 16, 16, 1.0) - CMatrix::identity(16, 16).scale(1.0 / 16.0);
            m.scale(1.0 / m.norm())
        };
        let mut ratios = Vec::new();
        for k in 0..6 {
            let step = 1e-4 * p * 0.5_f64.powi(k);
            let cand = Covariance(&anchor.0 + dir.scale(step));
            let f = surrogate_epd(&cand, &anchor, &priors, &cfg).unwrap();
            let e = expected_pd(&cand, &priors, &cfg).unwrap();
            ratios.push((f - e).abs() / (step * step));
        }
        let c = ratios[0].max(1e-300);
        assert!(ratios.iter().all(|&r| r <= 2.0 * c + 1e-6), "{ratios:?}");
    }

    #[test]
    fn sinr_single_user_no_sensing() {
        let cfg = SceneConfig { users: vec![cfg_user()], ..SceneConfig::default() };
        let channels = draw_channels(&cfg);
        let w = CVector::from_element(16, Complex64::new(0.01, 0.02));
        let bf = Beamformer { w_comm: CMatrix::from_columns(&[w.clone()]), w_sense: CMatrix::zeros(16, 16) };
        let expected = channels[0].apply(&w).norm_sqr() / cfg.comm_noise_w();
        assert!((sinr(0, &bf, &channels, &cfg) / expected - 1.0).abs() < 1e-12);
    }

    fn cfg_user() -> crate::scene::UserPlacement {
        crate::scene::UserPlacement { angle_deg: 10.0, distance_m: 100.0 }
    }

    #[test]
    fn sinr_zero_when_orthogonal() {
        let cfg = SceneConfig::default();
        let channels = draw_channels(&cfg);
        // Project a vector onto the orthogonal complement of h_0.
        let h = channels[0].column();
        let mut w = CVector::from_element(16, Complex64::new(1.0, 0.0));
        let coef = (h.adjoint() * &w)[(0, 0)] / h.norm_squared();
        w -= h.scale(1.0) * coef;
        let bf = Beamformer {
            w_comm: CMatrix::from_columns(&[w, CVector::zeros(16)]),
            w_sense: CMatrix::zeros(16, 16),
        };
        assert!(sinr(0, &bf, &channels, &cfg) < 1e-20);
    }

    #[test]
    fn sinr_forms_agree() {
        let cfg = SceneConfig::default();
        let channels = draw_channels(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..20 {
            let bf = random_beamformer(&mut rng, 16, 2, 0.05);
            let r = bf.covariance();
            for k in 0..2 {
                let wk = outer(&bf.w_comm.column(k).into_owned());
                let a = sinr(k, &bf, &channels, &cfg);
                let b = sinr_from_covariances(&channels[k].q_matrix(), &wk, &r.0, cfg.comm_noise_w());
                assert!((a / b - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn beampattern_isotropic_and_matched() {
        let cfg = SceneConfig::default();
        let p = cfg.total_power_w();
        let angles: Vec<f64> = (-180..=180).map(|d| f64::to_radians(d as f64 * 0.5)).collect();
        let iso = beampattern(&Covariance::isotropic(16, p), &angles, &cfg);
        assert!(iso.iter().all(|v| (v - p).abs() < 1e-12));
        let t0 = f64::to_radians(20.0);
        let a = steering_tx(t0, 16);
        let matched = Covariance(outer(&a).scale(p / 16.0));
        let pat = beampattern(&matched, &angles, &cfg);
        let (imax, vmax) = pat.iter().enumerate().fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert!((angles[imax] - t0).abs() < 1e-12);
        assert!((vmax - p * 16.0).abs() < 1e-10);
    }

    #[test]
    fn beamwidth_of_isotropic_spans_grid() {
        let angles: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let flat = vec![1.0; 11];
        assert_eq!(half_power_beamwidth(&flat, &angles, 5.0), 10.0);
        let tri: Vec<f64> = angles.iter().map(|a| 1.0 - (a - 5.0).abs() / 5.0).collect();
        assert!((half_power_beamwidth(&tri, &angles, 5.0) - 5.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pd_monotone_in_alpha_and_psd_increase(seed in 0u64..1000, a in 0.0_f64..1e-5, da in 0.0_f64..1e-5) {
            let cfg = SceneConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_psd(&mut rng, 16, 3, 0.05);
            let d = random_psd(&mut rng, 16, 1, 0.01);
            let theta = rng.random::<f64>() * 0.4 - 0.2;
            let p0 = detection_probability(a, theta, &Covariance(r.clone()), &cfg).unwrap();
            let p1 = detection_probability(a + da, theta, &Covariance(r.clone()), &cfg).unwrap();
            let p2 = detection_probability(a, theta, &Covariance(&r + &d), &cfg).unwrap();
            prop_assert!(p1 >= p0);
            prop_assert!(p2 >= p0);
        }

        #[test]
        fn epd_bounded_by_false_alarm_and_one(seed in 0u64..1000) {
            let cfg = SceneConfig { target_prior: crate::scene::TargetPriorConfig { grid_m: 9, grid_n: 7, ..Default::default() }, ..SceneConfig::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_psd(&mut rng, 16, 2, 0.1);
            let epd = expected_pd(&Covariance(r), &TargetPriors::from_config(&cfg), &cfg).unwrap();
            prop_assert!(epd >= cfg.false_alarm * (1.0 - 1e-9) && epd <= 1.0);
        }
    }
}
