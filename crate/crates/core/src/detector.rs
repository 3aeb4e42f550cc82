//! Signal-level simulation of the sensing echo and the detectors that act on
//! it, used as an independent statistical check of the closed-form `P_d`.
//!
//! One trial transmits `X = W S` over `L` snapshots, where `S` stacks `K`
//! unit-power QPSK rows and `N_t` unit-power complex Gaussian rows, and
//! receives `Y = α b(θ) a(θ)^H X + Z` with `Z` i.i.d. `CN(0, σ_s²)`.
//!
//! The closed form has no block length: its sensing power `tr(F R_X)` is per
//! snapshot. Comparisons against simulation therefore evaluate it at
//! `L · tr(F R_X)`, the expected matched-filter energy `E‖V(θ) x‖²`.
//!
//! Every Monte-Carlo routine splits its trials into fixed-size chunks. Chunk
//! `c` draws from a ChaCha8 generator seeded with the root seed on stream
//! `c`, so results depend only on `(seed, trials)` and not on scheduling.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Weibull};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{IsacError, Result};
use crate::linalg::{quad_form, CMatrix};
use crate::metrics::{Beamformer, DetectionModel};
use crate::scene::{steering_rx, steering_tx, SceneConfig};
use crate::specfun::erfc_inv;

/// Trials per generator stream.
pub const CHUNK: usize = 4096;

/// ‖V(θ)x‖² below this is treated as no energy toward θ.
pub const MIN_PROBE_ENERGY: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Hypothesis {
    H0,
    H1,
}

/// One received block together with the transmitted block that produced it.
#[derive(Debug, Clone)]
pub struct EchoBatch {
    /// `N_r × L` received echo.
    pub y: CMatrix,
    /// `N_t × L` transmitted signal, known to the receiver.
    pub x: CMatrix,
    pub hypothesis: Hypothesis,
    /// `(α, θ)` under `H1`.
    pub truth: Option<(Complex64, f64)>,
}

impl EchoBatch {
    pub fn block_len(&self) -> usize {
        self.y.ncols()
    }
}

/// Generator for chunk `chunk` of a run rooted at `seed`.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

fn qpsk<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let re = if rng.random::<bool>() { h } else { -h };
    let im = if rng.random::<bool>() { h } else { -h };
    Complex64::new(re, im)
}

/// `X = W S` for one block of `l` snapshots.
pub fn transmit_block<R: Rng + ?Sized>(bf: &Beamformer, l: usize, rng: &mut R) -> CMatrix {
    let k = bf.num_users();
    let streams = k + bf.w_sense.ncols();
    let s = CMatrix::from_fn(streams, l, |row, _| if row < k { qpsk(rng) } else { complex_normal(rng, 1.0) });
    bf.joint() * s
}

/// Draw one echo block. `alpha = 0` yields an `H0` realization `Y = Z`.
pub fn simulate_echo<R: Rng + ?Sized>(
    bf: &Beamformer,
    alpha: Complex64,
    theta_rad: f64,
    l: usize,
    cfg: &SceneConfig,
    rng: &mut R,
) -> EchoBatch {
    assert!(l >= 1, "block length must be positive");
    let x = transmit_block(bf, l, rng);
    let noise = cfg.sense_noise_w();
    let mut y = CMatrix::from_fn(cfg.n_rx, l, |_, _| complex_normal(rng, noise));
    let (hypothesis, truth) = if alpha == Complex64::new(0.0, 0.0) {
        (Hypothesis::H0, None)
    } else {
        let b = steering_rx(theta_rad, cfg.n_rx);
        let a = steering_tx(theta_rad, cfg.n_tx);
        let ax = a.adjoint() * &x;
        y += (b * ax).scale_complex(alpha);
        (Hypothesis::H1, Some((alpha, theta_rad)))
    };
    EchoBatch { y, x, hypothesis, truth }
}

trait ScaleComplex {
    fn scale_complex(self, c: Complex64) -> Self;
}

impl ScaleComplex for CMatrix {
    fn scale_complex(mut self, c: Complex64) -> Self {
        self.iter_mut().for_each(|v| *v *= c);
        self
    }
}

/// `(y^H V(θ) x, ‖V(θ) x‖²)` by per-snapshot contraction:
/// `Σ_l (b^H y_l)^* (a^H x_l)` and `‖b‖² Σ_l |a^H x_l|²`.
pub fn correlate(batch: &EchoBatch, theta_rad: f64) -> (Complex64, f64) {
    let n_rx = batch.y.nrows();
    let b = steering_rx(theta_rad, n_rx);
    let a = steering_tx(theta_rad, batch.x.nrows());
    let by = b.adjoint() * &batch.y;
    let ax = a.adjoint() * &batch.x;
    let corr = by.iter().zip(ax.iter()).map(|(u, v)| u.conj() * v).sum();
    let energy = n_rx as f64 * ax.norm_squared();
    (corr, energy)
}

/// `Re{y^H V(θ) x}`.
pub fn matched_filter_statistic(batch: &EchoBatch, theta_probe: f64) -> f64 {
    correlate(batch, theta_probe).0.re
}

/// `max_θ |y^H V(θ) x|² / ‖V(θ) x‖²` over `grid`, or `None` when no node
/// receives energy. Returns the value and the maximizing angle.
pub fn glrt_statistic(batch: &EchoBatch, grid: &[f64]) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &theta in grid {
        let (corr, energy) = correlate(batch, theta);
        if energy <= MIN_PROBE_ENERGY {
            log::warn!("GLRT node {theta} skipped: no transmit energy toward it");
            continue;
        }
        let value = corr.norm_sqr() / energy;
        if best.is_none_or(|(v, _)| value > v) {
            best = Some((value, theta));
        }
    }
    best
}

/// `E‖V(θ) x‖² = L N_r a^H R_X a`.
pub fn expected_probe_energy(bf: &Beamformer, theta_rad: f64, l: usize, cfg: &SceneConfig) -> f64 {
    let r = bf.covariance().0;
    (l * cfg.n_rx) as f64 * quad_form(&r, &steering_tx(theta_rad, cfg.n_tx))
}

/// CFAR threshold `Γ = σ_s √E erfc⁻¹(2 P_f)` for the matched filter, whose
/// `H0` distribution given energy `E` is `N(0, σ_s² E / 2)`.
pub fn threshold_for_pf(bf: &Beamformer, theta_probe: f64, pf: f64, l: usize, cfg: &SceneConfig) -> Result<f64> {
    if !(pf > 0.0 && pf < 1.0) {
        return Err(IsacError::Domain { func: "threshold_for_pf", value: pf });
    }
    let energy = expected_probe_energy(bf, theta_probe, l, cfg);
    Ok(cfg.sense_noise_w().sqrt() * energy.sqrt() * erfc_inv(2.0 * pf)?)
}

/// Closed-form `P_d` at block length `l`, i.e. with `L · tr(F R_X)` in place
/// of `tr(F R_X)`.
pub fn analytic_pd(bf: &Beamformer, alpha_abs: f64, theta_rad: f64, pf: f64, l: usize, cfg: &SceneConfig) -> Result<f64> {
    let mut model = DetectionModel::from_config(cfg)?;
    model.false_alarm = pf;
    model.threshold = erfc_inv(2.0 * pf)?;
    let s = model.sensing_power(theta_rad, &bf.covariance().0);
    Ok(model.pd(alpha_abs, l as f64 * s))
}

/// Number of successes out of `trials`, with a normal-approximation 95%
/// half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    pub hits: u64,
    pub trials: u64,
    pub rate: f64,
    pub ci95: f64,
}

impl RateEstimate {
    pub fn new(hits: u64, trials: u64) -> Self {
        let rate = hits as f64 / trials as f64;
        let ci95 = 1.96 * (rate * (1.0 - rate) / trials as f64).sqrt();
        Self { hits, trials, rate, ci95 }
    }
}

fn chunks(trials: usize) -> Vec<(u64, usize)> {
    (0..trials.div_ceil(CHUNK))
        .map(|c| (c as u64, CHUNK.min(trials - c * CHUNK)))
        .collect()
}

/// Count trials for which `trial` returns true, chunked and seeded as
/// described in the module docs.
fn count_hits<F>(trials: usize, seed: u64, trial: F) -> RateEstimate
where
    F: Fn(&mut ChaCha8Rng) -> bool + Sync,
{
    let hits: u64 = chunks(trials)
        .into_par_iter()
        .map(|(c, n)| {
            let mut rng = chunk_rng(seed, c);
            (0..n).filter(|_| trial(&mut rng)).count() as u64
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    RateEstimate::new(hits, trials as u64)
}

/// Fixed-target experiment for the matched filter at `theta_probe`.
#[derive(Debug, Clone, Copy)]
pub struct MatchedFilterRun {
    /// Target reflectivity; zero simulates `H0`.
    pub alpha: Complex64,
    pub theta_true: f64,
    pub theta_probe: f64,
    pub pf: f64,
    pub block_len: usize,
    pub trials: usize,
    pub seed: u64,
}

/// Fraction of trials in which the matched filter exceeds its CFAR
/// threshold. Under `H0` this is the empirical false-alarm rate.
pub fn matched_filter_rate(bf: &Beamformer, run: &MatchedFilterRun, cfg: &SceneConfig) -> Result<RateEstimate> {
    let gamma = threshold_for_pf(bf, run.theta_probe, run.pf, run.block_len, cfg)?;
    Ok(count_hits(run.trials, run.seed, |rng| {
        let batch = simulate_echo(bf, run.alpha, run.theta_true, run.block_len, cfg, rng);
        matched_filter_statistic(&batch, run.theta_probe) >= gamma
    }))
}

/// GLRT statistics of `trials` echoes, in trial order.
pub fn glrt_samples(
    bf: &Beamformer,
    alpha: Complex64,
    theta_true: f64,
    grid: &[f64],
    block_len: usize,
    trials: usize,
    seed: u64,
    cfg: &SceneConfig,
) -> Vec<f64> {
    chunks(trials)
        .into_par_iter()
        .map(|(c, n)| {
            let mut rng = chunk_rng(seed, c);
            (0..n)
                .map(|_| {
                    let batch = simulate_echo(bf, alpha, theta_true, block_len, cfg, &mut rng);
                    glrt_statistic(&batch, grid).map_or(0.0, |(v, _)| v)
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat()
}

/// Analytic and empirical detection probability at one `(|α|, θ)` cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub alpha_abs: f64,
    pub theta_deg: f64,
    pub analytic: f64,
    pub empirical: RateEstimate,
    pub abs_error: f64,
}

/// Compare the closed form against matched-filter simulation with a
/// real-positive `α` at the probe angle, which is the setting the closed
/// form describes.
pub fn validate_cell(
    bf: &Beamformer,
    alpha_abs: f64,
    theta_rad: f64,
    pf: f64,
    block_len: usize,
    trials: usize,
    seed: u64,
    cfg: &SceneConfig,
) -> Result<CellReport> {
    let analytic = analytic_pd(bf, alpha_abs, theta_rad, pf, block_len, cfg)?;
    let run = MatchedFilterRun {
        alpha: Complex64::new(alpha_abs, 0.0),
        theta_true: theta_rad,
        theta_probe: theta_rad,
        pf,
        block_len,
        trials,
        seed,
    };
    let empirical = matched_filter_rate(bf, &run, cfg)?;
    Ok(CellReport {
        alpha_abs,
        theta_deg: theta_rad.to_degrees(),
        analytic,
        abs_error: (analytic - empirical.rate).abs(),
        empirical,
    })
}

/// `|α|` at which the block-length-`l` closed form equals `target` at `θ`.
pub fn alpha_for_pd(bf: &Beamformer, theta_rad: f64, target: f64, pf: f64, l: usize, cfg: &SceneConfig) -> Result<f64> {
    if !(target > pf && target < 1.0) {
        return Err(IsacError::Domain { func: "alpha_for_pd", value: target });
    }
    // P_d = ½ erfc(c − |α| √E / σ) inverts in closed form.
    let c = erfc_inv(2.0 * pf)?;
    let u = c - erfc_inv(2.0 * target)?;
    let energy = expected_probe_energy(bf, theta_rad, l, cfg);
    Ok(u * cfg.sense_noise_w().sqrt() / energy.sqrt())
}

/// Prior on the reflectivity magnitude for sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MagnitudePrior {
    /// Rayleigh with scale `sigma`, truncated at `truncation · sigma`.
    Rayleigh { sigma: f64, truncation: f64 },
    Fixed(f64),
}

/// Continuous target prior matching the quadrature used by `EP_d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSampler {
    pub theta_mean: f64,
    /// Zero gives a point mass.
    pub theta_std: f64,
    pub theta_truncation: f64,
    pub magnitude: MagnitudePrior,
}

impl PriorSampler {
    pub fn from_config(cfg: &SceneConfig) -> Self {
        let tp = &cfg.target_prior;
        Self {
            theta_mean: tp.theta_mean_deg.to_radians(),
            theta_std: tp.theta_std_deg.to_radians(),
            theta_truncation: tp.truncation_sigmas,
            magnitude: MagnitudePrior::Rayleigh { sigma: cfg.alpha_sigma(), truncation: tp.alpha_truncation },
        }
    }

    pub fn point(alpha_abs: f64, theta_rad: f64) -> Self {
        Self { theta_mean: theta_rad, theta_std: 0.0, theta_truncation: 0.0, magnitude: MagnitudePrior::Fixed(alpha_abs) }
    }

    /// Draw `(α, θ)` with a uniform phase on `α`. Truncation is by rejection.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Complex64, f64) {
        let theta = if self.theta_std > 0.0 {
            let normal = Normal::new(self.theta_mean, self.theta_std).expect("finite positive std");
            loop {
                let t: f64 = normal.sample(rng);
                if (t - self.theta_mean).abs() <= self.theta_truncation * self.theta_std {
                    break t;
                }
            }
        } else {
            self.theta_mean
        };
        let magnitude = match self.magnitude {
            MagnitudePrior::Fixed(a) => a,
            MagnitudePrior::Rayleigh { sigma, truncation } => {
                let w = Weibull::new(sigma * std::f64::consts::SQRT_2, 2.0).expect("positive Rayleigh scale");
                loop {
                    let a: f64 = w.sample(rng);
                    if a <= truncation * sigma {
                        break a;
                    }
                }
            }
        };
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        (Complex64::from_polar(magnitude, phase), theta)
    }
}

/// Equal-width histogram over `[lo, hi]`; the right edge is inclusive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bins: usize, lo: f64, hi: f64) -> Self {
        assert!(bins >= 1 && hi > lo, "invalid histogram range");
        Self { lo, hi, counts: vec![0; bins] }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let width = (self.hi - self.lo) / self.bins() as f64;
        (self.lo + width * bin as f64, self.lo + width * (bin + 1) as f64)
    }

    pub fn add(&mut self, value: f64) {
        let pos = (value - self.lo) / (self.hi - self.lo) * self.bins() as f64;
        let bin = (pos.floor().max(0.0) as usize).min(self.bins() - 1);
        self.counts[bin] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloSettings {
    pub trials: usize,
    pub bins: usize,
    pub seed: u64,
    /// Leading trials that are also simulated at signal level.
    pub signal_trials: usize,
    pub block_len: usize,
    /// False-alarm rate of the signal-level cross-check.
    pub pf: f64,
}

impl Default for MonteCarloSettings {
    fn default() -> Self {
        Self { trials: 1000, bins: 20, seed: 1, signal_trials: 0, block_len: 64, pf: 1e-2 }
    }
}

/// Signal-level detections on a subset of prior samples against the mean of
/// the block-length-`L` closed form on the same samples.
#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    pub analytic_mean: f64,
    pub empirical: RateEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub histogram: Histogram,
    /// Analytic `P_d` of each sample, in trial order.
    pub samples: Vec<f64>,
    pub mean_pd: f64,
    pub std_error: f64,
    pub cross_check: Option<CrossCheck>,
}

/// Histogram of the analytic `P_d` over `trials` prior draws.
///
/// The optional cross-check detects with a phase-coherent matched filter,
/// `Re{e^{j∠α} y^H V(θ) x} ≥ Γ`, because the closed form assumes the
/// target's phase is compensated.
pub fn monte_carlo_pd(
    bf: &Beamformer,
    prior: &PriorSampler,
    settings: &MonteCarloSettings,
    cfg: &SceneConfig,
) -> Result<MonteCarloReport> {
    if settings.trials == 0 {
        return Err(IsacError::Config("Monte-Carlo needs at least one trial".into()));
    }
    let model = DetectionModel::from_config(cfg)?;
    let r = bf.covariance().0;
    let draws: Vec<(Complex64, f64)> = chunks(settings.trials)
        .into_par_iter()
        .map(|(c, n)| {
            let mut rng = chunk_rng(settings.seed, c);
            (0..n).map(|_| prior.sample(&mut rng)).collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat();
    let samples: Vec<f64> = draws
        .iter()
        .map(|(alpha, theta)| model.pd(alpha.norm(), model.sensing_power(*theta, &r)))
        .collect();
    let mut histogram = Histogram::new(settings.bins, 0.0, 1.0);
    samples.iter().for_each(|&p| histogram.add(p));
    let n = samples.len() as f64;
    let mean_pd = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|p| (p - mean_pd).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);

    let cross_check = if settings.signal_trials > 0 {
        let subset = &draws[..settings.signal_trials.min(draws.len())];
        let l = settings.block_len;
        let mut analytic = 0.0;
        for (alpha, theta) in subset {
            analytic += analytic_pd(bf, alpha.norm(), *theta, settings.pf, l, cfg)?;
        }
        let thresholds: Vec<f64> = subset
            .iter()
            .map(|(_, theta)| threshold_for_pf(bf, *theta, settings.pf, l, cfg))
            .collect::<Result<_>>()?;
        // A separate stream family keeps the prior draws unchanged when the
        // subset size changes.
        let signal_seed = settings.seed ^ 0x5157_4e41_4c00_0000;
        let hits: u64 = subset
            .iter()
            .zip(&thresholds)
            .enumerate()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|(i, ((alpha, theta), gamma))| {
                let mut rng = chunk_rng(signal_seed, *i as u64);
                let batch = simulate_echo(bf, *alpha, *theta, l, cfg, &mut rng);
                let (corr, _) = correlate(&batch, *theta);
                let aligned = corr * Complex64::from_polar(1.0, alpha.arg());
                u64::from(aligned.re >= **gamma)
            })
            .sum();
        Some(CrossCheck {
            analytic_mean: analytic / subset.len() as f64,
            empirical: RateEstimate::new(hits, subset.len() as u64),
        })
    } else {
        None
    };

    Ok(MonteCarloReport { histogram, samples, mean_pd, std_error: (var / n).sqrt(), cross_check })
}
