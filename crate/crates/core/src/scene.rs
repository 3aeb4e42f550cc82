//! Physical scenario: arrays, steering vectors, the target response, user
//! channels and unit conversions.
//!
//! Angles are given in degrees at the configuration boundary and handled in
//! radians everywhere else. Powers are stored in watts internally; dBm only
//! appears in [`SceneConfig`].

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::linalg::{CMatrix, CVector};
use crate::optimizer::OptimizerSettings;
use crate::specfun::{discretize_gaussian, discretize_rayleigh, DiscretizedPrior};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Position of one downlink user relative to the array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserPlacement {
    pub angle_deg: f64,
    pub distance_m: f64,
}

/// Prior on the target azimuth (Gaussian) and reflectivity magnitude (Rayleigh).
///
/// The Rayleigh scale is either `alpha_sigma` when set, or derived from the
/// radar cross-section `rcs` at range `range_m` via
/// [`rayleigh_scale_from_rcs`].
///
/// The azimuth spread is a standard deviation in degrees. The default of
/// √10 ≈ 3.162° reads the usual `N(0, 10)` notation as a variance in
/// degrees squared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetPriorConfig {
    pub theta_mean_deg: f64,
    pub theta_std_deg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_sigma: Option<f64>,
    pub rcs: f64,
    pub range_m: f64,
    /// Azimuth grid size `M`.
    pub grid_m: usize,
    /// Reflectivity grid size `N`.
    pub grid_n: usize,
    /// Half-width of the azimuth grid in standard deviations.
    pub truncation_sigmas: f64,
    /// Upper end of the reflectivity grid in units of the Rayleigh scale.
    pub alpha_truncation: f64,
}

impl Default for TargetPriorConfig {
    fn default() -> Self {
        Self {
            theta_mean_deg: 0.0,
            theta_std_deg: 10f64.sqrt(),
            alpha_sigma: None,
            rcs: 2.0,
            range_m: 30.0,
            grid_m: 61,
            grid_n: 81,
            truncation_sigmas: 4.0,
            alpha_truncation: 6.0,
        }
    }
}

/// Complete description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub carrier_hz: f64,
    pub total_power_dbm: f64,
    pub comm_noise_dbm: f64,
    pub sense_noise_dbm: f64,
    pub rician_kappa: f64,
    pub pathloss_exponent: f64,
    pub reference_distance_m: f64,
    pub sinr_threshold_db: f64,
    pub false_alarm: f64,
    pub rng_seed: u64,
    pub users: Vec<UserPlacement>,
    pub target_prior: TargetPriorConfig,
    pub optimizer: OptimizerSettings,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_tx: 16,
            n_rx: 16,
            carrier_hz: 2.4e9,
            total_power_dbm: 20.0,
            comm_noise_dbm: -94.0,
            sense_noise_dbm: -94.0,
            rician_kappa: 4.0,
            pathloss_exponent: 2.2,
            reference_distance_m: 1.0,
            sinr_threshold_db: 24.0,
            false_alarm: 1e-6,
            rng_seed: 1,
            users: vec![
                UserPlacement { angle_deg: -45.0, distance_m: 200.0 },
                UserPlacement { angle_deg: 45.0, distance_m: 200.0 },
            ],
            target_prior: TargetPriorConfig::default(),
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl SceneConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| IsacError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| IsacError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(IsacError::Config(msg));
        if self.n_tx == 0 || self.n_rx == 0 {
            return fail("n_tx and n_rx must be at least 1".into());
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return fail(format!("carrier_hz must be positive, got {}", self.carrier_hz));
        }
        for (name, v) in [
            ("total_power_dbm", self.total_power_dbm),
            ("comm_noise_dbm", self.comm_noise_dbm),
            ("sense_noise_dbm", self.sense_noise_dbm),
            ("sinr_threshold_db", self.sinr_threshold_db),
            ("pathloss_exponent", self.pathloss_exponent),
        ] {
            if !v.is_finite() {
                return fail(format!("{name} must be finite"));
            }
        }
        if !(self.reference_distance_m > 0.0) {
            return fail("reference_distance_m must be positive".into());
        }
        if !(self.false_alarm > 0.0 && self.false_alarm < 1.0) {
            return fail(format!("false_alarm must lie in (0, 1), got {}", self.false_alarm));
        }
        if !(self.rician_kappa >= 0.0) {
            return fail("rician_kappa must be nonnegative".into());
        }
        for (k, u) in self.users.iter().enumerate() {
            if !(u.distance_m > 0.0) || !u.angle_deg.is_finite() {
                return fail(format!("user {k}: distance must be positive and angle finite"));
            }
        }
        let tp = &self.target_prior;
        if tp.grid_m == 0 || tp.grid_n == 0 {
            return fail("target_prior grid sizes must be at least 1".into());
        }
        if !(tp.theta_std_deg >= 0.0) || !tp.theta_mean_deg.is_finite() {
            return fail("target_prior.theta_std_deg must be nonnegative".into());
        }
        if !(tp.truncation_sigmas > 0.0 && tp.alpha_truncation > 0.0) {
            return fail("target_prior truncations must be positive".into());
        }
        match tp.alpha_sigma {
            Some(s) if !(s > 0.0) => return fail("target_prior.alpha_sigma must be positive".into()),
            None if !(tp.rcs > 0.0 && tp.range_m > 0.0) => {
                return fail("target_prior needs alpha_sigma or positive rcs and range_m".into())
            }
            _ => {}
        }
        self.optimizer.validate()
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn total_power_w(&self) -> f64 {
        dbm_to_watts(self.total_power_dbm)
    }

    pub fn comm_noise_w(&self) -> f64 {
        dbm_to_watts(self.comm_noise_dbm)
    }

    pub fn sense_noise_w(&self) -> f64 {
        dbm_to_watts(self.sense_noise_dbm)
    }

    pub fn sinr_threshold_linear(&self) -> f64 {
        db_to_linear(self.sinr_threshold_db)
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Rayleigh scale of the reflectivity magnitude.
    pub fn alpha_sigma(&self) -> f64 {
        let tp = &self.target_prior;
        tp.alpha_sigma
            .unwrap_or_else(|| rayleigh_scale_from_rcs(tp.rcs, tp.range_m, self.wavelength_m()))
    }

    /// Azimuth prior in radians.
    pub fn theta_prior(&self) -> DiscretizedPrior {
        let tp = &self.target_prior;
        discretize_gaussian(
            tp.theta_mean_deg.to_radians(),
            tp.theta_std_deg.to_radians(),
            tp.grid_m,
            tp.truncation_sigmas,
        )
    }

    pub fn alpha_prior(&self) -> DiscretizedPrior {
        let tp = &self.target_prior;
        discretize_rayleigh(self.alpha_sigma(), tp.grid_n, tp.alpha_truncation)
    }
}

/// Transmit steering vector of a half-wavelength ULA referenced at element 0:
/// `a_i = exp(j π i sin θ)`.
pub fn steering_tx(theta_rad: f64, n_tx: usize) -> CVector {
    steering(theta_rad, n_tx)
}

/// Receive steering vector, same geometry as the transmit array.
pub fn steering_rx(theta_rad: f64, n_rx: usize) -> CVector {
    steering(theta_rad, n_rx)
}

fn steering(theta_rad: f64, n: usize) -> CVector {
    let phase = PI * theta_rad.sin();
    CVector::from_fn(n, |i, _| Complex64::from_polar(1.0, phase * i as f64))
}

/// `F(θ) = A(θ)^H A(θ) = N_r a(θ) a(θ)^H` for `A = b a^H`.
pub fn target_f_matrix(theta_rad: f64, cfg: &SceneConfig) -> CMatrix {
    let a = steering_tx(theta_rad, cfg.n_tx);
    (&a * a.adjoint()).scale(cfg.n_rx as f64)
}

/// Downlink channel of one user, stored as the row `h_k^H` that multiplies a
/// transmit vector.
#[derive(Debug, Clone, PartialEq)]
pub struct UserChannel {
    pub row: CVector,
}

impl UserChannel {
    /// `h_k^H w`.
    pub fn apply(&self, w: &CVector) -> Complex64 {
        self.row.iter().zip(w.iter()).map(|(h, x)| h * x).sum()
    }

    /// The column `h_k` (conjugate of the stored row).
    pub fn column(&self) -> CVector {
        self.row.map(|v| v.conj())
    }

    /// `Q_k` with `tr(Q_k W) = h_k^H W h_k`; rank one and Hermitian.
    pub fn q_matrix(&self) -> CMatrix {
        let h = self.column();
        &h * h.adjoint()
    }

    pub fn gain(&self) -> f64 {
        self.row.norm_squared()
    }
}

/// Log-distance path loss in dB: free-space loss at `d_0` plus `10 n log10(d/d_0)`.
pub fn path_loss_db(distance_m: f64, wavelength_m: f64, exponent: f64, reference_m: f64) -> f64 {
    -20.0 * (wavelength_m / (4.0 * PI * reference_m)).log10()
        + 10.0 * exponent * (distance_m / reference_m).log10()
}

/// Draw the Rician channel of user `user_index`.
///
/// `h^H = √η (√(κ/(κ+1)) a(θ_k)^H + √(1/(κ+1)) g)` with `g ~ CN(0, I)`.
pub fn gen_channel<R: Rng + ?Sized>(cfg: &SceneConfig, user_index: usize, rng: &mut R) -> UserChannel {
    let user = cfg.users[user_index];
    let pl_db = path_loss_db(
        user.distance_m,
        cfg.wavelength_m(),
        cfg.pathloss_exponent,
        cfg.reference_distance_m,
    );
    let eta = db_to_linear(-pl_db);
    let kappa = cfg.rician_kappa;
    let (los, nlos) = if kappa.is_infinite() {
        (1.0, 0.0)
    } else {
        ((kappa / (kappa + 1.0)).sqrt(), (1.0 / (kappa + 1.0)).sqrt())
    };
    let a = steering_tx(user.angle_deg.to_radians(), cfg.n_tx);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let row = CVector::from_fn(cfg.n_tx, |i, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let g = Complex64::new(re * scale, im * scale);
        (a[i].conj() * los + g * nlos) * eta.sqrt()
    });
    UserChannel { row }
}

/// All user channels for a run, drawn in user order from the config seed.
pub fn draw_channels(cfg: &SceneConfig) -> Vec<UserChannel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    (0..cfg.num_users()).map(|k| gen_channel(cfg, k, &mut rng)).collect()
}

pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    10f64.powf((p_dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(p_w: f64) -> f64 {
    10.0 * p_w.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Rayleigh scale of the reflectivity magnitude from the radar equation:
/// `σ_|α| = √( (2/π) λ² σ_r / ((4π)³ d_r⁴) )`.
pub fn rayleigh_scale_from_rcs(rcs: f64, range_m: f64, wavelength_m: f64) -> f64 {
    (2.0 / PI * wavelength_m.powi(2) * rcs / ((4.0 * PI).powi(3) * range_m.powi(4))).sqrt()
}
