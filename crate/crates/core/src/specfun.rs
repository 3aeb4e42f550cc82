//! Complementary error function, its inverse, and discretized priors.

use serde::Serialize;

use crate::error::{IsacError, Result};

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// `erfc(x) = (2/√π) ∫_x^∞ e^{-t²} dt`.
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Inverse of [`erfc`] on `(0, 2)`.
///
/// The initial estimate is refined with Newton steps on `erfc(x) - y`, which
/// keeps the relative error near machine precision for the thresholds used
/// by the detector (`y = 2 P_f` down to ~1e-300).
pub fn erfc_inv(y: f64) -> Result<f64> {
    if !(y > 0.0 && y < 2.0) {
        return Err(IsacError::Domain { func: "erfc_inv", value: y });
    }
    if y == 1.0 {
        return Ok(0.0);
    }
    let mut x = statrs::function::erf::erfc_inv(y);
    for _ in 0..3 {
        let deriv = -FRAC_2_SQRT_PI * (-x * x).exp();
        if deriv == 0.0 {
            break;
        }
        let step = (erfc(x) - y) / deriv;
        if !step.is_finite() {
            break;
        }
        x -= step;
        if step.abs() <= 1e-16 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Equally spaced nodes with probability weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretizedPrior {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DiscretizedPrior {
    pub fn point_mass(at: f64) -> Self {
        Self { nodes: vec![at], weights: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// `Σ w_i g(node_i)`.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * g(x)).sum()
    }

    fn from_unnormalized(nodes: Vec<f64>, raw: Vec<f64>) -> Self {
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        Self { nodes, weights }
    }
}

/// Gaussian prior on `m` equally spaced nodes spanning `mean ± trunc·std`.
pub fn discretize_gaussian(mean: f64, std: f64, m: usize, trunc: f64) -> DiscretizedPrior {
    if std == 0.0 || m <= 1 {
        return DiscretizedPrior::point_mass(mean);
    }
    let lo = mean - trunc * std;
    let step = 2.0 * trunc * std / (m - 1) as f64;
    let nodes: Vec<f64> = (0..m).map(|i| lo + step * i as f64).collect();
    let raw = nodes
        .iter()
        .map(|x| {
            let z = (x - mean) / std;
            (-0.5 * z * z).exp()
        })
        .collect();
    DiscretizedPrior::from_unnormalized(nodes, raw)
}

/// Rayleigh prior on `n` equally spaced nodes in `(0, trunc·sigma]`.
pub fn discretize_rayleigh(sigma: f64, n: usize, trunc: f64) -> DiscretizedPrior {
    let n = n.max(1);
    let step = trunc * sigma / n as f64;
    let nodes: Vec<f64> = (1..=n).map(|i| step * i as f64).collect();
    let raw = nodes
        .iter()
        .map(|x| {
            let z = x / sigma;
            z * (-0.5 * z * z).exp()
        })
        .collect();
    DiscretizedPrior::from_unnormalized(nodes, raw)
}
