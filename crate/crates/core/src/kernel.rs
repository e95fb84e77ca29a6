//! Mexican-hat wavelet and the optimal-diversity score built on it.
//!
//! The score of a candidate at distance `d` from a listener's profile is the
//! negated, rescaled Ricker wavelet:
//!
//! ```text
//! psi(t) = (1 - t^2/sigma^2) * exp(-t^2 / (2 sigma^2))
//! g(d)   = -psi(d) / (2 e^{-3/2})
//! ```
//!
//! `g` is negative inside `[0, sigma)` (too similar), crosses zero at `sigma`,
//! peaks at exactly `1.0` for `d* = sqrt(3) sigma` and decays towards zero for
//! remote items.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `2 e^{-3/2}`, the depth of the wavelet's negative lobe.
const LOBE_DEPTH: f64 = 0.446_260_320_296_859_64;

pub const SQRT_3: f64 = 1.732_050_807_568_877_2;

pub const DEFAULT_SIGMA: f64 = 0.2;
pub const DEFAULT_THETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum KernelError {
    #[error("value {0} is not finite")]
    NonFinite(f64),
    #[error("sigma must be strictly positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("distance must be nonnegative, got {0}")]
    NegativeDistance(f64),
    #[error("theta must lie in (0, 1], got {0}")]
    ThetaOutOfRange(f64),
    #[error("sigma {sigma} outside bounds [{min}, {max}]")]
    SigmaOutOfBounds { sigma: f64, min: f64, max: f64 },
    #[error("invalid sigma bounds [{min}, {max}]")]
    InvalidBounds { min: f64, max: f64 },
}

/// Closed interval that every adapted sigma is clamped into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for SigmaBounds {
    fn default() -> Self {
        Self {
            min: 0.05,
            max: 0.5,
        }
    }
}

impl SigmaBounds {
    pub fn new(min: f64, max: f64) -> Result<Self, KernelError> {
        if !(min.is_finite() && max.is_finite()) || min <= 0.0 || min > max {
            return Err(KernelError::InvalidBounds { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn clamp(&self, sigma: f64) -> f64 {
        sigma.clamp(self.min, self.max)
    }

    pub fn contains(&self, sigma: f64) -> bool {
        sigma >= self.min && sigma <= self.max
    }
}

/// Diversity radius and optimal-band threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    sigma: f64,
    theta: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            theta: DEFAULT_THETA,
        }
    }
}

impl KernelParams {
    /// Unbounded constructor: only requires `sigma > 0` and `theta` in `(0, 1]`.
    pub fn new(sigma: f64, theta: f64) -> Result<Self, KernelError> {
        check_sigma(sigma)?;
        if !theta.is_finite() || theta <= 0.0 || theta > 1.0 {
            return Err(KernelError::ThetaOutOfRange(theta));
        }
        Ok(Self { sigma, theta })
    }

    /// Like [`KernelParams::new`] but also rejects a sigma outside `bounds`.
    pub fn bounded(sigma: f64, theta: f64, bounds: SigmaBounds) -> Result<Self, KernelError> {
        let params = Self::new(sigma, theta)?;
        if !bounds.contains(sigma) {
            return Err(KernelError::SigmaOutOfBounds {
                sigma,
                min: bounds.min,
                max: bounds.max,
            });
        }
        Ok(params)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn with_sigma(self, sigma: f64) -> Result<Self, KernelError> {
        Self::new(sigma, self.theta)
    }

    pub fn optimal_distance(&self) -> f64 {
        SQRT_3 * self.sigma
    }
}

/// Where a distance falls relative to the diversity curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    /// `d < sigma`: negative score.
    Similar,
    /// Rising flank below the optimal band.
    Near,
    Optimal,
    /// Decaying tail beyond the optimal band.
    Remote,
}

impl Band {
    pub fn as_str(&self) -> &'static str {
        match self {
            Band::Similar => "similar",
            Band::Near => "near",
            Band::Optimal => "optimal",
            Band::Remote => "remote",
        }
    }
}

/// How candidates are scored from their distance to a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringMode {
    /// Optimal-diversity score `g(d)`.
    Diverse,
    /// Plain proximity `1 - d`.
    Similar,
}

impl ScoringMode {
    pub fn score(&self, distance: f64, sigma: f64) -> Result<f64, KernelError> {
        match self {
            ScoringMode::Diverse => diversity_score(distance, sigma),
            ScoringMode::Similar => {
                check_distance(distance)?;
                Ok(1.0 - distance)
            }
        }
    }
}

impl std::str::FromStr for ScoringMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "diverse" => Ok(ScoringMode::Diverse),
            "similar" => Ok(ScoringMode::Similar),
            other => Err(format!(
                "unknown mode `{other}` (expected diverse or similar)"
            )),
        }
    }
}

fn check_sigma(sigma: f64) -> Result<(), KernelError> {
    if !sigma.is_finite() {
        return Err(KernelError::NonFinite(sigma));
    }
    if sigma <= 0.0 {
        return Err(KernelError::NonPositiveSigma(sigma));
    }
    Ok(())
}

fn check_distance(d: f64) -> Result<(), KernelError> {
    if !d.is_finite() {
        return Err(KernelError::NonFinite(d));
    }
    if d < 0.0 {
        return Err(KernelError::NegativeDistance(d));
    }
    Ok(())
}

/// Unit-peak Ricker wavelet `(1 - t^2/sigma^2) exp(-t^2/(2 sigma^2))`.
pub fn mexican_hat(t: f64, sigma: f64) -> Result<f64, KernelError> {
    if !t.is_finite() {
        return Err(KernelError::NonFinite(t));
    }
    check_sigma(sigma)?;
    let r2 = (t / sigma) * (t / sigma);
    Ok((1.0 - r2) * (-0.5 * r2).exp())
}

/// Optimal-diversity score: maximum `1.0` at `sqrt(3) sigma`, minimum
/// `-e^{3/2}/2` at `d = 0`.
pub fn diversity_score(d: f64, sigma: f64) -> Result<f64, KernelError> {
    check_distance(d)?;
    Ok(-mexican_hat(d, sigma)? / LOBE_DEPTH)
}

pub fn optimal_distance(sigma: f64) -> Result<f64, KernelError> {
    check_sigma(sigma)?;
    Ok(SQRT_3 * sigma)
}

pub fn sigma_for_optimal(d_star: f64) -> Result<f64, KernelError> {
    check_sigma(d_star)?;
    Ok(d_star / SQRT_3)
}

pub fn band_classify(d: f64, params: &KernelParams) -> Result<Band, KernelError> {
    let sigma = params.sigma;
    let g = diversity_score(d, sigma)?;
    Ok(if d < sigma {
        Band::Similar
    } else if g >= params.theta {
        Band::Optimal
    } else if d < SQRT_3 * sigma {
        Band::Near
    } else {
        Band::Remote
    })
}
