//! Mean-zero, unit-variance noise models.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::special::{normal_cdf, normal_pdf, normal_quantile};
use crate::{Error, Result};

/// Truncation point of the truncated Gaussian, in standard deviations of the
/// untruncated normal.
const TRUNCATION: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// N(0, 1).
    #[serde(alias = "gaussian")]
    StandardGaussian,
    /// Uniform on [-sqrt 3, sqrt 3].
    #[serde(alias = "uniform")]
    UniformVar1,
    /// N(0, 1) conditioned on |z| <= 3, rescaled to unit variance.
    #[serde(alias = "truncated_gaussian")]
    TruncatedGaussianVar1,
}

/// A symmetric noise distribution with its sub-Gaussian parameter, density
/// bound and support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    alpha: f64,
    density_bound: f64,
    support_halfwidth: Option<f64>,
    // truncated Gaussian only
    scale: f64,
    lower_mass: f64,
    mass: f64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind) -> Self {
        match kind {
            NoiseKind::StandardGaussian => Self {
                kind,
                alpha: 1.0,
                density_bound: normal_pdf(0.0),
                support_halfwidth: None,
                scale: 1.0,
                lower_mass: 0.0,
                mass: 1.0,
            },
            NoiseKind::UniformVar1 => {
                let h = 3f64.sqrt();
                Self {
                    kind,
                    alpha: h,
                    density_bound: 1.0 / (2.0 * h),
                    support_halfwidth: Some(h),
                    scale: 1.0,
                    lower_mass: 0.0,
                    mass: 1.0,
                }
            }
            NoiseKind::TruncatedGaussianVar1 => {
                let c = TRUNCATION;
                let lower_mass = normal_cdf(-c);
                let mass = 1.0 - 2.0 * lower_mass;
                let var = 1.0 - 2.0 * c * normal_pdf(c) / mass;
                let scale = 1.0 / var.sqrt();
                let h = c * scale;
                Self {
                    kind,
                    // Hoeffding constant of a variable bounded in [-h, h].
                    alpha: h,
                    density_bound: normal_pdf(0.0) / (mass * scale),
                    support_halfwidth: Some(h),
                    scale,
                    lower_mass,
                    mass,
                }
            }
        }
    }

    pub fn gaussian() -> Self {
        Self::new(NoiseKind::StandardGaussian)
    }

    pub fn uniform() -> Self {
        Self::new(NoiseKind::UniformVar1)
    }

    pub fn truncated_gaussian() -> Self {
        Self::new(NoiseKind::TruncatedGaussianVar1)
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    /// Sub-Gaussian parameter.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Supremum of the density.
    pub fn density_bound(&self) -> f64 {
        self.density_bound
    }

    /// Half-width of the support, `None` when unbounded.
    pub fn support_halfwidth(&self) -> Option<f64> {
        self.support_halfwidth
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x > 0.0 {
            return 1.0 - self.cdf(-x);
        }
        match self.kind {
            NoiseKind::StandardGaussian => normal_cdf(x),
            NoiseKind::UniformVar1 => {
                let h = self.support_halfwidth.unwrap_or(0.0);
                ((x + h) / (2.0 * h)).clamp(0.0, 1.0)
            }
            NoiseKind::TruncatedGaussianVar1 => {
                let z = x / self.scale;
                if z <= -TRUNCATION {
                    0.0
                } else {
                    ((normal_cdf(z) - self.lower_mass) / self.mass).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// `P(w >= x)`, computed without cancellation in the upper tail.
    pub fn survival(&self, x: f64) -> f64 {
        self.cdf(-x)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self.kind {
            NoiseKind::StandardGaussian => normal_pdf(x),
            NoiseKind::UniformVar1 | NoiseKind::TruncatedGaussianVar1 => {
                let h = self.support_halfwidth.unwrap_or(0.0);
                if x.abs() > h {
                    0.0
                } else if self.kind == NoiseKind::UniformVar1 {
                    self.density_bound
                } else {
                    normal_pdf(x / self.scale) / (self.mass * self.scale)
                }
            }
        }
    }

    /// Inverse CDF on (0, 1).
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::ProbabilityDomain(p));
        }
        if p > 0.5 {
            return Ok(-self.lower_quantile(1.0 - p));
        }
        Ok(self.lower_quantile(p))
    }

    /// `F^{-1}(1 - tail)` for tiny tails where `1 - tail` rounds to one.
    /// Bounded models saturate at the support endpoint.
    pub fn upper_quantile(&self, tail: f64) -> Result<f64> {
        if !(tail > 0.0 && tail < 1.0) {
            return Err(Error::ProbabilityDomain(tail));
        }
        Ok(-self.lower_quantile(tail))
    }

    fn lower_quantile(&self, p: f64) -> f64 {
        match self.kind {
            NoiseKind::StandardGaussian => normal_quantile(p),
            NoiseKind::UniformVar1 => {
                let h = self.support_halfwidth.unwrap_or(0.0);
                h * (2.0 * p - 1.0)
            }
            NoiseKind::TruncatedGaussianVar1 => {
                let target = self.lower_mass + p * self.mass;
                (self.scale * normal_quantile(target)).max(-TRUNCATION * self.scale)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::StandardGaussian => rng.sample(StandardNormal),
            NoiseKind::UniformVar1 => {
                let h = self.support_halfwidth.unwrap_or(0.0);
                h * (2.0 * rng.random::<f64>() - 1.0)
            }
            NoiseKind::TruncatedGaussianVar1 => loop {
                let z: f64 = rng.sample(StandardNormal);
                if z.abs() <= TRUNCATION {
                    break self.scale * z;
                }
            },
        }
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

impl From<NoiseKind> for NoiseModel {
    fn from(kind: NoiseKind) -> Self {
        Self::new(kind)
    }
}
