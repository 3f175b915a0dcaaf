//! JSON experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controllers::{KSearchConfig, UncertaintyBox};
use crate::dynamics::{Boundary, CostWeights, Dynamics, NoiseKind, NoiseModel};
use crate::safe_ce::{SafeCeConfig, Variant};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub a_lo: f64,
    pub a_hi: f64,
    pub b_lo: f64,
    pub b_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub a_star: f64,
    pub b_star: f64,
    #[serde(rename = "box")]
    pub prior: BoxConfig,
    pub d_lo: f64,
    pub d_hi: f64,
    pub q: f64,
    pub r: f64,
    pub noise: NoiseKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub t_grid: Vec<usize>,
    pub n_seeds: usize,
    pub variants: Vec<Variant>,
    /// Fresh rollouts behind each baseline cost estimate.
    #[serde(default = "default_baseline_mc")]
    pub baseline_mc: usize,
}

/// Gain-search overrides; unset fields take the defaults for the prior box.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KSearchSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_rollouts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_horizon_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabConfig {
    pub scenario: ScenarioConfig,
    pub sweep: SweepSection,
    #[serde(default)]
    pub k_search: KSearchSection,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_baseline_mc() -> usize {
    64
}

fn default_lambda() -> f64 {
    1.0
}

/// Validated, typed view of [`ScenarioConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub truth: Dynamics,
    pub prior: UncertaintyBox,
    pub boundary: Boundary,
    pub weights: CostWeights,
    pub noise: NoiseModel,
}

impl ScenarioConfig {
    /// `theta* = (0.9, 1.0)`, box `theta* +- 0.03`, `D = (-1, 1)`, `q = r = 1`,
    /// Gaussian noise.
    pub fn desk() -> Self {
        Self {
            a_star: 0.9,
            b_star: 1.0,
            prior: BoxConfig { a_lo: 0.87, a_hi: 0.93, b_lo: 0.97, b_hi: 1.03 },
            d_lo: -1.0,
            d_hi: 1.0,
            q: 1.0,
            r: 1.0,
            noise: NoiseKind::StandardGaussian,
        }
    }

    pub fn build(&self) -> Result<Scenario> {
        let truth = Dynamics::new(self.a_star, self.b_star)?;
        let p = &self.prior;
        let prior = UncertaintyBox::new(p.a_lo, p.a_hi, p.b_lo, p.b_hi)?;
        if !prior.contains(&truth) {
            return Err(Error::Config("true dynamics lie outside the prior box".into()));
        }
        Ok(Scenario {
            truth,
            prior,
            boundary: Boundary::new(self.d_lo, self.d_hi)?,
            weights: CostWeights::new(self.q, self.r)?,
            noise: NoiseModel::new(self.noise),
        })
    }
}

impl LabConfig {
    /// Desk scenario over `T = 2^12 .. 2^18` (even powers), 50 seeds, both
    /// variants, with a reduced gain-search budget.
    pub fn desk() -> Self {
        Self {
            scenario: ScenarioConfig::desk(),
            sweep: SweepSection {
                t_grid: vec![1 << 12, 1 << 14, 1 << 16, 1 << 18],
                n_seeds: 50,
                variants: vec![Variant::General, Variant::LargeNoise],
                baseline_mc: default_baseline_mc(),
            },
            k_search: KSearchSection {
                grid: Some(65),
                mc_rollouts: Some(64),
                mc_horizon_cap: Some(1024),
                ..Default::default()
            },
            lambda: default_lambda(),
            seed: 2024,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.build()?;
        let grid = &self.sweep.t_grid;
        if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("t_grid must be non-empty and strictly increasing".into()));
        }
        if self.sweep.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        if self.sweep.variants.is_empty() {
            return Err(Error::Config("no variants selected".into()));
        }
        if self.sweep.baseline_mc < 2 {
            return Err(Error::Config("baseline_mc must be at least 2".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        self.k_search_config()?.validate()
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.scenario.build()
    }

    pub fn k_search_config(&self) -> Result<KSearchConfig> {
        let s = self.scenario.build()?;
        let mut ks = KSearchConfig::for_box(&s.prior, self.seed);
        let o = &self.k_search;
        if let Some(v) = o.k_lo {
            ks.k_lower = v;
        }
        if let Some(v) = o.k_hi {
            ks.k_upper = v;
        }
        if let Some(v) = o.grid {
            ks.grid_points = v;
        }
        if let Some(v) = o.mc_rollouts {
            ks.mc_rollouts = v;
        }
        if let Some(v) = o.mc_horizon_cap {
            ks.mc_horizon_cap = v;
        }
        Ok(ks)
    }

    pub fn safe_ce_config(&self, variant: Variant, horizon: usize) -> Result<SafeCeConfig> {
        let s = self.scenario.build()?;
        Ok(SafeCeConfig {
            variant,
            horizon,
            lambda: self.lambda,
            boundary: s.boundary,
            prior: s.prior,
            weights: s.weights,
            noise: s.noise,
            k_search: self.k_search_config()?,
            epsilon_override: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "scenario": {"a_star": 0.9, "b_star": 1.0,
                     "box": {"a_lo": 0.87, "a_hi": 0.93, "b_lo": 0.97, "b_hi": 1.03},
                     "d_lo": -1.0, "d_hi": 1.0, "q": 1.0, "r": 1.0, "noise": "gaussian"},
        "sweep": {"t_grid": [4096, 8192], "n_seeds": 4, "variants": ["alg2", "alg3"]},
        "k_search": {"grid": 33, "mc_rollouts": 16},
        "seed": 11
    }"#;

    #[test]
    fn parses_sample() {
        let cfg = LabConfig::from_json(SAMPLE).unwrap();
        assert_eq!(cfg.scenario, ScenarioConfig::desk());
        assert_eq!(cfg.sweep.baseline_mc, 64);
        assert_eq!(cfg.lambda, 1.0);
        let ks = cfg.k_search_config().unwrap();
        assert_eq!((ks.grid_points, ks.mc_rollouts, ks.mc_horizon_cap), (33, 16, 4096));
        assert!((ks.k_upper - 1.93 / 0.97).abs() < 1e-15);
        let again = LabConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn desk_default_is_valid() {
        LabConfig::desk().validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = LabConfig::from_json(SAMPLE).unwrap();
        cfg.sweep.t_grid = vec![8192, 4096];
        assert!(cfg.validate().is_err());
        let mut cfg = LabConfig::from_json(SAMPLE).unwrap();
        cfg.scenario.a_star = 2.0;
        assert!(cfg.validate().is_err());
        assert!(LabConfig::from_json(&SAMPLE.replace("\"seed\"", "\"sead\"")).is_err());
    }
}
