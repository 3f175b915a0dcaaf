//! Truncated linear baseline controllers and the assumption checks built on
//! them.
//!
//! A truncated linear controller applies `u = -K x` and, when the model's
//! expected next position `a x + b u` would leave `[d_lower, d_upper]`, replaces
//! `u` with the control that lands exactly on the violated boundary. Under its
//! own model it is therefore safe with probability one.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Boundary, CostWeights, Dynamics, NoiseModel};
use crate::rng::{substream, STREAM_GAIN_SEARCH};
use crate::{Error, Result};

/// Prior rectangle `[a_lower, a_upper] x [b_lower, b_upper]` known to contain
/// the true dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBox {
    pub a_lower: f64,
    pub a_upper: f64,
    pub b_lower: f64,
    pub b_upper: f64,
}

impl UncertaintyBox {
    pub fn new(a_lower: f64, a_upper: f64, b_lower: f64, b_upper: f64) -> Result<Self> {
        if !(0.0 < a_lower && a_lower <= a_upper && 0.0 < b_lower && b_lower <= b_upper) {
            return Err(Error::Config(format!(
                "uncertainty box needs 0 < a_lo <= a_hi and 0 < b_lo <= b_hi, got \
                 [{a_lower}, {a_upper}] x [{b_lower}, {b_upper}]"
            )));
        }
        Ok(Self { a_lower, a_upper, b_lower, b_upper })
    }

    /// Box of half-width `radius` around `center`.
    pub fn around(center: Dynamics, radius: f64) -> Result<Self> {
        Self::new(center.a - radius, center.a + radius, center.b - radius, center.b + radius)
    }

    /// `max(a_hi - a_lo, b_hi - b_lo)`.
    pub fn size(&self) -> f64 {
        (self.a_upper - self.a_lower).max(self.b_upper - self.b_lower)
    }

    pub fn midpoint(&self) -> Dynamics {
        Dynamics::estimate(
            0.5 * (self.a_lower + self.a_upper),
            0.5 * (self.b_lower + self.b_upper),
        )
    }

    pub fn corners(&self) -> [Dynamics; 4] {
        [
            Dynamics::estimate(self.a_lower, self.b_lower),
            Dynamics::estimate(self.a_lower, self.b_upper),
            Dynamics::estimate(self.a_upper, self.b_lower),
            Dynamics::estimate(self.a_upper, self.b_upper),
        ]
    }

    pub fn contains(&self, theta: &Dynamics) -> bool {
        (self.a_lower..=self.a_upper).contains(&theta.a)
            && (self.b_lower..=self.b_upper).contains(&theta.b)
    }

    /// Coordinate-wise projection onto the box.
    pub fn project(&self, theta: &Dynamics) -> Dynamics {
        Dynamics::estimate(
            theta.a.clamp(self.a_lower, self.a_upper),
            theta.b.clamp(self.b_lower, self.b_upper),
        )
    }

    /// Gain of the deadbeat initial controller `C_init(x) = -(a_mid / b_mid) x`.
    pub fn init_gain(&self) -> f64 {
        let mid = self.midpoint();
        mid.a / mid.b
    }
}

/// Clip `u_base` so that `theta.a x + theta.b u` stays in the boundary.
pub fn truncate_control(theta: &Dynamics, boundary: &Boundary, u_base: f64, x: f64) -> Result<f64> {
    if !(theta.b > 0.0) {
        return Err(Error::InvalidModel(format!("truncation needs b > 0, got {}", theta.b)));
    }
    Ok(truncate_unchecked(theta, boundary, u_base, x))
}

#[inline]
fn truncate_unchecked(theta: &Dynamics, boundary: &Boundary, u_base: f64, x: f64) -> f64 {
    let y = theta.a * x + theta.b * u_base;
    if y > boundary.upper {
        (boundary.upper - theta.a * x) / theta.b
    } else if y < boundary.lower {
        (boundary.lower - theta.a * x) / theta.b
    } else {
        u_base
    }
}

/// `C_K^theta`: base law `u = -K x` truncated against `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedLinearController {
    theta: Dynamics,
    k: f64,
    boundary: Boundary,
}

impl TruncatedLinearController {
    pub fn new(theta: Dynamics, k: f64, boundary: Boundary) -> Result<Self> {
        if !(theta.b > 0.0) {
            return Err(Error::InvalidModel(format!("truncation needs b > 0, got {}", theta.b)));
        }
        if !k.is_finite() {
            return Err(Error::Config(format!("gain must be finite, got {k}")));
        }
        Ok(Self { theta, k, boundary })
    }

    pub fn theta(&self) -> Dynamics {
        self.theta
    }

    pub fn gain(&self) -> f64 {
        self.k
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    #[inline]
    pub fn control(&self, x: f64) -> f64 {
        truncate_unchecked(&self.theta, &self.boundary, -self.k * x, x)
    }
}

/// Same as [`TruncatedLinearController::control`], as a free function.
pub fn eval_truncated_linear(ctrl: &TruncatedLinearController, x: f64) -> f64 {
    ctrl.control(x)
}

/// Gain grid and Monte-Carlo budget of the `K_opt` search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSearchConfig {
    pub k_lower: f64,
    pub k_upper: f64,
    pub grid_points: usize,
    pub mc_rollouts: usize,
    pub mc_horizon_cap: usize,
    pub seed: u64,
}

impl KSearchConfig {
    pub const DEFAULT_GRID_POINTS: usize = 129;
    pub const DEFAULT_HORIZON_CAP: usize = 4096;
    pub const DEFAULT_ROLLOUTS: usize = 256;

    /// Default search over `[0, (a_hi + 1) / b_lo]`.
    pub fn for_box(prior: &UncertaintyBox, seed: u64) -> Self {
        Self {
            k_lower: 0.0,
            k_upper: (prior.a_upper + 1.0) / prior.b_lower,
            grid_points: Self::DEFAULT_GRID_POINTS,
            mc_rollouts: Self::DEFAULT_ROLLOUTS,
            mc_horizon_cap: Self::DEFAULT_HORIZON_CAP,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_points == 0 {
            return Err(Error::Config("gain grid is empty".into()));
        }
        if !(self.k_lower <= self.k_upper) {
            return Err(Error::Config(format!(
                "gain interval [{}, {}] is empty",
                self.k_lower, self.k_upper
            )));
        }
        if self.mc_rollouts == 0 || self.mc_horizon_cap == 0 {
            return Err(Error::Config("gain search needs at least one rollout step".into()));
        }
        Ok(())
    }

    /// Evenly spaced gains; a single point sits at `k_lower`.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.grid_points;
        if n == 1 {
            return vec![self.k_lower];
        }
        let h = (self.k_upper - self.k_lower) / (n - 1) as f64;
        (0..n)
            .map(|i| if i + 1 == n { self.k_upper } else { self.k_lower + h * i as f64 })
            .collect()
    }
}

/// Result of a gain search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainChoice {
    pub k: f64,
    /// Monte-Carlo estimate of the expected total cost over the capped horizon.
    pub est_cost: f64,
    pub grid_index: usize,
}

/// Frozen common-random-numbers noise tensor (`mc_rollouts x mc_horizon_cap`)
/// shared by every gain evaluation of a search configuration.
///
/// `k_opt` results are memoized by their exact inputs; the answer is a pure
/// function of them, so sharing one search across runs and threads never
/// changes a result.
#[derive(Debug)]
pub struct GainSearch {
    cfg: KSearchConfig,
    grid: Vec<f64>,
    noise: Vec<f64>,
    memo: Mutex<HashMap<[u64; 7], GainChoice>>,
}

impl Clone for GainSearch {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg,
            grid: self.grid.clone(),
            noise: self.noise.clone(),
            memo: Mutex::new(self.memo.lock().map(|m| m.clone()).unwrap_or_default()),
        }
    }
}

impl GainSearch {
    pub fn new(cfg: KSearchConfig, model: &NoiseModel) -> Result<Self> {
        cfg.validate()?;
        let mut rng = substream(cfg.seed, STREAM_GAIN_SEARCH);
        let noise = model.sample_n(&mut rng, cfg.mc_rollouts * cfg.mc_horizon_cap);
        Ok(Self { grid: cfg.grid(), cfg, noise, memo: Mutex::default() })
    }

    /// Build from an explicit tensor (row-major, one row per rollout).
    pub fn with_noise(cfg: KSearchConfig, noise: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        if noise.len() != cfg.mc_rollouts * cfg.mc_horizon_cap {
            return Err(Error::Contract(format!(
                "noise tensor has {} entries, expected {} x {}",
                noise.len(),
                cfg.mc_rollouts,
                cfg.mc_horizon_cap
            )));
        }
        Ok(Self { grid: cfg.grid(), cfg, noise, memo: Mutex::default() })
    }

    pub fn config(&self) -> &KSearchConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Noise row of rollout `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let h = self.cfg.mc_horizon_cap;
        &self.noise[i * h..(i + 1) * h]
    }

    pub fn effective_horizon(&self, horizon: usize) -> usize {
        horizon.min(self.cfg.mc_horizon_cap)
    }

    /// Mean total cost of `C_K^theta` from `x0 = 0` over the capped horizon.
    pub fn estimate_cost(
        &self,
        theta: &Dynamics,
        boundary: &Boundary,
        weights: &CostWeights,
        k: f64,
        horizon: usize,
    ) -> f64 {
        let h = self.effective_horizon(horizon);
        let (a, b) = (theta.a, theta.b);
        let mut sum = 0.0;
        for i in 0..self.cfg.mc_rollouts {
            let row = &self.row(i)[..h];
            let mut x = 0.0f64;
            let mut total = 0.0f64;
            for &w in row {
                let u = truncate_unchecked(theta, boundary, -k * x, x);
                total += weights.q * x * x + weights.r * u * u;
                x = a * x + b * u + w;
            }
            total += weights.q * x * x;
            sum += total;
        }
        sum / self.cfg.mc_rollouts as f64
    }

    /// Estimated cost at every grid gain.
    pub fn grid_costs(
        &self,
        theta: &Dynamics,
        boundary: &Boundary,
        weights: &CostWeights,
        horizon: usize,
    ) -> Result<Vec<f64>> {
        if !(theta.b > 0.0) {
            return Err(Error::InvalidModel(format!("gain search needs b > 0, got {}", theta.b)));
        }
        if horizon == 0 {
            return Err(Error::Config("gain search horizon must be at least 1".into()));
        }
        Ok(self
            .grid
            .par_iter()
            .map(|&k| self.estimate_cost(theta, boundary, weights, k, horizon))
            .collect())
    }

    /// Grid argmin of the common-random-numbers cost estimate; ties go to the
    /// lowest grid index.
    pub fn k_opt(
        &self,
        theta: &Dynamics,
        boundary: &Boundary,
        weights: &CostWeights,
        horizon: usize,
    ) -> Result<GainChoice> {
        let key = [
            theta.a.to_bits(),
            theta.b.to_bits(),
            boundary.lower.to_bits(),
            boundary.upper.to_bits(),
            weights.q.to_bits(),
            weights.r.to_bits(),
            self.effective_horizon(horizon) as u64,
        ];
        if let Some(hit) = self.memo.lock().ok().and_then(|m| m.get(&key).copied()) {
            return Ok(hit);
        }
        let costs = self.grid_costs(theta, boundary, weights, horizon)?;
        let mut best = 0;
        for (i, &c) in costs.iter().enumerate() {
            if c < costs[best] {
                best = i;
            }
        }
        let choice = GainChoice { k: self.grid[best], est_cost: costs[best], grid_index: best };
        if let Ok(mut m) = self.memo.lock() {
            m.insert(key, choice);
        }
        Ok(choice)
    }
}

/// One-shot gain search that draws its own frozen tensor.
pub fn k_opt(
    theta: &Dynamics,
    boundary: &Boundary,
    weights: &CostWeights,
    horizon: usize,
    model: &NoiseModel,
    cfg: &KSearchConfig,
) -> Result<GainChoice> {
    GainSearch::new(*cfg, model)?.k_opt(theta, boundary, weights, horizon)
}

/// Largest `x` at which the untruncated base law keeps `a x + b(-K x) <= z`:
/// `z / (a - b K)` when the closed-loop slope is positive, `+inf` otherwise.
pub fn penetration_threshold(theta: &Dynamics, k: f64, z: f64) -> f64 {
    let slope = theta.a - theta.b * k;
    if slope > 0.0 {
        z / slope
    } else {
        f64::INFINITY
    }
}

/// Outcome of the initial-controller feasibility check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitCheck {
    /// Every corner of the box keeps the deadbeat controller inside the
    /// boundary shrunk by `b / ln T` over the whole state domain.
    pub valid: bool,
    /// Largest amount by which any corner overshoots its shrunk boundary
    /// (non-positive when valid).
    pub max_violation_margin: f64,
    /// State domain `[d_lower + F^{-1}(T^-4), d_upper + F^{-1}(1 - T^-4)]`.
    pub domain: (f64, f64),
    /// Closed-form worst case `(1 + a_hi / b_lo) |x|_max size(box)`.
    pub size_bound: f64,
    /// `min(d_upper, |d_lower|) - b_hi / ln T`.
    pub allowed_excursion: f64,
    /// Whether the closed-form size bound alone certifies the controller.
    pub size_bound_valid: bool,
}

/// Check that `C_init(x) = -(a_mid / b_mid) x` satisfies the initial-safety
/// margin for every dynamics in `prior`.
pub fn check_init_controller(
    prior: &UncertaintyBox,
    boundary: &Boundary,
    model: &NoiseModel,
    horizon: usize,
) -> Result<InitCheck> {
    let t = horizon as f64;
    let ln_t = t.ln();
    if !(ln_t > 1.0) {
        return Err(Error::Config(format!("horizon {horizon} too short: ln T must exceed 1")));
    }
    let tail = t.powi(-4);
    let lo = boundary.lower + model.quantile(tail)?;
    let hi = boundary.upper + model.upper_quantile(tail)?;
    let gain = prior.init_gain();

    // a x + b C_init(x) is linear in (a, b) and in x, so the extremes sit at
    // box corners and domain endpoints.
    let mut worst = f64::NEG_INFINITY;
    for corner in prior.corners() {
        let slope = corner.a - corner.b * gain;
        let margin = corner.b / ln_t;
        for x in [lo, hi] {
            let y = slope * x;
            worst = worst
                .max(y - (boundary.upper - margin))
                .max((boundary.lower + margin) - y);
        }
    }

    let x_max = lo.abs().max(hi.abs());
    let size_bound = (1.0 + prior.a_upper / prior.b_lower) * x_max * prior.size();
    let allowed = boundary.upper.min(-boundary.lower) - prior.b_upper / ln_t;
    Ok(InitCheck {
        valid: worst <= 0.0,
        max_violation_margin: worst,
        domain: (lo, hi),
        size_bound,
        allowed_excursion: allowed,
        size_bound_valid: size_bound <= allowed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LargeSupportCheck {
    pub holds: bool,
    /// `P(w >= gap)`.
    pub tail_probability: f64,
    /// `P(theta*, K, d_upper) - d_lower`.
    pub gap: f64,
}

/// Large-support condition at a reference gain.
pub fn check_large_support(
    theta_star: &Dynamics,
    boundary: &Boundary,
    model: &NoiseModel,
    k_ref: f64,
) -> LargeSupportCheck {
    let p = penetration_threshold(theta_star, k_ref, boundary.upper);
    if p.is_infinite() {
        return LargeSupportCheck { holds: false, tail_probability: 0.0, gap: f64::INFINITY };
    }
    let gap = p - boundary.lower;
    let tail = model.survival(gap);
    LargeSupportCheck { holds: tail > 0.0, tail_probability: tail, gap }
}
