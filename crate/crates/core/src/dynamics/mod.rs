//! Scalar linear plant, quadratic stage cost and closed-loop rollouts.

mod noise;
pub mod special;

pub use noise::{NoiseKind, NoiseModel};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The coefficient pair `(a, b)` of `x' = a x + b u + w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub a: f64,
    pub b: f64,
}

impl Dynamics {
    /// Validated constructor for true or nominal dynamics (`a > 0`, `b > 0`).
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidModel(format!("need a > 0 and b > 0, got ({a}, {b})")));
        }
        Ok(Self { a, b })
    }

    /// Unchecked pair, used for point estimates which may leave the positive
    /// quadrant early in a run.
    pub const fn estimate(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    /// Expected next position `a x + b u`.
    #[inline]
    pub fn mean_next(&self, x: f64, u: f64) -> f64 {
        self.a * x + self.b * u
    }

    /// Sup-norm distance between two parameter pairs.
    pub fn dist_inf(&self, other: &Dynamics) -> f64 {
        (self.a - other.a).abs().max((self.b - other.b).abs())
    }
}

/// One plant transition.
#[inline]
pub fn step(dynamics: &Dynamics, x: f64, u: f64, w: f64) -> f64 {
    dynamics.a * x + dynamics.b * u + w
}

/// Expected-position boundary `(d_lower, d_upper)` with `d_lower < 0 < d_upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub lower: f64,
    pub upper: f64,
}

impl Boundary {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower < 0.0 && 0.0 < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::Config(format!(
                "boundary must satisfy d_lower < 0 < d_upper, got ({lower}, {upper})"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// Like [`Boundary::new`] but also enforces `upper - lower >= min_gap`.
    pub fn with_min_gap(lower: f64, upper: f64, min_gap: f64) -> Result<Self> {
        let b = Self::new(lower, upper)?;
        if b.width() < min_gap {
            return Err(Error::Config(format!(
                "boundary width {} below minimum gap {min_gap}",
                b.width()
            )));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// `max(|d_lower|, d_upper)`.
    pub fn sup_norm(&self) -> f64 {
        self.upper.max(-self.lower)
    }

    #[inline]
    pub fn contains(&self, y: f64, slack: f64) -> bool {
        y >= self.lower - slack && y <= self.upper + slack
    }
}

/// Quadratic cost weights `q x^2 + r u^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub q: f64,
    pub r: f64,
}

impl CostWeights {
    pub fn new(q: f64, r: f64) -> Result<Self> {
        if !(q > 0.0 && r > 0.0) {
            return Err(Error::Config(format!("cost weights must be positive, got q={q} r={r}")));
        }
        Ok(Self { q, r })
    }
}

#[inline]
pub fn stage_cost(weights: &CostWeights, x: f64, u: f64) -> f64 {
    weights.q * x * x + weights.r * u * u
}

/// Which side of the safe interval (if any) bound the applied control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampFlag {
    None,
    Upper,
    Lower,
    /// The robust interval was empty or undefined; a fallback control was used.
    Infeasible,
}

impl ClampFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClampFlag::None => "none",
            ClampFlag::Upper => "upper",
            ClampFlag::Lower => "lower",
            ClampFlag::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// A fixed state-feedback controller (plain rollouts).
    Fixed,
    Warmup,
    Round(u32),
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Fixed => "fixed",
            Phase::Warmup => "warmup",
            Phase::Round(_) => "round",
        }
    }

    pub fn round(&self) -> Option<u32> {
        match self {
            Phase::Round(s) => Some(*s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: f64,
    pub u: f64,
    pub w: f64,
    /// `a* x_t + b* u_t` under the true dynamics.
    pub expected_next: f64,
    pub stage_cost: f64,
    pub clamp: ClampFlag,
    pub phase: Phase,
}

/// Per-step closed-loop record plus the terminal state.
///
/// `total_cost` is accumulated as the left-to-right sum of the logged stage
/// costs followed by the terminal `q x_T^2`, so re-summing the records in that
/// order reproduces it bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub weights: CostWeights,
    pub records: Vec<StepRecord>,
    pub final_x: f64,
    pub total_cost: f64,
}

impl TrajectoryLog {
    pub fn with_capacity(weights: CostWeights, x0: f64, horizon: usize) -> Self {
        Self {
            weights,
            records: Vec::with_capacity(horizon),
            final_x: x0,
            total_cost: 0.0,
        }
    }

    /// Append the transition from `x` under `u` and `w`; returns the next state.
    pub fn push(
        &mut self,
        truth: &Dynamics,
        x: f64,
        u: f64,
        w: f64,
        clamp: ClampFlag,
        phase: Phase,
    ) -> f64 {
        let cost = stage_cost(&self.weights, x, u);
        self.records.push(StepRecord {
            t: self.records.len(),
            x,
            u,
            w,
            expected_next: truth.mean_next(x, u),
            stage_cost: cost,
            clamp,
            phase,
        });
        self.total_cost += cost;
        let next = step(truth, x, u, w);
        self.final_x = next;
        next
    }

    /// Close the log with the terminal cost.
    pub fn finish(&mut self) {
        self.total_cost += self.weights.q * self.final_x * self.final_x;
    }

    pub fn horizon(&self) -> usize {
        self.records.len()
    }

    /// Average cost `J = total / T` (undefined for an empty log).
    pub fn average_cost(&self) -> f64 {
        self.total_cost / self.records.len() as f64
    }

    /// Positions `x_0, ..., x_T`.
    pub fn positions(&self) -> Vec<f64> {
        let mut xs: Vec<f64> = self.records.iter().map(|r| r.x).collect();
        xs.push(self.final_x);
        xs
    }

    pub fn count_flag(&self, flag: ClampFlag) -> usize {
        self.records.iter().filter(|r| r.clamp == flag).count()
    }
}

/// Run a stationary state-feedback controller for `noise.len()` steps.
pub fn rollout<C>(
    dynamics: &Dynamics,
    weights: &CostWeights,
    mut controller: C,
    x0: f64,
    noise: &[f64],
) -> TrajectoryLog
where
    C: FnMut(f64) -> f64,
{
    let mut log = TrajectoryLog::with_capacity(*weights, x0, noise.len());
    let mut x = x0;
    for &w in noise {
        let u = controller(x);
        x = log.push(dynamics, x, u, w, ClampFlag::None, Phase::Fixed);
    }
    log.finish();
    log
}
