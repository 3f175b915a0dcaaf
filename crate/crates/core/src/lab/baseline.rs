use serde::{Deserialize, Serialize};

use crate::controllers::{GainSearch, TruncatedLinearController};
use crate::dynamics::{stage_cost, step, Boundary, CostWeights, Dynamics, NoiseModel};
use crate::rng::{substream, STREAM_BASELINE};
use crate::{Error, Result};

/// Monte-Carlo estimate of the best truncated-linear controller's expected
/// total cost under the true dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineCost {
    pub mean_total_cost: f64,
    /// 95% normal-approximation half-width.
    pub ci_halfwidth: f64,
    pub k_star: f64,
    pub n_mc: usize,
}

/// `k_star = K_opt(theta*, T)` from `search`, then `n_mc` fresh rollouts of
/// `C_{k_star}^{theta*}` from `x0 = 0` over the full horizon.
#[allow(clippy::too_many_arguments)]
pub fn baseline_cost(
    truth: &Dynamics,
    boundary: &Boundary,
    weights: &CostWeights,
    horizon: usize,
    model: &NoiseModel,
    search: &GainSearch,
    n_mc: usize,
    seed: u64,
) -> Result<BaselineCost> {
    if n_mc < 2 {
        return Err(Error::Config(format!("baseline needs at least 2 rollouts, got {n_mc}")));
    }
    let k_star = search.k_opt(truth, boundary, weights, horizon)?.k;
    let ctrl = TruncatedLinearController::new(*truth, k_star, *boundary)?;
    let mut rng = substream(seed, STREAM_BASELINE);
    let totals: Vec<f64> = (0..n_mc)
        .map(|_| {
            let mut x = 0.0;
            let mut total = 0.0;
            for _ in 0..horizon {
                let u = ctrl.control(x);
                total += stage_cost(weights, x, u);
                x = step(truth, x, u, model.sample(&mut rng));
            }
            total + weights.q * x * x
        })
        .collect();
    let (mean, half) = mean_ci(&totals);
    Ok(BaselineCost { mean_total_cost: mean, ci_halfwidth: half, k_star, n_mc })
}

/// Sample mean and `1.96 * sd / sqrt(n)` (half-width NaN for fewer than two
/// values).
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}
