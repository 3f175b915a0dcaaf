//! Safe certainty-equivalence controllers.
//!
//! Both variants share one state machine:
//!
//! 1. Warm-up for `ceil(nu^-2)` steps with `u = C_init(x) + phi / ln T`,
//!    `phi` a Rademacher sign.
//! 2. Doubling rounds starting at `T_s = 2^s * warmup`. At each round start the
//!    ridge estimate `theta_pre` and radius `epsilon_s` are recomputed from all
//!    data so far, a nominal model is chosen (the estimate itself for the
//!    general variant, a penetration-minimizing point of the confidence
//!    rectangle for the large-noise variant) and `K_s = K_opt(nominal, T_s)`.
//! 3. Every round step applies the truncated linear controller of the nominal
//!    model, clipped to the robust interval `[u_safeL, u_safeU]` computed over
//!    the rectangle `|theta - theta_pre|_inf <= epsilon_s`.
//!
//! The general variant uses `nu = T^{-1/3}`, the large-noise variant
//! `nu = T^{-1/4}`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::{
    check_init_controller, GainSearch, InitCheck, KSearchConfig, TruncatedLinearController,
    UncertaintyBox,
};
use crate::dynamics::{Boundary, ClampFlag, CostWeights, Dynamics, NoiseModel, Phase, TrajectoryLog};
use crate::estimator::{confidence_radius, ConfidenceInputs, RlsState};
use crate::rng::{substream, STREAM_DITHER, STREAM_PROCESS_NOISE};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// General baselines, `nu = T^{-1/3}`.
    #[serde(rename = "alg2")]
    General,
    /// Large-support noise, `nu = T^{-1/4}` and optimistic model selection.
    #[serde(rename = "alg3")]
    LargeNoise,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::General => "alg2",
            Variant::LargeNoise => "alg3",
        }
    }

    /// `nu_T`.
    pub fn nu(&self, horizon: usize) -> f64 {
        let t = horizon as f64;
        match self {
            Variant::General => t.powf(-1.0 / 3.0),
            Variant::LargeNoise => t.powf(-0.25),
        }
    }

    /// `ceil(nu_T^-2)` in exact integer arithmetic: the least `n` with
    /// `n^3 >= T^2` (general) or `n^2 >= T` (large noise).
    pub fn warmup_length(&self, horizon: usize) -> usize {
        let t = horizon as u128;
        let (target, power) = match self {
            Variant::General => (t * t, 3),
            Variant::LargeNoise => (t, 2),
        };
        let guess = (target as f64).powf(1.0 / power as f64).floor() as u128;
        let mut n = guess.saturating_sub(2);
        while n.pow(power) < target {
            n += 1;
        }
        n as usize
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alg2" | "general" => Ok(Variant::General),
            "alg3" | "large-noise" | "large_noise" => Ok(Variant::LargeNoise),
            other => Err(Error::Parse(format!("unknown variant {other:?}"))),
        }
    }
}

/// Warm-up length and the `[start, end)` step ranges of the doubling rounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub warmup: usize,
    pub rounds: Vec<(usize, usize)>,
}

impl Schedule {
    /// Round `s` covers `[T_s, 2 T_s)` with `T_s = 2^s * warmup`; the last
    /// round is cut at the horizon.
    pub fn new(variant: Variant, horizon: usize) -> Self {
        let warmup = variant.warmup_length(horizon).min(horizon);
        let mut rounds = Vec::new();
        if warmup > 0 {
            let mut start = warmup;
            while start < horizon {
                let end = (2 * start).min(horizon);
                rounds.push((start, end));
                start *= 2;
            }
        }
        Self { warmup, rounds }
    }

    /// Nominal round length `T_s` (the round start).
    pub fn round_horizon(&self, s: usize) -> usize {
        self.rounds[s].0
    }
}

/// Everything a run needs besides the true dynamics and the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeCeConfig {
    pub variant: Variant,
    pub horizon: usize,
    pub lambda: f64,
    pub boundary: Boundary,
    pub prior: UncertaintyBox,
    pub weights: CostWeights,
    pub noise: NoiseModel,
    pub k_search: KSearchConfig,
    /// Replace every `epsilon_s` by this value (diagnostics only).
    pub epsilon_override: Option<f64>,
}

impl SafeCeConfig {
    pub fn validate(&self) -> Result<()> {
        self.k_search.validate()?;
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.variant.warmup_length(self.horizon) < 1 || self.horizon < 2 {
            return Err(Error::Config(format!("horizon {} too short", self.horizon)));
        }
        let ln_t = (self.horizon as f64).ln();
        if !(ln_t > self.prior.b_upper) {
            return Err(Error::Config(format!(
                "need ln T > b_hi for the warm-up margin, got ln T = {ln_t:.4}, b_hi = {}",
                self.prior.b_upper
            )));
        }
        if let Some(e) = self.epsilon_override {
            if !(e >= 0.0) {
                return Err(Error::Config(format!("epsilon override must be >= 0, got {e}")));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::new(self.variant, self.horizon)
    }

    fn confidence_inputs(&self) -> Result<ConfidenceInputs> {
        ConfidenceInputs::new(self.noise.alpha(), self.horizon as f64, self.prior)
    }
}

/// Warm-up control `C_init(x) + phi / ln T` with `C_init(x) = -(a_mid / b_mid) x`.
pub fn warmup_control(init_model: &Dynamics, x: f64, phi: f64, horizon: f64) -> f64 {
    -(init_model.a / init_model.b) * x + phi / horizon.ln()
}

/// Robust control interval over a confidence rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafeBounds {
    /// Smallest `u` with `min_theta a x + b u >= d_lower`.
    pub lower: f64,
    /// Largest `u` with `max_theta a x + b u <= d_upper`.
    pub upper: f64,
}

impl SafeBounds {
    pub fn is_crossed(&self) -> bool {
        self.lower > self.upper
    }
}

/// `u_safeL` and `u_safeU` over `|theta - theta_hat|_inf <= eps`.
///
/// With `b_hat - eps > 0`, `max_theta (a x + b u) = a_hat x + eps |x| + b_hat u
/// + eps |u|`, so the binding `b` is `b_hat + eps` when the answer is
/// non-negative and `b_hat - eps` otherwise (mirrored for the lower bound).
pub fn safe_bounds(theta_hat: &Dynamics, eps: f64, x: f64, boundary: &Boundary) -> Result<SafeBounds> {
    let b_lo = theta_hat.b - eps;
    if !(b_lo > 0.0) {
        return Err(Error::InfeasibleInterval(format!(
            "b_hat - eps = {b_lo} is not positive"
        )));
    }
    let b_hi = theta_hat.b + eps;
    let spread = eps * x.abs();
    let room_up = boundary.upper - theta_hat.a * x - spread;
    let upper = if room_up >= 0.0 { room_up / b_hi } else { room_up / b_lo };
    let room_down = boundary.lower - theta_hat.a * x + spread;
    let lower = if room_down <= 0.0 { room_down / b_hi } else { room_down / b_lo };
    Ok(SafeBounds { lower, upper })
}

/// The control actually applied at a round step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampDecision {
    pub u_safe_lower: Option<f64>,
    pub u_safe_upper: Option<f64>,
    pub nominal: f64,
    pub chosen: f64,
    pub flag: ClampFlag,
}

/// `max(min(nominal, u_safeU), u_safeL)`; a crossed interval yields its
/// midpoint and an undefined one yields `fallback`, both flagged infeasible.
pub fn clamp_control(nominal: f64, bounds: Option<SafeBounds>, fallback: impl FnOnce() -> f64) -> ClampDecision {
    match bounds {
        Some(sb) if sb.is_crossed() => ClampDecision {
            u_safe_lower: Some(sb.lower),
            u_safe_upper: Some(sb.upper),
            nominal,
            chosen: 0.5 * (sb.lower + sb.upper),
            flag: ClampFlag::Infeasible,
        },
        Some(sb) => {
            let (chosen, flag) = if nominal > sb.upper {
                (sb.upper, ClampFlag::Upper)
            } else if nominal < sb.lower {
                (sb.lower, ClampFlag::Lower)
            } else {
                (nominal, ClampFlag::None)
            };
            ClampDecision {
                u_safe_lower: Some(sb.lower),
                u_safe_upper: Some(sb.upper),
                nominal,
                chosen,
                flag,
            }
        }
        None => ClampDecision {
            u_safe_lower: None,
            u_safe_upper: None,
            nominal,
            chosen: fallback(),
            flag: ClampFlag::Infeasible,
        },
    }
}

/// `min over |theta - center|_inf <= eps` of the penetration threshold
/// `z / (a - b K)` (`+inf` where the slope is non-positive). The largest
/// slope sits at `a = a_c + eps` and `b = b_c - eps sign(K)`.
pub fn min_penetration_over_rectangle(center: &Dynamics, eps: f64, k: f64, z: f64) -> f64 {
    let slope = center.a + eps - center.b * k + eps * k.abs();
    if slope > 0.0 {
        z / slope
    } else {
        f64::INFINITY
    }
}

/// Points per axis of the optimistic-selection grid.
pub const SELECTION_GRID: usize = 5;

/// Grid argmin over the rectangle `|theta' - pre|_inf <= eps` of the minimal
/// penetration threshold under the gain `gain_for(theta')`. Grid points are
/// ordered `a`-major from the `(a_low, b_low)` corner; ties keep the lowest
/// index.
pub fn select_theta_with<F>(pre: &Dynamics, eps: f64, z: f64, mut gain_for: F) -> Result<Dynamics>
where
    F: FnMut(&Dynamics) -> Result<f64>,
{
    if eps == 0.0 {
        return Ok(*pre);
    }
    let n = SELECTION_GRID;
    let offset = |i: usize| -eps + 2.0 * eps * i as f64 / (n - 1) as f64;
    let mut best: Option<(f64, Dynamics)> = None;
    for ia in 0..n {
        for ib in 0..n {
            let cand = Dynamics::estimate(pre.a + offset(ia), pre.b + offset(ib));
            let k = gain_for(&cand)?;
            let obj = min_penetration_over_rectangle(pre, eps, k, z);
            if best.is_none_or(|(b, _)| obj < b) {
                best = Some((obj, cand));
            }
        }
    }
    Ok(best.map(|(_, c)| c).unwrap_or(*pre))
}

/// Optimistic model selection with gains from `search`. Candidates are
/// projected onto `prior` (when given) before their gain is computed.
#[allow(clippy::too_many_arguments)]
pub fn select_theta_large_noise(
    pre: &Dynamics,
    eps: f64,
    t_s: usize,
    boundary: &Boundary,
    weights: &CostWeights,
    search: &GainSearch,
    prior: Option<&UncertaintyBox>,
) -> Result<Dynamics> {
    select_theta_with(pre, eps, boundary.upper, |cand| {
        let model = prior.map_or(*cand, |p| p.project(cand));
        Ok(search.k_opt(&model, boundary, weights, t_s)?.k)
    })
}

/// Per-round state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub s: u32,
    /// First step of the round, equal to the nominal length `T_s`.
    pub start: usize,
    /// One past the last step (cut at the horizon).
    pub end: usize,
    pub theta_hat_pre: Dynamics,
    /// Selected estimate (equals `theta_hat_pre` for the general variant).
    pub theta_hat: Dynamics,
    /// `theta_hat` projected onto the prior box; defines the nominal controller.
    pub nominal_model: Dynamics,
    pub epsilon: f64,
    pub k: f64,
    pub k_est_cost: f64,
    /// Whether the robust interval is defined (`b_pre - eps > 0`).
    pub bounds_defined: bool,
    /// `|theta* - theta_hat_pre|_inf <= epsilon` (known to the simulator only).
    pub covers_truth: bool,
}

impl RoundState {
    pub fn t_s(&self) -> usize {
        self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum RunStatus {
    Completed,
    /// Precondition failed; nothing was simulated.
    Refused(String),
    /// The state left the representable range at step `t`; the log stops there.
    Diverged { t: usize },
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "ok",
            RunStatus::Refused(_) => "refused",
            RunStatus::Diverged { .. } => "diverged",
        }
    }
}

/// A finished (or refused) closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeCeRun {
    pub variant: Variant,
    pub horizon: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub schedule: Schedule,
    pub log: TrajectoryLog,
    pub rounds: Vec<RoundState>,
    pub init_check: Option<InitCheck>,
    /// Cost of the warm-up steps.
    pub warmup_cost: f64,
    /// Sum of `r (u^2 - u_nominal^2)` over steps where a clamp bound bound.
    pub clamp_excess_control_cost: f64,
    pub first_infeasible_t: Option<usize>,
}

impl SafeCeRun {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn final_epsilon(&self) -> f64 {
        self.rounds.last().map_or(f64::NAN, |r| r.epsilon)
    }

    /// `max_s epsilon_s sqrt(T_s)`.
    pub fn eps_sqrt_ts_max(&self) -> f64 {
        self.rounds
            .iter()
            .map(|r| r.epsilon * (r.t_s() as f64).sqrt())
            .fold(f64::NAN, f64::max)
    }

    pub fn infeasible_steps(&self) -> usize {
        self.log.count_flag(ClampFlag::Infeasible)
    }

    pub fn clamped_steps(&self) -> usize {
        self.log.count_flag(ClampFlag::Upper) + self.log.count_flag(ClampFlag::Lower)
    }
}

/// States beyond this magnitude end the run as diverged; squares of larger
/// values would overflow the Gram matrix.
pub const DIVERGENCE_LIMIT: f64 = 1e100;

/// Compute the round plan from the data gathered so far.
pub fn plan_round(
    cfg: &SafeCeConfig,
    search: &GainSearch,
    rls: &RlsState,
    truth: Option<&Dynamics>,
    s: u32,
    start: usize,
    end: usize,
) -> Result<RoundState> {
    let pre = rls.estimate()?;
    let epsilon = match cfg.epsilon_override {
        Some(e) => e,
        None => confidence_radius(rls, &cfg.confidence_inputs()?)?,
    };
    let t_s = start;
    let theta_hat = match cfg.variant {
        Variant::General => pre,
        Variant::LargeNoise => select_theta_large_noise(
            &pre,
            epsilon,
            t_s,
            &cfg.boundary,
            &cfg.weights,
            search,
            Some(&cfg.prior),
        )?,
    };
    let nominal_model = cfg.prior.project(&theta_hat);
    let gain = search.k_opt(&nominal_model, &cfg.boundary, &cfg.weights, t_s)?;
    Ok(RoundState {
        s,
        start,
        end,
        theta_hat_pre: pre,
        theta_hat,
        nominal_model,
        epsilon,
        k: gain.k,
        k_est_cost: gain.est_cost,
        bounds_defined: pre.b - epsilon > 0.0,
        covers_truth: truth.is_some_and(|t| t.dist_inf(&pre) <= epsilon),
    })
}

/// Run one trajectory, drawing the frozen gain-search tensor from `cfg.k_search`.
pub fn run_safe_ce(cfg: &SafeCeConfig, truth: &Dynamics, seed: u64) -> Result<SafeCeRun> {
    let search = GainSearch::new(cfg.k_search, &cfg.noise)?;
    run_safe_ce_with(cfg, truth, seed, &search)
}

/// Run one trajectory with a prebuilt gain search (shared read-only across runs).
pub fn run_safe_ce_with(cfg: &SafeCeConfig, truth: &Dynamics, seed: u64, search: &GainSearch) -> Result<SafeCeRun> {
    cfg.validate()?;
    let schedule = cfg.schedule();
    let horizon = cfg.horizon;
    let mut run = SafeCeRun {
        variant: cfg.variant,
        horizon,
        seed,
        status: RunStatus::Completed,
        schedule: schedule.clone(),
        log: TrajectoryLog::with_capacity(cfg.weights, 0.0, horizon),
        rounds: Vec::with_capacity(schedule.rounds.len()),
        init_check: None,
        warmup_cost: 0.0,
        clamp_excess_control_cost: 0.0,
        first_infeasible_t: None,
    };

    let init = check_init_controller(&cfg.prior, &cfg.boundary, &cfg.noise, horizon)?;
    run.init_check = Some(init);
    if !init.valid {
        run.status = RunStatus::Refused(format!(
            "initial controller not certified: worst violation {:.6}",
            init.max_violation_margin
        ));
        run.log.finish();
        return Ok(run);
    }

    let mut noise_rng = substream(seed, STREAM_PROCESS_NOISE);
    let mut dither_rng = substream(seed, STREAM_DITHER);
    let t_f = horizon as f64;
    let init_model = cfg.prior.midpoint();
    let mut dithered = |x: f64| {
        let phi = if dither_rng.random::<bool>() { 1.0 } else { -1.0 };
        warmup_control(&init_model, x, phi, t_f)
    };

    let mut rls = RlsState::new(cfg.lambda)?;
    let mut x = 0.0;

    for _ in 0..schedule.warmup {
        let u = dithered(x);
        let w = cfg.noise.sample(&mut noise_rng);
        let next = run.log.push(truth, x, u, w, ClampFlag::None, Phase::Warmup);
        run.warmup_cost += cfg.weights.q * x * x + cfg.weights.r * u * u;
        rls.push(x, u, next);
        x = next;
    }

    for (s, &(start, end)) in schedule.rounds.iter().enumerate() {
        let round = plan_round(cfg, search, &rls, Some(truth), s as u32, start, end)?;
        let ctrl = TruncatedLinearController::new(round.nominal_model, round.k, cfg.boundary)?;
        let phase = Phase::Round(s as u32);
        for t in start..end {
            let nominal = ctrl.control(x);
            let bounds = if round.bounds_defined {
                safe_bounds(&round.theta_hat_pre, round.epsilon, x, &cfg.boundary).ok()
            } else {
                None
            };
            let decision = clamp_control(nominal, bounds, || dithered(x));
            match decision.flag {
                ClampFlag::Upper | ClampFlag::Lower => {
                    run.clamp_excess_control_cost +=
                        cfg.weights.r * (decision.chosen * decision.chosen - nominal * nominal);
                }
                ClampFlag::Infeasible if run.first_infeasible_t.is_none() => {
                    run.first_infeasible_t = Some(t);
                }
                _ => {}
            }
            let w = cfg.noise.sample(&mut noise_rng);
            let next = run.log.push(truth, x, decision.chosen, w, decision.flag, phase);
            if !(next.abs() <= DIVERGENCE_LIMIT) {
                run.status = RunStatus::Diverged { t };
                run.rounds.push(round);
                run.log.finish();
                return Ok(run);
            }
            rls.push(x, decision.chosen, next);
            x = next;
        }
        run.rounds.push(round);
    }
    run.log.finish();
    Ok(run)
}
