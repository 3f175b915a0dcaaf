use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::audit::{safety_audit, SafetyAudit};
use super::baseline::{baseline_cost, BaselineCost};
use super::config::LabConfig;
use super::report::{DiagnosticsRow, RegretReport, RunRow};
use crate::controllers::{
    check_init_controller, check_large_support, GainSearch, InitCheck, LargeSupportCheck,
};
use crate::rng::derive_seed;
use crate::safe_ce::{run_safe_ce_with, RunStatus, SafeCeRun, Variant};
use crate::{Error, Result};

/// Seed of run `index` at horizon `horizon`; shared by all variants so they
/// see the same process noise.
pub fn run_seed(master: u64, horizon: usize, index: usize) -> u64 {
    derive_seed(master, &[horizon as u64, index as u64])
}

/// Seed of the baseline estimate at `horizon`.
pub fn baseline_seed(master: u64, horizon: usize) -> u64 {
    derive_seed(master, &[horizon as u64])
}

/// Build a worker pool (`None` or `Some(0)` uses rayon's default size).
pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Baseline cost at `horizon` for the configured scenario.
pub fn scenario_baseline(cfg: &LabConfig, search: &GainSearch, horizon: usize) -> Result<BaselineCost> {
    let s = cfg.scenario()?;
    baseline_cost(
        &s.truth,
        &s.boundary,
        &s.weights,
        horizon,
        &s.noise,
        search,
        cfg.sweep.baseline_mc,
        baseline_seed(cfg.seed, horizon),
    )
}

/// One closed-loop run of the configured scenario plus its safety audit.
pub fn simulate(
    cfg: &LabConfig,
    search: &GainSearch,
    variant: Variant,
    horizon: usize,
    seed: u64,
) -> Result<(SafeCeRun, SafetyAudit)> {
    let s = cfg.scenario()?;
    let run = run_safe_ce_with(&cfg.safe_ce_config(variant, horizon)?, &s.truth, seed, search)?;
    let audit = safety_audit(&run.log, &s.truth, &s.boundary);
    Ok((run, audit))
}

fn measure(
    cfg: &LabConfig,
    search: &GainSearch,
    variant: Variant,
    horizon: usize,
    seed: u64,
    base: &BaselineCost,
) -> (RunRow, DiagnosticsRow) {
    let mut row = RunRow {
        variant,
        horizon,
        seed,
        total_cost: f64::NAN,
        baseline_cost: base.mean_total_cost,
        baseline_ci: base.ci_halfwidth,
        regret: f64::NAN,
        violations: 0,
        infeasible: 0,
        final_epsilon: f64::NAN,
        eps_sqrt_ts_max: f64::NAN,
        status: "error".into(),
    };
    let mut diag = DiagnosticsRow {
        variant,
        horizon,
        seed,
        steps: 0,
        warmup_cost: f64::NAN,
        clamp_excess_control_cost: f64::NAN,
        clamped: 0,
        first_infeasible_t: None,
        first_violation_t: None,
        max_excursion: f64::NAN,
        epsilon_0: f64::NAN,
        diverged_at: None,
    };
    let Ok((run, audit)) = simulate(cfg, search, variant, horizon, seed) else {
        return (row, diag);
    };
    row.status = run.status.label().into();
    if matches!(run.status, RunStatus::Refused(_)) {
        return (row, diag);
    }
    row.total_cost = run.log.total_cost;
    row.regret = run.log.total_cost - base.mean_total_cost;
    row.violations = audit.violation_steps;
    row.infeasible = run.infeasible_steps();
    row.final_epsilon = run.final_epsilon();
    row.eps_sqrt_ts_max = run.eps_sqrt_ts_max();
    diag.steps = run.log.horizon();
    diag.warmup_cost = run.warmup_cost;
    diag.clamp_excess_control_cost = run.clamp_excess_control_cost;
    diag.clamped = run.clamped_steps();
    diag.first_infeasible_t = run.first_infeasible_t;
    diag.first_violation_t = audit.first_violation_t;
    diag.max_excursion = audit.max_excursion;
    diag.epsilon_0 = run.rounds.first().map_or(f64::NAN, |r| r.epsilon);
    if let RunStatus::Diverged { t } = run.status {
        diag.diverged_at = Some(t);
    }
    (row, diag)
}

/// Every `(variant, T, seed)` cell of the configured sweep, compared with a
/// baseline computed once per `T`. Rows are ordered by variant (config
/// order), then `T`, then seed index, independent of the worker count. Failed
/// runs become rows with a non-`ok` status.
pub fn regret_sweep(cfg: &LabConfig, threads: Option<usize>) -> Result<RegretReport> {
    cfg.validate()?;
    let search = GainSearch::new(cfg.k_search_config()?, &cfg.scenario()?.noise)?;
    thread_pool(threads)?.install(|| {
        let baselines: Vec<BaselineCost> = cfg
            .sweep
            .t_grid
            .par_iter()
            .map(|&t| scenario_baseline(cfg, &search, t))
            .collect::<Result<_>>()?;
        let cells: Vec<(Variant, usize, usize)> = cfg
            .sweep
            .variants
            .iter()
            .flat_map(|&v| {
                cfg.sweep
                    .t_grid
                    .iter()
                    .enumerate()
                    .flat_map(move |(ti, _)| (0..cfg.sweep.n_seeds).map(move |i| (v, ti, i)))
            })
            .collect();
        let (rows, diags): (Vec<RunRow>, Vec<DiagnosticsRow>) = cells
            .par_iter()
            .map(|&(v, ti, i)| {
                let t = cfg.sweep.t_grid[ti];
                measure(cfg, &search, v, t, run_seed(cfg.seed, t, i), &baselines[ti])
            })
            .unzip();
        Ok(RegretReport::from_rows(rows, diags))
    })
}

/// Assumption checks of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Initial-controller check per horizon of the grid.
    pub init: Vec<(usize, InitCheck)>,
    /// Reference gain: `K_opt(theta*, T_max)`.
    pub k_ref: f64,
    pub large_support: LargeSupportCheck,
}

pub fn feasibility_report(cfg: &LabConfig, search: &GainSearch) -> Result<FeasibilityReport> {
    let s = cfg.scenario()?;
    let init = cfg
        .sweep
        .t_grid
        .iter()
        .map(|&t| Ok((t, check_init_controller(&s.prior, &s.boundary, &s.noise, t)?)))
        .collect::<Result<_>>()?;
    let t_max = *cfg.sweep.t_grid.last().ok_or_else(|| Error::Config("empty t_grid".into()))?;
    let k_ref = search.k_opt(&s.truth, &s.boundary, &s.weights, t_max)?.k;
    Ok(FeasibilityReport {
        init,
        k_ref,
        large_support: check_large_support(&s.truth, &s.boundary, &s.noise, k_ref),
    })
}
