use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use safe_lqr::controllers::GainSearch;
use safe_lqr::lab::{
    feasibility_report, regret_sweep, run_seed, scenario_baseline, simulate, thread_pool,
    write_csv_file, LabConfig,
};
use safe_lqr::safe_ce::Variant;
use safe_lqr::{Error, Result};

/// Safe certainty-equivalence LQR simulator and regret harness.
#[derive(Parser)]
#[command(name = "safe-lqr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config (defaults to the built-in desk scenario).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and write trajectory.csv and run.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "alg2")]
        variant: Variant,
        /// Horizon (defaults to the first entry of the config's t_grid).
        #[arg(long)]
        horizon: Option<usize>,
        /// Seed index within the sweep's seed sequence.
        #[arg(long, default_value_t = 0)]
        seed_index: usize,
    },
    /// Estimate the baseline cost for every horizon of the grid.
    Baseline {
        #[command(flatten)]
        common: Common,
    },
    /// Full regret sweep: runs.csv, summary.csv, diagnostics.csv, slopes.json.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Override the number of seeds per cell.
        #[arg(long)]
        seeds: Option<usize>,
        /// Restrict the sweep to one variant.
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Initial-controller and large-support feasibility report.
    Check {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<LabConfig> {
    match &common.config {
        Some(p) => LabConfig::load(p),
        None => Ok(LabConfig::desk()),
    }
}

fn prepare(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

fn search_for(cfg: &LabConfig) -> Result<GainSearch> {
    GainSearch::new(cfg.k_search_config()?, &cfg.scenario()?.noise)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, variant, horizon, seed_index } => {
            let cfg = load(&common)?;
            let horizon = horizon.unwrap_or(cfg.sweep.t_grid[0]);
            let seed = run_seed(cfg.seed, horizon, seed_index);
            let search = search_for(&cfg)?;
            let (run, audit) =
                thread_pool(common.threads)?.install(|| simulate(&cfg, &search, variant, horizon, seed))?;
            prepare(&common.out)?;
            write_csv_file(&run.log.records, &common.out.join("trajectory.csv"))?;
            let meta = serde_json::json!({
                "variant": variant,
                "T": horizon,
                "seed": seed,
                "status": run.status,
                "steps": run.log.horizon(),
                "total_cost": run.log.total_cost,
                "warmup_cost": run.warmup_cost,
                "clamp_excess_control_cost": run.clamp_excess_control_cost,
                "first_infeasible_t": run.first_infeasible_t,
                "infeasible_steps": run.infeasible_steps(),
                "clamped_steps": run.clamped_steps(),
                "audit": audit,
                "schedule": run.schedule,
                "rounds": run.rounds,
                "init_check": run.init_check,
            });
            write_json(&meta, &common.out.join("run.json"))?;
            println!(
                "{variant} T={horizon} seed={seed} status={} total_cost={:.6e} violations={} infeasible={}",
                run.status.label(),
                run.log.total_cost,
                audit.violation_steps,
                run.infeasible_steps()
            );
        }
        Command::Baseline { common } => {
            let cfg = load(&common)?;
            let search = search_for(&cfg)?;
            let rows = thread_pool(common.threads)?.install(|| {
                cfg.sweep
                    .t_grid
                    .iter()
                    .map(|&t| Ok((t, scenario_baseline(&cfg, &search, t)?)))
                    .collect::<Result<Vec<_>>>()
            })?;
            prepare(&common.out)?;
            let mut w = csv::Writer::from_path(common.out.join("baseline.csv"))?;
            w.write_record(["T", "k_star", "mean_total_cost", "ci_halfwidth", "n_mc"])?;
            for (t, b) in &rows {
                w.write_record([
                    t.to_string(),
                    format!("{:.16e}", b.k_star),
                    format!("{:.16e}", b.mean_total_cost),
                    format!("{:.16e}", b.ci_halfwidth),
                    b.n_mc.to_string(),
                ])?;
                println!("T={t} k_star={:.6} mean={:.6e} ci={:.3e}", b.k_star, b.mean_total_cost, b.ci_halfwidth);
            }
            w.flush()?;
        }
        Command::Sweep { common, seeds, variant } => {
            let mut cfg = load(&common)?;
            if let Some(n) = seeds {
                cfg.sweep.n_seeds = n;
            }
            if let Some(v) = variant {
                cfg.sweep.variants = vec![v];
            }
            let report = regret_sweep(&cfg, common.threads)?;
            report.write_dir(&common.out)?;
            for s in &report.summary {
                println!(
                    "{} T={} mean_regret={:.6e} ci={:.3e} slope_so_far={:.4}",
                    s.variant, s.horizon, s.mean_regret, s.ci, s.slope_so_far
                );
            }
            let bad = report.rows.iter().filter(|r| r.status != "ok").count();
            if bad > 0 {
                println!("{bad} of {} runs did not complete normally", report.rows.len());
            }
        }
        Command::Check { common } => {
            let cfg = load(&common)?;
            let search = search_for(&cfg)?;
            let rep = thread_pool(common.threads)?.install(|| feasibility_report(&cfg, &search))?;
            prepare(&common.out)?;
            write_json(&rep, &common.out.join("check.json"))?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
