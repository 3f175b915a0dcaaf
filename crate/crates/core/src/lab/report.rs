//! Sweep rows, aggregates and their CSV form.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), which
//! round-trips every finite `f64` exactly; `NaN` and `inf` are written as
//! Rust spells them and parse back to themselves.

use std::io::{Read, Write};
use std::path::Path;

use csv::StringRecord;
use serde::{Deserialize, Serialize};

use super::baseline::mean_ci;
use crate::dynamics::{ClampFlag, Phase, StepRecord};
use crate::safe_ce::Variant;
use crate::{Error, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map(|t| t.to_string()).unwrap_or_default()
}

fn field(rec: &StringRecord, i: usize) -> Result<&str> {
    rec.get(i).ok_or_else(|| Error::Parse(format!("missing column {i}")))
}

fn parse_f64(rec: &StringRecord, i: usize) -> Result<f64> {
    let s = field(rec, i)?;
    s.parse().map_err(|_| Error::Parse(format!("column {i}: bad float {s:?}")))
}

fn parse_usize(rec: &StringRecord, i: usize) -> Result<usize> {
    let s = field(rec, i)?;
    s.parse().map_err(|_| Error::Parse(format!("column {i}: bad integer {s:?}")))
}

fn parse_u64(rec: &StringRecord, i: usize) -> Result<u64> {
    let s = field(rec, i)?;
    s.parse().map_err(|_| Error::Parse(format!("column {i}: bad integer {s:?}")))
}

fn parse_opt(rec: &StringRecord, i: usize) -> Result<Option<usize>> {
    match field(rec, i)? {
        "" => Ok(None),
        _ => parse_usize(rec, i).map(Some),
    }
}

/// A value with a fixed CSV layout.
pub trait CsvRow: Sized {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
    fn parse(rec: &StringRecord) -> Result<Self>;
}

pub fn write_rows<T: CsvRow, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(T::HEADER)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: CsvRow, R: Read>(input: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(T::HEADER.iter().copied()) {
        return Err(Error::Parse(format!("unexpected header {header:?}")));
    }
    r.records().map(|rec| T::parse(&rec?)).collect()
}

pub fn write_csv_file<T: CsvRow>(rows: &[T], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_rows(rows, std::io::BufWriter::new(file))
}

pub fn read_csv_file<T: CsvRow>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_rows(std::io::BufReader::new(file))
}

/// One `(variant, T, seed)` cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub variant: Variant,
    pub horizon: usize,
    pub seed: u64,
    pub total_cost: f64,
    pub baseline_cost: f64,
    pub baseline_ci: f64,
    /// `total_cost - baseline_cost`, unclipped.
    pub regret: f64,
    pub violations: usize,
    pub infeasible: usize,
    pub final_epsilon: f64,
    pub eps_sqrt_ts_max: f64,
    /// `ok`, `diverged`, `refused` or `error`.
    pub status: String,
}

impl RunRow {
    /// Rows that carry a simulated cost and enter the aggregates.
    pub fn is_measured(&self) -> bool {
        self.status == "ok" || self.status == "diverged"
    }
}

impl CsvRow for RunRow {
    const HEADER: &'static [&'static str] = &[
        "variant",
        "T",
        "seed",
        "total_cost",
        "baseline_cost",
        "baseline_ci",
        "regret",
        "violations",
        "infeasible",
        "final_epsilon",
        "eps_sqrtTs_max",
        "status",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            self.variant.to_string(),
            self.horizon.to_string(),
            self.seed.to_string(),
            fmt_f64(self.total_cost),
            fmt_f64(self.baseline_cost),
            fmt_f64(self.baseline_ci),
            fmt_f64(self.regret),
            self.violations.to_string(),
            self.infeasible.to_string(),
            fmt_f64(self.final_epsilon),
            fmt_f64(self.eps_sqrt_ts_max),
            self.status.clone(),
        ]
    }

    fn parse(rec: &StringRecord) -> Result<Self> {
        Ok(Self {
            variant: field(rec, 0)?.parse()?,
            horizon: parse_usize(rec, 1)?,
            seed: parse_u64(rec, 2)?,
            total_cost: parse_f64(rec, 3)?,
            baseline_cost: parse_f64(rec, 4)?,
            baseline_ci: parse_f64(rec, 5)?,
            regret: parse_f64(rec, 6)?,
            violations: parse_usize(rec, 7)?,
            infeasible: parse_usize(rec, 8)?,
            final_epsilon: parse_f64(rec, 9)?,
            eps_sqrt_ts_max: parse_f64(rec, 10)?,
            status: field(rec, 11)?.to_string(),
        })
    }
}

/// Per-run diagnostics that do not fit the fixed `runs.csv` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub variant: Variant,
    pub horizon: usize,
    pub seed: u64,
    pub steps: usize,
    /// Cost of the warm-up steps.
    pub warmup_cost: f64,
    /// Extra control cost paid where a safe bound overrode the nominal control.
    pub clamp_excess_control_cost: f64,
    pub clamped: usize,
    pub first_infeasible_t: Option<usize>,
    pub first_violation_t: Option<usize>,
    pub max_excursion: f64,
    pub epsilon_0: f64,
    pub diverged_at: Option<usize>,
}

impl CsvRow for DiagnosticsRow {
    const HEADER: &'static [&'static str] = &[
        "variant",
        "T",
        "seed",
        "steps",
        "warmup_cost",
        "clamp_excess_control_cost",
        "clamped",
        "first_infeasible_t",
        "first_violation_t",
        "max_excursion",
        "epsilon_0",
        "diverged_at",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            self.variant.to_string(),
            self.horizon.to_string(),
            self.seed.to_string(),
            self.steps.to_string(),
            fmt_f64(self.warmup_cost),
            fmt_f64(self.clamp_excess_control_cost),
            self.clamped.to_string(),
            fmt_opt(self.first_infeasible_t),
            fmt_opt(self.first_violation_t),
            fmt_f64(self.max_excursion),
            fmt_f64(self.epsilon_0),
            fmt_opt(self.diverged_at),
        ]
    }

    fn parse(rec: &StringRecord) -> Result<Self> {
        Ok(Self {
            variant: field(rec, 0)?.parse()?,
            horizon: parse_usize(rec, 1)?,
            seed: parse_u64(rec, 2)?,
            steps: parse_usize(rec, 3)?,
            warmup_cost: parse_f64(rec, 4)?,
            clamp_excess_control_cost: parse_f64(rec, 5)?,
            clamped: parse_usize(rec, 6)?,
            first_infeasible_t: parse_opt(rec, 7)?,
            first_violation_t: parse_opt(rec, 8)?,
            max_excursion: parse_f64(rec, 9)?,
            epsilon_0: parse_f64(rec, 10)?,
            diverged_at: parse_opt(rec, 11)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: Variant,
    pub horizon: usize,
    pub mean_regret: f64,
    pub ci: f64,
    /// Slope fitted over this variant's points up to and including `horizon`.
    pub slope_so_far: f64,
}

impl CsvRow for SummaryRow {
    const HEADER: &'static [&'static str] = &["variant", "T", "mean_regret", "ci", "slope_so_far"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.variant.to_string(),
            self.horizon.to_string(),
            fmt_f64(self.mean_regret),
            fmt_f64(self.ci),
            fmt_f64(self.slope_so_far),
        ]
    }

    fn parse(rec: &StringRecord) -> Result<Self> {
        Ok(Self {
            variant: field(rec, 0)?.parse()?,
            horizon: parse_usize(rec, 1)?,
            mean_regret: parse_f64(rec, 2)?,
            ci: parse_f64(rec, 3)?,
            slope_so_far: parse_f64(rec, 4)?,
        })
    }
}

impl CsvRow for StepRecord {
    const HEADER: &'static [&'static str] =
        &["t", "x", "u", "w", "expected_next", "stage_cost", "clamp", "phase", "round"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.t.to_string(),
            fmt_f64(self.x),
            fmt_f64(self.u),
            fmt_f64(self.w),
            fmt_f64(self.expected_next),
            fmt_f64(self.stage_cost),
            self.clamp.as_str().to_string(),
            self.phase.label().to_string(),
            self.phase.round().map(|s| s.to_string()).unwrap_or_default(),
        ]
    }

    fn parse(rec: &StringRecord) -> Result<Self> {
        let clamp = match field(rec, 6)? {
            "none" => ClampFlag::None,
            "upper" => ClampFlag::Upper,
            "lower" => ClampFlag::Lower,
            "infeasible" => ClampFlag::Infeasible,
            other => return Err(Error::Parse(format!("unknown clamp flag {other:?}"))),
        };
        let phase = match (field(rec, 7)?, parse_opt(rec, 8)?) {
            ("fixed", None) => Phase::Fixed,
            ("warmup", None) => Phase::Warmup,
            ("round", Some(s)) => Phase::Round(
                u32::try_from(s).map_err(|_| Error::Parse(format!("round index {s} too large")))?,
            ),
            (p, r) => return Err(Error::Parse(format!("bad phase {p:?} / round {r:?}"))),
        };
        Ok(Self {
            t: parse_usize(rec, 0)?,
            x: parse_f64(rec, 1)?,
            u: parse_f64(rec, 2)?,
            w: parse_f64(rec, 3)?,
            expected_next: parse_f64(rec, 4)?,
            stage_cost: parse_f64(rec, 5)?,
            clamp,
            phase,
        })
    }
}

/// Log-log least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub used: usize,
    /// Points dropped for a non-positive (or non-finite) value.
    pub excluded: usize,
}

/// Ordinary least squares of `ln y` on `ln T`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, y)| *t > 0.0 && *y > 0.0 && t.is_finite() && y.is_finite())
        .map(|(t, y)| (t.ln(), y.ln()))
        .collect();
    let excluded = points.len() - usable.len();
    let n = usable.len() as f64;
    if usable.len() < 2 {
        return Err(Error::Numeric(format!(
            "slope fit needs two positive points, got {} ({excluded} excluded)",
            usable.len()
        )));
    }
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Numeric("slope fit needs two distinct horizons".into()));
    }
    let slope = sxy / sxx;
    Ok(SlopeFit { slope, intercept: my - slope * mx, used: usable.len(), excluded })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantSlope {
    pub variant: Variant,
    /// `None` when fewer than two positive mean regrets were available.
    pub fit: Option<SlopeFit>,
}

/// Full sweep output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub rows: Vec<RunRow>,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub summary: Vec<SummaryRow>,
    pub slopes: Vec<VariantSlope>,
}

impl RegretReport {
    pub fn from_rows(rows: Vec<RunRow>, diagnostics: Vec<DiagnosticsRow>) -> Self {
        let (summary, slopes) = summarize(&rows);
        Self { rows, diagnostics, summary, slopes }
    }

    pub fn slope(&self, variant: Variant) -> Option<SlopeFit> {
        self.slopes.iter().find(|s| s.variant == variant).and_then(|s| s.fit)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        write_csv_file(&self.rows, &dir.join("runs.csv"))?;
        write_csv_file(&self.summary, &dir.join("summary.csv"))?;
        write_csv_file(&self.diagnostics, &dir.join("diagnostics.csv"))?;
        let slopes = serde_json::to_string_pretty(&self.slopes)?;
        std::fs::write(dir.join("slopes.json"), slopes + "\n")?;
        Ok(())
    }
}

/// Per-(variant, T) mean regret with its 95% half-width over measured rows,
/// the running slope, and the final slope per variant. Groups appear in
/// first-seen row order.
pub fn summarize(rows: &[RunRow]) -> (Vec<SummaryRow>, Vec<VariantSlope>) {
    let mut keys: Vec<(Variant, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.variant, r.horizon)) {
            keys.push((r.variant, r.horizon));
        }
    }
    let mut summary = Vec::with_capacity(keys.len());
    for &(variant, horizon) in &keys {
        let regrets: Vec<f64> = rows
            .iter()
            .filter(|r| r.variant == variant && r.horizon == horizon && r.is_measured())
            .map(|r| r.regret)
            .collect();
        let (mean_regret, ci) =
            if regrets.is_empty() { (f64::NAN, f64::NAN) } else { mean_ci(&regrets) };
        summary.push(SummaryRow { variant, horizon, mean_regret, ci, slope_so_far: f64::NAN });
    }
    let mut variants: Vec<Variant> = Vec::new();
    for &(v, _) in &keys {
        if !variants.contains(&v) {
            variants.push(v);
        }
    }
    let mut slopes = Vec::with_capacity(variants.len());
    for v in variants {
        let mut points: Vec<(f64, f64)> = Vec::new();
        let mut idx: Vec<usize> =
            (0..summary.len()).filter(|&i| summary[i].variant == v).collect();
        idx.sort_by_key(|&i| summary[i].horizon);
        for &i in &idx {
            points.push((summary[i].horizon as f64, summary[i].mean_regret));
            summary[i].slope_so_far = fit_slope(&points).map_or(f64::NAN, |f| f.slope);
        }
        slopes.push(VariantSlope { variant: v, fit: fit_slope(&points).ok() });
    }
    (summary, slopes)
}
