//! Regret-bound constants, aggregation across repetitions, and the CSV files
//! a sweep produces.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategy::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegretKind {
    /// `R_T^K`, the sum of per-batch minima.
    Batch,
    /// `R_TK`, the sum over every queried point.
    Full,
}

/// `C₁` of the regret bound: `4/log(1+σ⁻²)` for batch regret,
/// `36/log(1+σ⁻²)` for full regret.
pub fn bound_c1(noise_var: f64, kind: RegretKind) -> f64 {
    let scale = match kind {
        RegretKind::Batch => 4.0,
        RegretKind::Full => 36.0,
    };
    scale / (1.0 / noise_var).ln_1p()
}

/// `C₂ = π/√6`
pub fn bound_c2() -> f64 {
    PI / 6f64.sqrt()
}

/// `√(C₁ (T/K) β_T γ̂ + C₂)` for batch regret and `√(C₁ T K β_T γ̂ + C₂)` for
/// full regret.
pub fn theorem_bound(t: usize, k: usize, beta_t: f64, gamma_hat: f64, noise_var: f64, kind: RegretKind) -> f64 {
    let (t, k) = (t as f64, k as f64);
    let factor = match kind {
        RegretKind::Batch => t / k,
        RegretKind::Full => t * k,
    };
    (bound_c1(noise_var, kind) * factor * beta_t * gamma_hat + bound_c2()).sqrt()
}

/// `2/log(1+σ⁻²)`, the constant tying squared deviations to information gain.
pub fn variance_gain_constant(noise_var: f64) -> f64 {
    2.0 / (1.0 / noise_var).ln_1p()
}

/// One line of `trace.csv`. Initialization rows have `t = −1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub repetition: usize,
    pub t: i64,
    pub k: usize,
    pub role: Role,
    pub x: Vec<f64>,
    pub y: f64,
    pub r: f64,
    pub r_batch_min: Option<f64>,
    pub best_so_far: Option<f64>,
    pub beta_t: Option<f64>,
    pub sigma: Option<f64>,
    pub y_bullet: Option<f64>,
}

/// Per-repetition results written to `runs.csv`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub repetition: usize,
    /// `ok`, or the error that ended the run.
    pub status: String,
    pub iterations: usize,
    pub batch_size: usize,
    pub batch_regret: f64,
    pub full_regret: f64,
    /// Output scale dividing regrets before comparison with the bound.
    pub scale: f64,
    pub beta_final: f64,
    pub gamma_hat: f64,
    pub noise_var: f64,
    pub kernel: String,
    pub bound_batch: f64,
    pub bound_full: f64,
    /// The true function stayed inside every confidence interval.
    pub contained: bool,
    pub ucb_step_checked: usize,
    pub ucb_step_violations: usize,
    pub deviation_sum_condition: bool,
    pub deviation_sum_lhs: f64,
    pub deviation_sum_rhs: f64,
    pub deviation_sum_boundary: f64,
    pub variance_sum_lhs: f64,
    pub variance_sum_rhs: f64,
    pub invariant_violations: usize,
    pub fallbacks: usize,
}

impl RunMetrics {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn batch_bound_holds(&self) -> bool {
        self.batch_regret / self.scale <= self.bound_batch
    }

    pub fn full_bound_holds(&self) -> bool {
        self.full_regret / self.scale <= self.bound_full
    }

    pub fn deviation_sum_holds(&self) -> bool {
        self.deviation_sum_lhs <= self.deviation_sum_rhs
    }

    pub fn deviation_sum_corrected_holds(&self) -> bool {
        self.deviation_sum_lhs <= self.deviation_sum_rhs + self.deviation_sum_boundary
    }

    pub fn variance_sum_holds(&self) -> bool {
        self.variance_sum_lhs <= self.variance_sum_rhs + 1e-6
    }
}

/// Simple-regret curve of one repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCurve {
    pub repetition: usize,
    pub batch_min: Vec<f64>,
    pub best_so_far: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub t: usize,
    pub mean_simple_regret: f64,
    pub ci_halfwidth: f64,
    pub n: usize,
    pub mean_best_so_far: f64,
    pub best_ci_halfwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub rows: Vec<SummaryRow>,
}

impl RunSummary {
    pub fn at(&self, t: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.t == t)
    }

    pub fn last(&self) -> Option<&SummaryRow> {
        self.rows.last()
    }
}

/// Mean and `1.96·sd/√n` half-width with the `n − 1` sample deviation.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Per-iteration mean and 95% normal-approximation interval across runs.
/// Runs that ended early contribute to the iterations they completed.
pub fn aggregate_runs(curves: &[RunCurve]) -> RunSummary {
    let horizon = curves.iter().map(|c| c.batch_min.len()).max().unwrap_or(0);
    let rows = (0..horizon)
        .map(|t| {
            let mins: Vec<f64> = curves.iter().filter_map(|c| c.batch_min.get(t).copied()).collect();
            let bests: Vec<f64> = curves.iter().filter_map(|c| c.best_so_far.get(t).copied()).collect();
            let (mean, half) = mean_ci(&mins);
            let (mean_best, best_half) = mean_ci(&bests);
            SummaryRow {
                t,
                mean_simple_regret: mean,
                ci_halfwidth: half,
                n: mins.len(),
                mean_best_so_far: mean_best,
                best_ci_halfwidth: best_half,
            }
        })
        .collect();
    RunSummary { rows }
}

pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn parse_num(s: &str, line: u64) -> Result<f64> {
    s.parse().map_err(|_| Error::Format {
        line,
        message: format!("expected a number, found '{s}'"),
    })
}

fn parse_opt(s: &str, line: u64) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_num(s, line).map(Some)
    }
}

fn parse_int<T: std::str::FromStr>(s: &str, line: u64) -> Result<T> {
    s.parse().map_err(|_| Error::Format {
        line,
        message: format!("expected an integer, found '{s}'"),
    })
}

fn parse_bool(s: &str, line: u64) -> Result<bool> {
    s.parse().map_err(|_| Error::Format {
        line,
        message: format!("expected true or false, found '{s}'"),
    })
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

pub fn trace_header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = ["repetition", "t", "k", "role"].iter().map(|s| s.to_string()).collect();
    h.extend((0..dim).map(|i| format!("x{i}")));
    h.extend(
        ["y", "r", "r_batch_min", "best_so_far", "beta_t", "sigma", "y_bullet"]
            .iter()
            .map(|s| s.to_string()),
    );
    h
}

pub fn write_trace(path: &Path, dim: usize, rows: &[TraceRow]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(trace_header(dim))?;
    for row in rows {
        if row.x.len() != dim {
            return Err(Error::arg("trace row has the wrong dimension"));
        }
        let mut rec = vec![
            row.repetition.to_string(),
            row.t.to_string(),
            row.k.to_string(),
            row.role.name().to_string(),
        ];
        rec.extend(row.x.iter().map(|v| fmt_num(*v)));
        rec.push(fmt_num(row.y));
        rec.push(fmt_num(row.r));
        rec.extend([row.r_batch_min, row.best_so_far, row.beta_t, row.sigma, row.y_bullet].map(fmt_opt));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = open(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let fixed = 4 + 7;
    if header.len() < fixed || header[..4] != trace_header(0)[..4] {
        return Err(Error::Format {
            line: 1,
            message: "not a trace file".into(),
        });
    }
    let dim = header.len() - fixed;
    if header != trace_header(dim) {
        return Err(Error::Format {
            line: 1,
            message: "unexpected trace columns".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |i: usize| rec.get(i).unwrap_or("");
        let x = (0..dim).map(|i| parse_num(f(4 + i), line)).collect::<Result<Vec<_>>>()?;
        let o = 4 + dim;
        rows.push(TraceRow {
            repetition: parse_int(f(0), line)?,
            t: parse_int(f(1), line)?,
            k: parse_int(f(2), line)?,
            role: f(3).parse().map_err(|_| Error::Format {
                line,
                message: format!("unknown role '{}'", f(3)),
            })?,
            x,
            y: parse_num(f(o), line)?,
            r: parse_num(f(o + 1), line)?,
            r_batch_min: parse_opt(f(o + 2), line)?,
            best_so_far: parse_opt(f(o + 3), line)?,
            beta_t: parse_opt(f(o + 4), line)?,
            sigma: parse_opt(f(o + 5), line)?,
            y_bullet: parse_opt(f(o + 6), line)?,
        });
    }
    Ok(rows)
}

/// Recovers per-repetition curves from trace rows.
pub fn curves_from_trace(rows: &[TraceRow]) -> Vec<RunCurve> {
    let mut by_rep: BTreeMap<usize, RunCurve> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.t >= 0 && r.k == 0) {
        let c = by_rep.entry(row.repetition).or_insert_with(|| RunCurve {
            repetition: row.repetition,
            batch_min: Vec::new(),
            best_so_far: Vec::new(),
        });
        if let (Some(m), Some(b)) = (row.r_batch_min, row.best_so_far) {
            c.batch_min.push(m);
            c.best_so_far.push(b);
        }
    }
    by_rep.into_values().collect()
}

const SUMMARY_HEADER: [&str; 6] = [
    "t",
    "mean_simple_regret",
    "ci_halfwidth",
    "n",
    "mean_best_so_far",
    "best_ci_halfwidth",
];

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in &summary.rows {
        w.write_record([
            r.t.to_string(),
            fmt_num(r.mean_simple_regret),
            fmt_num(r.ci_halfwidth),
            r.n.to_string(),
            fmt_num(r.mean_best_so_far),
            fmt_num(r.best_ci_halfwidth),
        ])?;
    }
    finish(w, path)
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let mut r = open(path)?;
    if r.headers()?.iter().ne(SUMMARY_HEADER) {
        return Err(Error::Format {
            line: 1,
            message: "not a summary file".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push(SummaryRow {
            t: parse_int(&rec[0], line)?,
            mean_simple_regret: parse_num(&rec[1], line)?,
            ci_halfwidth: parse_num(&rec[2], line)?,
            n: parse_int(&rec[3], line)?,
            mean_best_so_far: parse_num(&rec[4], line)?,
            best_ci_halfwidth: parse_num(&rec[5], line)?,
        });
    }
    Ok(RunSummary { rows })
}

const RUNS_HEADER: [&str; 24] = [
    "repetition",
    "status",
    "iterations",
    "batch_size",
    "batch_regret",
    "full_regret",
    "scale",
    "beta_final",
    "gamma_hat",
    "noise_var",
    "kernel",
    "bound_batch",
    "bound_full",
    "contained",
    "ucb_step_checked",
    "ucb_step_violations",
    "deviation_sum_condition",
    "deviation_sum_lhs",
    "deviation_sum_rhs",
    "deviation_sum_boundary",
    "variance_sum_lhs",
    "variance_sum_rhs",
    "invariant_violations",
    "fallbacks",
];

pub fn write_runs(path: &Path, runs: &[RunMetrics]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(RUNS_HEADER)?;
    for m in runs {
        w.write_record([
            m.repetition.to_string(),
            m.status.clone(),
            m.iterations.to_string(),
            m.batch_size.to_string(),
            fmt_num(m.batch_regret),
            fmt_num(m.full_regret),
            fmt_num(m.scale),
            fmt_num(m.beta_final),
            fmt_num(m.gamma_hat),
            fmt_num(m.noise_var),
            m.kernel.clone(),
            fmt_num(m.bound_batch),
            fmt_num(m.bound_full),
            m.contained.to_string(),
            m.ucb_step_checked.to_string(),
            m.ucb_step_violations.to_string(),
            m.deviation_sum_condition.to_string(),
            fmt_num(m.deviation_sum_lhs),
            fmt_num(m.deviation_sum_rhs),
            fmt_num(m.deviation_sum_boundary),
            fmt_num(m.variance_sum_lhs),
            fmt_num(m.variance_sum_rhs),
            m.invariant_violations.to_string(),
            m.fallbacks.to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn read_runs(path: &Path) -> Result<Vec<RunMetrics>> {
    let mut r = open(path)?;
    if r.headers()?.iter().ne(RUNS_HEADER) {
        return Err(Error::Format {
            line: 1,
            message: "not a runs file".into(),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let l = rec.position().map_or(0, |p| p.line());
        out.push(RunMetrics {
            repetition: parse_int(&rec[0], l)?,
            status: rec[1].to_string(),
            iterations: parse_int(&rec[2], l)?,
            batch_size: parse_int(&rec[3], l)?,
            batch_regret: parse_num(&rec[4], l)?,
            full_regret: parse_num(&rec[5], l)?,
            scale: parse_num(&rec[6], l)?,
            beta_final: parse_num(&rec[7], l)?,
            gamma_hat: parse_num(&rec[8], l)?,
            noise_var: parse_num(&rec[9], l)?,
            kernel: rec[10].to_string(),
            bound_batch: parse_num(&rec[11], l)?,
            bound_full: parse_num(&rec[12], l)?,
            contained: parse_bool(&rec[13], l)?,
            ucb_step_checked: parse_int(&rec[14], l)?,
            ucb_step_violations: parse_int(&rec[15], l)?,
            deviation_sum_condition: parse_bool(&rec[16], l)?,
            deviation_sum_lhs: parse_num(&rec[17], l)?,
            deviation_sum_rhs: parse_num(&rec[18], l)?,
            deviation_sum_boundary: parse_num(&rec[19], l)?,
            variance_sum_lhs: parse_num(&rec[20], l)?,
            variance_sum_rhs: parse_num(&rec[21], l)?,
            invariant_violations: parse_int(&rec[22], l)?,
            fallbacks: parse_int(&rec[23], l)?,
        });
    }
    Ok(out)
}

/// Verdict counts over a sweep's runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundReport {
    pub runs: usize,
    pub failed: usize,
    pub contained: usize,
    pub batch_bound_held: usize,
    pub full_bound_held: usize,
    /// Runs where the true function stayed contained but a bound failed.
    pub contained_bound_failures: usize,
    pub ucb_step_checked: usize,
    pub ucb_step_violations: usize,
    pub deviation_sum_conditioned: usize,
    pub deviation_sum_held: usize,
    pub deviation_sum_corrected_held: usize,
    /// Runs whose model never changed, where the variance-sum check applies.
    pub variance_sum_checked: usize,
    pub variance_sum_held: usize,
    pub invariant_violations: usize,
}

impl BoundReport {
    pub fn from_runs(runs: &[RunMetrics]) -> Self {
        let mut r = BoundReport {
            runs: runs.len(),
            ..Default::default()
        };
        for m in runs {
            if !m.is_ok() {
                r.failed += 1;
                continue;
            }
            let (b, f) = (m.batch_bound_holds(), m.full_bound_holds());
            r.contained += usize::from(m.contained);
            r.batch_bound_held += usize::from(b);
            r.full_bound_held += usize::from(f);
            r.contained_bound_failures += usize::from(m.contained && !(b && f));
            r.ucb_step_checked += m.ucb_step_checked;
            r.ucb_step_violations += m.ucb_step_violations;
            if m.deviation_sum_condition {
                r.deviation_sum_conditioned += 1;
                r.deviation_sum_held += usize::from(m.deviation_sum_holds());
                r.deviation_sum_corrected_held += usize::from(m.deviation_sum_corrected_holds());
            }
            if !m.variance_sum_lhs.is_nan() {
                r.variance_sum_checked += 1;
                r.variance_sum_held += usize::from(m.variance_sum_holds());
            }
            r.invariant_violations += m.invariant_violations;
        }
        r
    }

    pub fn completed(&self) -> usize {
        self.runs - self.failed
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.completed();
        writeln!(f, "runs: {} ({} failed)", self.runs, self.failed)?;
        writeln!(f, "true function contained in confidence bands: {}/{n}", self.contained)?;
        writeln!(f, "batch regret bound (greedy-gamma): {}/{n}", self.batch_bound_held)?;
        writeln!(f, "full regret bound (greedy-gamma): {}/{n}", self.full_bound_held)?;
        writeln!(f, "bound failures on contained runs: {}", self.contained_bound_failures)?;
        writeln!(
            f,
            "next UCB deviation below last batch deviation: {} violations in {} checked steps",
            self.ucb_step_violations, self.ucb_step_checked
        )?;
        writeln!(
            f,
            "deviation sum divided by K: {}/{} (with boundary term: {}/{})",
            self.deviation_sum_held, self.deviation_sum_conditioned, self.deviation_sum_corrected_held, self.deviation_sum_conditioned
        )?;
        writeln!(
            f,
            "squared deviations vs information gain: {}/{}",
            self.variance_sum_held, self.variance_sum_checked
        )?;
        write!(f, "selection invariant violations: {}", self.invariant_violations)
    }
}

/// Writes plain text to `path`.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
