//! Sample-efficiency and anytime-performance metrics.
//!
//! A run is solved at a threshold once five consecutive evaluations (each a
//! mean over the evaluation episodes) reach it; the solve step is the step of
//! the first evaluation in that window.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Result, SpanError};

/// Percentages of the expert target used for sample efficiency.
pub const THRESHOLD_PCTS: [u32; 5] = [25, 50, 75, 95, 100];
/// Percentages of the training budget used for anytime performance.
pub const CHECKPOINT_PCTS: [u32; 6] = [10, 25, 50, 75, 95, 100];
/// Consecutive evaluations required for sustained solving.
pub const SUSTAIN_WINDOW: usize = 5;

pub const CURVE_SCHEMA_VERSION: u32 = 1;
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const CURVE_HEADER: &str = "step,mean_return,std_return,ep_returns_json";

/// Evaluation episodes at one global step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl EvalRecord {
    pub fn new(step: u64, returns: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&returns);
        Self {
            step,
            returns,
            mean,
            std,
        }
    }
}

/// Mean and population standard deviation (`(NaN, NaN)` for no samples).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// How thresholds are placed below a negative expert target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NegativeRule {
    /// `target / fraction`, never below the floor: 50% of −100 is −200.
    #[default]
    Ratio,
    /// `floor + fraction·(target − floor)`.
    Linear,
}

/// Absolute return for each threshold percentage.
pub fn threshold_targets(
    target: f64,
    floor: f64,
    rule: NegativeRule,
) -> BTreeMap<u32, f64> {
    THRESHOLD_PCTS
        .iter()
        .map(|&pct| {
            let f = f64::from(pct) / 100.0;
            let value = if target > 0.0 {
                f * target
            } else {
                match rule {
                    NegativeRule::Ratio => (target / f).max(floor),
                    NegativeRule::Linear => floor + f * (target - floor),
                }
            };
            (pct, value)
        })
        .collect()
}

pub fn env_thresholds(spec: &EnvSpec, rule: NegativeRule) -> BTreeMap<u32, f64> {
    threshold_targets(spec.target_return, spec.floor_return, rule)
}

/// Step of the first record of the earliest window of [`SUSTAIN_WINDOW`]
/// consecutive records whose mean reaches `target`.
pub fn sustained_solve_step(curve: &[EvalRecord], target: f64) -> Option<u64> {
    let mut run = 0;
    for (i, rec) in curve.iter().enumerate() {
        if rec.mean >= target {
            run += 1;
            if run == SUSTAIN_WINDOW {
                return Some(curve[i + 1 - SUSTAIN_WINDOW].step);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// The record with the largest step not exceeding `step`.
pub fn record_at(curve: &[EvalRecord], step: u64) -> Option<&EvalRecord> {
    curve.iter().filter(|r| r.step <= step).max_by_key(|r| r.step)
}

fn checkpoint_step(budget: u64, pct: u32) -> u64 {
    (budget * u64::from(pct) + 50) / 100
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub env: String,
    pub algorithm: String,
    pub net: String,
    pub seed: u64,
    pub fingerprint: String,
    pub total_steps: u64,
    pub param_count: usize,
    pub curve: Vec<EvalRecord>,
    /// Threshold percentage → solve step.
    pub solve_steps: BTreeMap<u32, Option<u64>>,
    /// Threshold percentage → absolute return.
    pub thresholds: BTreeMap<u32, f64>,
    /// Budget percentage → (mean, std) of the evaluation at that point.
    pub checkpoints: BTreeMap<u32, (f64, f64)>,
    pub normalized_score: Option<f64>,
    pub wall_clock_secs: f64,
}

/// Identity and bookkeeping fields of a summary.
#[derive(Debug, Clone)]
pub struct RunInfo {
    pub env: String,
    pub algorithm: String,
    pub net: String,
    pub seed: u64,
    pub fingerprint: String,
    pub total_steps: u64,
    pub param_count: usize,
}

impl RunSummary {
    pub fn from_curve(
        info: RunInfo,
        curve: Vec<EvalRecord>,
        thresholds: BTreeMap<u32, f64>,
        wall_clock_secs: f64,
    ) -> Self {
        let solve_steps = thresholds
            .iter()
            .map(|(&pct, &value)| (pct, sustained_solve_step(&curve, value)))
            .collect();
        let checkpoints = CHECKPOINT_PCTS
            .iter()
            .filter_map(|&pct| {
                record_at(&curve, checkpoint_step(info.total_steps, pct))
                    .map(|r| (pct, (r.mean, r.std)))
            })
            .collect();
        Self {
            schema_version: SUMMARY_SCHEMA_VERSION,
            env: info.env,
            algorithm: info.algorithm,
            net: info.net,
            seed: info.seed,
            fingerprint: info.fingerprint,
            total_steps: info.total_steps,
            param_count: info.param_count,
            curve,
            solve_steps,
            thresholds,
            checkpoints,
            normalized_score: None,
            wall_clock_secs,
        }
    }

    pub fn solve_step(&self, pct: u32) -> Option<u64> {
        self.solve_steps.get(&pct).copied().flatten()
    }

    pub fn final_mean(&self) -> Option<f64> {
        self.curve.last().map(|r| r.mean)
    }
}

/// Median of `xs` (mean of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median solve step over solving seeds and the fraction of seeds solving.
pub fn aggregate(runs: &[RunSummary], pct: u32) -> Result<(Option<f64>, f64)> {
    if runs.is_empty() {
        return Err(SpanError::Usage("no runs to aggregate".into()));
    }
    let steps: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.solve_step(pct))
        .map(|s| s as f64)
        .collect();
    let rate = steps.len() as f64 / runs.len() as f64;
    Ok((median(&steps), rate))
}

/// Budget percentage → (mean over seeds of the per-seed evaluation mean,
/// population std across seeds).
pub fn anytime_table(runs: &[RunSummary], budget: u64) -> BTreeMap<u32, (f64, f64)> {
    CHECKPOINT_PCTS
        .iter()
        .filter_map(|&pct| {
            let at = checkpoint_step(budget, pct);
            let means: Vec<f64> = runs
                .iter()
                .filter_map(|r| record_at(&r.curve, at).map(|rec| rec.mean))
                .collect();
            (!means.is_empty()).then(|| (pct, mean_std(&means)))
        })
        .collect()
}

/// Write a learning curve as CSV. The first line is a comment carrying the
/// schema version and config fingerprint.
pub fn write_curve_csv<W: Write>(w: &mut W, curve: &[EvalRecord], fingerprint: &str) -> Result<()> {
    writeln!(w, "# span-rl curve v{CURVE_SCHEMA_VERSION} fingerprint={fingerprint}")?;
    writeln!(w, "{CURVE_HEADER}")?;
    for rec in curve {
        let returns = serde_json::to_string(&rec.returns)
            .map_err(|e| SpanError::Internal(e.to_string()))?;
        writeln!(w, "{},{},{},\"{}\"", rec.step, rec.mean, rec.std, returns)?;
    }
    Ok(())
}

/// Parse a curve written by [`write_curve_csv`]; returns the fingerprint too.
pub fn read_curve_csv<R: BufRead>(r: R) -> Result<(String, Vec<EvalRecord>)> {
    let mut fingerprint = String::new();
    let mut curve = Vec::new();
    let mut saw_header = false;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let bad = |what: &str| SpanError::Format(format!("curve line {}: {what}", lineno + 1));
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(fp) = comment.split("fingerprint=").nth(1) {
                fingerprint = fp.trim().to_string();
            }
            continue;
        }
        if !saw_header {
            if line.trim() != CURVE_HEADER {
                return Err(bad("unexpected header"));
            }
            saw_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(4, ',');
        let step = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("step"))?;
        let mean: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("mean"))?;
        let std: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("std"))?;
        let json = parts
            .next()
            .map(|s| s.trim().trim_matches('"'))
            .ok_or_else(|| bad("returns"))?;
        let returns: Vec<f64> = serde_json::from_str(json).map_err(|_| bad("returns json"))?;
        curve.push(EvalRecord {
            step,
            returns,
            mean,
            std,
        });
    }
    Ok((fingerprint, curve))
}

/// `"73k"`-style step formatting.
pub fn format_steps(steps: f64) -> String {
    format!("{}k", (steps / 1000.0).round() as i64)
}

/// One row of a sample-efficiency table: `"<median> (<rate>%)"` per threshold.
pub fn efficiency_row(runs: &[RunSummary]) -> Result<Vec<String>> {
    THRESHOLD_PCTS
        .iter()
        .map(|&pct| {
            let (med, rate) = aggregate(runs, pct)?;
            let pct_str = format!("{:.0}%", rate * 100.0);
            Ok(match med {
                Some(m) => format!("{} ({pct_str})", format_steps(m)),
                None => format!("--- ({pct_str})"),
            })
        })
        .collect()
}

/// One row of an anytime table: `"<mean> ± <std>"` per budget checkpoint.
pub fn anytime_row(runs: &[RunSummary], budget: u64) -> Vec<String> {
    let table = anytime_table(runs, budget);
    CHECKPOINT_PCTS
        .iter()
        .map(|pct| match table.get(pct) {
            Some((m, s)) => format!("{m:.0} ± {s:.0}"),
            None => "---".into(),
        })
        .collect()
}

/// Markdown rendering of both tables for one environment.
pub fn render_env_section(env: &str, groups: &[(String, Vec<RunSummary>)]) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "## {env}\n");
    let _ = writeln!(out, "### Sample efficiency (median steps to threshold, success rate)\n");
    let header: Vec<String> = THRESHOLD_PCTS.iter().map(|p| format!("{p}%")).collect();
    let _ = writeln!(out, "| Method | {} |", header.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(header.len()));
    for (method, runs) in groups {
        let _ = writeln!(out, "| {method} | {} |", efficiency_row(runs)?.join(" | "));
    }
    let _ = writeln!(out, "\n### Anytime performance (mean ± std across seeds)\n");
    let header: Vec<String> = CHECKPOINT_PCTS.iter().map(|p| format!("{p}%")).collect();
    let _ = writeln!(out, "| Method | {} |", header.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(header.len()));
    for (method, runs) in groups {
        let budget = runs.iter().map(|r| r.total_steps).max().unwrap_or(0);
        let _ = writeln!(out, "| {method} | {} |", anytime_row(runs, budget).join(" | "));
    }
    if groups.iter().any(|(_, runs)| runs.iter().any(|r| r.normalized_score.is_some())) {
        let _ = writeln!(out, "\n### Normalized score (mean ± std across seeds)\n");
        let _ = writeln!(out, "| Method | Score | Seeds |\n|---|---|---|");
        for (method, runs) in groups {
            let scores: Vec<f64> = runs.iter().filter_map(|r| r.normalized_score).collect();
            if scores.is_empty() {
                continue;
            }
            let (m, s) = mean_std(&scores);
            let _ = writeln!(out, "| {method} | {m:.2} ± {s:.2} | {} |", scores.len());
        }
    }
    out.push('\n');
    Ok(out)
}
