//! Side-by-side comparison of two runs or two groups of runs.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::train::metrics::{read_metrics, METRICS_FILE};
use crate::train::report::{run_config, RunStats, STABILITY_FROM_EPOCH};
use crate::train::TrainConfig;

/// Median of the finite values, `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub label: String,
    pub runs: usize,
    pub final_fid: Option<f64>,
    pub best_fid: Option<f64>,
    pub mean_abs_delta: Option<f64>,
    pub triggers: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub a: GroupSummary,
    pub b: GroupSummary,
    pub warnings: Vec<String>,
    pub table: String,
}

fn load_group(label: &str, dirs: &[PathBuf]) -> Result<(GroupSummary, Vec<TrainConfig>)> {
    if dirs.is_empty() {
        return Err(Error::Empty(format!("run group {label} is empty")));
    }
    let mut stats = Vec::new();
    let mut configs = Vec::new();
    for d in dirs {
        let cfg = run_config(d)?;
        let rows = read_metrics(&d.join(METRICS_FILE))?;
        if rows.is_empty() {
            return Err(Error::Empty(format!("{} has no epochs", d.display())));
        }
        stats.push(RunStats::from_rows(&rows, cfg.scheduler.epsilon));
        configs.push(cfg);
    }
    let pick = |f: &dyn Fn(&RunStats) -> Option<f64>| median(&stats.iter().filter_map(f).collect::<Vec<_>>());
    let summary = GroupSummary {
        label: label.to_string(),
        runs: dirs.len(),
        final_fid: pick(&|s| s.final_fid),
        best_fid: pick(&|s| s.best_fid.map(|b| b.1)),
        mean_abs_delta: pick(&|s| s.mean_abs_delta),
        triggers: pick(&|s| Some(s.trigger_epochs.len() as f64)),
    };
    Ok((summary, configs))
}

fn eval_settings(c: &TrainConfig) -> (u64, usize, usize) {
    (c.seeds.fid, c.eval_samples, c.generator.input_size)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"))
}

/// Compare group `a` against group `b`; every metric is lower-is-better.
pub fn compare(a: &[PathBuf], b: &[PathBuf]) -> Result<Comparison> {
    let (sa, ca) = load_group("A", a)?;
    let (sb, cb) = load_group("B", b)?;
    let mut warnings = Vec::new();
    let all: Vec<&TrainConfig> = ca.iter().chain(&cb).collect();
    if all.iter().any(|c| eval_settings(c) != eval_settings(all[0])) {
        let list: Vec<String> = all
            .iter()
            .map(|c| format!("fid seed {} / {} samples", c.seeds.fid, c.eval_samples))
            .collect();
        warnings.push(format!(
            "warning: FID evaluation settings differ ({}); FID values are not comparable",
            list.join(", ")
        ));
    }
    if all.iter().any(|c| c.scheduler.epsilon != all[0].scheduler.epsilon) {
        warnings.push("warning: runs use different epsilon; trigger counts are not comparable".into());
    }

    let mut table = String::new();
    let _ = writeln!(table, "runs: A = {} run(s), B = {} run(s) (medians per group)", sa.runs, sb.runs);
    let _ = writeln!(
        table,
        "{:<28} {:>14} {:>14} {:>14}  winner",
        "metric", "A", "B", "B - A"
    );
    let rows = [
        ("final fid", sa.final_fid, sb.final_fid),
        ("best fid", sa.best_fid, sb.best_fid),
        ("mean |drps| (epoch >= 5)", sa.mean_abs_delta, sb.mean_abs_delta),
        ("trigger epochs", sa.triggers, sb.triggers),
    ];
    debug_assert_eq!(STABILITY_FROM_EPOCH, 5);
    for (name, x, y) in rows {
        let (diff, winner) = match (x, y) {
            (Some(x), Some(y)) => {
                let w = if x < y {
                    "A"
                } else if y < x {
                    "B"
                } else {
                    "tie"
                };
                (Some(y - x), w)
            }
            _ => (None, "n/a"),
        };
        let _ = writeln!(table, "{name:<28} {:>14} {:>14} {:>14}  {winner}", cell(x), cell(y), cell(diff));
    }
    Ok(Comparison {
        a: sa,
        b: sb,
        warnings,
        table,
    })
}
