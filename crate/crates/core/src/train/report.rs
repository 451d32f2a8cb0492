//! Plots and summaries of a finished run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scheduler::Target;
use crate::train::metrics::{read_metrics, EpochRow, RowStatus, METRICS_FILE};
use crate::train::{TrainConfig, CONFIG_FILE};

pub const PLOTS_DIR: &str = "plots";
pub const SUMMARY_FILE: &str = "summary.txt";
/// First epoch included in the gap statistic; earlier scores rest on very short histories.
pub const STABILITY_FROM_EPOCH: usize = 5;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

pub struct Series<'a> {
    pub label: &'a str,
    pub colour: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Rounded tick step giving roughly five intervals over `span`.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return None;
    }
    Some(if hi - lo < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Frame with axes, ticks and labels; returns the SVG prefix and the data→pixel maps.
struct Frame {
    svg: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let frame = Self { svg, x, y };
        frame.axes(x_label, y_label)
    }

    fn px(&self, v: f64) -> f64 {
        let (lo, hi) = self.x;
        LEFT + (v - lo) / (hi - lo) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        let (lo, hi) = self.y;
        HEIGHT - BOTTOM - (v - lo) / (hi - lo) * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(mut self, x_label: &str, y_label: &str) -> Self {
        let (x0, y0) = (LEFT, HEIGHT - BOTTOM);
        let _ = writeln!(
            self.svg,
            r#"<path d="M{x0} {TOP} V{y0} H{}" fill="none" stroke="black"/>"#,
            WIDTH - RIGHT
        );
        for (lo, hi, is_x) in [(self.x.0, self.x.1, true), (self.y.0, self.y.1, false)] {
            let step = tick_step(hi - lo);
            let mut t = (lo / step).ceil() * step;
            while t <= hi + step * 1e-9 {
                let label = format!("{}", (t / step).round() * step);
                let label = if label.len() > 8 { format!("{t:.3e}") } else { label };
                if is_x {
                    let p = self.px(t);
                    let _ = writeln!(
                        self.svg,
                        r#"<line x1="{p:.2}" y1="{y0}" x2="{p:.2}" y2="{}" stroke="black"/><text x="{p:.2}" y="{}" text-anchor="middle">{label}</text>"#,
                        y0 + 5.0,
                        y0 + 18.0
                    );
                } else {
                    let p = self.py(t);
                    let _ = writeln!(
                        self.svg,
                        r##"<line x1="{}" y1="{p:.2}" x2="{}" y2="{p:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{label}</text>"##,
                        x0,
                        WIDTH - RIGHT,
                        x0 - 6.0,
                        p + 4.0
                    );
                }
                t += step;
            }
        }
        let _ = writeln!(
            self.svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            HEIGHT - 12.0,
            escape(x_label)
        );
        let _ = writeln!(
            self.svg,
            r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
            (TOP + HEIGHT - BOTTOM) / 2.0,
            escape(y_label)
        );
        self
    }

    fn polyline(&mut self, s: &Series, legend_slot: usize) {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(
            self.svg,
            r#"<polyline data-series="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            escape(s.label),
            s.colour,
            pts.join(" ")
        );
        let ly = TOP + 4.0 + 16.0 * legend_slot as f64;
        let lx = WIDTH - RIGHT - 150.0;
        let _ = writeln!(
            self.svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            s.colour,
            lx + 24.0,
            ly + 4.0,
            escape(s.label)
        );
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

/// Line chart of one or more series sharing both axes.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    let all = || series.iter().flat_map(|s| s.points.iter().copied());
    let x = bounds(all().map(|p| p.0)).ok_or_else(|| Error::Empty(format!("{title}: nothing to plot")))?;
    let y = bounds(all().map(|p| p.1)).ok_or_else(|| Error::Empty(format!("{title}: nothing to plot")))?;
    let mut frame = Frame::new(title, x_label, y_label, x, y);
    for (i, s) in series.iter().enumerate() {
        frame.polyline(s, i);
    }
    Ok(frame.finish())
}

/// Scores of both networks with the extra batches each epoch scheduled as bars.
pub fn allocation_chart(rows: &[EpochRow]) -> Result<String> {
    let x = bounds(rows.iter().map(|r| r.epoch as f64)).ok_or_else(|| Error::Empty("no rows".into()))?;
    let x = (x.0 - 0.5, x.1 + 0.5);
    let mut frame = Frame::new("Batch allocation", "epoch", "RPS / extra batches (scaled)", x, (0.0, 1.05));
    let k_max = rows.iter().map(|r| r.extra_batches).max().unwrap_or(0).max(1) as f64;
    let bar_w = (frame.px(1.0) - frame.px(0.0)) * 0.6;
    for r in rows.iter().filter(|r| r.extra_batches > 0) {
        let colour = if r.target == Target::Generator { "#f4a261" } else { "#2a9d8f" };
        let top = frame.py(r.extra_batches as f64 / k_max);
        let _ = writeln!(
            frame.svg,
            r#"<rect data-epoch="{}" data-target="{}" x="{:.2}" y="{top:.2}" width="{bar_w:.2}" height="{:.2}" fill="{colour}" opacity="0.6"/>"#,
            r.epoch,
            r.target.as_str(),
            frame.px(r.epoch as f64) - bar_w / 2.0,
            frame.py(0.0) - top
        );
    }
    let series = [
        Series {
            label: "rps_g",
            colour: "#e76f51",
            points: rows.iter().map(|r| (r.epoch as f64, r.rps_g)).collect(),
        },
        Series {
            label: "rps_d",
            colour: "#264653",
            points: rows.iter().map(|r| (r.epoch as f64, r.rps_d)).collect(),
        },
    ];
    for (i, s) in series.iter().enumerate() {
        frame.polyline(s, i);
    }
    Ok(frame.finish())
}

/// Scalar digest of a run used by the report and by comparisons.
#[derive(Clone, Debug, PartialEq)]
pub struct RunStats {
    pub epochs: usize,
    pub final_fid: Option<f64>,
    pub best_fid: Option<(usize, f64)>,
    /// Mean `|rps_g − rps_d|` from [`STABILITY_FROM_EPOCH`] on.
    pub mean_abs_delta: Option<f64>,
    /// Epochs whose gap exceeded ε.
    pub trigger_epochs: Vec<usize>,
    pub aborted: bool,
}

impl RunStats {
    pub fn from_rows(rows: &[EpochRow], epsilon: f64) -> Self {
        let ok: Vec<&EpochRow> = rows.iter().filter(|r| r.status == RowStatus::Ok).collect();
        let fids: Vec<(usize, f64)> = ok.iter().filter_map(|r| r.fid.map(|f| (r.epoch, f))).collect();
        let gaps: Vec<f64> = ok
            .iter()
            .filter(|r| r.epoch >= STABILITY_FROM_EPOCH && r.delta.is_finite())
            .map(|r| r.delta.abs())
            .collect();
        Self {
            epochs: ok.len(),
            final_fid: fids.last().map(|f| f.1),
            best_fid: fids.iter().copied().reduce(|a, b| if b.1 < a.1 { b } else { a }),
            mean_abs_delta: (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64),
            trigger_epochs: ok.iter().filter(|r| r.delta.abs() > epsilon).map(|r| r.epoch).collect(),
            aborted: rows.iter().any(|r| r.status == RowStatus::Abort),
        }
    }
}

/// Config of a run directory, falling back to defaults when none was saved.
pub fn run_config(run_dir: &Path) -> Result<TrainConfig> {
    let path = run_dir.join(CONFIG_FILE);
    if path.exists() {
        TrainConfig::load(&path)
    } else {
        Ok(TrainConfig::default())
    }
}

#[derive(Clone, Debug)]
pub struct ReportOutput {
    pub plots: Vec<PathBuf>,
    pub summary: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
}

pub fn summary_text(rows: &[EpochRow], cfg: &TrainConfig, fid_plotted: bool) -> String {
    let stats = RunStats::from_rows(rows, cfg.scheduler.epsilon);
    let mut s = String::new();
    let _ = writeln!(s, "mode: {:?}", cfg.mode);
    let _ = writeln!(s, "epochs: {}", stats.epochs);
    if let Some(last) = rows.iter().rev().find(|r| r.status == RowStatus::Ok) {
        let _ = writeln!(s, "final loss_d: {:.6}", last.loss_d);
        let _ = writeln!(s, "final loss_g: {:.6}", last.loss_g);
    }
    let _ = writeln!(s, "final fid: {}", fmt_opt(stats.final_fid));
    match stats.best_fid {
        Some((e, f)) => {
            let _ = writeln!(s, "best fid: {f:.6} (epoch {e})");
        }
        None => {
            let _ = writeln!(s, "best fid: n/a");
        }
    }
    if !fid_plotted {
        let _ = writeln!(s, "fid chart omitted: no FID rows");
    }
    let _ = writeln!(
        s,
        "mean |rps_g - rps_d| (epoch >= {STABILITY_FROM_EPOCH}): {}",
        fmt_opt(stats.mean_abs_delta)
    );
    let list: Vec<String> = stats.trigger_epochs.iter().map(usize::to_string).collect();
    let _ = writeln!(
        s,
        "epochs with |delta| > {}: {} [{}]",
        cfg.scheduler.epsilon,
        list.len(),
        list.join(", ")
    );
    let extra: u32 = rows.iter().map(|r| r.applied_extra).sum();
    let _ = writeln!(s, "extra batches executed: {extra}");
    if stats.aborted {
        let _ = writeln!(s, "run aborted: non-finite loss");
    }
    s
}

/// Render `plots/*.svg` and `summary.txt` for `run_dir`.
pub fn report(run_dir: &Path) -> Result<ReportOutput> {
    let rows = read_metrics(&run_dir.join(METRICS_FILE))?;
    if rows.is_empty() {
        return Err(Error::Empty(format!("{} has no rows", run_dir.join(METRICS_FILE).display())));
    }
    let cfg = run_config(run_dir)?;
    let dir = run_dir.join(PLOTS_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let series = |label: &'static str, colour: &'static str, f: fn(&EpochRow) -> Option<f64>| Series {
        label,
        colour,
        points: rows.iter().filter_map(|r| f(r).map(|v| (r.epoch as f64, v))).collect(),
    };
    let mut charts = vec![
        (
            "loss_d.svg",
            line_chart(
                "Discriminator loss",
                "epoch",
                "mean loss",
                &[series("loss_d", "#264653", |r| Some(r.loss_d))],
            )?,
        ),
        (
            "loss_g.svg",
            line_chart(
                "Generator loss",
                "epoch",
                "mean loss",
                &[series("loss_g", "#e76f51", |r| Some(r.loss_g))],
            )?,
        ),
        ("allocation.svg", allocation_chart(&rows)?),
    ];
    let fid_series = series("fid", "#2a9d8f", |r| r.fid);
    let fid_plotted = !fid_series.points.is_empty();
    if fid_plotted {
        charts.push(("fid.svg", line_chart("Proxy FID", "epoch", "FID", &[fid_series])?));
    } else {
        let stale = dir.join("fid.svg");
        if stale.exists() {
            fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
        }
    }
    let mut plots = Vec::new();
    for (name, svg) in charts {
        let path = dir.join(name);
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        plots.push(path);
    }
    let summary = summary_text(&rows, &cfg, fid_plotted);
    let path = run_dir.join(SUMMARY_FILE);
    fs::write(&path, &summary).map_err(|e| Error::io(&path, e))?;
    Ok(ReportOutput { plots, summary })
}
