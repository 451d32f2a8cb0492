//! Per-epoch metric rows and their CSV form.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::Target;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const METRICS_HEADER: &str = "# pairgan-metrics v1";
pub const COLUMNS: [&str; 16] = [
    "epoch",
    "loss_d",
    "loss_g",
    "loss_g_adv",
    "loss_g_l1",
    "rps_g",
    "rps_d",
    "delta",
    "target",
    "extra_batches",
    "applied_extra",
    "d_steps",
    "g_steps",
    "acc_d",
    "fid",
    "status",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    /// Training stopped during this epoch; the losses show what went wrong.
    Abort,
}

/// One completed (or aborted) epoch.
///
/// `target` and `extra_batches` are the decision taken after this epoch,
/// executed at the start of the next one; `applied_extra` counts the extra
/// steps this epoch ran on behalf of the previous decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_g_adv: f64,
    pub loss_g_l1: f64,
    pub rps_g: f64,
    pub rps_d: f64,
    pub delta: f64,
    #[serde(with = "target_str")]
    pub target: Target,
    pub extra_batches: u32,
    pub applied_extra: u32,
    pub d_steps: usize,
    pub g_steps: usize,
    pub acc_d: f64,
    pub fid: Option<f64>,
    pub status: RowStatus,
}

mod target_str {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use crate::scheduler::Target;

    pub fn serialize<S: Serializer>(t: &Target, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(t.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Target, D::Error> {
        let s = String::deserialize(d)?;
        Target::parse(&s).ok_or_else(|| D::Error::custom(format!("unknown target {s:?}")))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn render_metrics(rows: &[EpochRow]) -> Result<Vec<u8>> {
    let mut out = format!("{METRICS_HEADER}\n").into_bytes();
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
        w.write_record(COLUMNS)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(out)
}

/// Replace `metrics.csv` in `dir` with `rows`, via a temporary file and rename.
pub fn write_metrics(dir: &Path, rows: &[EpochRow]) -> Result<()> {
    write_atomic(&dir.join(METRICS_FILE), &render_metrics(rows)?)
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text).map_err(|e| match e {
        Error::Csv(c) => Error::Data(format!("{}: {c}", path.display())),
        other => other,
    })
}

pub fn parse_metrics(text: &str) -> Result<Vec<EpochRow>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != COLUMNS {
        return Err(Error::Data(format!("unexpected metrics columns {header:?}")));
    }
    let rows: Vec<EpochRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.windows(2).any(|w| w[1].epoch <= w[0].epoch) {
        return Err(Error::Data("metrics epochs are not increasing".into()));
    }
    Ok(rows)
}

/// Wall-clock durations live apart from the metrics so those stay reproducible.
pub fn write_timings(dir: &Path, wall_ms: &[(usize, u128)]) -> Result<()> {
    let mut out = String::from("epoch,wall_ms\n");
    for (e, ms) in wall_ms {
        out.push_str(&format!("{e},{ms}\n"));
    }
    write_atomic(&dir.join(TIMINGS_FILE), out.as_bytes())
}

#[cfg(test)]
pub(crate) fn sample_row(epoch: usize) -> EpochRow {
    EpochRow {
        epoch,
        loss_d: 1.25,
        loss_g: 30.5 / epoch as f64,
        loss_g_adv: 0.75,
        loss_g_l1: 0.1,
        rps_g: 0.8,
        rps_d: 0.7,
        delta: 0.1,
        target: Target::Generator,
        extra_batches: 1,
        applied_extra: 0,
        d_steps: 4,
        g_steps: 4,
        acc_d: 0.5,
        fid: epoch.is_multiple_of(2).then_some(12.0 / epoch as f64),
        status: RowStatus::Ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_rows() {
        let rows: Vec<EpochRow> = (1..=4).map(sample_row).collect();
        let dir = tempfile::tempdir().unwrap();
        write_metrics(dir.path(), &rows).unwrap();
        let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        assert_eq!(lines.next(), Some(COLUMNS.join(",").as_str()));
        assert!(text.contains(",,ok\n"), "missing empty fid cell:\n{text}");
        assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap(), rows);
        assert!(!dir.path().join("metrics.csv.tmp").exists());
    }

    #[test]
    fn non_finite_values_survive() {
        let mut row = sample_row(1);
        row.loss_g = f64::NAN;
        row.status = RowStatus::Abort;
        let parsed = parse_metrics(std::str::from_utf8(&render_metrics(&[row]).unwrap()).unwrap()).unwrap();
        assert!(parsed[0].loss_g.is_nan());
        assert_eq!(parsed[0].status, RowStatus::Abort);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(parse_metrics("a,b\n1,2\n").is_err());
        let rows = [sample_row(2), sample_row(1)];
        let text = String::from_utf8(render_metrics(&rows).unwrap()).unwrap();
        assert!(parse_metrics(&text).is_err());
    }
}
