//! CSV artifacts. Headers are fixed; floats use the shortest round-trip form.

use std::fs;
use std::io::Write;
use std::path::Path;

use herdkit_core::analysis::{DistanceShiftReport, PlotPoint};
use herdkit_core::herd::BatchReport;
use herdkit_core::metrics::{MetricsLog, PeerTag};
use herdkit_core::probes::ProbeRecord;

use crate::error::{io_err, HerdError, Result};

pub const TRAIN_LOG_HEADER: [&str; 5] = ["step", "student_id", "teacher_ids", "loss", "grad_norm"];
pub const PROBE_LOG_HEADER: [&str; 7] = ["step", "peer_id", "probe_kind", "macro_f1", "accuracy", "fit_size", "test_size"];
pub const METRICS_HEADER: [&str; 4] = ["step", "peer_id", "metric", "value"];
pub const DISTANCE_SHIFT_HEADER: [&str; 5] = ["pair", "index_a", "index_b", "d_before", "d_after"];
pub const PLOT_HEADER: [&str; 3] = ["series", "step", "value"];

fn writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    w.write_record(header)?;
    Ok(w)
}

fn finish<W: Write>(w: csv::Writer<W>) -> Result<W> {
    w.into_inner().map_err(|e| HerdError::Csv(e.to_string()))
}

/// Teacher ids joined with `;`.
pub fn write_train_log<W: Write>(w: W, reports: &[BatchReport]) -> Result<W> {
    let mut w = writer(w, &TRAIN_LOG_HEADER)?;
    for r in reports {
        let teachers: Vec<String> = r.teacher_ids.iter().map(usize::to_string).collect();
        w.write_record([
            r.global_step.to_string(),
            r.student_id.to_string(),
            teachers.join(";"),
            r.loss_value.to_string(),
            r.grad_norm.to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_probe_log<W: Write>(w: W, records: &[ProbeRecord]) -> Result<W> {
    let mut w = writer(w, &PROBE_LOG_HEADER)?;
    for r in records {
        w.write_record([
            r.step.to_string(),
            r.peer.to_string(),
            r.result.kind.to_string(),
            r.result.macro_f1.to_string(),
            r.result.accuracy.to_string(),
            r.result.train_size.to_string(),
            r.result.test_size.to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_metrics<W: Write>(w: W, log: &MetricsLog) -> Result<W> {
    let mut w = writer(w, &METRICS_HEADER)?;
    for r in log.rows() {
        w.write_record([r.global_step.to_string(), r.peer.to_string(), r.metric.clone(), r.value.to_string()])?;
    }
    finish(w)
}

pub fn write_distance_shift<W: Write>(w: W, report: &DistanceShiftReport) -> Result<W> {
    let mut w = writer(w, &DISTANCE_SHIFT_HEADER)?;
    for (i, &(b, a)) in report.pairs.iter().enumerate() {
        w.write_record([
            i.to_string(),
            report.sample_indices[i].to_string(),
            report.sample_indices[report.pairing[i]].to_string(),
            b.to_string(),
            a.to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_plot_points<W: Write>(w: W, points: &[PlotPoint]) -> Result<W> {
    let mut w = writer(w, &PLOT_HEADER)?;
    for p in points {
        w.write_record([p.series.clone(), p.step.to_string(), p.value.to_string()])?;
    }
    finish(w)
}

pub fn to_file(path: &Path, write: impl FnOnce(Vec<u8>) -> Result<Vec<u8>>) -> Result<()> {
    let bytes = write(Vec::new())?;
    fs::write(path, bytes).map_err(io_err(path))
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize) -> Result<&'a str> {
    rec.get(i).ok_or_else(|| HerdError::Csv(format!("missing column {i}")))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| HerdError::Csv(format!("bad number `{s}`")))
}

/// Reads a metrics CSV, a train log, or a distance-shift CSV into a
/// [`MetricsLog`], dispatching on the header.
pub fn read_metrics_like(text: &str) -> Result<MetricsLog> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut log = MetricsLog::new();
    let is = |h: &[&str]| header.iter().map(String::as_str).eq(h.iter().copied());
    for rec in rdr.records() {
        let rec = rec?;
        if is(&METRICS_HEADER) {
            let peer: PeerTag = field(&rec, 1)?.parse()?;
            log.push(num(field(&rec, 0)?)?, peer, field(&rec, 2)?, num(field(&rec, 3)?)?)?;
        } else if is(&TRAIN_LOG_HEADER) {
            let step = num(field(&rec, 0)?)?;
            let peer = PeerTag::Peer(num(field(&rec, 1)?)?);
            log.push(step, peer, "loss", num(field(&rec, 3)?)?)?;
            log.push(step, peer, "grad_norm", num(field(&rec, 4)?)?)?;
        } else if is(&DISTANCE_SHIFT_HEADER) {
            let i = num(field(&rec, 0)?)?;
            log.push(i, PeerTag::Ensemble, "d_before", num(field(&rec, 3)?)?)?;
            log.push(i, PeerTag::Ensemble, "d_after", num(field(&rec, 4)?)?)?;
        } else {
            return Err(HerdError::Csv(format!("unrecognised header `{}`", header.join(","))));
        }
    }
    if !(is(&METRICS_HEADER) || is(&TRAIN_LOG_HEADER) || is(&DISTANCE_SHIFT_HEADER)) {
        return Err(HerdError::Csv(format!("unrecognised header `{}`", header.join(","))));
    }
    Ok(log)
}
