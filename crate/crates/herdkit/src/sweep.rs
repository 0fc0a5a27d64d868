//! Ablation sweeps: one seeded run per grid point, then a merged summary.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use herdkit_core::analysis::SweepSpec;
use herdkit_core::config::{ExperimentConfig, ProbeKind};

use crate::error::{io_err, Result};
use crate::run::{train_with_data, RunData, RunOutcome};

pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";
pub const SWEEP_SUMMARY_HEADER: [&str; 12] = [
    "run",
    "num_peers",
    "num_teachers",
    "learning_rate",
    "loss_kind",
    "master_seed",
    "status",
    "batches",
    "final_loss",
    "final_linear_accuracy",
    "final_linear_macro_f1",
    "error",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub name: String,
    pub cfg: ExperimentConfig,
    pub batches: usize,
    pub final_loss: Option<f64>,
    /// Mean over peers of the last linear-probe evaluation.
    pub final_linear: Option<(f64, f64)>,
    pub error: Option<String>,
}

/// Worker count from `HERDKIT_THREADS`, default 1.
pub fn thread_cap() -> usize {
    std::env::var("HERDKIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn summarize(name: String, cfg: ExperimentConfig, outcome: Result<RunOutcome>) -> SweepRow {
    match outcome {
        Ok(o) => {
            let last_step = o.probes.iter().filter(|r| r.result.kind == ProbeKind::Linear).map(|r| r.step).max();
            let final_linear = last_step.map(|s| {
                let last: Vec<_> = o
                    .probes
                    .iter()
                    .filter(|r| r.step == s && r.result.kind == ProbeKind::Linear)
                    .collect();
                let n = last.len() as f64;
                (
                    last.iter().map(|r| r.result.accuracy).sum::<f64>() / n,
                    last.iter().map(|r| r.result.macro_f1).sum::<f64>() / n,
                )
            });
            SweepRow {
                name,
                cfg,
                batches: o.reports.len(),
                final_loss: o.reports.last().map(|r| r.loss_value),
                final_linear,
                error: None,
            }
        }
        Err(e) => SweepRow { name, cfg, batches: 0, final_loss: None, final_linear: None, error: Some(e.to_string()) },
    }
}

/// Runs every grid point under `root/<name>`, `threads` at a time. Failed runs
/// are recorded in the summary and do not stop the sweep. Rows come back in
/// grid order whatever the thread count.
pub fn run_sweep(spec: &SweepSpec, root: &Path, threads: usize) -> Result<Vec<SweepRow>> {
    let grid = spec.grid()?;
    std::fs::create_dir_all(root).map_err(io_err(root))?;
    let data = RunData::load(&spec.base)?;
    let slots: Vec<Mutex<Option<SweepRow>>> = grid.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..threads.max(1).min(grid.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((name, cfg)) = grid.get(i) else { break };
                let mut cfg = cfg.clone();
                cfg.output_dir = root.join(name).to_string_lossy().into_owned();
                let outcome = train_with_data(&cfg, &data);
                *slots[i].lock().unwrap() = Some(summarize(name.clone(), cfg, outcome));
            });
        }
    });
    let rows: Vec<SweepRow> = slots.into_iter().map(|m| m.into_inner().unwrap().expect("every slot filled")).collect();
    let path = root.join(SWEEP_SUMMARY_FILE);
    let bytes = write_summary(Vec::new(), &rows)?;
    std::fs::write(&path, bytes).map_err(io_err(&path))?;
    Ok(rows)
}

pub fn write_summary<W: std::io::Write>(w: W, rows: &[SweepRow]) -> Result<W> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    w.write_record(SWEEP_SUMMARY_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.cfg.num_peers.to_string(),
            r.cfg.num_teachers.to_string(),
            r.cfg.learning_rate.to_string(),
            r.cfg.loss_kind.to_string(),
            r.cfg.master_seed.to_string(),
            if r.error.is_some() { "failed" } else { "ok" }.to_string(),
            r.batches.to_string(),
            opt(r.final_loss),
            opt(r.final_linear.map(|p| p.0)),
            opt(r.final_linear.map(|p| p.1)),
            r.error.clone().unwrap_or_default().replace('\n', " "),
        ])?;
    }
    w.into_inner().map_err(|e| crate::error::HerdError::Csv(e.to_string()))
}
