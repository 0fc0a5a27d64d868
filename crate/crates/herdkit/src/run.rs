//! Training runs, probing and analysis over run directories.
//!
//! A run directory holds `config.snapshot.toml`, `peer_{i}.init.ckpt`,
//! `peer_{i}.final.ckpt`, `train_log.csv`, `probe_log.csv` and `metrics.csv`.
//! A failed run keeps its logs and init checkpoints, gets no final
//! checkpoints, and gains a `FAILED` file holding the error.

use std::fs;
use std::path::{Path, PathBuf};

use herdkit_core::analysis::{distance_shift, DistanceShiftReport};
use herdkit_core::config::{ExperimentConfig, ProbeKind};
use herdkit_core::data::{Dataset, Split};
use herdkit_core::herd::{run_training, BatchReport, PeerPool, TrainObserver};
use herdkit_core::metrics::{MetricsLog, PeerTag};
use herdkit_core::model::Model;
use herdkit_core::probes::{evaluation_hook, extract_embeddings, probe_seed, run_probe, EmbeddingTable, ProbeRecord, ProbeResult};
use herdkit_core::seed::derive_seed;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::cifar::load_cifar10;
use crate::config_io::to_toml;
use crate::error::{io_err, HerdError, Result};
use crate::logs::{to_file, write_distance_shift, write_metrics, write_probe_log, write_train_log};

pub const SNAPSHOT_FILE: &str = "config.snapshot.toml";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const PROBE_LOG_FILE: &str = "probe_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DISTANCE_SHIFT_FILE: &str = "distance_shift.csv";
pub const FAILED_FILE: &str = "FAILED";

pub fn init_checkpoint_path(dir: &Path, peer: usize) -> PathBuf {
    dir.join(format!("peer_{peer}.init.ckpt"))
}

pub fn final_checkpoint_path(dir: &Path, peer: usize) -> PathBuf {
    dir.join(format!("peer_{peer}.final.ckpt"))
}

/// Training images (after `train_subset_size`) and the test split.
#[derive(Debug, Clone)]
pub struct RunData {
    pub train: Dataset,
    pub test: Dataset,
}

impl RunData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let train = load_cifar10(&cfg.dataset_dir, Split::Train)?.truncated(cfg.train_subset_size);
        let test = load_cifar10(&cfg.dataset_dir, Split::Test)?;
        Ok(Self { train, test })
    }
}

pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub pool: PeerPool<f32>,
    pub log: MetricsLog,
    pub reports: Vec<BatchReport>,
    pub probes: Vec<ProbeRecord>,
}

struct Recorder<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a RunData,
    reports: Vec<BatchReport>,
    probes: Vec<ProbeRecord>,
}

impl TrainObserver<f32> for Recorder<'_> {
    fn on_batch(&mut self, _pool: &PeerPool<f32>, report: &BatchReport) -> herdkit_core::Result<()> {
        self.reports.push(report.clone());
        Ok(())
    }

    fn on_eval(&mut self, pool: &PeerPool<f32>, completed: u64, log: &mut MetricsLog) -> herdkit_core::Result<()> {
        let records = evaluation_hook(pool.peers(), completed, self.cfg, &self.data.train, &self.data.test)?;
        for r in &records {
            r.record(log)?;
        }
        self.probes.extend(records);
        Ok(())
    }
}

pub fn train(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = RunData::load(cfg)?;
    train_with_data(cfg, &data)
}

/// Runs training into `cfg.output_dir`, sequentially.
pub fn train_with_data(cfg: &ExperimentConfig, data: &RunData) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let failed = dir.join(FAILED_FILE);
    if failed.exists() {
        fs::remove_file(&failed).map_err(io_err(&failed))?;
    }
    fs::write(dir.join(SNAPSHOT_FILE), to_toml(cfg)).map_err(io_err(dir.join(SNAPSHOT_FILE)))?;

    let mut pool = PeerPool::<f32>::new(cfg)?;
    for (i, m) in pool.peers().iter().enumerate() {
        save_checkpoint(m, init_checkpoint_path(&dir, i))?;
    }
    let mut rec = Recorder { cfg, data, reports: Vec::new(), probes: Vec::new() };
    let result = run_training(&mut pool, &data.train, cfg, &mut rec);

    to_file(&dir.join(TRAIN_LOG_FILE), |w| write_train_log(w, &rec.reports))?;
    to_file(&dir.join(PROBE_LOG_FILE), |w| write_probe_log(w, &rec.probes))?;
    let log = match result {
        Ok(log) => log,
        Err(e) => {
            fs::write(&failed, format!("{e}\n")).map_err(io_err(&failed))?;
            return Err(e.into());
        }
    };
    to_file(&dir.join(METRICS_FILE), |w| write_metrics(w, &log))?;
    for (i, m) in pool.peers().iter().enumerate() {
        save_checkpoint(m, final_checkpoint_path(&dir, i))?;
    }
    Ok(RunOutcome { run_dir: dir, pool, log, reports: rec.reports, probes: rec.probes })
}

/// Fits `kind` on the training images (capped by `fit_subset`) and scores it
/// on the test split (capped by `test_subset`).
pub fn probe_model(cfg: &ExperimentConfig, model: &Model<f32>, peer: usize, kind: ProbeKind, step: u64, data: &RunData) -> Result<ProbeResult> {
    let pc = &cfg.probe_config;
    let fit = extract_embeddings(&[(peer, model)], &data.train, pc.fit_subset)?;
    let test = extract_embeddings(&[(peer, model)], &data.test, pc.test_subset)?;
    let seed = probe_seed(cfg.master_seed, kind, step, &peer.to_string());
    Ok(run_probe(kind, &fit, &test, pc, seed)?)
}

/// Probes concatenated embeddings of peers `0..k` for each `k` in `counts`.
/// Records carry the ensemble size as their step.
pub fn ensemble_eval(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    counts: &[usize],
    kind: ProbeKind,
    data: &RunData,
) -> Result<Vec<ProbeRecord>> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if counts.contains(&0) || max > cfg.num_peers {
        return Err(HerdError::Usage(format!("ensemble sizes must lie in 1..={}", cfg.num_peers)));
    }
    let pc = &cfg.probe_config;
    let mut fit_tables = Vec::with_capacity(max);
    let mut test_tables = Vec::with_capacity(max);
    for i in 0..max {
        let m = load_checkpoint(final_checkpoint_path(run_dir, i))?;
        fit_tables.push(extract_embeddings(&[(i, &m)], &data.train, pc.fit_subset)?);
        test_tables.push(extract_embeddings(&[(i, &m)], &data.test, pc.test_subset)?);
    }
    let mut out = Vec::with_capacity(counts.len());
    for &k in counts {
        let fit = EmbeddingTable::concat(&fit_tables[..k].iter().collect::<Vec<_>>())?;
        let test = EmbeddingTable::concat(&test_tables[..k].iter().collect::<Vec<_>>())?;
        let seed = probe_seed(cfg.master_seed, kind, k as u64, "ensemble");
        let result = run_probe(kind, &fit, &test, pc, seed)?;
        out.push(ProbeRecord { step: k as u64, peer: PeerTag::Ensemble, result });
    }
    Ok(out)
}

/// Ensemble records as metrics rows named `ensemble_{kind}_accuracy` and
/// `ensemble_{kind}_macro_f1`.
pub fn ensemble_metrics(records: &[ProbeRecord]) -> Result<MetricsLog> {
    let mut log = MetricsLog::new();
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| r.step);
    for r in &sorted {
        let kind = r.result.kind.as_str();
        log.push(r.step, PeerTag::Ensemble, &format!("ensemble_{kind}_accuracy"), r.result.accuracy)?;
        log.push(r.step, PeerTag::Ensemble, &format!("ensemble_{kind}_macro_f1"), r.result.macro_f1)?;
    }
    Ok(log)
}

pub fn default_pairing_seed(master_seed: u64) -> u64 {
    derive_seed(master_seed, "distance-shift-pairing")
}

/// Compares a peer's stored initialization with its final weights on test
/// images and writes `distance_shift.csv` into the run directory.
pub fn distance_shift_run(
    run_dir: &Path,
    peer: usize,
    sample_size: usize,
    pairing_seed: u64,
    data: &RunData,
) -> Result<DistanceShiftReport> {
    let init = load_checkpoint(init_checkpoint_path(run_dir, peer))?;
    let trained = load_checkpoint(final_checkpoint_path(run_dir, peer))?;
    let report = distance_shift(&init, &trained, &data.test, sample_size, pairing_seed)?;
    to_file(&run_dir.join(DISTANCE_SHIFT_FILE), |w| write_distance_shift(w, &report))?;
    Ok(report)
}
