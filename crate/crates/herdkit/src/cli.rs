//! `herdkit <subcommand>`; every subcommand takes `--config` plus repeated
//! `--override key=value`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use herdkit_core::analysis::{emit_plot_data, PlotKind, SweepSpec, DEFAULT_SHIFT_SAMPLE};
use herdkit_core::config::{ExperimentConfig, LossKind, ProbeKind};
use herdkit_core::metrics::PeerTag;
use herdkit_core::probes::ProbeRecord;

use crate::checkpoint::load_checkpoint;
use crate::cifar::sha256_file;
use crate::config_io::load_config_file;
use crate::error::{io_err, HerdError, Result};
use crate::logs::{read_metrics_like, to_file, write_metrics, write_plot_points, write_probe_log, PROBE_LOG_HEADER};
use crate::plots::render_svg;
use crate::run::{default_pairing_seed, distance_shift_run, ensemble_eval, ensemble_metrics, probe_model, train, RunData, PROBE_LOG_FILE};
use crate::sweep::{run_sweep, thread_cap};

#[derive(Debug, Parser)]
#[command(name = "herdkit", about = "Peer-group self-distillation experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat TOML experiment document.
    #[arg(long)]
    config: PathBuf,
    /// `key=value`, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        load_config_file(&self.config, &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a peer pool into the configured output directory.
    Train(ConfigArgs),
    /// Fit one probe on a checkpoint's embeddings.
    Probe {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "linear")]
        kind: ProbeKind,
        /// Peer id for the output row; taken from a `peer_{i}` file name when absent.
        #[arg(long)]
        peer: Option<usize>,
        /// CSV to append the result row to.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Probe concatenated embeddings of the first k final checkpoints.
    EnsembleEval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Ensemble sizes, e.g. `1,2,4,8`.
        #[arg(long, value_delimiter = ',', required = true)]
        peers: Vec<usize>,
        #[arg(long, default_value = "linear")]
        kind: ProbeKind,
        /// Run directory; defaults to the config's output_dir.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Cosine distances of shuffled test-image pairs before and after training.
    DistanceShift {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        peer: usize,
        #[arg(long, default_value_t = DEFAULT_SHIFT_SAMPLE)]
        sample_size: usize,
        #[arg(long)]
        pairing_seed: Option<u64>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// One run per grid point under the config's output_dir.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "peers", value_delimiter = ',')]
        peers: Vec<usize>,
        #[arg(long = "teachers", value_delimiter = ',')]
        teachers: Vec<usize>,
        #[arg(long = "lrs", value_delimiter = ',')]
        learning_rates: Vec<f64>,
        #[arg(long = "losses", value_delimiter = ',')]
        losses: Vec<LossKind>,
        #[arg(long = "seeds", value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = SweepSpec::DEFAULT_MAX_RUNS)]
        max_runs: usize,
    },
    /// Long-format plot data from a metrics, train-log or distance-shift CSV.
    EmitPlots {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// SHA-256 of a local file.
    Sha256 {
        path: PathBuf,
        /// Expected lower-case hex digest; mismatch is an error.
        #[arg(long)]
        expect: Option<String>,
    },
}

impl HerdError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HerdError::Usage(_) => 2,
            HerdError::ConfigParse(_) | HerdError::Core(herdkit_core::Error::InvalidConfig(_)) => 3,
            HerdError::Io { .. } => 4,
            _ => 1,
        }
    }
}

/// `herdkit: error[<kind>]: <message>` on a single line.
pub fn error_line(e: &HerdError) -> String {
    let msg = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
    format!("herdkit: error[{}]: {msg}", e.kind())
}

fn peer_from_name(path: &Path) -> Option<usize> {
    let name = path.file_name()?.to_str()?;
    let rest = name.strip_prefix("peer_")?;
    rest.split('.').next()?.parse().ok()
}

fn run_dir_or(cfg: &ExperimentConfig, dir: Option<PathBuf>) -> PathBuf {
    dir.unwrap_or_else(|| PathBuf::from(&cfg.output_dir))
}

/// Parses `args` (including the program name) and runs the subcommand,
/// returning what it prints on success.
pub fn run<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            return Ok(e.to_string());
        }
        Err(e) => return Err(HerdError::Usage(e.to_string())),
    };
    let mut out = String::new();
    match cli.command {
        Command::Train(args) => {
            let cfg = args.load()?;
            let o = train(&cfg)?;
            let _ = writeln!(out, "run_dir={} batches={}", o.run_dir.display(), o.reports.len());
        }
        Command::Probe { cfg, checkpoint, kind, peer, out: csv_out } => {
            let cfg = cfg.load()?;
            let model = load_checkpoint(&checkpoint)?;
            let peer = peer.or_else(|| peer_from_name(&checkpoint)).unwrap_or(0);
            let data = RunData::load(&cfg)?;
            let result = probe_model(&cfg, &model, peer, kind, 0, &data)?;
            let record = ProbeRecord { step: 0, peer: PeerTag::Peer(peer), result };
            let _ = writeln!(
                out,
                "probe_kind={} peer_id={peer} macro_f1={} accuracy={} fit_size={} test_size={}",
                result.kind, result.macro_f1, result.accuracy, result.train_size, result.test_size
            );
            let path = csv_out.unwrap_or_else(|| PathBuf::from(PROBE_LOG_FILE));
            append_probe_row(&path, &record)?;
        }
        Command::EnsembleEval { cfg, peers, kind, run_dir } => {
            let cfg = cfg.load()?;
            let dir = run_dir_or(&cfg, run_dir);
            let data = RunData::load(&cfg)?;
            let records = ensemble_eval(&cfg, &dir, &peers, kind, &data)?;
            let log = ensemble_metrics(&records)?;
            to_file(&dir.join("ensemble_metrics.csv"), |w| write_metrics(w, &log))?;
            for r in &records {
                let _ = writeln!(out, "peers={} probe_kind={} macro_f1={} accuracy={}", r.step, r.result.kind, r.result.macro_f1, r.result.accuracy);
            }
        }
        Command::DistanceShift { cfg, peer, sample_size, pairing_seed, run_dir } => {
            let cfg = cfg.load()?;
            let dir = run_dir_or(&cfg, run_dir);
            let data = RunData::load(&cfg)?;
            let seed = pairing_seed.unwrap_or_else(|| default_pairing_seed(cfg.master_seed));
            let r = distance_shift_run(&dir, peer, sample_size, seed, &data)?;
            let _ = writeln!(
                out,
                "pairs={} mean_before={} mean_after={} fraction_increased={} pairing_seed={}",
                r.pairs.len(),
                r.mean_before,
                r.mean_after,
                r.fraction_increased,
                r.pairing_seed
            );
        }
        Command::Sweep { cfg, peers, teachers, learning_rates, losses, seeds, max_runs } => {
            let base = cfg.load()?;
            let root = PathBuf::from(&base.output_dir);
            let spec = SweepSpec { base, peers, teachers, learning_rates, losses, replicate_seeds: seeds, max_runs };
            let rows = run_sweep(&spec, &root, thread_cap())?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            let _ = writeln!(out, "runs={} failed={failed} summary={}", rows.len(), root.join(crate::sweep::SWEEP_SUMMARY_FILE).display());
        }
        Command::EmitPlots { input, kind, out: csv_out, svg } => {
            let text = std::fs::read_to_string(&input).map_err(io_err(&input))?;
            let points = emit_plot_data(&read_metrics_like(&text)?, kind);
            to_file(&csv_out, |w| write_plot_points(w, &points))?;
            if let Some(svg) = svg {
                std::fs::write(&svg, render_svg(&points, kind)).map_err(io_err(&svg))?;
            }
            let _ = writeln!(out, "points={} out={}", points.len(), csv_out.display());
        }
        Command::Sha256 { path, expect } => {
            let digest = sha256_file(&path)?;
            if let Some(e) = expect {
                if !e.eq_ignore_ascii_case(&digest) {
                    return Err(HerdError::Usage(format!("sha256 mismatch for {}: got {digest}", path.display())));
                }
            }
            let _ = writeln!(out, "{digest}  {}", path.display());
        }
    }
    Ok(out)
}

fn append_probe_row(path: &Path, record: &ProbeRecord) -> Result<()> {
    let fresh = write_probe_log(Vec::new(), std::slice::from_ref(record))?;
    let existing = match std::fs::read_to_string(path) {
        Ok(s) => Some(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(HerdError::Io { path: path.into(), source: e }),
    };
    let text = match existing {
        Some(mut s) if s.starts_with(&PROBE_LOG_HEADER.join(",")) => {
            let row = String::from_utf8(fresh).expect("utf-8 csv");
            s.push_str(row.split_once('\n').map_or("", |x| x.1));
            s
        }
        Some(_) => return Err(HerdError::Csv(format!("{} is not a probe log", path.display()))),
        None => String::from_utf8(fresh).expect("utf-8 csv"),
    };
    std::fs::write(path, text).map_err(io_err(path))
}
