//! Distance-shift analysis, ablation grids, and plot-series shaping.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, LossKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{MetricsLog, PeerTag};
use crate::model::Model;
use crate::probes::{extract_embeddings, EmbeddingTable};

pub const DEFAULT_SHIFT_SAMPLE: usize = 2048;

/// `1 − u·v / (|u||v|)`, norms floored at 1e-12, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let denom = libm::sqrt(nu).max(1e-12) * libm::sqrt(nv).max(1e-12);
    (1.0 - dot / denom).clamp(0.0, 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceShiftReport {
    /// `(d_before, d_after)` for row `i` against row `pairing[i]`.
    pub pairs: Vec<(f64, f64)>,
    /// Dataset indices of the sampled images.
    pub sample_indices: Vec<usize>,
    /// The single permutation applied to both embedding sets.
    pub pairing: Vec<usize>,
    pub mean_before: f64,
    pub mean_after: f64,
    /// Share of pairs whose distance strictly increased.
    pub fraction_increased: f64,
    pub pairing_seed: u64,
}

impl DistanceShiftReport {
    pub fn to_metrics_log(&self) -> Result<MetricsLog> {
        let mut log = MetricsLog::new();
        for (i, &(b, a)) in self.pairs.iter().enumerate() {
            log.push(i as u64, PeerTag::Ensemble, "d_before", b)?;
            log.push(i as u64, PeerTag::Ensemble, "d_after", a)?;
        }
        Ok(log)
    }
}

/// Sample `size` indices out of `population` and a pairing permutation, both
/// from `pairing_seed`.
pub fn shift_sampling(population: usize, size: usize, pairing_seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(pairing_seed);
    let mut all: Vec<usize> = (0..population).collect();
    all.shuffle(&mut rng);
    all.truncate(size.min(population));
    let mut pairing: Vec<usize> = (0..all.len()).collect();
    pairing.shuffle(&mut rng);
    (all, pairing)
}

/// Compares pairwise cosine distances of two embeddings of the same images
/// under one shared pairing.
pub fn shift_from_tables(
    before: &EmbeddingTable,
    after: &EmbeddingTable,
    pairing: &[usize],
) -> Result<(Vec<(f64, f64)>, f64, f64, f64)> {
    if before.rows != after.rows || pairing.len() != before.rows {
        return Err(Error::Shape("distance-shift tables and pairing disagree".into()));
    }
    if before.rows == 0 {
        return Err(Error::EmptyDataset);
    }
    let pairs: Vec<(f64, f64)> = pairing
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            (
                cosine_distance(before.row(i), before.row(j)),
                cosine_distance(after.row(i), after.row(j)),
            )
        })
        .collect();
    let n = pairs.len() as f64;
    let mean_before = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_after = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let increased = pairs.iter().filter(|p| p.1 > p.0).count() as f64 / n;
    Ok((pairs, mean_before, mean_after, increased))
}

/// Before/after cosine distances of shuffled image pairs, embedded by a
/// peer's initialization and by its trained weights.
pub fn distance_shift(
    model_init: &Model<f32>,
    model_trained: &Model<f32>,
    dataset: &Dataset,
    sample_size: usize,
    pairing_seed: u64,
) -> Result<DistanceShiftReport> {
    if model_init.arch() != model_trained.arch() {
        return Err(Error::Shape("models do not share an architecture".into()));
    }
    if dataset.is_empty() || sample_size == 0 {
        return Err(Error::EmptyDataset);
    }
    let (sample_indices, pairing) = shift_sampling(dataset.len(), sample_size, pairing_seed);
    let picked = subset_dataset(dataset, &sample_indices)?;
    let before = extract_embeddings(&[(0, model_init)], &picked, None)?;
    let after = extract_embeddings(&[(0, model_trained)], &picked, None)?;
    let (pairs, mean_before, mean_after, fraction_increased) = shift_from_tables(&before, &after, &pairing)?;
    Ok(DistanceShiftReport {
        pairs,
        sample_indices,
        pairing,
        mean_before,
        mean_after,
        fraction_increased,
        pairing_seed,
    })
}

fn subset_dataset(dataset: &Dataset, indices: &[usize]) -> Result<Dataset> {
    let mut images = Vec::with_capacity(indices.len() * crate::data::IMAGE_BYTES);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        images.extend_from_slice(dataset.image(i));
        labels.push(dataset.labels()[i]);
    }
    Dataset::new(dataset.split(), images, labels)
}

/// Axes of an ablation grid around a base configuration. Empty axes keep the
/// base value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub peers: Vec<usize>,
    pub teachers: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub losses: Vec<LossKind>,
    pub replicate_seeds: Vec<u64>,
    pub max_runs: usize,
}

impl SweepSpec {
    pub const DEFAULT_MAX_RUNS: usize = 64;

    pub fn new(base: ExperimentConfig) -> Self {
        Self {
            base,
            peers: Vec::new(),
            teachers: Vec::new(),
            learning_rates: Vec::new(),
            losses: Vec::new(),
            replicate_seeds: Vec::new(),
            max_runs: Self::DEFAULT_MAX_RUNS,
        }
    }

    /// Cartesian product of the axes, each point named after its coordinates.
    pub fn grid(&self) -> Result<Vec<(String, ExperimentConfig)>> {
        fn axis<T: Clone>(v: &[T], base: T) -> Vec<T> {
            if v.is_empty() {
                alloc::vec![base]
            } else {
                v.to_vec()
            }
        }
        let b = &self.base;
        let peers = axis(&self.peers, b.num_peers);
        let teachers = axis(&self.teachers, b.num_teachers);
        let lrs = axis(&self.learning_rates, b.learning_rate);
        let losses = axis(&self.losses, b.loss_kind);
        let seeds = axis(&self.replicate_seeds, b.master_seed);
        let total = peers.len() * teachers.len() * lrs.len() * losses.len() * seeds.len();
        if total > self.max_runs {
            return Err(Error::InvalidConfig(format!(
                "sweep has {total} runs, cap is {}",
                self.max_runs
            )));
        }
        let mut out = Vec::with_capacity(total);
        for &n in &peers {
            for &t in &teachers {
                for &lr in &lrs {
                    for &loss in &losses {
                        for &seed in &seeds {
                            let mut cfg = b.clone();
                            cfg.num_peers = n;
                            cfg.num_teachers = t;
                            cfg.learning_rate = lr;
                            cfg.loss_kind = loss;
                            cfg.master_seed = seed;
                            cfg.validate()?;
                            out.push((format!("peers{n}_teachers{t}_lr{lr:e}_{loss}_seed{seed}"), cfg));
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Linear-probe accuracy per peer over steps.
    GroupDynamics,
    /// KNN accuracy per peer over steps.
    KnnDynamics,
    /// Training loss per step.
    Loss,
    /// Ensemble accuracy by number of concatenated peers.
    Ensemble,
    /// `(d_before, d_after)` scatter pairs.
    DistanceShift,
}

impl PlotKind {
    pub const ALL: &'static [PlotKind] = &[
        PlotKind::GroupDynamics,
        PlotKind::KnnDynamics,
        PlotKind::Loss,
        PlotKind::Ensemble,
        PlotKind::DistanceShift,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::GroupDynamics => "group-dynamics",
            PlotKind::KnnDynamics => "knn-dynamics",
            PlotKind::Loss => "loss",
            PlotKind::Ensemble => "ensemble",
            PlotKind::DistanceShift => "distance-shift",
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownPlotKind(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub series: String,
    pub step: u64,
    pub value: f64,
}

/// Long-format `(series, step, value)` points for one figure.
pub fn emit_plot_data(log: &MetricsLog, kind: PlotKind) -> Vec<PlotPoint> {
    let per_peer = |metric: &str| -> Vec<PlotPoint> {
        log.rows()
            .iter()
            .filter(|r| r.metric == metric)
            .filter_map(|r| match r.peer {
                PeerTag::Peer(i) => Some(PlotPoint { series: format!("peer_{i}"), step: r.global_step, value: r.value }),
                PeerTag::Ensemble => None,
            })
            .collect()
    };
    match kind {
        PlotKind::GroupDynamics => per_peer("linear_accuracy"),
        PlotKind::KnnDynamics => per_peer("knn_accuracy"),
        PlotKind::Loss => log
            .rows()
            .iter()
            .filter(|r| r.metric == "loss")
            .map(|r| PlotPoint { series: "loss".into(), step: r.global_step, value: r.value })
            .collect(),
        PlotKind::Ensemble => log
            .rows()
            .iter()
            .filter(|r| r.peer == PeerTag::Ensemble && r.metric.starts_with("ensemble"))
            .map(|r| PlotPoint { series: r.metric.clone(), step: r.global_step, value: r.value })
            .collect(),
        PlotKind::DistanceShift => log
            .rows()
            .iter()
            .filter(|r| r.metric == "d_before" || r.metric == "d_after")
            .map(|r| PlotPoint { series: r.metric.clone(), step: r.global_step, value: r.value })
            .collect(),
    }
}
