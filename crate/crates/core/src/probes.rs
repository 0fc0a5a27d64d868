//! Frozen-backbone evaluation: embedding tables, KNN, linear and MLP probes,
//! and the classification scores they report.
//!
//! Probes never touch a model mutably; extraction is an eval-mode forward on
//! unaugmented images.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, ProbeConfig, ProbeKind};
use crate::data::{Dataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::metrics::{MetricsLog, PeerTag};
use crate::model::{Model, LEAKY_SLOPE};
use crate::nn::leaky_relu;
use crate::seed::{derive_seed, probe_label};

/// Training images per periodic probe when `fit_subset` is unset.
pub const DEFAULT_HOOK_FIT_SUBSET: usize = 10_000;
const EXTRACT_CHUNK: usize = 64;
const KNN_CHUNK: usize = 128;

/// Frozen features of a set of images, `rows × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub features: Vec<f32>,
    pub rows: usize,
    pub dim: usize,
    pub labels: Vec<u8>,
    pub source_peer_ids: Vec<usize>,
}

impl EmbeddingTable {
    pub fn new(features: Vec<f32>, dim: usize, labels: Vec<u8>, source_peer_ids: Vec<usize>) -> Result<Self> {
        let rows = labels.len();
        if features.len() != rows * dim {
            return Err(Error::Shape(format!("{} features for {rows}×{dim}", features.len())));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding table".into()));
        }
        Ok(Self { features, rows, dim, labels, source_peer_ids })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Feature-wise concatenation; all tables must describe the same images.
    pub fn concat(tables: &[&EmbeddingTable]) -> Result<Self> {
        let first = tables.first().ok_or_else(|| Error::Probe("nothing to concatenate".into()))?;
        if tables.iter().any(|t| t.labels != first.labels) {
            return Err(Error::Shape("concatenated tables cover different images".into()));
        }
        let dim: usize = tables.iter().map(|t| t.dim).sum();
        let mut features = Vec::with_capacity(first.rows * dim);
        for i in 0..first.rows {
            for t in tables {
                features.extend_from_slice(t.row(i));
            }
        }
        let ids = tables.iter().flat_map(|t| t.source_peer_ids.iter().copied()).collect();
        Ok(Self { features, rows: first.rows, dim, labels: first.labels.clone(), source_peer_ids: ids })
    }

    /// Mean over dimensions of the per-dimension standard deviation.
    pub fn mean_feature_std(&self) -> f64 {
        if self.rows == 0 || self.dim == 0 {
            return 0.0;
        }
        let n = self.rows as f64;
        let mut mean = vec![0.0f64; self.dim];
        let mut sq = vec![0.0f64; self.dim];
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                let v = v as f64;
                mean[j] += v;
                sq[j] += v * v;
            }
        }
        mean.iter()
            .zip(&sq)
            .map(|(&s, &q)| {
                let m = s / n;
                libm::sqrt((q / n - m * m).max(0.0))
            })
            .sum::<f64>()
            / self.dim as f64
    }
}

/// Eval-mode embeddings of the first `subset` images (all when `None`);
/// several models give their features side by side, in the given order.
pub fn extract_embeddings(models: &[(usize, &Model<f32>)], dataset: &Dataset, subset: Option<usize>) -> Result<EmbeddingTable> {
    let first = models.first().ok_or_else(|| Error::Probe("no models to extract from".into()))?;
    if models.iter().any(|(_, m)| m.arch() != first.1.arch()) {
        return Err(Error::Shape("models do not share an architecture".into()));
    }
    let rows = subset.map_or(dataset.len(), |k| k.min(dataset.len()));
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }
    let per_model: Vec<usize> = models.iter().map(|(_, m)| m.embedding_dim()).collect();
    let dim: usize = per_model.iter().sum();
    let mut features = vec![0.0f32; rows * dim];
    let mut start = 0;
    while start < rows {
        let end = (start + EXTRACT_CHUNK).min(rows);
        let batch = dataset.gather_range::<f32>(start, end);
        let mut offset = 0;
        for ((_, m), &d) in models.iter().zip(&per_model) {
            let emb = m.embed_eval(&batch)?;
            for (r, i) in (start..end).enumerate() {
                features[i * dim + offset..i * dim + offset + d].copy_from_slice(emb.row(r));
            }
            offset += d;
        }
        start = end;
    }
    EmbeddingTable::new(
        features,
        dim,
        dataset.labels()[..rows].to_vec(),
        models.iter().map(|(id, _)| *id).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub kind: ProbeKind,
    /// Percent.
    pub macro_f1: f64,
    /// Percent.
    pub accuracy: f64,
    pub train_size: usize,
    pub test_size: usize,
}

/// Unweighted mean of per-class F1, in percent. A class with no predictions
/// and no labels scores 0.
pub fn macro_f1(predictions: &[u8], labels: &[u8], num_classes: usize) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::Probe("no classes".into()));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        let (p, l) = (p as usize, l as usize);
        if p >= num_classes || l >= num_classes {
            return Err(Error::Probe(format!("class index out of range ({p}, {l})")));
        }
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[l] += 1;
        }
    }
    let sum: f64 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(100.0 * sum / num_classes as f64)
}

pub fn accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape("prediction/label length mismatch".into()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

fn score(kind: ProbeKind, predictions: &[u8], train: &EmbeddingTable, test: &EmbeddingTable) -> Result<ProbeResult> {
    Ok(ProbeResult {
        kind,
        macro_f1: macro_f1(predictions, &test.labels, NUM_CLASSES)?,
        accuracy: accuracy(predictions, &test.labels)?,
        train_size: train.rows,
        test_size: test.rows,
    })
}

fn check_pair(train: &EmbeddingTable, test: &EmbeddingTable) -> Result<()> {
    if train.rows == 0 {
        return Err(Error::Probe("empty fit set".into()));
    }
    if train.dim != test.dim {
        return Err(Error::Shape(format!("fit dim {} vs test dim {}", train.dim, test.dim)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KnnMetric {
    #[default]
    Euclidean,
    Cosine,
}

fn row_norms_sq(t: &EmbeddingTable) -> Vec<f64> {
    (0..t.rows).map(|i| t.row(i).iter().map(|&v| (v as f64) * (v as f64)).sum()).collect()
}

/// Predictions of a `k`-nearest-neighbour vote.
///
/// Neighbours are ordered by distance, then by fit index. The vote goes to
/// the most frequent class; ties go to the class whose tied neighbours have
/// the smallest summed distance, then to the smaller class index.
pub fn knn_predict(train: &EmbeddingTable, test: &EmbeddingTable, k: usize, metric: KnnMetric) -> Result<Vec<u8>> {
    check_pair(train, test)?;
    if k == 0 {
        return Err(Error::Probe("k must be >= 1".into()));
    }
    let k = k.min(train.rows);
    let train_sq = row_norms_sq(train);
    let test_sq = row_norms_sq(test);
    let mut cross = vec![0.0f32; KNN_CHUNK * train.rows];
    let mut preds = Vec::with_capacity(test.rows);
    let mut start = 0;
    while start < test.rows {
        let end = (start + KNN_CHUNK).min(test.rows);
        let m = end - start;
        cross_products(
            m,
            train.dim,
            train.rows,
            &test.features[start * test.dim..end * test.dim],
            &train.features,
            &mut cross[..m * train.rows],
        );
        for r in 0..m {
            let qi = start + r;
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for j in 0..train.rows {
                let dot = cross[r * train.rows + j] as f64;
                let d = match metric {
                    KnnMetric::Euclidean => libm::sqrt((test_sq[qi] + train_sq[j] - 2.0 * dot).max(0.0)),
                    KnnMetric::Cosine => {
                        let denom = libm::sqrt(test_sq[qi]).max(1e-12) * libm::sqrt(train_sq[j]).max(1e-12);
                        1.0 - dot / denom
                    }
                };
                if best.len() < k || d < best[best.len() - 1].0 {
                    let pos = best.partition_point(|&(bd, _)| bd <= d);
                    best.insert(pos, (d, j));
                    best.truncate(k);
                }
            }
            preds.push(vote(&best, &train.labels));
        }
        start = end;
    }
    Ok(preds)
}

fn vote(neighbours: &[(f64, usize)], labels: &[u8]) -> u8 {
    let mut counts = [0usize; 256];
    let mut dist = [0.0f64; 256];
    for &(d, j) in neighbours {
        counts[labels[j] as usize] += 1;
        dist[labels[j] as usize] += d;
    }
    let mut winner = 0usize;
    for c in 1..256 {
        if counts[c] > counts[winner] || (counts[c] == counts[winner] && counts[c] > 0 && dist[c] < dist[winner]) {
            winner = c;
        }
    }
    winner as u8
}

/// KNN probe with Euclidean distance on raw embeddings.
pub fn knn_probe(train: &EmbeddingTable, test: &EmbeddingTable, k: usize) -> Result<ProbeResult> {
    let preds = knn_predict(train, test, k, KnnMetric::Euclidean)?;
    score(ProbeKind::Knn, &preds, train, test)
}

/// `c = a · btᵀ`, with `a` `m×k` and `bt` `n×k`, both row-major.
fn cross_products(m: usize, k: usize, n: usize, a: &[f32], bt: &[f32], c: &mut [f32]) {
    crate::Scalar::gemm(m, k, n, 1.0, a, (k as isize, 1), bt, (1, k as isize), 0.0, c, (n as isize, 1));
}

/// Fully connected layer, `out × in` weights.
#[derive(Debug, Clone)]
struct Dense {
    inputs: usize,
    outputs: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn fan_in_uniform<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = libm::sqrt(1.0 / inputs as f64);
        let weight = (0..inputs * outputs).map(|_| rng.gen_range(-bound..bound) as f32).collect();
        Self { inputs, outputs, weight, bias: vec![0.0; outputs] }
    }

    fn forward(&self, x: &[f32], rows: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(rows * self.outputs);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias);
        }
        crate::Scalar::gemm(
            rows,
            self.inputs,
            self.outputs,
            1.0f32,
            x,
            (self.inputs as isize, 1),
            &self.weight,
            (1, self.inputs as isize),
            1.0,
            &mut out,
            (self.outputs as isize, 1),
        );
        out
    }

    /// SGD update from `d out`; returns `d x` when asked.
    fn backward_step(&mut self, x: &[f32], dy: &[f32], rows: usize, lr: f32, need_dx: bool) -> Option<Vec<f32>> {
        let dx = need_dx.then(|| {
            let mut dx = vec![0.0f32; rows * self.inputs];
            crate::Scalar::gemm(
                rows,
                self.outputs,
                self.inputs,
                1.0f32,
                dy,
                (self.outputs as isize, 1),
                &self.weight,
                (self.inputs as isize, 1),
                0.0,
                &mut dx,
                (self.inputs as isize, 1),
            );
            dx
        });
        // W ← W − lr · dYᵀ X
        crate::Scalar::gemm(
            self.outputs,
            rows,
            self.inputs,
            -lr,
            dy,
            (1, self.outputs as isize),
            x,
            (self.inputs as isize, 1),
            1.0,
            &mut self.weight,
            (self.inputs as isize, 1),
        );
        for r in 0..rows {
            for (b, &g) in self.bias.iter_mut().zip(&dy[r * self.outputs..(r + 1) * self.outputs]) {
                *b -= lr * g;
            }
        }
        dx
    }
}

/// Softmax cross-entropy: mean loss and `d loss / d logits`.
fn softmax_xent(logits: &[f32], labels: &[u8], classes: usize) -> (f64, Vec<f32>) {
    let rows = labels.len();
    let mut grad = vec![0.0f32; logits.len()];
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let z = &logits[r * classes..(r + 1) * classes];
        let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let exps: Vec<f64> = z.iter().map(|&v| libm::exp(v as f64 - max)).collect();
        let sum: f64 = exps.iter().sum();
        loss += libm::log(sum) + max - z[y as usize] as f64;
        for (c, e) in exps.iter().enumerate() {
            let p = e / sum - if c == y as usize { 1.0 } else { 0.0 };
            grad[r * classes + c] = (p / rows as f64) as f32;
        }
    }
    (loss / rows as f64, grad)
}

fn argmax_rows(logits: &[f32], classes: usize) -> Vec<u8> {
    logits
        .chunks_exact(classes)
        .map(|z| {
            let mut best = 0;
            for c in 1..classes {
                if z[c] > z[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// A linear map or a one-hidden-layer LeakyReLU network trained with
/// minibatch SGD on softmax cross-entropy.
struct Classifier {
    layers: Vec<Dense>,
}

impl Classifier {
    fn logits(&self, x: &[f32], rows: usize) -> Vec<f32> {
        let mut h = self.layers[0].forward(x, rows);
        for l in &self.layers[1..] {
            h.iter_mut().for_each(|v| *v = leaky_relu(*v, LEAKY_SLOPE as f32));
            h = l.forward(&h, rows);
        }
        h
    }

    fn fit(&mut self, train: &EmbeddingTable, cfg: &ProbeConfig, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..train.rows).collect();
        let lr = cfg.probe_lr as f32;
        let bs = cfg.probe_batch_size;
        let mut xb = Vec::with_capacity(bs * train.dim);
        let mut yb = Vec::with_capacity(bs);
        for epoch in 0..cfg.probe_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(bs) {
                xb.clear();
                yb.clear();
                for &i in chunk {
                    xb.extend_from_slice(train.row(i));
                    yb.push(train.labels[i]);
                }
                let rows = chunk.len();
                // Forward, keeping the hidden pre-activation for the MLP.
                let pre = self.layers[0].forward(&xb, rows);
                let (act, logits) = if self.layers.len() == 2 {
                    let act: Vec<f32> = pre.iter().map(|&v| leaky_relu(v, LEAKY_SLOPE as f32)).collect();
                    let logits = self.layers[1].forward(&act, rows);
                    (Some(act), logits)
                } else {
                    (None, pre.clone())
                };
                let (loss, dlogits) = softmax_xent(&logits, &yb, NUM_CLASSES);
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("probe loss in epoch {epoch}")));
                }
                match act {
                    Some(act) => {
                        let dact = self.layers[1]
                            .backward_step(&act, &dlogits, rows, lr, true)
                            .expect("dx requested");
                        let dpre: Vec<f32> = dact
                            .iter()
                            .zip(&pre)
                            .map(|(&g, &p)| if p >= 0.0 { g } else { g * LEAKY_SLOPE as f32 })
                            .collect();
                        self.layers[0].backward_step(&xb, &dpre, rows, lr, false);
                    }
                    None => {
                        self.layers[0].backward_step(&xb, &dlogits, rows, lr, false);
                    }
                }
            }
        }
        if self.layers.iter().any(|l| l.weight.iter().chain(&l.bias).any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("probe weights".into()));
        }
        Ok(())
    }

    fn predict(&self, table: &EmbeddingTable) -> Vec<u8> {
        let mut preds = Vec::with_capacity(table.rows);
        for start in (0..table.rows).step_by(512) {
            let end = (start + 512).min(table.rows);
            let logits = self.logits(&table.features[start * table.dim..end * table.dim], end - start);
            preds.extend(argmax_rows(&logits, NUM_CLASSES));
        }
        preds
    }
}

/// Zero-initialized affine probe.
pub fn linear_probe(train: &EmbeddingTable, test: &EmbeddingTable, cfg: &ProbeConfig, seed: u64) -> Result<ProbeResult> {
    check_pair(train, test)?;
    cfg.validate()?;
    let mut clf = Classifier { layers: vec![Dense::zeros(train.dim, NUM_CLASSES)] };
    clf.fit(train, cfg, seed)?;
    score(ProbeKind::Linear, &clf.predict(test), train, test)
}

/// One hidden LeakyReLU layer of width `mlp_hidden`, fan-in uniform init.
pub fn mlp_probe(train: &EmbeddingTable, test: &EmbeddingTable, cfg: &ProbeConfig, seed: u64) -> Result<ProbeResult> {
    check_pair(train, test)?;
    cfg.validate()?;
    let mut init = ChaCha8Rng::seed_from_u64(derive_seed(seed, "mlp-init"));
    let mut clf = Classifier {
        layers: vec![
            Dense::fan_in_uniform(train.dim, cfg.mlp_hidden, &mut init),
            Dense::fan_in_uniform(cfg.mlp_hidden, NUM_CLASSES, &mut init),
        ],
    };
    clf.fit(train, cfg, seed)?;
    score(ProbeKind::Mlp, &clf.predict(test), train, test)
}

pub fn run_probe(kind: ProbeKind, train: &EmbeddingTable, test: &EmbeddingTable, cfg: &ProbeConfig, seed: u64) -> Result<ProbeResult> {
    match kind {
        ProbeKind::Knn => knn_probe(train, test, cfg.knn_k),
        ProbeKind::Linear => linear_probe(train, test, cfg, seed),
        ProbeKind::Mlp => mlp_probe(train, test, cfg, seed),
    }
}

/// One probe score attributed to a peer (or an ensemble) at a step.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub step: u64,
    pub peer: PeerTag,
    pub result: ProbeResult,
}

impl ProbeRecord {
    pub fn record(&self, log: &mut MetricsLog) -> Result<()> {
        let kind = self.result.kind.as_str();
        log.push(self.step, self.peer, &format!("{kind}_accuracy"), self.result.accuracy)?;
        log.push(self.step, self.peer, &format!("{kind}_macro_f1"), self.result.macro_f1)
    }
}

pub fn probe_seed(master_seed: u64, kind: ProbeKind, step: u64, peer: &str) -> u64 {
    derive_seed(master_seed, &probe_label(kind.as_str(), step, peer))
}

/// Periodic evaluation of every peer with the configured probes.
pub fn evaluation_hook(
    peers: &[Model<f32>],
    step: u64,
    cfg: &ExperimentConfig,
    fit: &Dataset,
    test: &Dataset,
) -> Result<Vec<ProbeRecord>> {
    let pc = &cfg.probe_config;
    let fit_rows = Some(pc.fit_subset.unwrap_or(DEFAULT_HOOK_FIT_SUBSET));
    let mut out = Vec::new();
    for (i, m) in peers.iter().enumerate() {
        let train_t = extract_embeddings(&[(i, m)], fit, fit_rows)?;
        let test_t = extract_embeddings(&[(i, m)], test, pc.test_subset)?;
        for &kind in &pc.eval_probes {
            let peer_label: String = format!("{i}");
            let seed = probe_seed(cfg.master_seed, kind, step, &peer_label);
            let result = run_probe(kind, &train_t, &test_t, pc, seed)?;
            out.push(ProbeRecord { step, peer: PeerTag::Peer(i), result });
        }
    }
    Ok(out)
}
