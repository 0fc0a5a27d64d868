//! The peer pool and its stop-gradient training step.
//!
//! Every batch, `T + 1` distinct peers are drawn: the first is the student,
//! the rest are teachers. All of them see the same augmented view. Teachers
//! run a batch-statistics forward through `&Model`, so they cannot be
//! mutated; the student's loss is the mean over teachers and only the
//! student's optimizer steps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::ExperimentConfig;
use crate::data::{epoch_batches, random_hflip, Dataset, ImageBatch};
use crate::error::{Error, Result};
use crate::loss::loss_and_grad;
use crate::metrics::{MetricsLog, PeerTag};
use crate::model::{EmbeddingBatch, Model};
use crate::optim::OptimizerState;
use crate::scalar::Scalar;
use crate::seed::{derive_seed, flip_label, peer_init_label, rng_for, role_label, shuffle_label};

pub const FLIP_PROBABILITY: f64 = 0.5;

/// Draws `teachers + 1` distinct indices uniformly without replacement
/// (partial Fisher–Yates); the first is the student.
pub fn sample_roles<R: Rng + ?Sized>(pool_size: usize, teachers: usize, rng: &mut R) -> Result<(usize, Vec<usize>)> {
    let needed = teachers + 1;
    if needed > pool_size || teachers == 0 {
        return Err(Error::RoleSampling { needed, pool: pool_size });
    }
    let mut idx: Vec<usize> = (0..pool_size).collect();
    for i in 0..needed {
        let j = rng.gen_range(i..pool_size);
        idx.swap(i, j);
    }
    Ok((idx[0], idx[1..needed].to_vec()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub global_step: u64,
    pub student_id: usize,
    pub teacher_ids: Vec<usize>,
    pub loss_value: f64,
    pub grad_norm: f64,
}

impl BatchReport {
    pub fn record(&self, log: &mut MetricsLog) -> Result<()> {
        log.push(self.global_step, PeerTag::Peer(self.student_id), "loss", self.loss_value)?;
        log.push(self.global_step, PeerTag::Peer(self.student_id), "grad_norm", self.grad_norm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerPool<S = f32> {
    peers: Vec<Model<S>>,
    optimizers: Vec<OptimizerState<S>>,
}

impl<S: Scalar> PeerPool<S> {
    /// `num_peers` models seeded from `peer-init-{i}`, each with its own optimizer.
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let peers: Vec<Model<S>> = (0..cfg.num_peers)
            .map(|i| Model::init(cfg.arch_id, derive_seed(cfg.master_seed, &peer_init_label(i))))
            .collect();
        Self::with_models(peers, cfg)
    }

    /// Fresh optimizers around existing models.
    pub fn with_models(peers: Vec<Model<S>>, cfg: &ExperimentConfig) -> Result<Self> {
        let optimizers = peers
            .iter()
            .map(|m| OptimizerState::new(cfg.optimizer_kind, cfg.learning_rate, m))
            .collect();
        Self::from_parts(peers, optimizers)
    }

    pub fn from_parts(peers: Vec<Model<S>>, optimizers: Vec<OptimizerState<S>>) -> Result<Self> {
        if peers.len() != optimizers.len() {
            return Err(Error::Shape(format!("{} peers but {} optimizers", peers.len(), optimizers.len())));
        }
        if peers.len() < 2 {
            return Err(Error::InvalidConfig("a pool needs at least two peers".into()));
        }
        Ok(Self { peers, optimizers })
    }

    pub fn len(&self) -> usize {
        self.peers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peers.is_empty()
    }

    pub fn peers(&self) -> &[Model<S>] {
        &self.peers
    }

    pub fn peer(&self, i: usize) -> &Model<S> {
        &self.peers[i]
    }

    pub fn optimizers(&self) -> &[OptimizerState<S>] {
        &self.optimizers
    }

    pub fn into_peers(self) -> Vec<Model<S>> {
        self.peers
    }

    /// One distillation step on `batch`, which must already be the augmented
    /// view. Exactly one optimizer (the student's) steps.
    pub fn train_batch<R: Rng + ?Sized>(
        &mut self,
        batch: &ImageBatch<S>,
        cfg: &ExperimentConfig,
        rng: &mut R,
    ) -> Result<BatchReport> {
        let step = batch.step_id;
        let n = batch.len();
        let (student, teachers) = sample_roles(self.peers.len(), cfg.num_teachers, rng)?;

        let mut reduce_order = teachers.clone();
        reduce_order.sort_unstable();
        let mut teacher_outs = Vec::with_capacity(teachers.len());
        for &t in &reduce_order {
            let values = self.peers[t].forward_frozen(&batch.pixels, n)?;
            let dim = values.len() / n;
            teacher_outs.push(EmbeddingBatch { values, rows: n, dim, peer_id: t, step_id: step });
        }

        let model = &mut self.peers[student];
        let (values, tape) = model.forward_train(&batch.pixels, n)?;
        let dim = values.len() / n;
        let student_out = EmbeddingBatch { values, rows: n, dim, peer_id: student, step_id: step };

        let inv_t = 1.0 / teacher_outs.len() as f64;
        let mut loss = 0.0;
        let mut d_out = vec![S::zero(); student_out.values.len()];
        for t in &teacher_outs {
            let (l, g) = loss_and_grad(cfg.loss_kind, &student_out, t)?;
            loss += l;
            for (d, gi) in d_out.iter_mut().zip(g) {
                *d += gi;
            }
        }
        loss *= inv_t;
        let scale = S::from_f64(inv_t);
        d_out.iter_mut().for_each(|d| *d *= scale);

        if !loss.is_finite() || d_out.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite(format!(
                "loss {loss} at step {step} (student {student}, teachers {teachers:?})"
            )));
        }

        let grads = model.backward(&tape, d_out);
        let grad_norm = grads.l2_norm();
        self.optimizers[student].step(model, &grads)?;
        if !model.all_finite() {
            return Err(Error::NonFinite(format!(
                "parameters of student {student} after step {step} (teachers {teachers:?})"
            )));
        }
        Ok(BatchReport { global_step: step, student_id: student, teacher_ids: teachers, loss_value: loss, grad_norm })
    }
}

/// Callbacks of [`run_training`].
pub trait TrainObserver<S: Scalar> {
    fn on_batch(&mut self, _pool: &PeerPool<S>, _report: &BatchReport) -> Result<()> {
        Ok(())
    }

    /// Called before the first batch and after every `eval_every_batches`
    /// completed batches when evaluation is enabled. `completed` is the number
    /// of batches trained so far.
    fn on_eval(&mut self, _pool: &PeerPool<S>, _completed: u64, _log: &mut MetricsLog) -> Result<()> {
        Ok(())
    }
}

impl<S: Scalar> TrainObserver<S> for () {}

/// Applies the per-step augmentation: one flip decision per image, made once
/// before the view is handed to student and teachers.
pub fn training_view<S: Scalar>(batch: ImageBatch<S>, master_seed: u64) -> ImageBatch<S> {
    let seed = derive_seed(master_seed, &flip_label(batch.step_id));
    random_hflip(batch, FLIP_PROBABILITY, seed)
}

/// The outer loop: `epochs ×` shuffled batches, one [`PeerPool::train_batch`]
/// each, sequentially.
pub fn run_training<S: Scalar, O: TrainObserver<S>>(
    pool: &mut PeerPool<S>,
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    observer: &mut O,
) -> Result<MetricsLog> {
    cfg.validate()?;
    if pool.len() != cfg.num_peers {
        return Err(Error::InvalidConfig(format!(
            "pool has {} peers, config asks for {}",
            pool.len(),
            cfg.num_peers
        )));
    }
    let mut log = MetricsLog::new();
    let eval_every = cfg.eval_every_batches as u64;
    if eval_every > 0 {
        observer.on_eval(pool, 0, &mut log)?;
    }
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let shuffle = derive_seed(cfg.master_seed, &shuffle_label(epoch));
        for batch in epoch_batches::<S>(dataset, cfg.batch_size, shuffle, step)? {
            let view = training_view(batch, cfg.master_seed);
            let mut rng = rng_for(cfg.master_seed, &role_label(step));
            let report = pool.train_batch(&view, cfg, &mut rng)?;
            report.record(&mut log)?;
            observer.on_batch(pool, &report)?;
            step += 1;
            if eval_every > 0 && step % eval_every == 0 {
                observer.on_eval(pool, step, &mut log)?;
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::OptimizerKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_peers_one_teacher_uses_both() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = [0usize; 2];
        for _ in 0..200 {
            let (s, t) = sample_roles(2, 1, &mut rng).unwrap();
            assert_eq!(t.len(), 1);
            assert_ne!(s, t[0]);
            seen[s] += 1;
        }
        assert!(seen[0] > 60 && seen[1] > 60);
    }

    #[test]
    fn too_many_teachers_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_roles(3, 3, &mut rng).unwrap_err(),
            Error::RoleSampling { needed: 4, pool: 3 }
        );
    }

    #[test]
    fn roles_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let (s, t) = sample_roles(8, 3, &mut rng).unwrap();
            let mut all = t.clone();
            all.push(s);
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), 4);
        }
    }

    #[test]
    fn pool_shapes() {
        let mut cfg = ExperimentConfig::with_dataset_dir("x");
        cfg.num_peers = 3;
        cfg.optimizer_kind = OptimizerKind::Sgd;
        let pool = PeerPool::<f32>::new(&cfg).unwrap();
        assert_eq!(pool.len(), 3);
        assert_eq!(pool.optimizers().len(), 3);
        assert_ne!(pool.peer(0), pool.peer(1));
    }
}
