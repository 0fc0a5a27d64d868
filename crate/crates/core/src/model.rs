//! Architecture registry, initialization and the forward/backward passes of a
//! whole network.
//!
//! `simple_cnn` is two blocks of `[Conv, BN, LeakyReLU] × 2 → MaxPool 2×2`
//! with channels 3→64→128 and 128→256→256. Every convolution is 3×3, stride 1,
//! padding 1, so a 32×32 image leaves the network as a 256×8×8 feature map,
//! flattened to a 16384-wide embedding.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ArchId;
use crate::data::{ImageBatch, CHANNELS, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Layer, LayerCache, LayerSpec, NormMode, Shape};
use crate::scalar::Scalar;

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn arch_layers(arch: ArchId) -> Vec<LayerSpec> {
    match arch {
        ArchId::SimpleCnn => {
            let conv = |i, o| LayerSpec::Conv2d { in_channels: i, out_channels: o, kernel: 3, padding: 1 };
            let bn = |c| LayerSpec::BatchNorm2d { channels: c };
            let act = LayerSpec::LeakyRelu { slope: LEAKY_SLOPE };
            let pool = LayerSpec::MaxPool2d { size: 2 };
            vec![
                conv(3, 64),
                bn(64),
                act,
                conv(64, 128),
                bn(128),
                act,
                pool,
                conv(128, 256),
                bn(256),
                act,
                conv(256, 256),
                bn(256),
                act,
                pool,
            ]
        }
    }
}

/// Parses a registry name; unknown names are an error.
pub fn lookup_arch(name: &str) -> Result<ArchId> {
    name.parse::<ArchId>().map_err(|_| Error::UnknownArch(name.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedMode {
    /// Batch statistics; updates the running statistics.
    Train,
    /// Running statistics; no state change.
    Eval,
}

/// Network outputs, `rows × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch<S = f32> {
    pub values: Vec<S>,
    pub rows: usize,
    pub dim: usize,
    pub peer_id: usize,
    pub step_id: u64,
}

impl<S: Scalar> EmbeddingBatch<S> {
    pub fn from_values(values: Vec<S>, rows: usize, dim: usize) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::Shape(format!("{} values for {rows}×{dim}", values.len())));
        }
        Ok(Self { values, rows, dim, peer_id: 0, step_id: 0 })
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Parameter gradients, one vector per parameter tensor in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub tensors: Vec<Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn l2_norm(&self) -> f64 {
        libm::sqrt(
            self.tensors
                .iter()
                .flat_map(|t| t.iter())
                .map(|g| {
                    let g = g.as_f64();
                    g * g
                })
                .sum::<f64>(),
        )
    }

    pub fn scale(&mut self, factor: S) {
        self.tensors.iter_mut().flatten().for_each(|g| *g *= factor);
    }
}

/// Forward record of a train-mode pass.
pub struct Tape<S> {
    shapes: Vec<Shape>,
    caches: Vec<LayerCache<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<S = f32> {
    arch: ArchId,
    layers: Vec<Layer<S>>,
    init_seed: u64,
}

impl<S: Scalar> Model<S> {
    /// Fan-in uniform convolution weights (bound `sqrt(1/fan_in)`), zero
    /// biases, identity batch norm.
    pub fn init(arch: ArchId, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch_layers(arch)
            .into_iter()
            .map(|spec| match spec {
                LayerSpec::Conv2d { in_channels, out_channels, kernel, padding } => {
                    let fan_in = in_channels * kernel * kernel;
                    let bound = libm::sqrt(1.0 / fan_in as f64);
                    let weight = (0..out_channels * fan_in)
                        .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
                        .collect();
                    Layer::Conv(Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        padding,
                        weight,
                        bias: vec![S::zero(); out_channels],
                    })
                }
                LayerSpec::BatchNorm2d { channels } => Layer::BatchNorm(BatchNorm2d::new(channels)),
                LayerSpec::LeakyRelu { slope } => Layer::LeakyRelu { slope },
                LayerSpec::MaxPool2d { size } => Layer::MaxPool { size },
            })
            .collect();
        Self { arch, layers, init_seed: seed }
    }

    pub fn from_layers(arch: ArchId, layers: Vec<Layer<S>>, init_seed: u64) -> Result<Self> {
        let got: Vec<LayerSpec> = layers.iter().map(Layer::spec).collect();
        if got != arch_layers(arch) {
            return Err(Error::Shape(format!("layer sequence does not match `{arch}`")));
        }
        Ok(Self { arch, layers, init_seed })
    }

    pub fn arch(&self) -> ArchId {
        self.arch
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<S>] {
        &mut self.layers
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn input_shape(&self, n: usize) -> Shape {
        Shape::new(n, CHANNELS, IMAGE_SIDE, IMAGE_SIDE)
    }

    pub fn output_shape(&self, n: usize) -> Shape {
        self.layers.iter().fold(self.input_shape(n), |s, l| l.output_shape(s))
    }

    pub fn embedding_dim(&self) -> usize {
        self.output_shape(1).per_item()
    }

    /// Learnable scalars; running statistics excluded.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&[S]> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [S]> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    /// Names like `conv1.weight`, `bn2.bias`, in parameter order.
    pub fn param_names(&self) -> Vec<String> {
        let (mut conv, mut bn) = (0, 0);
        let mut names = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(_) => {
                    conv += 1;
                    names.push(format!("conv{conv}.weight"));
                    names.push(format!("conv{conv}.bias"));
                }
                Layer::BatchNorm(_) => {
                    bn += 1;
                    names.push(format!("bn{bn}.weight"));
                    names.push(format!("bn{bn}.bias"));
                }
                _ => {}
            }
        }
        names
    }

    pub fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm2d<S>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::BatchNorm(b) => Some(b),
            _ => None,
        })
    }

    pub fn batch_norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm2d<S>> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::BatchNorm(b) => Some(b),
            _ => None,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self
                .batch_norms()
                .all(|b| b.running_mean.iter().chain(&b.running_var).all(|v| v.is_finite()))
    }

    /// Same weights in another precision.
    pub fn cast<T: Scalar>(&self) -> Model<T> {
        let conv = |v: &[S]| v.iter().map(|x| T::from_f64(x.as_f64())).collect::<Vec<T>>();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(Conv2d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                    padding: c.padding,
                    weight: conv(&c.weight),
                    bias: conv(&c.bias),
                }),
                Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm2d {
                    channels: b.channels,
                    gamma: conv(&b.gamma),
                    beta: conv(&b.beta),
                    running_mean: conv(&b.running_mean),
                    running_var: conv(&b.running_var),
                    num_batches_tracked: b.num_batches_tracked,
                    eps: b.eps,
                    momentum: b.momentum,
                }),
                Layer::LeakyRelu { slope } => Layer::LeakyRelu { slope: *slope },
                Layer::MaxPool { size } => Layer::MaxPool { size: *size },
            })
            .collect();
        Model { arch: self.arch, layers, init_seed: self.init_seed }
    }

    fn check_input(&self, pixels: &[S], n: usize) -> Result<Shape> {
        let s = self.input_shape(n);
        if pixels.len() != s.len() || n == 0 {
            return Err(Error::Shape(format!(
                "expected {n}×{}×{}×{} input, got {} values",
                s.c,
                s.h,
                s.w,
                pixels.len()
            )));
        }
        Ok(s)
    }

    fn run(
        &self,
        pixels: &[S],
        n: usize,
        mode: NormMode,
        keep_tape: bool,
    ) -> Result<(Vec<S>, Option<Tape<S>>, Vec<crate::nn::BatchStats<S>>)> {
        let mut shape = self.check_input(pixels, n)?;
        let mut tape = keep_tape.then(|| Tape { shapes: Vec::new(), caches: Vec::new() });
        let mut stats = Vec::new();
        let mut cur: Option<Vec<S>> = None;
        for layer in &self.layers {
            let x = cur.as_deref().unwrap_or(pixels);
            let f = layer.forward(x, shape, mode, keep_tape);
            if let Some(t) = tape.as_mut() {
                t.shapes.push(shape);
                t.caches.push(f.cache.expect("cache requested"));
            }
            if let Some(st) = f.stats {
                stats.push(st);
            }
            shape = f.shape;
            cur = Some(f.output);
        }
        let out = cur.unwrap_or_else(|| pixels.to_vec());
        Ok((out, tape, stats))
    }

    /// Inference with running statistics; `&self` guarantees no state change.
    pub fn forward_eval(&self, pixels: &[S], n: usize) -> Result<Vec<S>> {
        Ok(self.run(pixels, n, NormMode::Running, false)?.0)
    }

    /// Batch-statistics forward that leaves the model untouched (teachers).
    pub fn forward_frozen(&self, pixels: &[S], n: usize) -> Result<Vec<S>> {
        Ok(self.run(pixels, n, NormMode::Batch, false)?.0)
    }

    /// Student forward: batch statistics, running statistics updated, tape kept.
    pub fn forward_train(&mut self, pixels: &[S], n: usize) -> Result<(Vec<S>, Tape<S>)> {
        let (out, tape, stats) = self.run(pixels, n, NormMode::Batch, true)?;
        for (bn, st) in self.batch_norms_mut().zip(&stats) {
            bn.absorb(st);
        }
        Ok((out, tape.expect("tape requested")))
    }

    /// Gradient of the parameters given `d loss / d output`.
    pub fn backward(&self, tape: &Tape<S>, d_out: Vec<S>) -> Gradients<S> {
        let mut grads_rev: Vec<Vec<Vec<S>>> = Vec::with_capacity(self.layers.len());
        let mut dy = d_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let need_dx = i > 0;
            let (dx, g) = layer.backward(&tape.caches[i], &dy, tape.shapes[i], need_dx);
            grads_rev.push(g);
            if let Some(dx) = dx {
                dy = dx;
            }
        }
        Gradients { tensors: grads_rev.into_iter().rev().flatten().collect() }
    }

    /// Forward pass producing embeddings; non-finite outputs are an error.
    pub fn embed(&mut self, batch: &ImageBatch<S>, mode: EmbedMode) -> Result<EmbeddingBatch<S>> {
        let n = batch.len();
        let values = match mode {
            EmbedMode::Eval => self.forward_eval(&batch.pixels, n)?,
            EmbedMode::Train => self.forward_train(&batch.pixels, n)?.0,
        };
        finite_embedding(values, n, self.embedding_dim(), batch.step_id)
    }

    /// Eval-mode embeddings through a shared reference.
    pub fn embed_eval(&self, batch: &ImageBatch<S>) -> Result<EmbeddingBatch<S>> {
        let n = batch.len();
        let values = self.forward_eval(&batch.pixels, n)?;
        finite_embedding(values, n, self.embedding_dim(), batch.step_id)
    }
}

fn finite_embedding<S: Scalar>(values: Vec<S>, rows: usize, dim: usize, step_id: u64) -> Result<EmbeddingBatch<S>> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("activation at flat index {pos} of step {step_id}")));
    }
    Ok(EmbeddingBatch { values, rows, dim, peer_id: 0, step_id })
}
