//! Layers with explicit forward caches and backward passes.
//!
//! Activations are stored `N×C×H×W`, row-major. Convolutions go through
//! im2col and a single GEMM per image.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn per_item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn len(&self) -> usize {
        self.n * self.per_item()
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Geometry of one layer; what the architecture registry is made of.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, padding: usize },
    BatchNorm2d { channels: usize },
    LeakyRelu { slope: f64 },
    MaxPool2d { size: usize },
}

/// How batch normalization normalizes during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Running statistics; no cross-sample coupling.
    Running,
    /// Statistics of the current batch.
    Batch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<S> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    /// `out × in × k × k`
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<S> {
    pub channels: usize,
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub num_batches_tracked: u64,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<S> {
    Conv(Conv2d<S>),
    BatchNorm(BatchNorm2d<S>),
    LeakyRelu { slope: f64 },
    MaxPool { size: usize },
}

/// What a layer remembers from the forward pass for its backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<S> {
    Conv { input: Vec<S> },
    BatchNorm { xhat: Vec<S>, inv_std: Vec<S> },
    LeakyRelu { non_negative: Vec<bool> },
    MaxPool { argmax: Vec<u8> },
}

/// Per-channel batch statistics; variance is the unbiased estimate.
#[derive(Debug, Clone)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    pub var_unbiased: Vec<S>,
}

pub struct LayerForward<S> {
    pub output: Vec<S>,
    pub shape: Shape,
    pub cache: Option<LayerCache<S>>,
    pub stats: Option<BatchStats<S>>,
}

impl<S: Scalar> Layer<S> {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(c) => LayerSpec::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                padding: c.padding,
            },
            Layer::BatchNorm(b) => LayerSpec::BatchNorm2d { channels: b.channels },
            Layer::LeakyRelu { slope } => LayerSpec::LeakyRelu { slope: *slope },
            Layer::MaxPool { size } => LayerSpec::MaxPool2d { size: *size },
        }
    }

    pub fn output_shape(&self, s: Shape) -> Shape {
        match self {
            Layer::Conv(c) => Shape::new(
                s.n,
                c.out_channels,
                s.h + 2 * c.padding + 1 - c.kernel,
                s.w + 2 * c.padding + 1 - c.kernel,
            ),
            Layer::BatchNorm(_) | Layer::LeakyRelu { .. } => s,
            Layer::MaxPool { size } => Shape::new(s.n, s.c, s.h / size, s.w / size),
        }
    }

    pub fn forward(&self, x: &[S], shape: Shape, mode: NormMode, keep_cache: bool) -> LayerForward<S> {
        debug_assert_eq!(x.len(), shape.len());
        match self {
            Layer::Conv(c) => {
                let (output, out_shape) = c.forward(x, shape);
                LayerForward {
                    output,
                    shape: out_shape,
                    cache: keep_cache.then(|| LayerCache::Conv { input: x.to_vec() }),
                    stats: None,
                }
            }
            Layer::BatchNorm(b) => match mode {
                NormMode::Running => LayerForward {
                    output: b.forward_running(x, shape),
                    shape,
                    cache: None,
                    stats: None,
                },
                NormMode::Batch => {
                    let (output, xhat, inv_std, stats) = b.forward_batch(x, shape);
                    LayerForward {
                        output,
                        shape,
                        cache: keep_cache.then_some(LayerCache::BatchNorm { xhat, inv_std }),
                        stats: Some(stats),
                    }
                }
            },
            Layer::LeakyRelu { slope } => {
                let slope = S::from_f64(*slope);
                let output = x.iter().map(|&v| leaky_relu(v, slope)).collect();
                let cache = keep_cache.then(|| LayerCache::LeakyRelu {
                    non_negative: x.iter().map(|&v| v >= S::zero()).collect(),
                });
                LayerForward { output, shape, cache, stats: None }
            }
            Layer::MaxPool { size } => {
                let (output, argmax, out_shape) = max_pool(x, shape, *size);
                LayerForward {
                    output,
                    shape: out_shape,
                    cache: keep_cache.then_some(LayerCache::MaxPool { argmax }),
                    stats: None,
                }
            }
        }
    }

    /// Returns the input gradient (when requested) and this layer's parameter
    /// gradients in declaration order.
    pub fn backward(
        &self,
        cache: &LayerCache<S>,
        dy: &[S],
        in_shape: Shape,
        need_dx: bool,
    ) -> (Option<Vec<S>>, Vec<Vec<S>>) {
        match (self, cache) {
            (Layer::Conv(c), LayerCache::Conv { input }) => {
                let (dx, dw, db) = c.backward(input, dy, in_shape, need_dx);
                (dx, vec![dw, db])
            }
            (Layer::BatchNorm(b), LayerCache::BatchNorm { xhat, inv_std }) => {
                let (dx, dg, dbeta) = b.backward_batch(xhat, inv_std, dy, in_shape);
                (need_dx.then_some(dx), vec![dg, dbeta])
            }
            (Layer::LeakyRelu { slope }, LayerCache::LeakyRelu { non_negative }) => {
                let slope = S::from_f64(*slope);
                let dx = need_dx.then(|| {
                    dy.iter()
                        .zip(non_negative)
                        .map(|(&g, &pos)| if pos { g } else { g * slope })
                        .collect()
                });
                (dx, Vec::new())
            }
            (Layer::MaxPool { size }, LayerCache::MaxPool { argmax }) => {
                let dx = need_dx.then(|| max_pool_backward(dy, argmax, in_shape, *size));
                (dx, Vec::new())
            }
            _ => unreachable!("layer/cache kind mismatch"),
        }
    }

    pub fn params(&self) -> Vec<&[S]> {
        match self {
            Layer::Conv(c) => vec![&c.weight[..], &c.bias[..]],
            Layer::BatchNorm(b) => vec![&b.gamma[..], &b.beta[..]],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [S]> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight[..], &mut c.bias[..]],
            Layer::BatchNorm(b) => vec![&mut b.gamma[..], &mut b.beta[..]],
            _ => Vec::new(),
        }
    }
}

#[inline]
pub fn leaky_relu<S: Scalar>(x: S, slope: S) -> S {
    if x >= S::zero() {
        x
    } else {
        slope * x
    }
}

impl<S: Scalar> Conv2d<S> {
    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn fan_in(&self) -> usize {
        self.col_rows()
    }

    fn forward(&self, x: &[S], s: Shape) -> (Vec<S>, Shape) {
        let ho = s.h + 2 * self.padding + 1 - self.kernel;
        let wo = s.w + 2 * self.padding + 1 - self.kernel;
        let out_shape = Shape::new(s.n, self.out_channels, ho, wo);
        let hw = ho * wo;
        let rows = self.col_rows();
        let mut col = vec![S::zero(); rows * hw];
        let mut out = vec![S::zero(); out_shape.len()];
        for (img, o) in x.chunks_exact(s.per_item()).zip(out.chunks_exact_mut(out_shape.per_item())) {
            im2col(img, s.c, s.h, s.w, self.kernel, self.padding, ho, wo, &mut col);
            for (co, plane) in o.chunks_exact_mut(hw).enumerate() {
                plane.fill(self.bias[co]);
            }
            S::gemm(
                self.out_channels,
                rows,
                hw,
                S::one(),
                &self.weight,
                (rows as isize, 1),
                &col,
                (hw as isize, 1),
                S::one(),
                o,
                (hw as isize, 1),
            );
        }
        (out, out_shape)
    }

    fn backward(&self, input: &[S], dy: &[S], s: Shape, need_dx: bool) -> (Option<Vec<S>>, Vec<S>, Vec<S>) {
        let ho = s.h + 2 * self.padding + 1 - self.kernel;
        let wo = s.w + 2 * self.padding + 1 - self.kernel;
        let hw = ho * wo;
        let rows = self.col_rows();
        let out_per_item = self.out_channels * hw;
        let mut col = vec![S::zero(); rows * hw];
        let mut dcol = vec![S::zero(); rows * hw];
        let mut dw = vec![S::zero(); self.weight.len()];
        let mut db = vec![S::zero(); self.out_channels];
        let mut dx = need_dx.then(|| vec![S::zero(); s.len()]);
        for img in 0..s.n {
            let x_img = &input[img * s.per_item()..(img + 1) * s.per_item()];
            let dy_img = &dy[img * out_per_item..(img + 1) * out_per_item];
            im2col(x_img, s.c, s.h, s.w, self.kernel, self.padding, ho, wo, &mut col);
            // dW += dY · colᵀ
            S::gemm(
                self.out_channels,
                hw,
                rows,
                S::one(),
                dy_img,
                (hw as isize, 1),
                &col,
                (1, hw as isize),
                S::one(),
                &mut dw,
                (rows as isize, 1),
            );
            for (co, plane) in dy_img.chunks_exact(hw).enumerate() {
                db[co] += plane.iter().copied().sum::<S>();
            }
            if let Some(dx) = dx.as_mut() {
                // dcol = Wᵀ · dY
                S::gemm(
                    rows,
                    self.out_channels,
                    hw,
                    S::one(),
                    &self.weight,
                    (1, rows as isize),
                    dy_img,
                    (hw as isize, 1),
                    S::zero(),
                    &mut dcol,
                    (hw as isize, 1),
                );
                let dx_img = &mut dx[img * s.per_item()..(img + 1) * s.per_item()];
                col2im(&dcol, s.c, s.h, s.w, self.kernel, self.padding, ho, wo, dx_img);
            }
        }
        (dx, dw, db)
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [S],
) {
    let hw = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        drow.fill(S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = ox as isize + kx as isize - pad as isize;
                        *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { S::zero() };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<S: Scalar>(
    col: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    dx: &mut [S],
) {
    let hw = ho * wo;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &g) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = ox as isize + kx as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

impl<S: Scalar> BatchNorm2d<S> {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![S::one(); channels],
            beta: vec![S::zero(); channels],
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            num_batches_tracked: 0,
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        }
    }

    fn forward_running(&self, x: &[S], s: Shape) -> Vec<S> {
        let mut out = vec![S::zero(); x.len()];
        let hw = s.plane();
        let eps = S::from_f64(self.eps);
        for (xi, oi) in x.chunks_exact(s.per_item()).zip(out.chunks_exact_mut(s.per_item())) {
            for c in 0..s.c {
                let scale = self.gamma[c] / (self.running_var[c] + eps).sqrt();
                let shift = self.beta[c] - self.running_mean[c] * scale;
                for (o, &v) in oi[c * hw..(c + 1) * hw].iter_mut().zip(&xi[c * hw..(c + 1) * hw]) {
                    *o = v * scale + shift;
                }
            }
        }
        out
    }

    fn forward_batch(&self, x: &[S], s: Shape) -> (Vec<S>, Vec<S>, Vec<S>, BatchStats<S>) {
        let hw = s.plane();
        let m = (s.n * hw) as f64;
        let mut mean = vec![0.0f64; s.c];
        for xi in x.chunks_exact(s.per_item()) {
            for (c, acc) in mean.iter_mut().enumerate() {
                *acc += xi[c * hw..(c + 1) * hw].iter().map(|v| v.as_f64()).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0f64; s.c];
        for xi in x.chunks_exact(s.per_item()) {
            for c in 0..s.c {
                let mu = mean[c];
                var[c] += xi[c * hw..(c + 1) * hw]
                    .iter()
                    .map(|v| {
                        let d = v.as_f64() - mu;
                        d * d
                    })
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<S> = var.iter().map(|&v| S::from_f64(1.0 / libm::sqrt(v + self.eps))).collect();
        let mean_s: Vec<S> = mean.iter().map(|&v| S::from_f64(v)).collect();

        let mut xhat = vec![S::zero(); x.len()];
        let mut out = vec![S::zero(); x.len()];
        for ((xi, hi), oi) in x
            .chunks_exact(s.per_item())
            .zip(xhat.chunks_exact_mut(s.per_item()))
            .zip(out.chunks_exact_mut(s.per_item()))
        {
            for c in 0..s.c {
                let r = c * hw..(c + 1) * hw;
                for ((h, o), &v) in hi[r.clone()].iter_mut().zip(&mut oi[r.clone()]).zip(&xi[r]) {
                    *h = (v - mean_s[c]) * inv_std[c];
                    *o = self.gamma[c] * *h + self.beta[c];
                }
            }
        }
        let correction = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        let stats = BatchStats {
            mean: mean_s,
            var_unbiased: var.iter().map(|&v| S::from_f64(v * correction)).collect(),
        };
        (out, xhat, inv_std, stats)
    }

    fn backward_batch(&self, xhat: &[S], inv_std: &[S], dy: &[S], s: Shape) -> (Vec<S>, Vec<S>, Vec<S>) {
        let hw = s.plane();
        let m = (s.n * hw) as f64;
        let mut dgamma = vec![0.0f64; s.c];
        let mut dbeta = vec![0.0f64; s.c];
        for (hi, gi) in xhat.chunks_exact(s.per_item()).zip(dy.chunks_exact(s.per_item())) {
            for c in 0..s.c {
                let r = c * hw..(c + 1) * hw;
                for (&h, &g) in hi[r.clone()].iter().zip(&gi[r]) {
                    dgamma[c] += (g * h).as_f64();
                    dbeta[c] += g.as_f64();
                }
            }
        }
        let mut dx = vec![S::zero(); dy.len()];
        for ((hi, gi), di) in xhat
            .chunks_exact(s.per_item())
            .zip(dy.chunks_exact(s.per_item()))
            .zip(dx.chunks_exact_mut(s.per_item()))
        {
            for c in 0..s.c {
                let k = self.gamma[c] * inv_std[c];
                let mean_dy = S::from_f64(dbeta[c] / m);
                let mean_dyx = S::from_f64(dgamma[c] / m);
                let r = c * hw..(c + 1) * hw;
                for ((d, &h), &g) in di[r.clone()].iter_mut().zip(&hi[r.clone()]).zip(&gi[r]) {
                    *d = k * (g - mean_dy - h * mean_dyx);
                }
            }
        }
        (
            dx,
            dgamma.into_iter().map(S::from_f64).collect(),
            dbeta.into_iter().map(S::from_f64).collect(),
        )
    }

    /// Exponential update of the running statistics from one batch.
    pub fn absorb(&mut self, stats: &BatchStats<S>) {
        let mom = S::from_f64(self.momentum);
        let keep = S::one() - mom;
        for c in 0..self.channels {
            self.running_mean[c] = keep * self.running_mean[c] + mom * stats.mean[c];
            self.running_var[c] = keep * self.running_var[c] + mom * stats.var_unbiased[c];
        }
        self.num_batches_tracked += 1;
    }
}

fn max_pool<S: Scalar>(x: &[S], s: Shape, size: usize) -> (Vec<S>, Vec<u8>, Shape) {
    let out_shape = Shape::new(s.n, s.c, s.h / size, s.w / size);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    for plane in x.chunks_exact(s.plane()) {
        for oy in 0..out_shape.h {
            for ox in 0..out_shape.w {
                let mut best = plane[oy * size * s.w + ox * size];
                let mut best_at = 0u8;
                for dy in 0..size {
                    for dx in 0..size {
                        let v = plane[(oy * size + dy) * s.w + ox * size + dx];
                        if v > best {
                            best = v;
                            best_at = (dy * size + dx) as u8;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_at);
            }
        }
    }
    (out, argmax, out_shape)
}

fn max_pool_backward<S: Scalar>(dy: &[S], argmax: &[u8], s: Shape, size: usize) -> Vec<S> {
    let (ho, wo) = (s.h / size, s.w / size);
    let mut dx = vec![S::zero(); s.len()];
    for (p, plane) in dx.chunks_exact_mut(s.plane()).enumerate() {
        for oy in 0..ho {
            for ox in 0..wo {
                let o = p * ho * wo + oy * wo + ox;
                let a = argmax[o] as usize;
                let (dy_, dx_) = (a / size, a % size);
                plane[(oy * size + dy_) * s.w + ox * size + dx_] += dy[o];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], s: Shape, c: &Conv2d<f64>) -> Vec<f64> {
        let k = c.kernel;
        let mut out = vec![0.0; s.n * c.out_channels * s.h * s.w];
        for n in 0..s.n {
            for co in 0..c.out_channels {
                for y in 0..s.h {
                    for xx in 0..s.w {
                        let mut acc = c.bias[co];
                        for ci in 0..c.in_channels {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = y as isize + ky as isize - c.padding as isize;
                                    let ix = xx as isize + kx as isize - c.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                        continue;
                                    }
                                    acc += c.weight[((co * c.in_channels + ci) * k + ky) * k + kx]
                                        * x[((n * s.c + ci) * s.h + iy as usize) * s.w + ix as usize];
                                }
                            }
                        }
                        out[((n * c.out_channels + co) * s.h + y) * s.w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    fn small_conv() -> Conv2d<f64> {
        let (i, o, k) = (2, 3, 3);
        Conv2d {
            in_channels: i,
            out_channels: o,
            kernel: k,
            padding: 1,
            weight: (0..o * i * k * k).map(|j| ((j * 37 % 17) as f64 - 8.0) / 10.0).collect(),
            bias: vec![0.1, -0.2, 0.3],
        }
    }

    #[test]
    fn conv_matches_direct_loops() {
        let conv = small_conv();
        let s = Shape::new(2, 2, 5, 4);
        let x: Vec<f64> = (0..s.len()).map(|j| ((j * 13 % 11) as f64 - 5.0) / 7.0).collect();
        let (out, os) = conv.forward(&x, s);
        assert_eq!(os, Shape::new(2, 3, 5, 4));
        let want = naive_conv(&x, s, &conv);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_input_gradient_is_adjoint() {
        // <conv(x), g> is linear in x; its gradient must satisfy <dx, v> = <conv_nobias(v), g>.
        let mut conv = small_conv();
        conv.bias = vec![0.0; 3];
        let s = Shape::new(1, 2, 4, 4);
        let x: Vec<f64> = (0..s.len()).map(|j| (j as f64).sin()).collect();
        let g: Vec<f64> = (0..3 * 16).map(|j| (j as f64 * 0.7).cos()).collect();
        let (dx, _, _) = conv.backward(&x, &g, s, true);
        let v: Vec<f64> = (0..s.len()).map(|j| (j as f64 * 1.3).cos()).collect();
        let (cv, _) = conv.forward(&v, s);
        let lhs: f64 = dx.unwrap().iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = cv.iter().zip(&g).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn leaky_relu_slope_only_on_negatives() {
        assert_eq!(leaky_relu(2.0f64, 0.01), 2.0);
        assert_eq!(leaky_relu(0.0f64, 0.01), 0.0);
        assert_eq!(leaky_relu(-2.0f64, 0.01), -0.02);
    }

    #[test]
    fn max_pool_picks_first_maximum() {
        let s = Shape::new(1, 1, 2, 4);
        let x = [1.0f64, 3.0, 5.0, 5.0, 3.0, 2.0, 0.0, 5.0];
        let (out, arg, os) = max_pool(&x, s, 2);
        assert_eq!(os, Shape::new(1, 1, 1, 2));
        assert_eq!(out, vec![3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);
        let dx = max_pool_backward(&[1.0, 2.0], &arg, s, 2);
        assert_eq!(dx, vec![0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn batch_norm_normalizes_and_tracks() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let s = Shape::new(2, 1, 1, 2);
        let x = [1.0, 2.0, 3.0, 4.0];
        let (out, _, _, stats) = bn.forward_batch(&x, s);
        let mean: f64 = out.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((stats.mean[0] - 2.5).abs() < 1e-12);
        assert!((stats.var_unbiased[0] - 5.0 / 3.0).abs() < 1e-12);
        bn.absorb(&stats);
        assert!((bn.running_mean[0] - 0.25).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
        assert_eq!(bn.num_batches_tracked, 1);
    }
}
