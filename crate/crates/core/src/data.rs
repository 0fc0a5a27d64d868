//! CIFAR-10 records, batching and the single horizontal-flip augmentation.
//!
//! A record is 3073 bytes: one label byte, then 1024 red, 1024 green and
//! 1024 blue bytes, each plane row-major 32×32.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IMAGE_SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const IMAGE_BYTES: usize = CHANNELS * IMAGE_SIDE * IMAGE_SIDE;
pub const RECORD_BYTES: usize = IMAGE_BYTES + 1;
pub const NUM_CLASSES: usize = 10;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_names(self) -> &'static [&'static str] {
        match self {
            Split::Train => &TRAIN_FILES,
            Split::Test => core::slice::from_ref(&TEST_FILE),
        }
    }

    pub fn canonical_len(self) -> usize {
        match self {
            Split::Train => 50_000,
            Split::Test => 10_000,
        }
    }
}

/// Raw 8-bit images in canonical record order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    images: Vec<u8>,
    labels: Vec<u8>,
    split: Split,
}

impl Dataset {
    pub fn new(split: Split, images: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() * IMAGE_BYTES {
            return Err(Error::Data(format!(
                "{} pixel bytes for {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(pos) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Data(format!("label {} at record {pos}", labels[pos])));
        }
        Ok(Self { images, labels, split })
    }

    pub fn empty(split: Split) -> Self {
        Self { images: Vec::new(), labels: Vec::new(), split }
    }

    /// Appends the records of one binary batch file.
    pub fn append_records(&mut self, bytes: &[u8]) -> Result<()> {
        let (images, labels) = decode_records(bytes)?;
        self.images.extend_from_slice(&images);
        self.labels.extend_from_slice(&labels);
        Ok(())
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, index: usize) -> &[u8] {
        &self.images[index * IMAGE_BYTES..(index + 1) * IMAGE_BYTES]
    }

    /// Keeps the first `k` records.
    pub fn truncate(&mut self, k: usize) {
        if k < self.len() {
            self.labels.truncate(k);
            self.images.truncate(k * IMAGE_BYTES);
        }
    }

    pub fn truncated(&self, k: Option<usize>) -> Dataset {
        let mut d = self.clone();
        if let Some(k) = k {
            d.truncate(k);
        }
        d
    }

    pub fn class_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0usize; NUM_CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Normalized, unaugmented batch of the given records.
    pub fn gather<S: Scalar>(&self, indices: &[usize], step_id: u64) -> ImageBatch<S> {
        let mut pixels = Vec::with_capacity(indices.len() * IMAGE_BYTES);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend(self.image(i).iter().map(|&b| normalize_byte::<S>(b)));
            labels.push(self.labels[i]);
        }
        ImageBatch { pixels, labels, step_id }
    }

    pub fn gather_range<S: Scalar>(&self, start: usize, end: usize) -> ImageBatch<S> {
        let idx: Vec<usize> = (start..end).collect();
        self.gather(&idx, 0)
    }
}

/// Splits a binary batch file into pixel bytes and labels.
pub fn decode_records(bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Data(format!(
            "length {} is not a multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut images = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] as usize >= NUM_CLASSES {
            return Err(Error::Data(format!("label byte {} > 9 in record {i}", rec[0])));
        }
        labels.push(rec[0]);
        images.extend_from_slice(&rec[1..]);
    }
    Ok((images, labels))
}

#[inline]
pub fn normalize_byte<S: Scalar>(b: u8) -> S {
    S::from_f64(b as f64 / 255.0)
}

pub fn normalize<S: Scalar>(raw: &[u8]) -> Vec<S> {
    raw.iter().map(|&b| normalize_byte(b)).collect()
}

/// Normalized images, `B×3×32×32` row-major, with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch<S = f32> {
    pub pixels: Vec<S>,
    pub labels: Vec<u8>,
    pub step_id: u64,
}

impl<S: Scalar> ImageBatch<S> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[S] {
        &self.pixels[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.pixels[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]
    }
}

/// Mirrors an image left-right in place (column `c` ↔ `31 - c`).
pub fn mirror_image<S: Copy>(image: &mut [S]) {
    for row in image.chunks_exact_mut(IMAGE_SIDE) {
        row.reverse();
    }
}

/// Flips each image independently with probability `p`.
///
/// The returned batch is the one view shared by the student and all teachers
/// of a step.
pub fn random_hflip<S: Scalar>(mut batch: ImageBatch<S>, p: f64, rng_seed: u64) -> ImageBatch<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for i in 0..batch.len() {
        if rng.gen::<f64>() < p {
            mirror_image(batch.image_mut(i));
        }
    }
    batch
}

/// Seeded permutation of `0..len`, chunked; the last chunk may be short.
pub fn epoch_batch_indices(len: usize, batch_size: usize, rng_seed: u64) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Lazily materialized batches of one epoch.
pub struct EpochBatches<'a, S> {
    dataset: &'a Dataset,
    chunks: alloc::vec::IntoIter<Vec<usize>>,
    next_step: u64,
    _scalar: core::marker::PhantomData<S>,
}

impl<S: Scalar> Iterator for EpochBatches<'_, S> {
    type Item = ImageBatch<S>;

    fn next(&mut self) -> Option<Self::Item> {
        let idx = self.chunks.next()?;
        let b = self.dataset.gather(&idx, self.next_step);
        self.next_step += 1;
        Some(b)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.chunks.size_hint()
    }
}

impl<S: Scalar> ExactSizeIterator for EpochBatches<'_, S> {}

/// Batches of one epoch; `step_id` counts from `first_step`.
pub fn epoch_batches<S: Scalar>(
    dataset: &Dataset,
    batch_size: usize,
    rng_seed: u64,
    first_step: u64,
) -> Result<EpochBatches<'_, S>> {
    let chunks = epoch_batch_indices(dataset.len(), batch_size, rng_seed)?;
    Ok(EpochBatches {
        dataset,
        chunks: chunks.into_iter(),
        next_step: first_step,
        _scalar: core::marker::PhantomData,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toy_dataset(m: usize) -> Dataset {
        let mut bytes = Vec::new();
        for i in 0..m {
            bytes.push((i % 10) as u8);
            bytes.extend((0..IMAGE_BYTES).map(|j| ((i * 7 + j) % 256) as u8));
        }
        let mut d = Dataset::empty(Split::Test);
        d.append_records(&bytes).unwrap();
        d
    }

    #[test]
    fn normalize_values() {
        let v: Vec<f64> = normalize(&[0, 255, 51]);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 1.0);
        assert!((v[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn record_layout() {
        let mut rec = vec![3u8];
        rec.extend((0..IMAGE_BYTES).map(|j| (j / 1024) as u8 * 100));
        let (img, lab) = decode_records(&rec).unwrap();
        assert_eq!(lab, vec![3]);
        assert_eq!(img[0], 0);
        assert_eq!(img[1024], 100);
        assert_eq!(img[2048], 200);
    }

    #[test]
    fn bad_length_and_label() {
        assert!(decode_records(&[0u8; RECORD_BYTES + 1]).is_err());
        let mut rec = vec![10u8];
        rec.extend([0u8; IMAGE_BYTES]);
        assert!(matches!(decode_records(&rec), Err(Error::Data(_))));
    }

    #[test]
    fn chunking_keeps_short_tail() {
        let chunks = epoch_batch_indices(10, 4, 1).unwrap();
        let sizes: Vec<usize> = chunks.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let mut all: Vec<usize> = chunks.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(chunks, epoch_batch_indices(10, 4, 1).unwrap());
    }

    #[test]
    fn empty_dataset_rejected() {
        assert_eq!(epoch_batch_indices(0, 4, 1).unwrap_err(), Error::EmptyDataset);
    }

    #[test]
    fn epoch_iterator_numbers_steps() {
        let d = toy_dataset(10);
        let steps: Vec<u64> = epoch_batches::<f32>(&d, 4, 9, 100).unwrap().map(|b| b.step_id).collect();
        assert_eq!(steps, vec![100, 101, 102]);
    }

    #[test]
    fn flip_identity_involution_and_mirror() {
        let d = toy_dataset(6);
        let batch: ImageBatch<f32> = d.gather_range(0, 6);
        assert_eq!(random_hflip(batch.clone(), 0.0, 5), batch);

        let flipped = random_hflip(batch.clone(), 1.0, 5);
        for i in 0..batch.len() {
            for ch in 0..CHANNELS {
                for r in 0..IMAGE_SIDE {
                    for c in 0..IMAGE_SIDE {
                        let o = ch * 1024 + r * 32;
                        assert_eq!(flipped.image(i)[o + c], batch.image(i)[o + 31 - c]);
                    }
                }
            }
        }
        assert_eq!(random_hflip(flipped, 1.0, 77), batch);
    }

    #[test]
    fn half_probability_flips_some() {
        let d = toy_dataset(64);
        let batch: ImageBatch<f32> = d.gather_range(0, 64);
        let out = random_hflip(batch.clone(), 0.5, 3);
        let changed = (0..64).filter(|&i| out.image(i) != batch.image(i)).count();
        assert!(changed > 10 && changed < 54, "{changed}");
    }
}
