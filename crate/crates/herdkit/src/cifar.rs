//! CIFAR-10 binary files on disk.
//!
//! Each record is one label byte followed by 3072 pixel bytes: the red plane,
//! then green, then blue, each 32×32 row-major.

use std::fs;
use std::io::Read;
use std::path::Path;

use herdkit_core::data::{Dataset, Split, IMAGE_BYTES, NUM_CLASSES, RECORD_BYTES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{io_err, HerdError, Result};

/// Reads the split's canonical files from `dir`, preserving record order.
pub fn load_cifar10(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut ds = Dataset::empty(split);
    for name in split.file_names() {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        ds.append_records(&bytes).map_err(|e| match e {
            herdkit_core::Error::Data(m) => herdkit_core::Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })?;
    }
    Ok(ds)
}

/// Lower-case hex SHA-256 of a file, for checking a local archive against a
/// published digest.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut f = fs::File::open(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Encodes records in the binary layout.
pub fn encode_records(images: &[u8], labels: &[u8]) -> Result<Vec<u8>> {
    if images.len() != labels.len() * IMAGE_BYTES {
        return Err(HerdError::Usage(format!(
            "{} image bytes for {} labels",
            images.len(),
            labels.len()
        )));
    }
    let mut out = Vec::with_capacity(labels.len() * RECORD_BYTES);
    for (i, &l) in labels.iter().enumerate() {
        out.push(l);
        out.extend_from_slice(&images[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]);
    }
    Ok(out)
}

/// Writes a stand-in dataset in the canonical file layout: `per_train_file`
/// records in each training file and `test_len` in the test file. Labels
/// cycle through the classes; each class has its own mean colour plus noise,
/// so probes have something to find.
pub fn write_synthetic_cifar(dir: impl AsRef<Path>, per_train_file: usize, test_len: usize, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut file = |name: &str, n: usize| -> Result<()> {
        let labels: Vec<u8> = (0..n).map(|i| (i % NUM_CLASSES) as u8).collect();
        let mut images = Vec::with_capacity(n * IMAGE_BYTES);
        for &l in &labels {
            for c in 0..3usize {
                let base = 40 + ((l as usize * (c + 3) * 37) % 170) as i32;
                for _ in 0..IMAGE_BYTES / 3 {
                    images.push((base + rng.gen_range(-40..=40)).clamp(0, 255) as u8);
                }
            }
        }
        let path = dir.join(name);
        fs::write(&path, encode_records(&images, &labels)?).map_err(io_err(&path))
    };
    for name in Split::Train.file_names() {
        file(name, per_train_file)?;
    }
    for name in Split::Test.file_names() {
        file(name, test_len)?;
    }
    Ok(())
}
