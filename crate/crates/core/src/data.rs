//! MNIST ingestion: IDX parsing, 28×28 → 16×16 bilinear downsampling, unit-norm
//! scaling for amplitude encoding, and the 0-vs-1 train/valid/test splits.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use flate2::read::GzDecoder;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const MNIST_SIDE: usize = 28;
pub const TARGET_SIDE: usize = 16;
/// Filtered 0/1 counts of the official corpora.
pub const BINARY_TRAIN_SOURCE: usize = 12665;
pub const BINARY_TEST: usize = 2115;
pub const VALID_SIZE: usize = 2115;
const ZERO_IMAGE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad magic number: expected {expected}, found {found}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

impl From<IdxError> for Error {
    fn from(e: IdxError) -> Self {
        Error::Idx(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn be_u32(bytes: &[u8], at: usize) -> std::result::Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            expected: at + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> std::result::Result<(), IdxError> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> std::result::Result<IdxImages, IdxError> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..expected].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<Vec<u8>, IdxError> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

/// A matched image/label pair of IDX files.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

impl Corpus {
    pub fn from_bytes(
        image_bytes: &[u8],
        label_bytes: &[u8],
    ) -> std::result::Result<Self, IdxError> {
        let images = parse_idx_images(image_bytes)?;
        let labels = parse_idx_labels(label_bytes)?;
        if images.count != labels.len() {
            return Err(IdxError::CountMismatch {
                images: images.count,
                labels: labels.len(),
            });
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub pixels: Vec<f64>,
    pub label: u8,
}

/// Bilinear resize of a 28×28 byte image to 16×16 (half-pixel centers),
/// flattened row-major, scaled by 1/255 and L2-normalized.
pub fn preprocess(image: &[u8]) -> Vec<f64> {
    assert_eq!(
        image.len(),
        MNIST_SIDE * MNIST_SIDE,
        "expected a 28x28 image"
    );
    let scale = MNIST_SIDE as f64 / TARGET_SIDE as f64;
    let src = |r: usize, c: usize| f64::from(image[r * MNIST_SIDE + c]) / 255.0;
    let axis = |dst: usize| {
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (MNIST_SIDE - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(MNIST_SIDE - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(TARGET_SIDE * TARGET_SIDE);
    for r in 0..TARGET_SIDE {
        let (r0, r1, fr) = axis(r);
        for c in 0..TARGET_SIDE {
            let (c0, c1, fc) = axis(c);
            let top = src(r0, c0) * (1.0 - fc) + src(r0, c1) * fc;
            let bottom = src(r1, c0) * (1.0 - fc) + src(r1, c1) * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    normalize(&mut out);
    out
}

fn normalize(v: &mut [f64]) {
    let mut norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v.iter_mut().for_each(|x| *x = ZERO_IMAGE_FLOOR);
        norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    v.iter_mut().for_each(|x| *x /= norm);
}

/// Keeps only digits 0 and 1 and preprocesses them.
pub fn binary_samples(corpus: &Corpus) -> Vec<Sample> {
    (0..corpus.len())
        .into_par_iter()
        .filter(|&i| corpus.labels[i] < 2)
        .map(|i| Sample {
            pixels: preprocess(corpus.images.image(i)),
            label: corpus.labels[i],
        })
        .collect()
}

/// Train / validation / test partitions. Reading the test partition goes
/// through [`DataSplits::test`], which counts accesses.
#[derive(Debug, Serialize, Deserialize)]
pub struct DataSplits {
    train: Vec<Sample>,
    valid: Vec<Sample>,
    test: Vec<Sample>,
    #[serde(skip)]
    test_reads: AtomicUsize,
}

impl Clone for DataSplits {
    fn clone(&self) -> Self {
        Self::new(self.train.clone(), self.valid.clone(), self.test.clone())
    }
}

impl DataSplits {
    pub fn new(train: Vec<Sample>, valid: Vec<Sample>, test: Vec<Sample>) -> Self {
        Self {
            train,
            valid,
            test,
            test_reads: AtomicUsize::new(0),
        }
    }

    pub fn train(&self) -> &[Sample] {
        &self.train
    }

    pub fn valid(&self) -> &[Sample] {
        &self.valid
    }

    pub fn test(&self) -> &[Sample] {
        self.test_reads.fetch_add(1, Ordering::SeqCst);
        &self.test
    }

    pub fn test_reads(&self) -> usize {
        self.test_reads.load(Ordering::SeqCst)
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }

    /// Draws a class-balanced subset of each split (half zeros, half ones),
    /// used for the reduced-budget profile.
    pub fn balanced_subset<R: Rng>(
        &self,
        train: usize,
        valid: usize,
        test: usize,
        rng: &mut R,
    ) -> Result<DataSplits> {
        Ok(DataSplits::new(
            balanced(&self.train, train, rng)?,
            balanced(&self.valid, valid, rng)?,
            balanced(&self.test, test, rng)?,
        ))
    }
}

fn balanced<R: Rng>(split: &[Sample], size: usize, rng: &mut R) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(size);
    for (label, want) in [(0u8, size / 2), (1u8, size - size / 2)] {
        let pool: Vec<&Sample> = split.iter().filter(|s| s.label == label).collect();
        if pool.len() < want {
            return Err(Error::Arity {
                what: "balanced subset",
                expected: want,
                actual: pool.len(),
            });
        }
        out.extend(pool.choose_multiple(rng, want).map(|s| (*s).clone()));
    }
    out.shuffle(rng);
    Ok(out)
}

/// Expected sizes for split assembly.
#[derive(Debug, Clone, Copy)]
pub struct SplitPlan {
    pub train_source: usize,
    pub test: usize,
    pub valid: usize,
}

impl SplitPlan {
    pub const MNIST: SplitPlan = SplitPlan {
        train_source: BINARY_TRAIN_SOURCE,
        test: BINARY_TEST,
        valid: VALID_SIZE,
    };
}

/// Filters both corpora to digits 0/1, shuffles the training source with
/// `rng`, takes the last `plan.valid` as validation and the rest as training.
pub fn build_splits<R: Rng>(
    train_corpus: &Corpus,
    test_corpus: &Corpus,
    plan: SplitPlan,
    rng: &mut R,
) -> Result<DataSplits> {
    let mut source = binary_samples(train_corpus);
    let test = binary_samples(test_corpus);
    if source.len() != plan.train_source || test.len() != plan.test {
        return Err(Error::CorpusIntegrity(format!(
            "filtered 0/1 counts are {} train-source / {} test, expected {} / {}",
            source.len(),
            test.len(),
            plan.train_source,
            plan.test
        )));
    }
    if plan.valid >= source.len() {
        return Err(Error::CorpusIntegrity(format!(
            "validation size {} leaves no training data",
            plan.valid
        )));
    }
    source.shuffle(rng);
    let valid = source.split_off(source.len() - plan.valid);
    Ok(DataSplits::new(source, valid, test))
}

/// Sizes of a class-balanced reduced split set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Full-size splits from one seeded stream, optionally reduced to a
/// balanced subset drawn from the same stream.
pub fn prepare_splits(
    files: &MnistFiles,
    seed: u64,
    subset: Option<SubsetSizes>,
) -> Result<DataSplits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = build_splits(&files.train, &files.test, SplitPlan::MNIST, &mut rng)?;
    match subset {
        None => Ok(full),
        Some(s) => full.balanced_subset(s.train, s.valid, s.test, &mut rng),
    }
}

/// Uniform draw of `batch_size` distinct samples.
pub fn sample_batch<'a, R: Rng>(
    split: &'a [Sample],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<&'a Sample>> {
    if batch_size > split.len() {
        return Err(Error::Arity {
            what: "batch size",
            expected: split.len(),
            actual: batch_size,
        });
    }
    Ok(index::sample(rng, split.len(), batch_size)
        .into_iter()
        .map(|i| &split[i])
        .collect())
}

/// Locations and checksums of the four MNIST files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub files: Vec<FileDigest>,
    pub train_source: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

const FILE_STEMS: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

fn read_maybe_gz(dir: &Path, stem: &str) -> Result<(PathBuf, Vec<u8>)> {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    if plain.is_file() {
        let bytes = fs::read(&plain).map_err(|e| Error::io(&plain, e))?;
        return Ok((plain, bytes));
    }
    let file = fs::File::open(&gz).map_err(|e| Error::io(&gz, e))?;
    let mut bytes = Vec::new();
    GzDecoder::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(&gz, e))?;
    Ok((gz, bytes))
}

/// The raw MNIST corpora read from a directory holding the standard file
/// names, optionally gzip-compressed.
pub struct MnistFiles {
    pub train: Corpus,
    pub test: Corpus,
    pub digests: Vec<FileDigest>,
}

impl MnistFiles {
    pub fn load(dir: &Path) -> Result<Self> {
        let mut blobs = Vec::with_capacity(4);
        let mut digests = Vec::with_capacity(4);
        for stem in FILE_STEMS {
            let (path, bytes) = read_maybe_gz(dir, stem)?;
            digests.push(FileDigest {
                path,
                sha256: hex_digest(&bytes),
            });
            blobs.push(bytes);
        }
        Ok(Self {
            train: Corpus::from_bytes(&blobs[0], &blobs[1])?,
            test: Corpus::from_bytes(&blobs[2], &blobs[3])?,
            digests,
        })
    }

    pub fn manifest(&self, splits: &DataSplits, seed: u64) -> DataManifest {
        let (train, valid, test) = splits.sizes();
        DataManifest {
            files: self.digests.clone(),
            train_source: train + valid,
            train,
            valid,
            test,
            seed,
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
