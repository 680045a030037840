use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const PLANE: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const IMAGE_BYTES: usize = CHANNELS * PLANE;
/// One label byte followed by the red, green and blue planes.
pub const RECORD_BYTES: usize = 1 + IMAGE_BYTES;
pub const NUM_CLASSES: usize = 10;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Labelled 3×32×32 byte images, stored back to back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    images: Vec<u8>,
    labels: Vec<u8>,
    split: Split,
}

impl Dataset {
    pub fn new(images: Vec<u8>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if images.len() != labels.len() * IMAGE_BYTES {
            return Err(Error::Data(format!(
                "{} image bytes do not match {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Data(format!("label {bad} out of range")));
        }
        Ok(Self { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn images(&self) -> &[u8] {
        &self.images
    }

    /// The first `n` records (all of them if `n >= len`).
    pub fn subset(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images[..n * IMAGE_BYTES].to_vec(),
            labels: self.labels[..n].to_vec(),
            split: self.split,
        }
    }

    fn extend(&mut self, images: Vec<u8>, labels: Vec<u8>) {
        self.images.extend(images);
        self.labels.extend(labels);
    }
}

/// Splits a batch file into `(images, labels)`.
pub fn parse_cifar_batch(bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "batch file of {} bytes is not a positive multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut images = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] as usize >= NUM_CLASSES {
            return Err(Error::Format(format!("record {i}: label byte {} > 9", rec[0])));
        }
        labels.push(rec[0]);
        images.extend_from_slice(&rec[1..]);
    }
    Ok((images, labels))
}

pub fn write_cifar_batch(images: &[u8], labels: &[u8]) -> Vec<u8> {
    assert_eq!(images.len(), labels.len() * IMAGE_BYTES);
    let mut out = Vec::with_capacity(labels.len() * RECORD_BYTES);
    for (label, image) in labels.iter().zip(images.chunks_exact(IMAGE_BYTES)) {
        out.push(*label);
        out.extend_from_slice(image);
    }
    out
}

pub fn read_cifar_batch(path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar_batch(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Loads `data_batch_1..5.bin` and `test_batch.bin` from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut train = Dataset::new(Vec::new(), Vec::new(), Split::Train)?;
    for name in TRAIN_FILES {
        let (images, labels) = read_cifar_batch(&dir.join(name))?;
        train.extend(images, labels);
    }
    let (images, labels) = read_cifar_batch(&dir.join(TEST_FILE))?;
    let test = Dataset::new(images, labels, Split::Test)?;
    Ok((train, test))
}

/// Writes datasets in the layout [`load_cifar10`] reads, spreading the
/// training records over the five batch files.
pub fn write_cifar10_dir(dir: &Path, train: &Dataset, test: &Dataset) -> Result<()> {
    if train.len() < TRAIN_FILES.len() || test.is_empty() {
        return Err(Error::Usage(format!(
            "need at least {} training and 1 test record",
            TRAIN_FILES.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let per_file = train.len().div_ceil(TRAIN_FILES.len());
    for (k, name) in TRAIN_FILES.iter().enumerate() {
        let lo = (k * per_file).min(train.len());
        let hi = ((k + 1) * per_file).min(train.len());
        let bytes = write_cifar_batch(&train.images[lo * IMAGE_BYTES..hi * IMAGE_BYTES], &train.labels[lo..hi]);
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(TEST_FILE);
    fs::write(&path, write_cifar_batch(&test.images, &test.labels)).map_err(|e| Error::io(&path, e))
}
