//! CIFAR-10 ingestion, per-channel normalisation, augmentation and batching.
//!
//! Images are kept as raw bytes (3×32×32, channel-planar) until a batch is
//! assembled, so a full training split costs 150 MB rather than 600 MB.

mod augment;
mod batch;
mod cifar;
mod stats;
mod synth;

pub use augment::{augment, augment_with, AugmentParams, CROP_POSITIONS, PAD};
pub use batch::{batches, plan_epoch, Batch, BatchOptions, Batches, EpochPlan};
pub use cifar::{
    load_cifar10, parse_cifar_batch, read_cifar_batch, write_cifar10_dir, write_cifar_batch, Dataset, Split,
    CHANNELS, IMAGE_BYTES, IMAGE_SIDE, NUM_CLASSES, PLANE, RECORD_BYTES, TEST_FILE, TRAIN_FILES,
};
pub use stats::{channel_stats, denormalize, normalize_into, NormStats};
pub use synth::synthetic;
