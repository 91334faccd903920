//! Semi-supervised regression by discrete distribution estimation.
//!
//! Continuous targets are recast as a probability distribution over `L`
//! evenly spaced label buckets and decoded by expectation. A teacher network
//! sees weakly augmented inputs and labeled supervision only; a student sees
//! strongly augmented inputs, the ground truth and the teacher's
//! pseudo-labels, and is pulled toward the teacher's bucket distribution by a
//! decoupled alignment loss: a binary target-vs-rest KL term plus a
//! `beta`-weighted KL term over the renormalized non-target buckets,
//! attenuated by the teacher's spread. Inference uses the student alone.
//!
//! Module map:
//!
//! - [`dde`]: buckets, softmax, expectation decoding, target buckets.
//! - [`losses`]: MAE, KL, the decoupled alignment loss and their gradients.
//! - [`net`]: the feedforward backbone, reverse-mode gradients, momentum SGD.
//! - [`checkpoint`]: binary model checkpoints.
//! - [`augment`]: weak/strong masking and noise augmentation.
//! - [`data`]: synthetic benchmarks, delimited text I/O, labeled subsets.
//! - [`metrics`]: MAE, R², Spearman rank correlation.
//! - [`trainer`]: the joint teacher/student loop, baselines and ablations.
//! - [`experiment`]: runs, sweeps and result files behind the `drill` binary.

pub mod augment;
pub mod checkpoint;
pub mod data;
pub mod dde;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod trainer;

pub use dde::{BucketDistribution, BucketSpec};
pub use error::{Error, Result};
pub use net::Mlp;
pub use trainer::{TrainConfig, TrainedPair, Variant};
