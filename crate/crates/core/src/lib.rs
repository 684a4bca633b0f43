//! Unsupervised outlier detection for small RGB galaxy images.
//!
//! Three detectors share one k-NN scoring backend: raw flattened pixels,
//! convolutional-autoencoder embeddings, and attention-augmented (CBAM)
//! autoencoder embeddings. The crate also carries everything needed to run
//! the full comparison end to end: catalog-threshold categorization, the
//! crop/downscale preprocessing chain with rotation augmentation, a
//! synthetic galaxy renderer for data-free runs, ROC/AUC evaluation, and a
//! seeded experiment driver that persists models, scores and reports.

pub mod attention;
pub mod cae;
pub mod data;
pub mod error;
pub mod experiment;
pub mod knn;
pub mod metrics;
pub mod model_io;
pub mod nn;
pub mod seeding;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ImageTensor, Real};
