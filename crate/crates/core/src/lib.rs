//! Dual transfer learning for event-camera end-task prediction, at desk scale.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`event`] — raw event streams: parsing, validation, windowing, the
//!   canonical text file format.
//! * [`repr`] — dense tensor embeddings of an event window (multi-channel,
//!   voxel grid, six-channel statistics).
//! * [`autodiff`] — shaped `f64` tensors with reverse-mode differentiation;
//!   every layer and loss below is built from these ops and is checkable
//!   against central differences.
//! * [`model`] — the shared encoder, end-task decoder, image-translation
//!   decoder and the frozen teacher network.
//! * [`loss`] — the training objectives: supervision, reconstruction,
//!   semantic consistency, affinity-graph feature transfer and prediction
//!   transfer, plus their weighted combination.
//! * [`sim`] — a deterministic synthetic scene that renders intensity
//!   frames, labels and depth, and simulates the event stream through a
//!   log-intensity contrast threshold.
//! * [`train`] — SGD training for teacher and student, evaluation metrics
//!   (MIoU, depth errors), the ablation runner and the checkpoint format.

pub mod autodiff;
pub mod event;
pub mod loss;
pub mod model;
pub mod repr;
pub mod rng;
pub mod sim;
pub mod train;
