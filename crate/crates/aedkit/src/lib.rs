//! Audio event detection ablation kit.
//!
//! The crate bundles everything needed to run small-scale audio event
//! detection experiments end to end:
//!
//! - [`audio`]: WAV ingestion, windowed-sinc resampling, and log-mel
//!   feature extraction.
//! - [`augment`]: a deterministic on-the-fly augmentation pipeline with
//!   waveform transforms, union-label mixup, and negative data
//!   augmentation (NDA) on spectrograms.
//! - [`model`]: a configurable Xception-family depthwise-separable CNN
//!   with hand-written forward and backward passes.
//! - [`archive`] / [`surgery`]: a portable named-tensor weight format and
//!   the knowledge-transfer operations that rewrite it (input-channel
//!   averaging, head replacement, middle-flow deletion).
//! - [`training`]: adam, losses, metrics, the fold-rotation harness, and
//!   the ablation-grid runner.
//! - [`datasets`]: folded single-label and multi-label manifests plus a
//!   synthetic toy-corpus generator for desk-scale runs.
//! - [`config`]: the JSON experiment configuration binding it all.
//!
//! Everything that draws randomness takes an explicit [`rng::SeededRng`],
//! so identical configs and seeds reproduce identical results regardless
//! of worker parallelism.

pub mod archive;
pub mod audio;
#[cfg(test)]
pub(crate) mod testutil;
pub mod augment;
pub mod config;
pub mod datasets;
pub mod model;
pub mod rng;
pub mod surgery;
pub mod training;

pub use rng::SeededRng;
