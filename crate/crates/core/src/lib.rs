//! Unsupervised embeddings of along-track sea-ice altimetry.
//!
//! The crate covers everything between raw segment records and the
//! 16-dimensional latent vectors: track ingestion and splitting, fixed-length
//! super-segment construction, LSTM and 1-D CNN autoencoders with hand-derived
//! gradients, mini-batch Adam training with early stopping, and the
//! reconstruction / cluster-compactness metrics used to compare schemes.
//!
//! UMAP lives in the sibling `icetopo-umap` crate.

pub mod analysis;
pub mod dd;
pub mod diff;
pub mod error;
pub mod networks;
pub mod supersegment;
pub mod synth;
pub mod track;
pub mod training;

pub use error::{Error, Result};

/// Number of per-segment features fed to the autoencoders.
pub const N_FEATURES: usize = 4;

/// Feature names in column order.
pub const FEATURE_NAMES: [&str; N_FEATURES] =
    ["height", "photon_rate", "background_rate", "n_pulses"];
