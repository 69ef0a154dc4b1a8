//! Mining latent lifestyle patterns from geo-tagged check-in streams.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: check-ins, venues, user profiles and file ingestion.
//! * [`preprocess`]: tourist / low-activity filters and the radius-based
//!   check-in extension onto nearby venues.
//! * [`stats`]: visiting frequency, CCDF, box statistics and category share
//!   series.
//! * [`factorize`]: activity matrices and tensors, NMF (multiplicative
//!   updates) and CP decomposition by alternating least squares.
//! * [`lifestyle`]: matrix/tensor construction from a dataset, group
//!   preference averaging, time-range extraction and k-means clustering of
//!   preference vectors.
//! * [`synth`]: seeded generator with planted ground-truth factors.
//! * [`pipeline`]: end-to-end orchestration producing a report directory.

pub mod error;
pub mod factorize;
pub mod lifestyle;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod stats;
pub mod svg;
pub mod synth;

pub use error::{Error, Result};
pub use factorize::{
    cp_als, frobenius_norm, khatri_rao, minmax_normalize, mode_unfold, nmf, ActivityMatrix,
    ActivityTensor, CpConfig, CpInit, FactorModel, NmfConfig, TensorFactorModel,
};
pub use model::{CheckIn, Dataset, Gender, UserProfile, Venue, VenueRegistry};
