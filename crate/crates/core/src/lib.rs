//! Permutation invariant training with auxiliary autoencoding targets.
//!
//! A separator with a fixed number of outputs `N` is trained on mixtures of
//! `M <= N` sources. Spare outputs are trained to reproduce the input
//! mixture under a skewed SI-SDR whose maximum is finite, which keeps the
//! easy autoencoding task from dominating the separation task. At inference
//! time outputs that resemble the mixture too closely are flagged invalid,
//! and the number of remaining outputs is the speaker count.
//!
//! Modules:
//!
//! - [`signal`]: SI-SDR, skewed SI-SDR, gradients, rescaling and mixing
//! - [`pit`]: pairwise loss matrices, permutation assignment, the combined
//!   objective and its gradient
//! - [`mixkit`]: seeded multi-speaker mixture synthesis and dataset output
//! - [`detector`]: invalid output detection, speaker counting and
//!   fault-tolerant output selection
//! - [`evalkit`]: SI-SDRi, confusion matrices and score histograms
//! - [`toytrain`]: a linear separator trained on the objective

pub mod detector;
pub mod error;
pub mod evalkit;
pub mod mixkit;
pub mod pit;
pub mod rng;
pub mod signal;
pub mod toytrain;
pub mod wav;

pub use error::{Error, Result};
pub use signal::Waveform;
