//! Causal mediation analysis with an identifiable conditional-prior
//! variational autoencoder.
//!
//! The crate is layered bottom-up:
//!
//! * [`numkit`]: random streams, dense algebra, normal CDF, PCA.
//! * [`gradnet`]: feed-forward networks, a reverse-mode tape and Adam.
//! * [`imavae`]: the generative model and its loss terms.
//! * [`trainer`]: minibatch Adam fitting with KL annealing.
//! * [`effects`]: Monte-Carlo ACME/ADE/ATE and latent diagnostics.
//! * [`datagen`]: synthetic, high-dimensional and zero-effect benchmarks.
//! * [`baselines`]: linear SEM and per-component mediation screens.
//! * [`experiment`]: ablation and benchmark harness used by the CLI.

pub mod baselines;
pub mod datagen;
pub mod effects;
pub mod error;
pub mod experiment;
pub mod gradnet;
pub mod imavae;
pub mod numkit;
pub mod trainer;

pub use error::{Error, Result};
