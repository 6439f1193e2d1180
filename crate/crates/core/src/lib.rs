//! Core of the ILLM codec: the hyperprior autoencoder, the VQ labeler, the
//! discriminators and losses, training loops and evaluation metrics.

pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod image;
pub mod labeler;
pub mod losses;
pub mod nn;
pub mod runner;
pub mod training;

pub use error::{CoreError, Result};
