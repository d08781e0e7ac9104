//! Label-free digital staining of neuron cultures from quantitative phase.
//!
//! The pipeline runs in stages: four-frame phase reconstruction ([`qpi`]),
//! preprocessing of phase/fluorescence pairs ([`prep`]), dataset handling and
//! a synthetic neuron phantom ([`data`]), a U-Net trained from scratch
//! ([`nn`], [`losses`], [`train`]), inference on time-lapse sequences
//! ([`infer`]), four-class segmentation ([`seg`]) and confluence / dry-mass
//! growth curves ([`analysis`]).

pub mod analysis;
pub mod error;
pub mod data;
pub mod imagecore;
pub mod infer;
pub mod losses;
pub mod nn;
pub mod prep;
pub mod qpi;
pub mod seg;
pub mod train;

mod fft;

pub use error::{PicsError, Result};
