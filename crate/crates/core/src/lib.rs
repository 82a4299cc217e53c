//! Collaborative two-modality object detection at desk scale.
//!
//! Two single-shot detectors, one per sensor modality, train side by side:
//! each network fits its own detection loss while a temperature-softened KL
//! term pulls its class distribution toward its peer's. Optional auxiliary
//! decoders reconstruct the input image from intermediate features, either
//! from the network's own encoder or cross-wired from the peer's.
//!
//! The crate is self-contained: a reverse-mode autodiff tensor engine
//! ([`tensor`]), transformer encoder and anchor-based detection head
//! ([`nn`]), all training objectives ([`losses`]), a deterministic paired
//! scene generator ([`data`]), the training loop for every variant
//! ([`train`]), detection metrics ([`eval`]), and a corruption/attack
//! robustness bench ([`robust`]).

pub mod augment;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geom;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod robust;
pub mod tensor;
pub mod train;

pub use error::{MmcError, Result};
pub use tensor::{Elem, Tensor};
