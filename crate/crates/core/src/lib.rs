//! Learning soft-body dynamics from sequences of unordered point sets.
//!
//! The crate is organised bottom-up:
//!
//! * [`sim`] is a deterministic mass-spring soft-body simulator;
//! * [`datagen`] turns simulator runs into corpora and training windows;
//! * [`metrics`] holds the Chamfer family (loss kernel, position and shape error);
//! * [`model`] is the permutation-invariant feature extractor plus the
//!   channel-wise bidirectional LSTM predictor;
//! * [`learn`] does reverse-mode gradients, Adam and training;
//! * [`eval`] implements rollout evaluation, a rigid baseline and probes.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise.

pub mod datagen;
pub mod eval;
pub mod geom;
pub mod learn;
pub mod metrics;
pub mod model;
pub mod par;
pub mod sim;

pub use geom::{PointSet, Vec2};
pub use par::ExecMode;
