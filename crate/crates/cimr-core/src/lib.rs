//! Core of the CIMR closed-loop iterative multimodal reasoning artifact.
//!
//! The crate is organized around the loop's data flow:
//!
//! - [`mapsim`] — a deterministic 8x8 gridworld for multi-modal action
//!   planning: scene generation, rendering to symbolic observations, action
//!   application, and goal evaluation.
//! - [`encoders`] — seeded hash-embedding encoders that map instructions,
//!   observations, and context state into fixed-dimension feature sequences.
//! - [`fusion`] — joint multi-head attention over the concatenated modality
//!   sequences, with an analytic backward pass and a finite-difference
//!   gradient checker.
//! - [`backends`] — the pluggable reasoning backend contract plus a
//!   calibrated scripted oracle that reproduces reported iteration dynamics.
//! - [`engine`] — context state, feedback parsing, confidence, and the
//!   episode loop tying everything together.
//!
//! Everything here is pure and deterministic: randomness enters only through
//! explicit [`rng::SplitMix64`] handles, values are immutable after
//! construction, and no IO happens in this crate. The crate is `no_std`
//! compatible (`alloc` required); disable the default `std` feature for
//! freestanding builds.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod backends;
pub mod encoders;
pub mod engine;
pub mod error;
pub mod fusion;
pub mod mapsim;
pub mod rng;

mod linalg;
