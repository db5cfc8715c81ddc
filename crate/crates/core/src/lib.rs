//! Markov jump process models of small-group conversation.
//!
//! The crate covers the full pipeline: a guarded turn-taking event catalog
//! ([`mjp`]), exact and slotted simulation ([`simulate`]), a Gaussian sensor
//! model ([`emission`]), a Gibbs sampler for latent turn paths and rates
//! ([`infer`]), badge-stream preprocessing ([`segment`]), conversational
//! event statistics ([`events`]), an additive hazard model ([`survival`]),
//! group-level statistics ([`analysis`]) and a 20-questions task simulator
//! ([`tasksim`]). File formats live in [`io`].

pub mod error;
pub mod rng;
pub mod segment;

pub mod analysis;
pub mod emission;
pub mod events;
pub mod infer;
pub mod io;
pub mod mjp;
pub mod simulate;
pub mod survival;
pub mod tasksim;

pub use error::{Error, Result};
pub use mjp::{EventCatalog, EventKind, EventSpec, RateVector, SpeakerId, StateVector};
