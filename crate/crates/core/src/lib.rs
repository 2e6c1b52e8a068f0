//! Co-evolving dynamic embeddings of healthcare entities.
//!
//! Patients, doctors, medications and rooms each carry a dynamic embedding
//! that is rewritten by a pair of affine+tanh update networks whenever a
//! patient interacts with one of the other entity kinds. Embeddings are
//! trained to reconstruct the counterpart of every interaction, to stay
//! temporally smooth, and to respect same-kind similarity graphs through a
//! Laplacian penalty.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: entity ids, interaction logs, patient features, static graphs
//!   and their CSV formats.
//! - [`static_embed`]: one-hot and Bourgain static embeddings, similarity
//!   graphs and Laplacians.
//! - [`dynamics`]: projection, update networks, decoders, and the per-event
//!   forward pass.
//! - [`loss`]: reconstruction, temporal and domain losses.
//! - [`training`]: temporal batching, analytic gradients, Adam, the
//!   pretrain/joint schedule and checkpoints.
//! - [`eval`]: downstream task datasets, logistic regression, cross
//!   validation, AUC/F1 and dispersion.
//! - [`synthgen`]: seeded synthetic hospitals with planted cohorts.

pub mod data;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod exec;
pub mod linalg;
pub mod loss;
pub mod static_embed;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
pub use exec::Exec;
