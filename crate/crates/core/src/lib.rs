//! Multi-party privacy-preserving learning simulator.
//!
//! Three collaboration schemes are implemented on top of a small dense
//! linear-algebra core and a from-scratch MLP:
//!
//! * federated averaging ([`fedavg`]),
//! * data collaboration analysis, where every party shares only a private
//!   low-dimensional projection of its data plus the projection of a common
//!   anchor set ([`dc`]),
//! * data collaboration with projection data, where each party additionally
//!   fits a projection on unlabeled public data ([`dc`]).
//!
//! [`harness`] wires them into reproducible experiments.

pub mod datasets;
pub mod dc;
pub mod error;
pub mod fedavg;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod mlp;

pub use error::{Error, Result};
pub use linalg::DenseMatrix;
