//! Shifting-aware asymmetric hashing for reverse top-k maximum inner
//! product search, with an exact baseline and an evaluation harness.

pub mod baseline;
pub mod bench;
pub mod cone;
pub mod error;
pub mod index;
pub mod io;
pub mod sa_alsh;
pub mod srp;
pub mod transform;
pub mod vector;

pub use error::{Error, Result};
pub use index::{SahConfig, SahIndex};
pub use vector::{DenseVector, ResultSet, VectorSet};
