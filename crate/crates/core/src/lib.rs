//! Cucker-Smale particle systems, their mean-field (Vlasov) limit solved by
//! characteristics on sample clouds, discrete optimal transport, and the
//! convergence-bound harness tying them together.

pub mod bounds;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod meanfield;
pub mod transport;

pub use error::{Error, Result};
pub use exec::Exec;
