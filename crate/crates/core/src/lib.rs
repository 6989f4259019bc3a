//! Data-driven dissipativity and compositional stability certification for
//! interconnected discrete-time LTI systems.
//!
//! The pipeline runs per subsystem from input/output data: richness tests
//! ([`signals`]), a data-based realization reduced to minimal form
//! ([`realization`]), QSR-dissipativity LMIs ([`certify`]), and a
//! network-level combination of channel-wise passivity indices
//! ([`network`]). [`microgrid`] generates the DC microgrid case study.

pub mod certify;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lti;
pub mod microgrid;
pub mod network;
pub mod realization;
pub mod signals;

pub use error::{Error, Result};
