pub mod error;
pub mod grid;
pub mod hjb;
pub mod interp;
pub mod model;

pub use error::{Result, SolverError};
pub mod transport;
