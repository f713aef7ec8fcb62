pub mod bnb;
pub mod conic;
pub mod error;
pub mod generators;
pub mod linalg;
pub mod model;
pub mod qp;
pub mod reformulate;
pub mod report;

pub use error::{Error, Result};
