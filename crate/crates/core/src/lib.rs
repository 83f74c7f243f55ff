pub mod error;
pub mod linalg;
pub mod lp;
pub mod grid;
pub mod measure;
pub mod characterize;
pub mod cli;
pub mod duality;
pub mod order;
pub mod projection;
pub mod transforms;

pub use error::{Error, Result};
