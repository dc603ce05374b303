pub mod codec;
pub mod community;
pub mod continual;
pub mod data;
pub mod distill;
pub mod error;
pub mod harness;
pub mod ksa;
pub mod learner;
pub mod node;
pub mod seed;

pub use error::{LencError, Result};
