pub mod bayes;
pub mod error;
pub mod eval;
pub mod graph;
pub mod links;
pub mod pipeline;
pub mod poincare;
pub mod recommend;
pub mod special;

pub use error::{Error, Result};
