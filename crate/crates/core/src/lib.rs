pub mod attention;
pub mod autodiff;
pub mod backbone;
pub mod error;
pub mod field;
pub mod geometry;
pub mod md;
pub mod structure;
pub mod training;

pub use error::{Error, Result};
