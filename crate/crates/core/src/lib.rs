pub mod error;
pub mod geometry;
pub mod grid;
pub mod pipeline;
pub mod render;
pub mod sim;
pub mod slam;
pub mod surface;
pub mod train;

pub use error::{Error, Result};
