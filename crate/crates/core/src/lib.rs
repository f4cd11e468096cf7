//! Case/control copy-number association testing on array intensity data.

pub mod error;
pub mod hypothesis;
pub mod matrix;
pub mod merge;
pub mod mixture;
pub mod pipeline;
pub mod simulation;
pub mod stats;

pub use error::{CnvError, Result};
