//! Parallel recursive LSTM: token states are embedded independently, then
//! merged by a learned gated composition block over a fixed balanced prefix
//! schedule, giving logarithmic recurrent depth with linear total work.

pub mod bench;
pub mod error;
pub mod model;
pub mod scan;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
