pub mod error;
pub mod lmi;
pub mod matcore;
pub mod plant;
pub mod riccati2;
pub mod synth_full;
pub mod synth_nested;

pub use error::{Error, Result};
pub use matcore::{Matrix, Partition};
