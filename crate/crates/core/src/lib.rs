pub mod autodiff;
pub mod checks;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod masks;
pub mod metrics;
pub mod objective;
pub mod oracle;
pub mod report;
pub mod scan;
pub mod scan_loss;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod voxel;

pub use error::{Error, Result};
pub use tensor::Tensor;
