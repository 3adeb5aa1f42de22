//! Hybrid convolution and selective-scan encoder-decoder for binary skin
//! lesion segmentation, with its data pipeline, metrics and training loop.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod ctx;
pub mod data;
pub mod error;
pub mod init;
pub mod layers;
pub mod metrics;
pub mod module;
pub mod network;
pub mod pipeline;
pub mod scan_core;
pub mod training;

pub use ctx::{Ctx, Mode, TraceEvent};
pub use error::{Error, Result};
pub use init::Init;
pub use module::Module;
pub use skinmamba_tensor as tensor;
