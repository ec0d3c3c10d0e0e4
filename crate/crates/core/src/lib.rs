//! Two-stream deep contrast network for salient object detection.

pub mod config;
pub mod crf;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod maps;
pub mod msfcn;
pub mod network;
pub mod par;
pub mod pipeline;
pub mod segpool;
pub mod superpix;
pub mod synth;
pub mod tensor;
pub mod train;

mod linalg;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use maps::{BinaryMask, RgbImage, SaliencyMap};
pub use network::{build_network, Network, Prediction};
