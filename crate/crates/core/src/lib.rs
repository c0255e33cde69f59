pub mod config;
pub mod encoder;
pub mod error;
pub mod fewshot;
pub mod gecl;
pub mod gscl;
pub mod hewe;
pub mod metrics;
pub mod pipeline;
pub mod pretrain;
pub mod run;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
