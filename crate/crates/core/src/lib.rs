pub mod ablation;
pub mod attention;
pub mod augment;
pub mod batch_attention;
pub mod config;
pub mod data;
pub mod dataset;
pub mod error;
pub mod inspect;
pub mod manifest;
pub mod metrics;
pub mod mla;
pub mod model;
pub mod optim;
pub mod pnm;
pub mod rng;
pub mod sampler;
pub mod train;

pub use error::{BtnError, Result};
