pub mod copydec;
pub mod data;
pub mod error;
pub mod multitask;
pub mod numcore;
pub mod scalar;
pub mod seq2seq;
pub mod train_eval;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = numcore::Tensor<f64>;
pub type ParamStore = numcore::ParamStore<f64>;
pub type Tape = numcore::Tape<f64>;
pub type ModelAssembly = multitask::ModelAssembly<f64>;
