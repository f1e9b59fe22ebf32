pub mod data;
pub mod error;
pub mod eval;
pub(crate) mod kernels;
pub mod models;
pub mod noise;
pub mod optim;
pub mod rng;
pub mod runner;
pub mod tape;
pub mod tensor;
pub mod unsir;

pub use error::{Error, Result};
pub use optim::{sgd_step, Sgd, SgdRule};
pub use rng::SplitMix64;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
