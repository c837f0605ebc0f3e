pub mod arch;
pub mod controller;
pub mod data;
pub mod engine;
pub mod error;
pub mod gradsuite;
pub mod loss;
pub mod nn;
pub mod reward;
pub mod schedule;
pub mod tensor;
pub mod util;

pub use error::{Error, Result};
pub use tensor::{gradient_check, Graph, Tensor, Var};
