pub mod corpus;
pub mod corruption;
pub mod decoding;
pub mod error;
pub mod gradcheck;
pub mod init_map;
pub mod metrics;
pub mod model;
pub mod recipe;
pub mod tensor;
pub mod tokenizer;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
pub use model::{Example, ModelConfig, Seq2SeqModel};
pub use tensor::{Graph, Scalar, Tensor, Var};
