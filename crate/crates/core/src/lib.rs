pub mod corpus;
pub mod error;
pub mod eval;
pub mod kv;
pub mod protocols;
pub mod subword;
pub mod synthetic;
pub mod tensor;
pub mod transformer;

pub use error::{Error, ErrorClass, Result};
