pub mod bicm;
pub mod projection;
pub mod voters;
pub mod classify;
pub mod error;
pub mod ingest;
pub mod nec;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
