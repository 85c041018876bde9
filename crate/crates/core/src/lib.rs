pub mod cape;
pub mod config;
pub mod dcl;
pub mod dcp;
pub mod diffcore;
pub mod encoders;
pub mod error;
pub mod evalsuite;
pub mod model;
pub mod pipeline;
pub mod prompting;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
