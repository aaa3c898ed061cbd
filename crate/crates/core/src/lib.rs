pub mod archive;
pub mod cli;
pub mod cost;
pub mod error;
pub mod models;
pub mod poly;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
