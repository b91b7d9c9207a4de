pub mod cli;
pub mod config;
pub mod data;
pub mod diffcalc;
pub mod diffusion;
mod error;
pub mod eval;
pub mod experiments;
pub mod guidance;
pub mod logic;
pub mod oracle;
pub mod scorenet;

pub use error::{Error, Result};
