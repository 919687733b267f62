pub mod bank;
pub mod config;
pub mod corpus;
pub mod degrade;
pub mod diffuser;
pub mod diffusion;
mod error;
pub mod image;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod restorer;
pub mod styleops;
pub mod suite;
pub mod train;

pub use error::{CoreError, Result};
