pub mod error;
pub mod geometry;
pub mod sampling;

pub use error::{Error, Result};
pub mod mesh;
pub mod fv;
pub mod euler;
pub mod lift;
pub mod pod;
pub mod deim;
pub mod rom;
pub mod spd;
pub mod db;
pub mod kriging;
pub mod analysis;
pub mod ga;
pub mod config;
pub mod pipeline;
