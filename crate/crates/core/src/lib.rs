//! Spatio-temporal kriging of cloud-cover fields and information-driven
//! coverage control for mobile irradiance sensors.

pub mod compare;
pub mod config;
pub mod coverage;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod grid;
pub mod io;
pub mod kriging;
pub mod sim;
pub mod tune;

pub use error::{Error, Result};
pub use grid::{GridMap, MissionGrid, Point};
