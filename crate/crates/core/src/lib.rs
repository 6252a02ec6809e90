//! Free-space optical link simulation: atmospheric loss models, link budget,
//! time-correlated fading traces, a PAM-4 modem, quadrant-detector tracking
//! and spatial selective filtering, composed into a seeded end-to-end
//! channel emulator.

pub mod atmosphere;
pub mod channel_trace;
pub mod cli;
pub mod config;
pub mod error;
pub mod linkbudget;
pub mod modem;
pub mod numeric;
pub mod pat;
pub mod pipeline;
pub mod spatial_filter;

pub use error::{FsoError, Result};
