//! Forced-oscillation source localization for grids with synchronous
//! generators and grid-following inverters: simulation, spectral detection
//! and sparse identification of the forcing terms.

pub mod lstsq;
pub mod measurement;
pub mod model;
pub mod simulator;
pub mod signal;
pub mod sindy;
pub mod desk;
pub mod pipeline;
