//! Simulation and analysis toolkit for rail-optimized GPU clusters whose
//! scale-out rails use optical circuit switches.

pub mod model;
pub mod workload;
pub mod windows;
pub mod control;
pub mod fabric;
pub mod econ;
pub mod cli;
