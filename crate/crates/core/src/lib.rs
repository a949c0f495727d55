//! Core of the sketch co-creation loop: guidance scheduling, stroke
//! rasterization, design-to-sketch scaffolding, the analogy prompt chain,
//! session state with its event log, and the external model backends.

pub mod analogy;
pub mod backends;
pub mod guidance;
pub mod imaging;
pub mod raster;
pub mod scaffold;
pub mod session;
