//! Simulation harness around `pcmimo-core`: experiment configuration,
//! built-in presets, and deterministic Monte-Carlo frame-error sweeps
//! with CSV output. The `pcmimo` binary is a thin CLI over these modules.

pub mod config;
pub mod presets;
pub mod sweep;
