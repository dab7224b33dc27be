//! Command-line front end: scenario files, gain synthesis, simulation runs,
//! verification reports, and CSV/JSON artifacts.

pub mod commands;
pub mod gains_io;
pub mod scenario;
pub mod trajectory;
