//! Diagnostics and the command-line surface: spectral probes over trained
//! adapters, parameter/FLOP accounting, a latency benchmark, and the
//! drivers behind every `ht` subcommand.

pub mod analysis;
pub mod driver;
pub mod flops;
pub mod reportio;
