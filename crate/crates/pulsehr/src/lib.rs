//! Heart-rate estimation from wrist PPG.
//!
//! The pipeline has two stages. Stage one turns a raw PPG waveform into a
//! 1 Hz heart-rate series through peak detection, outlier rejection and
//! smoothing ([`sigproc`]). Stage two feeds lagged values of that series into
//! a small regression model to predict the true heart rate ([`models`],
//! [`tuning`]). [`synth`] generates labeled recordings for experiments,
//! [`dataset`] builds feature matrices, [`eval`] scores predictions, and
//! [`io`] reads and writes the CSV interchange formats.

pub mod cli;
pub mod dataset;
pub mod eval;
pub mod io;
pub mod models;
pub mod signal;
pub mod sigproc;
pub mod synth;
pub mod tuning;
