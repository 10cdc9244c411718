//! Online multi-label stream classification with one self-organizing map per
//! class, adapted without supervision while labels never arrive.
//!
//! The offline phase ([`offline::train_offline`]) trains the maps and the
//! class/neuron statistics from a labeled prefix of the stream. The online
//! phase ([`online::OnlineState`]) classifies every later instance and adapts
//! the model with its own predictions. [`streams`] generates and reads
//! streams, and [`eval`] scores prediction logs over evaluation windows.

pub mod cli;
pub mod error;
pub mod eval;
mod fsutil;
pub mod offline;
pub mod online;
pub mod som;
pub mod stats;
pub mod streams;
pub mod types;

pub use error::{Error, Result};
pub use offline::{load_model, save_model, train_offline, Model, OfflineConfig};
pub use online::{process_stream, OnlineConfig, OnlineState, Prediction, Variant};
pub use types::{Instance, LabelSet};
