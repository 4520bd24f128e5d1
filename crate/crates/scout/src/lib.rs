//! File formats, evaluation reports, the `scout` CLI and the JSON service
//! on top of [`scout_core`].

pub use scout_core as core;

pub mod checkpoint;
pub mod cli;
pub mod dataset_dir;
pub mod error;
pub mod eval;
pub mod explain;
pub mod fsutil;
pub mod heatmap;
pub mod quiz;
pub mod service;
pub mod tensor_io;
