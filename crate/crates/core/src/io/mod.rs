//! Dataset files and CSV reports.

pub mod dataset;
pub mod reports;

pub use dataset::{load_dataset, save_dataset};
