pub mod cli;
pub mod cmatrix;
pub mod error;
pub mod frequency;
pub mod generate;
pub mod network_model;
pub mod realizability;
pub mod performance;
pub mod simulate;
