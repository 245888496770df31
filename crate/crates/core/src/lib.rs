pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod trainer;
