pub mod cli;
pub mod cpar;
pub mod data_model;
pub mod detector;
pub mod fidelity;
pub mod seed;
pub mod transforms;
