pub mod model;
pub mod integrate;
pub mod misfit;
pub mod sampling;
pub mod forward;
pub mod ce;
pub mod abc;
pub mod ic;
pub mod data;
pub mod report;
pub mod config;
pub mod pipeline;
pub mod cli;
