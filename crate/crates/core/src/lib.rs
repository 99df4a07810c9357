pub mod assorter;
pub mod config;
pub mod engine;
pub mod error;
pub mod io;
pub mod live;
pub mod model;
pub mod prng;
pub mod reconcile;
pub mod report;
pub mod retrieval;
pub mod risk;
pub mod sim;
