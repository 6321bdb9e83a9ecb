pub mod coevolution;
pub mod config;
pub mod data;
pub mod grid;
pub mod losses;
pub mod nn;
pub mod orchestrator;
pub mod run;
pub mod par;
pub mod transport;
