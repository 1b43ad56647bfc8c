//! Network-science analysis of vehicular ad-hoc networks and a
//! discrete-event simulator for the UV-CAST broadcast protocol with
//! density-adaptive suppression.

pub mod analytic;
pub mod comm_graph;
pub mod error;
pub mod fitting;
pub mod metrics;
pub mod scenario;
pub mod sim;
pub mod uvcast;

pub use error::{Error, Result};
