//! Day-ahead scheduling engine for a virtual power plant that aggregates
//! solar stations, EV charging stations, battery swap stations and
//! controllable loads on a radial distribution feeder.

// `!(x > 0.0)` is how the validators reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod der;
pub mod dispatch;
pub mod error;
pub mod network;
pub mod objective;
pub mod optimizer;
pub mod scenario;
pub mod stochastic;
pub mod time;

pub use error::{Error, Result};
pub use network::{Feeder, PowerFlowOptions, PowerFlowSolution};
pub use time::TimeGrid;
