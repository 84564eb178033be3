//! Integration of the piecewise-smooth system.
//!
//! [`integrate_arc`] follows one subsystem up to an event, optionally with
//! the variational quantities needed for map derivatives.
//! [`flow_filippov`] concatenates arcs into Filippov solutions.

mod arc;
pub mod dopri;
mod filippov;

pub use arc::{
    integrate_arc, replay_to_level, Arc, ArcOptions, Crossing, Direction, Layout, Mode, Regime, Stop, Terminal,
};
pub use filippov::{flow_filippov, flow_filippov_with, Event, EventKind, FilippovOptions, Trajectory};
