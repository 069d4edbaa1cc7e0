//! Density estimation of moving targets from imperfect mobile sensors.
//!
//! The crate is organised around the pipeline:
//!
//! * [`world_graph`] – traversable world, A* pathfinding.
//! * [`mobility`] – fixed-speed random waypoint movement on the graph.
//! * [`sensing`] – probabilistic sensing events and density accumulation.
//! * [`theory`] – projection, normalized error metric, closed-form asymptotic
//!   error and its bounds.
//! * [`experiment`] – seeded runs, parameter sweeps and theory comparison.
//! * [`calibration`] – detector evaluation (IoU matching, PR curves) and
//!   least-squares fitting of the sensing parameters.
//! * [`aggregation`] – nearest street-segment assignment of geotagged counts.

pub mod aggregation;
pub mod calibration;
pub mod error;
pub mod experiment;
pub mod mobility;
pub mod rng;
pub mod sensing;
pub mod theory;
pub mod world_graph;

pub use error::{Error, Result};
