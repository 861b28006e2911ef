//! Desk-scale tools for quantitative rectifiability on weighted point clouds.

pub mod cli;
pub mod grassmann;
pub mod experiments;
pub mod heavytrees;
pub mod pointset;
pub mod stopping;
pub mod width;
pub mod beta;
pub mod cones;
pub mod cubes;
mod spatial;
