//! Distributed reachability analysis for networked linear systems.

pub mod cli;
pub mod consensus;
pub mod dle;
pub mod export;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod polytope;
pub mod reach;
pub mod scenario;
pub mod simnet;
