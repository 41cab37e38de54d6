//! Trains neural networks with binary activations and compiles every
//! binary-in/binary-out layer into optimized Boolean logic.
//!
//! The pipeline runs dataset loading, training with a straight-through
//! estimator, extraction of per-neuron threshold functions (complete truth
//! tables or incompletely specified functions collected from training data),
//! two-level cover minimization with don't-cares, and-inverter-graph
//! optimization, netlist/program emission, hybrid logic inference, and a
//! memory-access/MAC cost model.

pub mod bits;
pub mod cost;
pub mod dataset;
pub mod emit;
pub mod extract;
pub mod multilevel;
pub mod nn;
pub mod pipeline;
pub mod twolevel;
