//! Bit-exact SMT verification of quantized feedforward neural networks.
//!
//! The pipeline loads a network ([`model`]), lowers it to a fixed-point or
//! binary32 semantics ([`quantized`], [`fixedpoint`], [`lut`]), infers
//! per-neuron interval invariants ([`interval`]), encodes network and
//! property ([`property`]) into SMT-LIB2 ([`encoder`]), runs external solvers
//! ([`solver`]), and replays every counterexample through the bit-exact
//! interpreter ([`oracle`]) before reporting it.

pub mod cli;
pub mod encoder;
pub mod fixedpoint;
pub mod interval;
pub mod lut;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod property;
pub mod quantized;
pub mod solver;
pub mod verdict;
