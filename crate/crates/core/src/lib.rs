//! Zero-knowledge proofs of neural-network watermark ownership.
//!
//! The crate embeds a signature in the mean activation of a hidden layer,
//! compiles the extraction procedure (feed-forward, mean, projection,
//! sigmoid, threshold, bit-error-rate check) into a rank-1 constraint system
//! over the BN254 scalar field, and proves satisfiability with either a
//! transparent checking backend or Groth16.

pub mod backend;
pub mod bench;
pub mod circuit;
pub mod field;
pub mod fixed;
pub mod gadgets;
pub mod nn;
pub mod pipeline;
pub mod r1cs;
