//! Divide-and-conquer surrogate MCMC for fixed-Hamming-weight Boltzmann sampling.
//!
//! The pipeline partitions a QUBO interaction graph into small blocks
//! ([`partition`]), simulates a weight-preserving QAOA circuit on each block
//! ([`qaoa`]), fits a conditional autoregressive density model to the circuit
//! samples ([`made`]) and uses those models as block proposals inside a
//! Metropolis–Hastings chain over the weight-`K` feasible set ([`mcmc`]).
//! Kawasaki pair-swap kernels serve as classical baselines, and
//! [`analysis`] measures mixing through overlap autocorrelations.
//! [`featureselect`] builds the mutual-information QUBO for pixel-mask
//! selection on IDX image data.

pub mod analysis;
pub mod error;
pub mod featureselect;
pub mod ising;
pub mod made;
pub mod mcmc;
pub mod partition;
pub mod qaoa;
pub mod rng;
pub mod workflow;

pub use error::{Error, Result};
pub use ising::{QuboInstance, SpinConfig};

pub use made::ConditionalMadeModel;
pub use mcmc::{ChainTrace, KernelKind};
pub use partition::{Block, BlockId, PartitionPair};
