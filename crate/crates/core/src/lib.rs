//! The φ⁴ lattice field theory as a trainable Markov random field.
//!
//! * [`lattice`]: square lattices and bipartite graphs.
//! * [`field`]: actions, coupling derivatives, clique potentials, locality.
//! * [`markov`]: randomized factorization and locality checks.
//! * [`quadrature`]: exact integrals on tiny graphs, used as an oracle.
//! * [`sampler`]: Metropolis chains, 1-D conditional draws, error analysis.
//! * [`trainers`]: variational and data-driven learning of the couplings.
//! * [`reweight`]: expectation values of shifted and complex actions.
//! * [`rbm`]: the φ⁴ neural network on a bipartite graph.
//! * [`io`]: configuration, checkpoints, datasets, CSV and PGM output.

pub mod error;
pub mod field;
pub mod io;
pub mod lattice;
pub mod markov;
pub mod quadrature;
pub mod sampler;
pub mod rbm;
pub mod reweight;
pub mod trainers;

pub use error::{Error, Result};
