//! Bipartite coset graphs over PSL_2(F_p).
//!
//! The library builds pairs of order-d cyclic subgroups H1 = H and
//! H2 = u(x) H u(-x) inside PSL_2(F_p) (H cut from the non-split torus),
//! certifies that they intersect trivially, and studies the bipartite graph
//! on G/H1 and G/H2 whose edges are intersecting cosets: exact girth against
//! an algebraic lower bound, spectral gaps of the graph and of two auxiliary
//! Cayley graphs, and random-walk flattening and non-concentration
//! diagnostics. Valid conjugation parameters x are found either by direct
//! checking or by a trace-polynomial sieve.

pub mod cosetgraph;
pub mod error;
pub mod field;
pub mod group;
pub mod pipeline;
pub mod spectral;
pub mod subgroups;
pub mod walk;

pub use error::{Error, Result};
