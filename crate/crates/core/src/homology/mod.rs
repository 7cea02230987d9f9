//! Exact integer homology: Smith normal form, sparse reduction, cubical complexes.

pub mod chain;
pub mod cubical;
pub mod matrix;

pub use chain::{induced_map, Chain, ChainComplex, Coordinates, HomologyGroup, HomologyModel};
pub use cubical::{
    connecting_and_induced_maps, cubical_homology, relative_homology, CellKey, CubicalComplex,
    KeyChain, Lattice, PairModel, TripleMaps,
};
pub use matrix::{smith_normal_form, IntegerMatrix, SnfResult};
