//! Mutual-kNN connectivity graph, balanced weights, λ and components.

pub mod components;
pub mod mknn;
pub mod spectral;

pub use components::{connected_components, Components, UnionFind};
pub use mknn::{
    build_graph, build_mknn, edge_weights, knn_lists, DegreeMean, DistanceSpace, Edge, EdgeKind,
    GraphConfig, MknnGraph,
};
pub use spectral::{compute_lambda, laplacian_spectral_norm, largest_eigenvalue, spectral_norm};
