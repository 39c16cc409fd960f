//! Surface normal estimation for unorganized point clouds by graph-Laplacian
//! regularized least squares, solved with projected gradient descent.

pub mod error;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod kdtree;
pub mod optimizer;
pub mod pca;
pub mod segmentation;
pub mod sparse;
pub mod synthetic;
pub mod types;

pub use error::{Error, Result};
pub use graph::NeighborGraph;
pub use optimizer::{estimate, estimate_with_graph, Estimate, TraceRecord, WeightMatrix};
pub use types::{NormalField, OptimizerConfig, Point3, PointCloud, Weighting};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/pca.md")]
    mod pca {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/optimizer.md")]
    mod optimizer {}
    #[doc = include_str!("../../../book/src/segmentation.md")]
    mod segmentation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
