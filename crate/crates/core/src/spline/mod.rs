//! B-spline edge functions and the KAN layers built from them.

mod edge;
mod grid;
mod layer;

pub use edge::{EdgeGrad, KanEdgeFunction};
pub use grid::{BasisEval, SplineGrid, MAX_DEGREE};
pub use layer::{Activation, DeepKan, KanCache, KanLayer};
