pub mod ablation;
pub mod aggregation;
pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod nn;
pub mod reconstruction;
pub mod refinement;
pub mod train;

pub use error::{Result, SfaError};
pub use geometry::PointCloud;
pub use model::{Completer, CompletionOutput, Network, NetworkConfig};
