//! Perception-driven texture generation.
//!
//! A perceptual attribute regressor `H`, a conditional generator `G` and a
//! discriminator `D` trained jointly: `D` keeps generated textures realistic
//! while the frozen `H` steers them toward the requested attributes.

pub mod attributes;
pub mod augment;
pub mod checkpoint;
pub mod conv;
pub mod dataset;
pub mod error;
pub mod gan;
pub mod graph;
pub mod gradcheck;
pub mod init;
pub mod model;
pub mod optim;
pub mod perceptual;
pub mod probe;
pub mod spectrum;
pub mod tensor;
pub mod texture;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, NodeId, ParamSet};
pub use tensor::{Element, Tensor};
