pub mod arch;
pub mod counterfactual;
pub mod error;
pub mod explain;
pub mod model;
pub mod neuroview;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::Classifier;
pub use neuroview::{NeuroViewConfig, NeuroViewModel};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type NeuroViewModel32 = NeuroViewModel<f32>;
pub type NeuroViewModel64 = NeuroViewModel<f64>;
