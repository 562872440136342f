//! Multi-label classification with a two-layer sparse Gaussian process
//! latent model and a mixture of noisy label experts.

pub mod baseline;
pub mod dataio;
pub mod error;
pub mod experts;
pub mod inference;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod predict;
pub mod sparse_gp;

pub use baseline::{fit_linear, score_linear, LinearBaselineModel};
pub use dataio::{Dataset, LabelMatrix};
pub use error::{EsmcError, Result};
pub use experts::{ExpertConfig, XiRule};
pub use inference::{train, TrainConfig, VariationalState};
pub use kernel::KernelConfig;
pub use metrics::EvalReport;
pub use model::HyperParams;
pub use predict::{load_model, save_model, score, score_prob, AnyModel, TrainedModel};
pub use sparse_gp::{PseudoSet, SparseGpLayer};
