//! Dynamic multimodal network for segmenting the image region a short
//! natural-language query refers to, with its own reverse-mode autodiff core.

pub mod bench;
pub mod data;
pub mod error;
pub mod language;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod pnm;
pub mod recurrent;
pub mod synthesis;
pub mod train;
pub mod upsample;
pub mod visual;

pub use error::{DmnError, Result};
pub use language::Vocabulary;
pub use mask::Mask;
pub use metrics::EvalReport;
pub use model::{Ablation, Dmn, DmnConfig, Stage};
pub use numeric::{Checkpoint, Graph, ParamStore, Tensor, Var};
