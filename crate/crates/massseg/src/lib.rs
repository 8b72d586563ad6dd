//! Structured binary segmentation on pixel lattices.
//!
//! The model is a conditional random field over a 4-connected lattice whose
//! energy combines weighted unary potentials (spatial prior, Gaussian mixture
//! likelihood ratio, deep-belief-network free-energy score) with Potts and
//! contrast pairwise potentials. Weights are learned with a cutting-plane
//! structured SVM; inference is exact via minimum s-t cut.
//!
//! Crate layout:
//! - [`lattice`]: image/mask/weight types, the energy function and its joint
//!   feature decomposition
//! - [`preprocess`]: ROI cropping, bicubic resizing, contrast enhancement
//! - [`potentials`]: prior and GMM unaries, pairwise potential primitives
//! - [`dbn`]: RBM layers, contrastive-divergence training, free-energy scoring
//! - [`maxflow`]: energy-to-cut reduction and augmenting-path max-flow
//! - [`ssvm`]: cutting-plane training with an exact small-scale QP solver
//! - [`model`]: trained-model assembly and potential-stack construction
//! - [`eval`]: Dice index, brute-force inference oracle, dataset evaluation
//! - [`cli`] and friends: command entry points, PGM/manifest/config/model I/O,
//!   synthetic data generation

pub mod cli;
pub mod config;
pub mod dbn;
pub mod eval;
pub mod lattice;
pub mod manifest;
pub mod maxflow;
pub mod model;
pub mod model_io;
pub mod pgm;
pub mod pipeline;
pub mod potentials;
pub mod preprocess;
pub mod ssvm;
pub mod synth;

pub use lattice::{LabelMask, ModelWeights, PotentialStack, RoiImage};
pub use model::{ModelConfig, TrainedModel};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("lattice size mismatch: {0}x{1} vs {2}x{3}")]
    LatticeMismatch(usize, usize, usize, usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("pairwise weight {0} is negative; exact min-cut inference requires submodular energies")]
    NegativePairwiseWeight(f64),
    #[error("lattice with {0} pixels is too large for exhaustive enumeration (limit {1})")]
    LatticeTooLarge(usize, usize),
    #[error("structured SVM reached the iteration cap of {0} before convergence")]
    IterationCap(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
