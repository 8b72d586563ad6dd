//! Trained-model assembly: the fitted sub-models plus the learned weight
//! vector, and the per-image potential-stack construction they feed.

use crate::dbn::{dbn_unary, DbnModel};
use crate::lattice::{LabelMask, ModelWeights, PotentialStack, RoiImage};
use crate::maxflow::infer;
use crate::potentials::{
    contrast_coefficients, gmm_unary, potts_coefficients, prior_unary, GmmModel, PriorModel,
};
use crate::preprocess::enhance_contrast;
use crate::{Error, Result};

/// Full model configuration. Every training knob lives here so that a seed
/// plus a config reproduces a model bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Canonical square ROI side in pixels.
    pub roi_side: usize,
    /// Crop side as a multiple of the annotated scale.
    pub roi_side_factor: f64,
    pub use_prior: bool,
    pub use_gmm: bool,
    pub use_dbn: bool,
    /// DBN input patch sides (odd), one DBN per entry.
    pub patch_sizes: Vec<usize>,
    pub use_potts: bool,
    pub use_contrast: bool,
    /// DBN hidden-layer widths; the last entry is the top layer.
    pub layers: Vec<usize>,
    pub gmm_components: usize,
    pub ssvm_c: f64,
    pub ssvm_tol: f64,
    pub ssvm_max_iters: usize,
    pub clamp_epsilon: f64,
    /// Gamma of the contrast-enhancement stage.
    pub gamma: f64,
    pub seed: u64,
    /// Whether contrast enhancement runs before training and inference.
    pub preprocess: bool,
    pub dbn_epochs: usize,
    pub dbn_learning_rate: f64,
    pub dbn_batch: usize,
    pub dbn_cd_steps: usize,
    /// Upper bound on the number of patches sampled per DBN.
    pub dbn_patch_cap: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            roi_side: 40,
            roi_side_factor: 2.0,
            use_prior: true,
            use_gmm: true,
            use_dbn: true,
            patch_sizes: vec![3, 5],
            use_potts: true,
            use_contrast: true,
            layers: vec![50, 50, 50],
            gmm_components: 5,
            ssvm_c: crate::ssvm::DEFAULT_C,
            ssvm_tol: crate::ssvm::DEFAULT_TOLERANCE,
            ssvm_max_iters: crate::ssvm::DEFAULT_MAX_ITERATIONS,
            clamp_epsilon: crate::potentials::DEFAULT_CLAMP_EPSILON,
            gamma: 0.5,
            seed: 0,
            preprocess: true,
            dbn_epochs: 100,
            dbn_learning_rate: 0.05,
            dbn_batch: 32,
            dbn_cd_steps: 1,
            dbn_patch_cap: 16000,
        }
    }
}

impl ModelConfig {
    /// Number of enabled unary potentials (K).
    pub fn unary_count(&self) -> usize {
        self.use_prior as usize
            + self.use_gmm as usize
            + if self.use_dbn { self.patch_sizes.len() } else { 0 }
    }

    /// Number of enabled pairwise potentials (L).
    pub fn pairwise_count(&self) -> usize {
        self.use_potts as usize + self.use_contrast as usize
    }

    /// Names of the enabled unary potentials in canonical stack order.
    pub fn unary_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.use_prior {
            names.push("prior".to_string());
        }
        if self.use_gmm {
            names.push("gmm".to_string());
        }
        if self.use_dbn {
            for s in &self.patch_sizes {
                names.push(format!("dbn{s}"));
            }
        }
        names
    }

    pub fn pairwise_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.use_potts {
            names.push("potts".to_string());
        }
        if self.use_contrast {
            names.push("contrast".to_string());
        }
        names
    }

    /// Canonical one-line summary, stable across runs.
    pub fn fingerprint(&self) -> String {
        format!(
            "roi_side={};roi_side_factor={};unaries={};pairwise={};patch_sizes={};layers={};\
             gmm_components={};ssvm_C={};ssvm_tol={};ssvm_max_iters={};clamp_epsilon={};gamma={};\
             seed={};preprocess={};dbn_epochs={};dbn_learning_rate={};dbn_batch={};dbn_cd_steps={};\
             dbn_patch_cap={}",
            self.roi_side,
            self.roi_side_factor,
            self.unary_names().join(","),
            self.pairwise_names().join(","),
            self.patch_sizes
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
            self.layers
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
            self.gmm_components,
            self.ssvm_c,
            self.ssvm_tol,
            self.ssvm_max_iters,
            self.clamp_epsilon,
            self.gamma,
            self.seed,
            self.preprocess as u8,
            self.dbn_epochs,
            self.dbn_learning_rate,
            self.dbn_batch,
            self.dbn_cd_steps,
            self.dbn_patch_cap,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.roi_side == 0 {
            return Err(Error::InvalidValue("roi_side must be >= 1".into()));
        }
        if !(self.roi_side_factor.is_finite() && self.roi_side_factor > 0.0) {
            return Err(Error::InvalidValue("roi_side_factor must be > 0".into()));
        }
        if self.unary_count() == 0 {
            return Err(Error::InvalidValue(
                "at least one unary potential must be enabled".into(),
            ));
        }
        if self.use_dbn {
            if self.patch_sizes.is_empty() {
                return Err(Error::InvalidValue(
                    "use_dbn requires at least one patch size".into(),
                ));
            }
            for s in &self.patch_sizes {
                if s % 2 == 0 {
                    return Err(Error::InvalidValue(format!("patch size {s} must be odd")));
                }
            }
            if self.layers.is_empty() {
                return Err(Error::InvalidValue("layers must not be empty".into()));
            }
        }
        if !(self.clamp_epsilon > 0.0 && self.clamp_epsilon < 0.5) {
            return Err(Error::InvalidValue(
                "clamp_epsilon must lie in (0, 0.5)".into(),
            ));
        }
        if self.gmm_components == 0 {
            return Err(Error::InvalidValue("gmm_components must be >= 1".into()));
        }
        Ok(())
    }
}

/// One dataset entry at canonical ROI resolution.
#[derive(Debug, Clone)]
pub struct RoiSample {
    pub name: String,
    pub image: RoiImage,
    pub mask: LabelMask,
}

/// Fitted sub-models plus the learned energy weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub prior: Option<PriorModel>,
    pub gmm: Option<GmmModel>,
    /// One DBN per configured patch size, same order.
    pub dbns: Vec<DbnModel>,
    pub weights: ModelWeights,
}

impl TrainedModel {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.config.use_prior != self.prior.is_some()
            || self.config.use_gmm != self.gmm.is_some()
            || (self.config.use_dbn && self.dbns.len() != self.config.patch_sizes.len())
            || (!self.config.use_dbn && !self.dbns.is_empty())
        {
            return Err(Error::InvalidValue(
                "trained sub-models do not match the configuration".into(),
            ));
        }
        if self.weights.unary().len() != self.config.unary_count()
            || self.weights.pairwise().len() != self.config.pairwise_count()
        {
            return Err(Error::DimensionMismatch(format!(
                "weight vector {}+{} vs configured {}+{}",
                self.weights.unary().len(),
                self.weights.pairwise().len(),
                self.config.unary_count(),
                self.config.pairwise_count()
            )));
        }
        Ok(())
    }

    /// Applies the configured contrast enhancement (identity when disabled).
    pub fn preprocess(&self, roi: &RoiImage) -> Result<RoiImage> {
        if self.config.preprocess {
            enhance_contrast(roi, self.config.gamma)
        } else {
            Ok(roi.clone())
        }
    }

    /// Segments one raw ROI: contrast enhancement, potential evaluation,
    /// exact min-cut inference. Returns the labeling and the wall-clock
    /// seconds spent in those three stages.
    pub fn segment(&self, roi: &RoiImage) -> Result<(LabelMask, f64)> {
        let start = std::time::Instant::now();
        let prepared = self.preprocess(roi)?;
        let stack = build_potential_stack(&prepared, self)?;
        let mask = infer(&stack, &self.weights)?;
        let seconds = start.elapsed().as_secs_f64().max(1e-9);
        Ok((mask, seconds))
    }
}

/// Evaluates every enabled unary model at both labels of every pixel and
/// every pairwise coefficient at every 4-neighbor edge. Deterministic given
/// the model and the (already preprocessed) image.
pub fn build_potential_stack(img: &RoiImage, model: &TrainedModel) -> Result<PotentialStack> {
    if img.width() != model.config.roi_side || img.height() != model.config.roi_side {
        return Err(Error::LatticeMismatch(
            img.width(),
            img.height(),
            model.config.roi_side,
            model.config.roi_side,
        ));
    }
    let mut unary = Vec::with_capacity(model.config.unary_count());
    if let Some(prior) = &model.prior {
        if prior.width() != img.width() || prior.height() != img.height() {
            return Err(Error::LatticeMismatch(
                prior.width(),
                prior.height(),
                img.width(),
                img.height(),
            ));
        }
        unary.push(prior_unary(prior));
    }
    if let Some(gmm) = &model.gmm {
        unary.push(gmm_unary(gmm, img));
    }
    for dbn in &model.dbns {
        unary.push(dbn_unary(dbn, img)?);
    }
    let mut pairwise = Vec::with_capacity(model.config.pairwise_count());
    if model.config.use_potts {
        pairwise.push(potts_coefficients(img.width(), img.height()));
    }
    if model.config.use_contrast {
        pairwise.push(contrast_coefficients(img));
    }
    PotentialStack::new(img.width(), img.height(), unary, pairwise)
}
