//! Unary and pairwise potential functions.
//!
//! Unaries are negative log-probabilities of the mass label: a spatial
//! prior (per-pixel empirical frequency over the training masks) and a
//! two-class Gaussian-mixture likelihood model over pixel intensity fitted
//! by EM. Pairwise terms penalize label transitions, either uniformly
//! (Potts) or attenuated by intensity contrast.

use crate::lattice::{edge_count, lattice_edges, LabelMask, RoiImage, UnaryMap, MASS};
use crate::{Error, Result};
use rand::Rng;

/// Probabilities are clamped to `[eps, 1 - eps]` before taking logs so unary
/// costs stay finite.
pub const DEFAULT_CLAMP_EPSILON: f64 = 1e-3;
/// Variance floor for mixture components.
pub const VARIANCE_FLOOR: f64 = 1e-4;
/// EM stops when the log-likelihood improves by less than this.
pub const EM_TOLERANCE: f64 = 1e-7;
/// Hard EM iteration cap.
pub const EM_MAX_ITERATIONS: usize = 500;

#[inline]
fn clamp_prob(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

/// Spatial prior: per-pixel probability of the mass label, estimated as the
/// mean training annotation and clamped away from 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    width: usize,
    height: usize,
    prob: Vec<f64>,
    epsilon: f64,
}

impl PriorModel {
    pub fn new(width: usize, height: usize, prob: Vec<f64>, epsilon: f64) -> Result<Self> {
        if prob.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "prior map of {} values on a {}-pixel lattice",
                prob.len(),
                width * height
            )));
        }
        if let Some(p) = prob
            .iter()
            .find(|p| !p.is_finite() || **p < epsilon || **p > 1.0 - epsilon)
        {
            return Err(Error::InvalidValue(format!(
                "prior probability {p} outside [{epsilon}, {}]",
                1.0 - epsilon
            )));
        }
        Ok(Self {
            width,
            height,
            prob,
            epsilon,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.prob
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Mean annotation over the training masks, clamped to `[eps, 1 - eps]`.
pub fn fit_prior(masks: &[LabelMask], epsilon: f64) -> Result<PriorModel> {
    let first = masks
        .first()
        .ok_or_else(|| Error::EmptyInput("fit_prior needs at least one mask".into()))?;
    let (width, height) = (first.width(), first.height());
    let mut counts = vec![0usize; width * height];
    for mask in masks {
        if mask.width() != width || mask.height() != height {
            return Err(Error::LatticeMismatch(
                mask.width(),
                mask.height(),
                width,
                height,
            ));
        }
        for (c, l) in counts.iter_mut().zip(mask.labels()) {
            if *l == MASS {
                *c += 1;
            }
        }
    }
    let n = masks.len() as f64;
    let prob = counts
        .iter()
        .map(|c| clamp_prob(*c as f64 / n, epsilon))
        .collect();
    PriorModel::new(width, height, prob, epsilon)
}

/// Unary costs from the prior: `-log p` for the mass label, `-log(1 - p)`
/// for background.
pub fn prior_unary(prior: &PriorModel) -> UnaryMap {
    UnaryMap {
        pos: prior.prob.iter().map(|p| -p.ln()).collect(),
        neg: prior.prob.iter().map(|p| -(1.0 - p).ln()).collect(),
    }
}

/// One Gaussian component of a 1-D mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// 1-D Gaussian mixture over pixel intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm1d {
    components: Vec<GmmComponent>,
}

impl Gmm1d {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput("mixture needs >= 1 component".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidValue(format!(
                "component weights sum to {total}, expected 1"
            )));
        }
        for c in &components {
            if c.weight < 0.0 || !c.mean.is_finite() || c.variance < VARIANCE_FLOOR {
                return Err(Error::InvalidValue(format!(
                    "bad component (weight {}, mean {}, variance {})",
                    c.weight, c.mean, c.variance
                )));
            }
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    /// Log mixture density at `x`, evaluated with log-sum-exp.
    pub fn log_density(&self, x: f64) -> f64 {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                if c.weight == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    c.weight.ln() + gaussian_log_pdf(x, c.mean, c.variance)
                }
            })
            .collect();
        log_sum_exp(&logs)
    }
}

#[inline]
fn gaussian_log_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (std::f64::consts::TAU * variance).ln() - d * d / (2.0 * variance)
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// EM fit of a 1-D mixture plus its per-iteration log-likelihood trace.
#[derive(Debug, Clone)]
pub struct Gmm1dFit {
    pub gmm: Gmm1d,
    /// Log-likelihood evaluated at the parameters of each iteration
    /// (index 0 is the initialization).
    pub log_likelihoods: Vec<f64>,
}

/// Fits a 1-D Gaussian mixture by EM with k-means++-style seeding from the
/// supplied RNG. Runs until the log-likelihood improves by less than
/// [`EM_TOLERANCE`] or [`EM_MAX_ITERATIONS`] is reached; variances are
/// floored at [`VARIANCE_FLOOR`].
pub fn fit_gmm_1d<R: Rng>(values: &[f64], m: usize, rng: &mut R) -> Result<Gmm1dFit> {
    if m == 0 {
        return Err(Error::InvalidValue("component count must be >= 1".into()));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput("no samples for mixture fit".into()));
    }
    let mut distinct = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < m {
        return Err(Error::InvalidValue(format!(
            "{m} components requested but only {} distinct values present",
            distinct.len()
        )));
    }

    let n = values.len() as f64;
    let global_mean = values.iter().sum::<f64>() / n;
    let global_var = (values.iter().map(|v| (v - global_mean).powi(2)).sum::<f64>() / n)
        .max(VARIANCE_FLOOR);

    // k-means++ seeding on the raw samples.
    let mut means = vec![values[rng.gen_range(0..values.len())]];
    while means.len() < m {
        let d2: Vec<f64> = values
            .iter()
            .map(|v| {
                means
                    .iter()
                    .map(|c| (v - c) * (v - c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = values.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            values[chosen]
        } else {
            // All points coincide with existing seeds; fall back to any
            // unused distinct value.
            *distinct
                .iter()
                .find(|v| !means.contains(v))
                .expect("distinct count checked above")
        };
        means.push(next);
    }

    let mut comps: Vec<GmmComponent> = means
        .into_iter()
        .map(|mean| GmmComponent {
            weight: 1.0 / m as f64,
            mean,
            variance: global_var,
        })
        .collect();

    let mut trace = Vec::new();
    let mut resp = vec![0.0f64; values.len() * m];
    loop {
        // E-step, accumulating the log-likelihood of the current parameters.
        let mut ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            let logs: Vec<f64> = comps
                .iter()
                .map(|c| {
                    if c.weight == 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        c.weight.ln() + gaussian_log_pdf(x, c.mean, c.variance)
                    }
                })
                .collect();
            let lse = log_sum_exp(&logs);
            ll += lse;
            for (k, l) in logs.iter().enumerate() {
                resp[i * m + k] = (l - lse).exp();
            }
        }
        trace.push(ll);
        let done = trace.len() >= EM_MAX_ITERATIONS
            || trace
                .len()
                .checked_sub(2)
                .is_some_and(|prev| (ll - trace[prev]).abs() < EM_TOLERANCE);
        if done {
            break;
        }

        // M-step. Components with no responsibility mass are left untouched.
        for k in 0..m {
            let mass: f64 = (0..values.len()).map(|i| resp[i * m + k]).sum();
            if mass < 1e-12 {
                continue;
            }
            let mean = (0..values.len())
                .map(|i| resp[i * m + k] * values[i])
                .sum::<f64>()
                / mass;
            let var = (0..values.len())
                .map(|i| resp[i * m + k] * (values[i] - mean).powi(2))
                .sum::<f64>()
                / mass;
            comps[k] = GmmComponent {
                weight: mass / n,
                mean,
                variance: var.max(VARIANCE_FLOOR),
            };
        }
        // Renormalize weights (skipped components keep relative share).
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        for c in &mut comps {
            c.weight /= total;
        }
    }

    Ok(Gmm1dFit {
        gmm: Gmm1d::new(comps)?,
        log_likelihoods: trace,
    })
}

/// Two-class intensity model: one mixture per class with equal class priors.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    mass: Gmm1d,
    background: Gmm1d,
    epsilon: f64,
}

impl GmmModel {
    pub fn new(mass: Gmm1d, background: Gmm1d, epsilon: f64) -> Self {
        Self {
            mass,
            background,
            epsilon,
        }
    }

    pub fn mass(&self) -> &Gmm1d {
        &self.mass
    }

    pub fn background(&self) -> &Gmm1d {
        &self.background
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Fits per-class mixtures to the pixel intensities selected by the masks.
pub fn fit_gmm<R: Rng>(
    images: &[RoiImage],
    masks: &[LabelMask],
    m: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<GmmModel> {
    if images.len() != masks.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} images vs {} masks",
            images.len(),
            masks.len()
        )));
    }
    let mut mass_vals = Vec::new();
    let mut bg_vals = Vec::new();
    for (img, mask) in images.iter().zip(masks) {
        if img.width() != mask.width() || img.height() != mask.height() {
            return Err(Error::LatticeMismatch(
                img.width(),
                img.height(),
                mask.width(),
                mask.height(),
            ));
        }
        for (v, l) in img.intensities().iter().zip(mask.labels()) {
            if *l == MASS {
                mass_vals.push(*v);
            } else {
                bg_vals.push(*v);
            }
        }
    }
    if mass_vals.is_empty() || bg_vals.is_empty() {
        return Err(Error::EmptyInput(
            "both classes need at least one pixel for the intensity model".into(),
        ));
    }
    let mass = fit_gmm_1d(&mass_vals, m, rng)?.gmm;
    let background = fit_gmm_1d(&bg_vals, m, rng)?.gmm;
    Ok(GmmModel::new(mass, background, epsilon))
}

/// Posterior mass probability at one intensity under equal class priors,
/// clamped to `[eps, 1 - eps]`.
pub fn gmm_posterior(g: &GmmModel, intensity: f64) -> f64 {
    let log_mass = g.mass.log_density(intensity);
    let log_bg = g.background.log_density(intensity);
    // p = Lm / (Lm + Lb) = sigmoid(log Lm - log Lb); the 0.5 class priors
    // cancel.
    let p = sigmoid(log_mass - log_bg);
    clamp_prob(p, g.epsilon)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// GMM unary costs over a whole image.
pub fn gmm_unary(g: &GmmModel, img: &RoiImage) -> UnaryMap {
    let mut pos = Vec::with_capacity(img.pixel_count());
    let mut neg = Vec::with_capacity(img.pixel_count());
    for v in img.intensities() {
        let p = gmm_posterior(g, *v);
        pos.push(-p.ln());
        neg.push(-(1.0 - p).ln());
    }
    UnaryMap { pos, neg }
}

/// Label transition penalty: 0 when the labels agree, 1 otherwise.
#[inline]
pub fn pairwise_potts(yi: i8, yj: i8) -> f64 {
    if yi == yj {
        0.0
    } else {
        1.0
    }
}

/// Contrast-weighted transition penalty:
/// `exp(-(xi - xj)^2)` when the labels differ, 0 otherwise.
#[inline]
pub fn pairwise_contrast(yi: i8, yj: i8, xi: f64, xj: f64) -> f64 {
    if yi == yj {
        0.0
    } else {
        (-(xi - xj) * (xi - xj)).exp()
    }
}

/// Potts coefficient map: 1 on every lattice edge.
pub fn potts_coefficients(width: usize, height: usize) -> Vec<f64> {
    vec![1.0; edge_count(width, height)]
}

/// Contrast coefficient map: `exp(-(x(i) - x(j))^2)` per lattice edge.
pub fn contrast_coefficients(img: &RoiImage) -> Vec<f64> {
    lattice_edges(img.width(), img.height())
        .map(|(i, j)| {
            let d = img.intensities()[i] - img.intensities()[j];
            (-d * d).exp()
        })
        .collect()
}
