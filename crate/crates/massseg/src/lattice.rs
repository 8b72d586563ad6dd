//! Lattice data model and the CRF energy function.
//!
//! The energy of a labeling `y` is
//!
//! ```text
//! E(y) = sum_k w1[k] * sum_i unary_k(y(i))
//!      + sum_l w2[l] * sum_{(i,j) in E} coeff_l(i,j) * [y(i) != y(j)]
//! ```
//!
//! over the 4-connected edge set. Lower energy means a more probable
//! labeling (unaries are negative log-probabilities). `joint_features`
//! exposes the linear decomposition so that `E(y) = w . phi(y)`, which is
//! what the structured SVM trains against.

use crate::{Error, Result};

/// Mass label.
pub const MASS: i8 = 1;
/// Background label.
pub const BACKGROUND: i8 = -1;

/// Fixed-size grayscale lattice with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiImage {
    width: usize,
    height: usize,
    intensities: Vec<f64>,
}

impl RoiImage {
    pub fn new(width: usize, height: usize, intensities: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidValue("image dimensions must be >= 1".into()));
        }
        if intensities.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "expected {} intensities, got {}",
                width * height,
                intensities.len()
            )));
        }
        if let Some(v) = intensities
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidValue(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            intensities,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.intensities[y * self.width + x]
    }
}

/// Per-pixel labels in `{-1, +1}` on the same lattice as a [`RoiImage`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<i8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<i8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidValue("mask dimensions must be >= 1".into()));
        }
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "expected {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l != MASS && **l != BACKGROUND) {
            return Err(Error::InvalidValue(format!("label {l} not in {{-1, +1}}")));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn constant(width: usize, height: usize, label: i8) -> Result<Self> {
        Self::new(width, height, vec![label; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> i8 {
        debug_assert!(x < self.width && y < self.height);
        self.labels[y * self.width + x]
    }

    /// Mask with every label flipped.
    pub fn complement(&self) -> LabelMask {
        LabelMask {
            width: self.width,
            height: self.height,
            labels: self.labels.iter().map(|l| -l).collect(),
        }
    }

    pub fn positive_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == MASS).count()
    }
}

/// Linear weights of the energy: `K` unary weights followed by `L` pairwise
/// weights. Pairwise weights must be nonnegative so the energy stays
/// submodular and min-cut inference exact.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    unary: Vec<f64>,
    pairwise: Vec<f64>,
}

impl ModelWeights {
    pub fn new(unary: Vec<f64>, pairwise: Vec<f64>) -> Result<Self> {
        if let Some(w) = unary.iter().chain(pairwise.iter()).find(|w| !w.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite weight {w}")));
        }
        if let Some(w) = pairwise.iter().find(|w| **w < 0.0) {
            return Err(Error::NegativePairwiseWeight(*w));
        }
        Ok(Self { unary, pairwise })
    }

    pub fn zeros(unary_count: usize, pairwise_count: usize) -> Self {
        Self {
            unary: vec![0.0; unary_count],
            pairwise: vec![0.0; pairwise_count],
        }
    }

    /// Builds weights from one flat `K + L` vector, clamping tiny negative
    /// pairwise entries (QP round-off) to zero.
    pub fn from_flat(flat: &[f64], unary_count: usize) -> Result<Self> {
        if flat.len() < unary_count {
            return Err(Error::DimensionMismatch(format!(
                "flat weight vector of length {} cannot hold {} unary weights",
                flat.len(),
                unary_count
            )));
        }
        let unary = flat[..unary_count].to_vec();
        let pairwise = flat[unary_count..]
            .iter()
            .map(|w| if *w < 0.0 && *w > -1e-6 { 0.0 } else { *w })
            .collect();
        Self::new(unary, pairwise)
    }

    pub fn unary(&self) -> &[f64] {
        &self.unary
    }

    pub fn pairwise(&self) -> &[f64] {
        &self.pairwise
    }

    /// Flat `[unary..., pairwise...]` view, matching `joint_features` order.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.unary.clone();
        v.extend_from_slice(&self.pairwise);
        v
    }
}

/// Per-pixel costs of one unary potential for both labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryMap {
    /// Cost of assigning +1 at each pixel.
    pub pos: Vec<f64>,
    /// Cost of assigning -1 at each pixel.
    pub neg: Vec<f64>,
}

/// Precomputed per-image potential values: `K` unary maps plus `L` pairwise
/// coefficient maps over the 4-connected edge set. The pairwise coefficient
/// is the label-independent factor of the potential (1 for the Potts term,
/// the contrast factor otherwise); the potential itself is
/// `coeff * [y(i) != y(j)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialStack {
    width: usize,
    height: usize,
    unary: Vec<UnaryMap>,
    pairwise: Vec<Vec<f64>>,
}

impl PotentialStack {
    pub fn new(
        width: usize,
        height: usize,
        unary: Vec<UnaryMap>,
        pairwise: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidValue("stack dimensions must be >= 1".into()));
        }
        let pixels = width * height;
        let edges = edge_count(width, height);
        for map in &unary {
            if map.pos.len() != pixels || map.neg.len() != pixels {
                return Err(Error::DimensionMismatch(format!(
                    "unary map sized {}/{} on a {pixels}-pixel lattice",
                    map.pos.len(),
                    map.neg.len()
                )));
            }
            if map.pos.iter().chain(map.neg.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidValue("non-finite unary value".into()));
            }
        }
        for coeffs in &pairwise {
            if coeffs.len() != edges {
                return Err(Error::DimensionMismatch(format!(
                    "pairwise map has {} coefficients, lattice has {edges} edges",
                    coeffs.len()
                )));
            }
            if let Some(c) = coeffs.iter().find(|c| !(0.0..=1.0).contains(*c)) {
                return Err(Error::InvalidValue(format!(
                    "pairwise coefficient {c} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            unary,
            pairwise,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn unary_count(&self) -> usize {
        self.unary.len()
    }

    pub fn pairwise_count(&self) -> usize {
        self.pairwise.len()
    }

    pub fn unary_maps(&self) -> &[UnaryMap] {
        &self.unary
    }

    pub fn pairwise_maps(&self) -> &[Vec<f64>] {
        &self.pairwise
    }

    pub fn edge_count(&self) -> usize {
        edge_count(self.width, self.height)
    }

    /// 4-connected edges as `(pixel_i, pixel_j)` pairs in canonical order:
    /// all horizontal edges row-major, then all vertical edges row-major.
    /// The position in this sequence is the edge index used by pairwise maps.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        lattice_edges(self.width, self.height)
    }

    fn check_lattice(&self, mask: &LabelMask) -> Result<()> {
        if mask.width() != self.width || mask.height() != self.height {
            return Err(Error::LatticeMismatch(
                mask.width(),
                mask.height(),
                self.width,
                self.height,
            ));
        }
        Ok(())
    }
}

/// Number of 4-connected edges on a `width x height` lattice.
pub fn edge_count(width: usize, height: usize) -> usize {
    (width - 1) * height + width * (height - 1)
}

/// Canonical 4-connected edge enumeration (horizontal row-major, then
/// vertical row-major).
pub fn lattice_edges(width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
    let horizontal = (0..height)
        .flat_map(move |y| (0..width - 1).map(move |x| (y * width + x, y * width + x + 1)));
    let vertical = (0..height - 1)
        .flat_map(move |y| (0..width).map(move |x| (y * width + x, (y + 1) * width + x)));
    horizontal.chain(vertical)
}

/// CRF energy of a labeling under the given stack and weights.
pub fn energy(y: &LabelMask, stack: &PotentialStack, w: &ModelWeights) -> Result<f64> {
    stack.check_lattice(y)?;
    if w.unary().len() != stack.unary_count() || w.pairwise().len() != stack.pairwise_count() {
        return Err(Error::DimensionMismatch(format!(
            "weights sized {}+{}, stack has {}+{} potentials",
            w.unary().len(),
            w.pairwise().len(),
            stack.unary_count(),
            stack.pairwise_count()
        )));
    }
    let phi = joint_features(y, stack)?;
    let flat = w.flat();
    Ok(phi.iter().zip(flat.iter()).map(|(p, w)| p * w).sum())
}

/// Joint feature vector of length `K + L`: component `k` is the unary sum
/// `sum_i unary_k(y(i))`, component `K + l` is the pairwise sum
/// `sum_{(i,j)} coeff_l(i,j) * [y(i) != y(j)]`. Satisfies
/// `energy(y, stack, w) == w . joint_features(y, stack)`.
pub fn joint_features(y: &LabelMask, stack: &PotentialStack) -> Result<Vec<f64>> {
    stack.check_lattice(y)?;
    let labels = y.labels();
    let mut phi = Vec::with_capacity(stack.unary_count() + stack.pairwise_count());
    for map in stack.unary_maps() {
        let mut sum = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            sum += if label == MASS { map.pos[i] } else { map.neg[i] };
        }
        phi.push(sum);
    }
    for coeffs in stack.pairwise_maps() {
        let mut sum = 0.0;
        for (e, (i, j)) in stack.edges().enumerate() {
            if labels[i] != labels[j] {
                sum += coeffs[e];
            }
        }
        phi.push(sum);
    }
    Ok(phi)
}
