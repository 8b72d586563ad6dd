//! Cutting-plane structured SVM training of the energy weights.
//!
//! The learning problem is
//!
//! ```text
//! min  1/2 ||w||^2 + (C/N) sum_n xi_n
//! s.t. w.phi(yhat) - w.phi(y_n) >= delta(y_n, yhat) - xi_n   for all yhat
//!      xi_n >= 0,  pairwise components of w >= 0
//! ```
//!
//! Constraints are generated lazily: loss-augmented inference finds the
//! most violated labeling per sample, the growing quadratic program is
//! re-solved exactly, and training stops when no labeling is violated by
//! more than the tolerance beyond its slack.
//!
//! The QP is tiny (a handful of weights plus one slack per sample), so it
//! is solved in the dual by cyclic coordinate ascent: one multiplier per
//! margin constraint (box-coupled per sample) and one per pairwise
//! nonnegativity bound, iterated to a 1e-9 KKT residual.

use crate::lattice::{joint_features, LabelMask, ModelWeights, PotentialStack};
use crate::maxflow::infer_loss_augmented;
use crate::{Error, Result};

/// Default constraint-violation tolerance.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Default cutting-plane iteration cap.
pub const DEFAULT_MAX_ITERATIONS: usize = 200;
/// Default regularization constant.
pub const DEFAULT_C: f64 = 1000.0;

const KKT_TOLERANCE: f64 = 1e-9;
const MAX_QP_PASSES: usize = 5_000;

/// Duals recovered by the interior-point core.
struct IpSolution {
    alpha: Vec<f64>,
    gamma: Vec<f64>,
    iterations: usize,
}

/// Primal-dual path-following interior point on the n-slack QP in its
/// primal form over `x = [w | xi]`. Every inequality row is sparse (at
/// most `dim` weight coefficients plus one slack), so each Newton step
/// assembles a small dense normal matrix and solves it by Cholesky. The
/// start point is strictly feasible by construction, which keeps the
/// primal residual at zero throughout.
fn interior_point(
    constraints: &[ConstraintRecord],
    box_limit: f64,
    sample_count: usize,
    dim: usize,
    unary_count: usize,
) -> IpSolution {
    let n_x = dim + sample_count;
    let m0 = constraints.len();
    let bound_count = dim - unary_count;
    let m = m0 + sample_count + bound_count;

    // Row i as (sparse) a_i and rhs_i with the constraint a_i . x >= rhs_i:
    //   i < m0:            margin row (g_c over w, +1 on xi_{n(c)});
    //   m0 <= i < m0 + N:  xi_n >= 0;
    //   otherwise:         pairwise weight bound w_j >= 0.
    let row_dot = |i: usize, x: &[f64]| -> f64 {
        if i < m0 {
            let r = &constraints[i];
            let mut acc = x[dim + r.sample];
            for (k, g) in r.feature_diff.iter().enumerate() {
                acc += g * x[k];
            }
            acc
        } else if i < m0 + sample_count {
            x[dim + (i - m0)]
        } else {
            x[unary_count + (i - m0 - sample_count)]
        }
    };
    let rhs = |i: usize| -> f64 {
        if i < m0 {
            constraints[i].loss
        } else {
            0.0
        }
    };

    // Strictly feasible start: unit pairwise weights, slacks above every
    // margin requirement.
    let mut x = vec![0.0f64; n_x];
    for j in unary_count..dim {
        x[j] = 1.0;
    }
    for n in 0..sample_count {
        x[dim + n] = 1.0;
    }
    for r in constraints {
        let margin: f64 = r
            .feature_diff
            .iter()
            .enumerate()
            .map(|(k, g)| g * x[k])
            .sum();
        let need = r.loss - margin + 1.0;
        if need > x[dim + r.sample] {
            x[dim + r.sample] = need;
        }
    }

    let mut s: Vec<f64> = (0..m).map(|i| row_dot(i, &x) - rhs(i)).collect();
    let mut z = vec![1.0f64; m];

    let loss_scale = constraints.iter().fold(1.0f64, |acc, r| acc.max(r.loss));
    let mu_target = 1e-12 * (1.0 + loss_scale);
    let mut iterations = 0usize;

    // Dense lower-triangular Cholesky with jitter fallback.
    fn cholesky_solve(h: &mut [f64], n: usize, b: &mut [f64]) -> bool {
        for attempt in 0..6 {
            let mut l = h.to_vec();
            let mut ok = true;
            'outer: for i in 0..n {
                for j in 0..=i {
                    let mut sum = l[i * n + j];
                    for k in 0..j {
                        sum -= l[i * n + k] * l[j * n + k];
                    }
                    if i == j {
                        if sum <= 0.0 {
                            ok = false;
                            break 'outer;
                        }
                        l[i * n + i] = sum.sqrt();
                    } else {
                        l[i * n + j] = sum / l[j * n + j];
                    }
                }
            }
            if ok {
                // Forward and back substitution in place.
                for i in 0..n {
                    let mut sum = b[i];
                    for k in 0..i {
                        sum -= l[i * n + k] * b[k];
                    }
                    b[i] = sum / l[i * n + i];
                }
                for i in (0..n).rev() {
                    let mut sum = b[i];
                    for k in i + 1..n {
                        sum -= l[k * n + i] * b[k];
                    }
                    b[i] = sum / l[i * n + i];
                }
                return true;
            }
            let trace: f64 = (0..n).map(|i| h[i * n + i]).sum();
            let jitter = (trace / n as f64).max(1e-30) * 1e-12 * 10f64.powi(attempt);
            for i in 0..n {
                h[i * n + i] += jitter;
            }
        }
        false
    }

    for _ in 0..200 {
        iterations += 1;
        let mu = s.iter().zip(&z).map(|(si, zi)| si * zi).sum::<f64>() / m as f64;

        // Dual residual r_d = P x + q - C^T z.
        let mut r_d = vec![0.0f64; n_x];
        for j in 0..dim {
            r_d[j] = x[j];
        }
        for n in 0..sample_count {
            r_d[dim + n] = box_limit;
        }
        for (c, r) in constraints.iter().enumerate() {
            for (k, g) in r.feature_diff.iter().enumerate() {
                r_d[k] -= z[c] * g;
            }
            r_d[dim + r.sample] -= z[c];
        }
        for n in 0..sample_count {
            r_d[dim + n] -= z[m0 + n];
        }
        for j in 0..bound_count {
            r_d[unary_count + j] -= z[m0 + sample_count + j];
        }
        let r_d_norm = r_d.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if mu < mu_target && r_d_norm < 1e-10 * (1.0 + loss_scale) {
            break;
        }

        let sigma: f64 = if mu > mu_target { 0.15 } else { 0.0 };
        // Normal matrix H = P + sum_i (z_i / s_i) a_i a_i^T and the
        // right-hand side -r_d + sum_i a_i (sigma mu - s_i z_i) / s_i.
        let mut h = vec![0.0f64; n_x * n_x];
        for j in 0..dim {
            h[j * n_x + j] = 1.0;
        }
        let mut b: Vec<f64> = r_d.iter().map(|v| -v).collect();
        let mut add_row = |i: usize, coords: &[(usize, f64)]| {
            let ratio = z[i] / s[i];
            let push = (sigma * mu - s[i] * z[i]) / s[i];
            for &(p, ap) in coords {
                b[p] += ap * push;
                for &(q, aq) in coords {
                    h[p * n_x + q] += ratio * ap * aq;
                }
            }
        };
        let mut coords: Vec<(usize, f64)> = Vec::with_capacity(dim + 1);
        for (c, r) in constraints.iter().enumerate() {
            coords.clear();
            for (k, g) in r.feature_diff.iter().enumerate() {
                if *g != 0.0 {
                    coords.push((k, *g));
                }
            }
            coords.push((dim + r.sample, 1.0));
            add_row(c, &coords);
        }
        for n in 0..sample_count {
            add_row(m0 + n, &[(dim + n, 1.0)]);
        }
        for j in 0..bound_count {
            add_row(m0 + sample_count + j, &[(unary_count + j, 1.0)]);
        }

        if !cholesky_solve(&mut h, n_x, &mut b) {
            break;
        }
        let dx = b;

        // Dual and slack directions, then the longest feasible step.
        let mut alpha_p = 1.0f64;
        let mut alpha_d = 1.0f64;
        let mut dz = vec![0.0f64; m];
        let mut ds = vec![0.0f64; m];
        for i in 0..m {
            let a_dx = if i < m0 {
                let r = &constraints[i];
                let mut acc = dx[dim + r.sample];
                for (k, g) in r.feature_diff.iter().enumerate() {
                    acc += g * dx[k];
                }
                acc
            } else if i < m0 + sample_count {
                dx[dim + (i - m0)]
            } else {
                dx[unary_count + (i - m0 - sample_count)]
            };
            ds[i] = a_dx;
            dz[i] = (sigma * mu - s[i] * z[i] - z[i] * a_dx) / s[i];
            if ds[i] < 0.0 {
                alpha_p = alpha_p.min(-s[i] / ds[i]);
            }
            if dz[i] < 0.0 {
                alpha_d = alpha_d.min(-z[i] / dz[i]);
            }
        }
        let step_p = (0.995 * alpha_p).min(1.0);
        let step_d = (0.995 * alpha_d).min(1.0);
        if step_p < 1e-12 && step_d < 1e-12 {
            break;
        }
        for (xi, dxi) in x.iter_mut().zip(&dx) {
            *xi += step_p * dxi;
        }
        for (zi, dzi) in z.iter_mut().zip(&dz) {
            *zi += step_d * dzi;
        }
        // Recompute slacks exactly from x.
        for (i, si) in s.iter_mut().enumerate() {
            *si = row_dot(i, &x) - rhs(i);
            if *si <= 0.0 {
                *si = f64::MIN_POSITIVE;
            }
        }
    }

    IpSolution {
        alpha: z[..m0].to_vec(),
        gamma: z[m0 + sample_count..].to_vec(),
        iterations,
    }
}

/// Number of pixels where two masks disagree. Satisfies `hamming(y, y) = 0`.
pub fn hamming(a: &LabelMask, b: &LabelMask) -> Result<usize> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::LatticeMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    Ok(a.labels()
        .iter()
        .zip(b.labels())
        .filter(|(x, y)| x != y)
        .count())
}

/// One cutting-plane constraint: for sample `n`,
/// `w . feature_diff >= loss - xi_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRecord {
    pub sample: usize,
    /// `phi(yhat) - phi(y_n)`, length K + L.
    pub feature_diff: Vec<f64>,
    /// `delta(y_n, yhat)`, a nonnegative pixel count.
    pub loss: f64,
}

/// Exact solution of the growing quadratic program.
#[derive(Debug, Clone)]
pub struct QpState {
    /// Flat weight vector, unary components first.
    pub weights: Vec<f64>,
    /// Minimal feasible slack per sample at these weights.
    pub slacks: Vec<f64>,
    /// Primal objective value at the solution.
    pub objective: f64,
    /// Largest KKT violation at the returned point.
    pub kkt_residual: f64,
    /// Coordinate-ascent passes used.
    pub passes: usize,
}

/// Solves the n-slack margin-rescaling QP over the accumulated constraints,
/// with nonnegativity bounds on the pairwise weight components.
pub fn qp_solve(
    constraints: &[ConstraintRecord],
    c_reg: f64,
    sample_count: usize,
    dim: usize,
    unary_count: usize,
) -> Result<QpState> {
    if c_reg < 0.0 || !c_reg.is_finite() {
        return Err(Error::InvalidValue(format!(
            "regularization constant {c_reg} must be finite and >= 0"
        )));
    }
    if unary_count > dim {
        return Err(Error::DimensionMismatch(format!(
            "{unary_count} unary weights in a {dim}-dimensional problem"
        )));
    }
    for r in constraints {
        if r.feature_diff.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "constraint with {} features in a {dim}-dimensional problem",
                r.feature_diff.len()
            )));
        }
        if r.sample >= sample_count {
            return Err(Error::InvalidValue(format!(
                "constraint references sample {} of {sample_count}",
                r.sample
            )));
        }
        if r.loss < 0.0 || !r.loss.is_finite() {
            return Err(Error::InvalidValue(format!("constraint loss {}", r.loss)));
        }
    }

    let box_limit = if sample_count > 0 {
        c_reg / sample_count as f64
    } else {
        0.0
    };
    let mut by_sample: Vec<Vec<usize>> = vec![Vec::new(); sample_count];
    for (c, r) in constraints.iter().enumerate() {
        by_sample[r.sample].push(c);
    }

    // Dual state. Each sample's multipliers together with the unused budget
    // `beta` form a simplex of size C/N. The interior point does the heavy
    // lifting; a short max-violating-pair polish afterwards transfers mass
    // between block members until complementarity holds on exact zeros.
    let mut alpha = vec![0.0f64; constraints.len()];
    let mut beta = vec![box_limit; sample_count];
    let mut gamma = vec![0.0f64; dim - unary_count];
    let mut w = vec![0.0f64; dim];

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut passes = 0usize;
    if !constraints.is_empty() && box_limit > 0.0 {
        let ip = interior_point(constraints, box_limit, sample_count, dim, unary_count);
        passes = ip.iterations;
        alpha = ip.alpha;
        gamma = ip.gamma;
        // Project into the dual-feasible set: nonnegative, within budget.
        for a in alpha.iter_mut() {
            *a = a.max(0.0);
        }
        for g in gamma.iter_mut() {
            *g = g.max(0.0);
        }
        for (n, block) in by_sample.iter().enumerate() {
            let total: f64 = block.iter().map(|c| alpha[*c]).sum();
            if total > box_limit {
                let shrink = box_limit / total;
                for &c in block {
                    alpha[c] *= shrink;
                }
                beta[n] = 0.0;
            } else {
                beta[n] = box_limit - total;
            }
        }
        for (c, r) in constraints.iter().enumerate() {
            if alpha[c] != 0.0 {
                for (wi, g) in w.iter_mut().zip(&r.feature_diff) {
                    *wi += alpha[c] * g;
                }
            }
        }
        for (j, g) in gamma.iter().enumerate() {
            w[unary_count + j] += g;
        }
    }

    // Tolerance on dual gradient gaps, relative to the loss scale.
    let loss_scale = constraints.iter().fold(1.0f64, |m, r| m.max(r.loss));
    let gap_tolerance = KKT_TOLERANCE * loss_scale;

    let mut polish = 0usize;
    while polish < MAX_QP_PASSES {
        polish += 1;
        let mut worst = 0.0f64;
        for (n, block) in by_sample.iter().enumerate() {
            if block.is_empty() {
                continue;
            }
            // A few max-violating-pair steps per block per pass. The index
            // `block.len()` stands for the null variable (unused budget).
            for step in 0..4 * (block.len() + 1) {
                let grads: Vec<f64> = block
                    .iter()
                    .map(|&c| constraints[c].loss - dot(&w, &constraints[c].feature_diff))
                    .collect();
                let mut up = block.len();
                let mut up_grad = 0.0f64;
                for (k, g) in grads.iter().enumerate() {
                    if *g > up_grad {
                        up_grad = *g;
                        up = k;
                    }
                }
                let mut down = usize::MAX;
                let mut down_grad = f64::INFINITY;
                for (k, g) in grads.iter().enumerate() {
                    if alpha[block[k]] > 0.0 && *g < down_grad {
                        down_grad = *g;
                        down = k;
                    }
                }
                if beta[n] > 0.0 && 0.0 < down_grad {
                    down_grad = 0.0;
                    down = block.len();
                }
                let gap = up_grad - down_grad;
                if step == 0 {
                    worst = worst.max(gap);
                }
                if gap < gap_tolerance || up == down || down == usize::MAX {
                    break;
                }

                // Transfer direction: d = g_up - g_down (null contributes 0).
                let zero = vec![0.0f64; dim];
                let g_up = if up == block.len() {
                    &zero
                } else {
                    &constraints[block[up]].feature_diff
                };
                let g_down = if down == block.len() {
                    &zero
                } else {
                    &constraints[block[down]].feature_diff
                };
                let d: Vec<f64> = g_up.iter().zip(g_down).map(|(a, b)| a - b).collect();
                let curvature = dot(&d, &d);
                let limit = if down == block.len() {
                    beta[n]
                } else {
                    alpha[block[down]]
                };
                let delta = if curvature > 0.0 {
                    (gap / curvature).min(limit)
                } else {
                    limit
                };
                if delta <= 0.0 {
                    break;
                }
                if up == block.len() {
                    beta[n] += delta;
                } else {
                    alpha[block[up]] += delta;
                }
                if down == block.len() {
                    beta[n] -= delta;
                } else {
                    alpha[block[down]] -= delta;
                }
                for (wi, di) in w.iter_mut().zip(&d) {
                    *wi += delta * di;
                }
            }
        }
        for (j, gj) in gamma.iter_mut().enumerate() {
            let coord = unary_count + j;
            if *gj > 0.0 {
                worst = worst.max(w[coord].abs());
            }
            worst = worst.max(-w[coord]);
            let delta = (-w[coord]).max(-*gj);
            if delta != 0.0 {
                *gj += delta;
                w[coord] += delta;
            }
        }
        if worst < gap_tolerance {
            break;
        }
    }
    passes += polish;

    // Recompute w from the multipliers to remove accumulated round-off.
    let mut w = vec![0.0f64; dim];
    for (c, r) in constraints.iter().enumerate() {
        if alpha[c] != 0.0 {
            for (wi, g) in w.iter_mut().zip(&r.feature_diff) {
                *wi += alpha[c] * g;
            }
        }
    }
    for (j, gj) in gamma.iter().enumerate() {
        w[unary_count + j] += gj;
    }

    let mut slacks = vec![0.0f64; sample_count];
    for r in constraints {
        let margin: f64 = w.iter().zip(&r.feature_diff).map(|(w, g)| w * g).sum();
        slacks[r.sample] = slacks[r.sample].max(r.loss - margin);
    }
    let objective = 0.5 * w.iter().map(|w| w * w).sum::<f64>()
        + if sample_count > 0 {
            box_limit * slacks.iter().sum::<f64>()
        } else {
            0.0
        };

    // Final KKT residual: primal feasibility plus the min-form
    // complementarity measure (scale-free, unlike the raw products).
    let mut residual = 0.0f64;
    for j in unary_count..dim {
        residual = residual.max(-w[j]);
        residual = residual.max(gamma[j - unary_count].min(w[j].max(0.0)));
    }
    for (c, r) in constraints.iter().enumerate() {
        let margin: f64 = w.iter().zip(&r.feature_diff).map(|(w, g)| w * g).sum();
        let surplus = margin + slacks[r.sample] - r.loss;
        residual = residual.max(-surplus);
        residual = residual.max(alpha[c].min(surplus.max(0.0)));
    }
    for (n, ids) in by_sample.iter().enumerate() {
        let used: f64 = ids.iter().map(|i| alpha[*i]).sum();
        residual = residual.max((box_limit - used).max(0.0).min(slacks[n]));
    }

    Ok(QpState {
        weights: w,
        slacks,
        objective,
        kkt_residual: residual,
        passes,
    })
}

/// Loss-augmented inference plus the violation value of the resulting
/// constraint: `delta(gt, yhat) - [w.phi(yhat) - w.phi(gt)]`. The caller
/// compares it against the sample's slack.
pub fn most_violated(
    stack: &PotentialStack,
    w: &ModelWeights,
    gt: &LabelMask,
) -> Result<(LabelMask, f64)> {
    let yhat = infer_loss_augmented(stack, w, gt)?;
    let loss = hamming(gt, &yhat)? as f64;
    let phi_hat = joint_features(&yhat, stack)?;
    let phi_gt = joint_features(gt, stack)?;
    let flat = w.flat();
    let margin: f64 = flat
        .iter()
        .zip(phi_hat.iter().zip(&phi_gt))
        .map(|(w, (h, g))| w * (h - g))
        .sum();
    Ok((yhat, loss - margin))
}

/// Outcome of cutting-plane training.
#[derive(Debug, Clone)]
pub struct SsvmResult {
    pub weights: ModelWeights,
    /// Cutting-plane iterations performed.
    pub iterations: usize,
    /// QP objective after each iteration; nondecreasing.
    pub qp_objectives: Vec<f64>,
    /// KKT residual of each QP solve.
    pub qp_residuals: Vec<f64>,
    /// Final slack per sample.
    pub slacks: Vec<f64>,
    /// Constraints accumulated over training.
    pub constraint_count: usize,
}

/// Trains the weight vector by the cutting-plane algorithm: alternate
/// most-violated constraint generation over all samples with exact QP
/// re-solves until no constraint is violated by more than `tol` beyond its
/// slack. Fails with [`Error::IterationCap`] if the cap is reached first.
pub fn train_ssvm(
    dataset: &[(PotentialStack, LabelMask)],
    c_reg: f64,
    tol: f64,
    max_iterations: usize,
) -> Result<SsvmResult> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::EmptyInput("train_ssvm needs at least one sample".into()))?;
    if c_reg < 0.0 || !c_reg.is_finite() {
        return Err(Error::InvalidValue(format!(
            "regularization constant {c_reg} must be finite and >= 0"
        )));
    }
    if tol <= 0.0 {
        return Err(Error::InvalidValue(format!("tolerance {tol} must be > 0")));
    }
    let unary_count = first.0.unary_count();
    let pairwise_count = first.0.pairwise_count();
    let dim = unary_count + pairwise_count;
    for (stack, gt) in dataset {
        if stack.unary_count() != unary_count || stack.pairwise_count() != pairwise_count {
            return Err(Error::DimensionMismatch(
                "samples disagree on potential counts".into(),
            ));
        }
        if stack.width() != gt.width() || stack.height() != gt.height() {
            return Err(Error::LatticeMismatch(
                gt.width(),
                gt.height(),
                stack.width(),
                stack.height(),
            ));
        }
    }

    let n = dataset.len();
    let mut weights = ModelWeights::zeros(unary_count, pairwise_count);
    let mut slacks = vec![0.0f64; n];
    let mut constraints: Vec<ConstraintRecord> = Vec::new();
    let mut objectives = Vec::new();
    let mut residuals = Vec::new();

    for iteration in 1..=max_iterations {
        let mut added = 0usize;
        for (sample, (stack, gt)) in dataset.iter().enumerate() {
            let (yhat, violation) = most_violated(stack, &weights, gt)?;
            if violation > slacks[sample] + tol {
                let phi_hat = joint_features(&yhat, stack)?;
                let phi_gt = joint_features(gt, stack)?;
                let feature_diff: Vec<f64> = phi_hat
                    .iter()
                    .zip(&phi_gt)
                    .map(|(h, g)| h - g)
                    .collect();
                constraints.push(ConstraintRecord {
                    sample,
                    feature_diff,
                    loss: hamming(gt, &yhat)? as f64,
                });
                added += 1;
            }
        }
        if added == 0 {
            return Ok(SsvmResult {
                weights,
                iterations: iteration,
                qp_objectives: objectives,
                qp_residuals: residuals,
                slacks,
                constraint_count: constraints.len(),
            });
        }
        let state = qp_solve(&constraints, c_reg, n, dim, unary_count)?;
        weights = ModelWeights::from_flat(&state.weights, unary_count)?;
        slacks = state.slacks;
        objectives.push(state.objective);
        residuals.push(state.kkt_residual);
    }
    Err(Error::IterationCap(max_iterations))
}
