//! Exact energy minimization by minimum s-t cut.
//!
//! The submodular binary energy is reduced to a flow network on the
//! 4-connected lattice: pixel unary costs become terminal capacities (one
//! of the pair zeroed by a tracked per-pixel shift so capacities stay
//! nonnegative), pairwise transition costs become symmetric neighbor
//! capacities. A breadth-first augmenting-path max-flow then yields the
//! global optimum; pixels reachable from the source in the residual graph
//! take the mass label.
//!
//! Loss-augmented inference for constraint generation reuses the same
//! reduction: the Hamming term is absorbed by subtracting 1 from the unary
//! cost of each label that disagrees with the reference mask.

use crate::lattice::{LabelMask, ModelWeights, PotentialStack, BACKGROUND, MASS};
use crate::{Error, Result};

/// Residual capacities below this are treated as exhausted.
const RESIDUAL_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Arc {
    to: u32,
    residual: f64,
    /// Index of the reverse arc in `arcs`.
    rev: u32,
}

/// Grid-structured s-t network encoding one energy-minimization instance.
///
/// `shift` accumulates the per-pixel constants removed while zeroing the
/// smaller terminal capacity, so `min cut value + shift` equals the optimal
/// objective (energy, or energy minus Hamming loss).
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    width: usize,
    height: usize,
    /// Capacity from the source into each pixel (cost of labeling it -1).
    source_cap: Vec<f64>,
    /// Capacity from each pixel into the sink (cost of labeling it +1).
    sink_cap: Vec<f64>,
    /// Symmetric transition cost per canonical lattice edge.
    edge_cap: Vec<f64>,
    shift: f64,
}

impl FlowNetwork {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Constant to add to a cut value to recover the objective value.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn source_capacities(&self) -> &[f64] {
        &self.source_cap
    }

    pub fn sink_capacities(&self) -> &[f64] {
        &self.sink_cap
    }

    pub fn edge_capacities(&self) -> &[f64] {
        &self.edge_cap
    }
}

/// Builds the flow network whose minimum cut minimizes
/// `E(y) - Delta(loss_reference, y)` when a reference mask is supplied,
/// or `E(y)` otherwise.
pub fn build_flow_network(
    stack: &PotentialStack,
    w: &ModelWeights,
    loss_reference: Option<&LabelMask>,
) -> Result<FlowNetwork> {
    if w.unary().len() != stack.unary_count() || w.pairwise().len() != stack.pairwise_count() {
        return Err(Error::DimensionMismatch(format!(
            "weights sized {}+{}, stack has {}+{} potentials",
            w.unary().len(),
            w.pairwise().len(),
            stack.unary_count(),
            stack.pairwise_count()
        )));
    }
    if let Some(neg) = w.pairwise().iter().find(|w| **w < 0.0) {
        return Err(Error::NegativePairwiseWeight(*neg));
    }
    if let Some(gt) = loss_reference {
        if gt.width() != stack.width() || gt.height() != stack.height() {
            return Err(Error::LatticeMismatch(
                gt.width(),
                gt.height(),
                stack.width(),
                stack.height(),
            ));
        }
    }

    let pixels = stack.pixel_count();
    let mut cost_pos = vec![0.0f64; pixels];
    let mut cost_neg = vec![0.0f64; pixels];
    for (k, map) in stack.unary_maps().iter().enumerate() {
        let wk = w.unary()[k];
        if wk == 0.0 {
            continue;
        }
        for i in 0..pixels {
            cost_pos[i] += wk * map.pos[i];
            cost_neg[i] += wk * map.neg[i];
        }
    }
    if let Some(gt) = loss_reference {
        for (i, &label) in gt.labels().iter().enumerate() {
            // Disagreement earns a loss of 1, i.e. costs -1.
            if label == MASS {
                cost_neg[i] -= 1.0;
            } else {
                cost_pos[i] -= 1.0;
            }
        }
    }

    let mut shift = 0.0;
    let mut source_cap = vec![0.0f64; pixels];
    let mut sink_cap = vec![0.0f64; pixels];
    for i in 0..pixels {
        let m = cost_pos[i].min(cost_neg[i]);
        shift += m;
        sink_cap[i] = cost_pos[i] - m;
        source_cap[i] = cost_neg[i] - m;
    }

    let mut edge_cap = vec![0.0f64; stack.edge_count()];
    for (l, coeffs) in stack.pairwise_maps().iter().enumerate() {
        let wl = w.pairwise()[l];
        if wl == 0.0 {
            continue;
        }
        for (cap, c) in edge_cap.iter_mut().zip(coeffs) {
            *cap += wl * c;
        }
    }

    Ok(FlowNetwork {
        width: stack.width(),
        height: stack.height(),
        source_cap,
        sink_cap,
        edge_cap,
        shift,
    })
}

/// Solves the network by breadth-first augmenting paths and returns the
/// minimum-cut labeling (source side maps to +1) together with the cut
/// value. Deterministic: arc order is fixed by construction.
pub fn min_cut(net: &FlowNetwork) -> (LabelMask, f64) {
    let pixels = net.width * net.height;
    let source = pixels as u32;
    let sink = pixels as u32 + 1;
    let node_count = pixels + 2;

    let mut arcs: Vec<Arc> = Vec::with_capacity(4 * pixels + 4 * net.edge_cap.len());
    let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); node_count];
    let link = |arcs: &mut Vec<Arc>, adjacency: &mut Vec<Vec<u32>>, from: u32, to: u32, cap: f64, rev_cap: f64| {
        let a = arcs.len() as u32;
        arcs.push(Arc {
            to,
            residual: cap,
            rev: a + 1,
        });
        arcs.push(Arc {
            to: from,
            residual: rev_cap,
            rev: a,
        });
        adjacency[from as usize].push(a);
        adjacency[to as usize].push(a + 1);
    };

    for i in 0..pixels {
        if net.source_cap[i] > 0.0 {
            link(&mut arcs, &mut adjacency, source, i as u32, net.source_cap[i], 0.0);
        }
        if net.sink_cap[i] > 0.0 {
            link(&mut arcs, &mut adjacency, i as u32, sink, net.sink_cap[i], 0.0);
        }
    }
    for (e, (i, j)) in crate::lattice::lattice_edges(net.width, net.height).enumerate() {
        if net.edge_cap[e] > 0.0 {
            // Symmetric transition cost: full capacity in both directions.
            link(&mut arcs, &mut adjacency, i as u32, j as u32, net.edge_cap[e], net.edge_cap[e]);
        }
    }

    let mut flow = 0.0f64;
    let mut parent_arc: Vec<u32> = vec![u32::MAX; node_count];
    let mut queue = std::collections::VecDeque::new();
    loop {
        parent_arc.fill(u32::MAX);
        queue.clear();
        queue.push_back(source);
        let mut reached_sink = false;
        'bfs: while let Some(u) = queue.pop_front() {
            for &a in &adjacency[u as usize] {
                let arc = &arcs[a as usize];
                if arc.residual > RESIDUAL_EPS
                    && parent_arc[arc.to as usize] == u32::MAX
                    && arc.to != source
                {
                    parent_arc[arc.to as usize] = a;
                    if arc.to == sink {
                        reached_sink = true;
                        break 'bfs;
                    }
                    queue.push_back(arc.to);
                }
            }
        }
        if !reached_sink {
            break;
        }

        let mut bottleneck = f64::INFINITY;
        let mut node = sink;
        while node != source {
            let a = parent_arc[node as usize];
            bottleneck = bottleneck.min(arcs[a as usize].residual);
            node = arcs[arcs[a as usize].rev as usize].to;
        }
        flow += bottleneck;
        let mut node = sink;
        while node != source {
            let a = parent_arc[node as usize] as usize;
            let rev = arcs[a].rev as usize;
            arcs[a].residual -= bottleneck;
            arcs[rev].residual += bottleneck;
            node = arcs[rev].to;
        }
    }

    // Source side of the cut = nodes still reachable in the residual graph.
    let mut reachable = vec![false; node_count];
    reachable[source as usize] = true;
    queue.clear();
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        for &a in &adjacency[u as usize] {
            let arc = &arcs[a as usize];
            if arc.residual > RESIDUAL_EPS && !reachable[arc.to as usize] {
                reachable[arc.to as usize] = true;
                queue.push_back(arc.to);
            }
        }
    }

    let labels: Vec<i8> = (0..pixels)
        .map(|i| if reachable[i] { MASS } else { BACKGROUND })
        .collect();
    let mask = LabelMask::new(net.width, net.height, labels).expect("valid labels");
    (mask, flow)
}

/// Exact MAP labeling: `argmin_y E(y)`.
pub fn infer(stack: &PotentialStack, w: &ModelWeights) -> Result<LabelMask> {
    let net = build_flow_network(stack, w, None)?;
    Ok(min_cut(&net).0)
}

/// Loss-augmented inference: `argmin_y [E(y) - Delta(gt, y)]`, the most
/// violated labeling of the margin constraints.
pub fn infer_loss_augmented(
    stack: &PotentialStack,
    w: &ModelWeights,
    gt: &LabelMask,
) -> Result<LabelMask> {
    let net = build_flow_network(stack, w, Some(gt))?;
    Ok(min_cut(&net).0)
}
