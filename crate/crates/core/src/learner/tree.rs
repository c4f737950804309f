//! Depth-limited regression trees grown level by level over presorted
//! feature columns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// `leaf` numbers the tree's leaves densely from 0.
    Leaf { value: f64, leaf: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub n_leaves: usize,
}

impl Tree {
    /// Leaf index and value reached by `x`.
    pub fn route(&self, x: &[f64]) -> (usize, f64) {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
                Node::Leaf { value, leaf } => return (leaf, value),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub(crate) fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value, .. } = n {
                *value *= factor;
            }
        }
    }

    pub(crate) fn leaf_values(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_leaves];
        for n in &self.nodes {
            if let Node::Leaf { value, leaf } = n {
                out[*leaf] = *value;
            }
        }
        out
    }
}

/// Training matrix in column-major form with per-feature sort orders.
pub(crate) struct ColumnData {
    pub columns: Vec<Vec<f64>>,
    pub sorted: Vec<Vec<u32>>,
}

impl ColumnData {
    pub fn new(rows: &[&[f64]], n_features: usize) -> Self {
        let columns: Vec<Vec<f64>> = (0..n_features).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
        let sorted = columns
            .par_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        ColumnData { columns, sorted }
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

/// Split gains at or below this are treated as no improvement.
const MIN_GAIN: f64 = 1e-12;
const UNASSIGNED: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Slot {
    node: usize,
    sum_r: f64,
    sum_h: f64,
    count: usize,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    threshold: f64,
}

#[derive(Clone, Copy, Default)]
struct Scan {
    left_sum: f64,
    left_count: usize,
    last: f64,
}

enum Pending {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
    Open,
}

/// Fit a tree to residuals `grad` by greedy variance reduction. Leaf values
/// are Newton steps `sum(grad) / sum(hess)`. Returns the tree and the leaf
/// index of every training row.
pub(crate) fn grow(data: &ColumnData, grad: &[f64], hess: &[f64], params: &GrowParams) -> (Tree, Vec<u32>) {
    let n = data.n_rows();
    let mut pending = vec![Pending::Open];
    let mut slot_of = vec![0u32; n];
    let mut frontier = vec![Slot {
        node: 0,
        sum_r: grad.iter().sum(),
        sum_h: hess.iter().sum(),
        count: n,
    }];
    let newton = |s: &Slot| s.sum_r / s.sum_h.max(1e-12);

    for _depth in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let per_feature: Vec<Vec<Option<Candidate>>> = (0..data.columns.len())
            .into_par_iter()
            .map(|f| {
                best_splits(
                    &data.columns[f],
                    &data.sorted[f],
                    &slot_of,
                    grad,
                    &frontier,
                    params.min_leaf,
                )
            })
            .collect();

        let mut decisions: Vec<Option<(usize, f64)>> = vec![None; frontier.len()];
        for (s, decision) in decisions.iter_mut().enumerate() {
            let mut best: Option<(usize, Candidate)> = None;
            for (f, cands) in per_feature.iter().enumerate() {
                if let Some(c) = cands[s] {
                    if c.gain > MIN_GAIN && best.is_none_or(|(_, b)| c.gain > b.gain) {
                        best = Some((f, c));
                    }
                }
            }
            *decision = best.map(|(f, c)| (f, c.threshold));
        }

        // children: left slot 2k, right slot 2k+1 among split slots
        let mut next = Vec::new();
        let mut child_slot = vec![(UNASSIGNED, UNASSIGNED); frontier.len()];
        for (s, slot) in frontier.iter().enumerate() {
            match decisions[s] {
                Some((feature, threshold)) => {
                    let left = pending.len();
                    pending.push(Pending::Open);
                    pending.push(Pending::Open);
                    pending[slot.node] = Pending::Split {
                        feature,
                        threshold,
                        left,
                        right: left + 1,
                    };
                    child_slot[s] = (next.len() as u32, next.len() as u32 + 1);
                    for node in [left, left + 1] {
                        next.push(Slot {
                            node,
                            sum_r: 0.0,
                            sum_h: 0.0,
                            count: 0,
                        });
                    }
                }
                None => pending[slot.node] = Pending::Leaf(newton(slot)),
            }
        }
        for i in 0..n {
            let s = slot_of[i];
            if s == UNASSIGNED {
                continue;
            }
            let s = s as usize;
            match decisions[s] {
                Some((feature, threshold)) => {
                    let c = if data.columns[feature][i] <= threshold {
                        child_slot[s].0
                    } else {
                        child_slot[s].1
                    };
                    slot_of[i] = c;
                    let slot = &mut next[c as usize];
                    slot.sum_r += grad[i];
                    slot.sum_h += hess[i];
                    slot.count += 1;
                }
                None => slot_of[i] = UNASSIGNED,
            }
        }
        frontier = next;
    }
    for slot in &frontier {
        pending[slot.node] = Pending::Leaf(newton(slot));
    }

    let mut leaf_of_node = vec![UNASSIGNED; pending.len()];
    let mut n_leaves = 0usize;
    let nodes: Vec<Node> = pending
        .into_iter()
        .enumerate()
        .map(|(id, p)| match p {
            Pending::Split {
                feature,
                threshold,
                left,
                right,
            } => Node::Split {
                feature,
                threshold,
                left,
                right,
            },
            Pending::Leaf(value) => {
                leaf_of_node[id] = n_leaves as u32;
                n_leaves += 1;
                Node::Leaf {
                    value,
                    leaf: n_leaves - 1,
                }
            }
            Pending::Open => unreachable!("every node is resolved"),
        })
        .collect();
    let tree = Tree { nodes, n_leaves };

    let leaf_rows: Vec<u32> = (0..n)
        .map(|i| {
            let mut at = 0;
            loop {
                match tree.nodes[at] {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        at = if data.columns[feature][i] <= threshold {
                            left
                        } else {
                            right
                        }
                    }
                    Node::Leaf { leaf, .. } => return leaf as u32,
                }
            }
        })
        .collect();
    (tree, leaf_rows)
}

/// Best threshold per frontier slot for a single feature.
fn best_splits(
    column: &[f64],
    order: &[u32],
    slot_of: &[u32],
    grad: &[f64],
    frontier: &[Slot],
    min_leaf: usize,
) -> Vec<Option<Candidate>> {
    let mut scan = vec![Scan::default(); frontier.len()];
    let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
    for &row in order {
        let i = row as usize;
        let s = slot_of[i];
        if s == UNASSIGNED {
            continue;
        }
        let s = s as usize;
        let slot = &frontier[s];
        let value = column[i];
        let st = &mut scan[s];
        if st.left_count >= min_leaf && slot.count - st.left_count >= min_leaf && value > st.last {
            let lc = st.left_count as f64;
            let rc = (slot.count - st.left_count) as f64;
            let rs = slot.sum_r - st.left_sum;
            let gain = st.left_sum * st.left_sum / lc + rs * rs / rc - slot.sum_r * slot.sum_r / slot.count as f64;
            if best[s].is_none_or(|b| gain > b.gain) {
                let mut threshold = st.last + (value - st.last) / 2.0;
                if !(threshold < value) {
                    threshold = st.last;
                }
                best[s] = Some(Candidate { gain, threshold });
            }
        }
        st.left_sum += grad[i];
        st.left_count += 1;
        st.last = value;
    }
    best
}
