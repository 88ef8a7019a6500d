use super::{grad_hess, log_loss, DetectorError, TrainConfig, Tree, TreeEnsemble, TreeNode};
use crate::features::FeatureSchema;

/// Candidates within this relative distance of the best gain count as tied.
pub const GAIN_TIE_TOLERANCE: f64 = 1e-9;

/// A split must beat this gain (after subtracting `min_split_gain`).
pub const MIN_SPLIT_GAIN_EPSILON: f64 = 1e-12;

const DONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean log-loss before training, then after each round.
    pub round_loss: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Trains an ensemble; see [`train_with_report`].
pub fn train<R: AsRef<[f64]>>(
    rows: &[R],
    labels: &[u8],
    schema: &FeatureSchema,
    config: &TrainConfig,
) -> Result<TreeEnsemble, DetectorError> {
    train_with_report(rows, labels, schema, config).map(|(model, _)| model)
}

fn check_inputs<R: AsRef<[f64]>>(
    rows: &[R],
    labels: &[u8],
    schema: &FeatureSchema,
    config: &TrainConfig,
) -> Result<(), DetectorError> {
    config.validate()?;
    if rows.is_empty() {
        return Err(DetectorError::EmptyDataset);
    }
    if rows.len() != labels.len() {
        return Err(DetectorError::LabelCountMismatch { rows: rows.len(), labels: labels.len() });
    }
    if rows.len() >= DONE as usize {
        return Err(DetectorError::InvalidConfig("too many rows".into()));
    }
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != schema.arity() {
            return Err(DetectorError::ArityMismatch { row: i, expected: schema.arity(), found: row.len() });
        }
        if let Some(col) = row.iter().position(|v| !v.is_finite()) {
            return Err(DetectorError::NonFiniteFeature { row: i, col });
        }
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, l)| **l > 1) {
        return Err(DetectorError::InvalidLabel { row, label });
    }
    Ok(())
}

/// Runs `config.rounds` of Newton boosting from margin 0.
///
/// Trees grow level by level to `max_depth` using exact splits over the
/// sorted distinct values of each feature, with midpoint thresholds and
/// rows routed left when `x < threshold`. Among candidates whose gain is
/// within [`GAIN_TIE_TOLERANCE`] of the best, the lowest feature index and
/// then the lowest threshold wins.
pub fn train_with_report<R: AsRef<[f64]>>(
    rows: &[R],
    labels: &[u8],
    schema: &FeatureSchema,
    config: &TrainConfig,
) -> Result<(TreeEnsemble, TrainReport), DetectorError> {
    check_inputs(rows, labels, schema, config)?;
    let rows: Vec<&[f64]> = rows.iter().map(AsRef::as_ref).collect();
    let n = rows.len();
    let mut report = TrainReport::default();
    let positives = labels.iter().filter(|l| **l == 1).count();
    if positives == 0 || positives == n {
        report.warnings.push(format!(
            "degenerate labels: every row is labelled {}; the model converges to a constant",
            labels[0]
        ));
    }

    let order: Vec<Vec<u32>> = (0..schema.arity())
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|a, b| rows[*a as usize][f].total_cmp(&rows[*b as usize][f]).then(a.cmp(b)));
            idx
        })
        .collect();

    let base_margin = 0.0;
    let mut margins = vec![base_margin; n];
    let mean_loss = |m: &[f64]| m.iter().zip(labels).map(|(m, y)| log_loss(*m, *y)).sum::<f64>() / n as f64;
    report.round_loss.push(mean_loss(&margins));

    let mut trees = Vec::with_capacity(config.rounds);
    let mut grads = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..config.rounds {
        for i in 0..n {
            (grads[i], hess[i]) = grad_hess(margins[i], labels[i]);
        }
        let (tree, leaf_of) = grow_tree(&rows, &order, &grads, &hess, config);
        for i in 0..n {
            margins[i] += config.learning_rate * tree.nodes[leaf_of[i] as usize].value();
        }
        trees.push(tree);
        report.round_loss.push(mean_loss(&margins));
    }

    let model = TreeEnsemble {
        trees,
        learning_rate: config.learning_rate,
        base_margin,
        feature_schema: schema.clone(),
        config: config.clone(),
    };
    Ok((model, report))
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn tie_floor(best: f64) -> f64 {
    best - GAIN_TIE_TOLERANCE * best.abs().max(1.0)
}

/// Split candidates in `(feature, threshold)` order, pruned to those that
/// may still tie with the best.
#[derive(Debug, Default)]
struct Search {
    best: f64,
    kept: Vec<Candidate>,
}

impl Search {
    fn offer(&mut self, c: Candidate) {
        if self.kept.is_empty() || c.gain > self.best {
            self.best = if self.kept.is_empty() { c.gain } else { self.best.max(c.gain) };
            let floor = tie_floor(self.best);
            self.kept.retain(|k| k.gain >= floor);
            self.kept.push(c);
        } else if c.gain >= tie_floor(self.best) {
            self.kept.push(c);
        }
    }

    fn winner(&self) -> Option<Candidate> {
        let floor = tie_floor(self.best);
        self.kept.iter().find(|c| c.gain >= floor).copied()
    }
}

struct Frontier {
    arena: usize,
    g: f64,
    h: f64,
}

/// Midpoint of two adjacent distinct values, nudged up when it rounds onto `a`.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) / 2.0;
    if mid <= a {
        b
    } else {
        mid
    }
}

pub(crate) fn split_gain(gl: f64, hl: f64, g: f64, h: f64, config: &TrainConfig) -> Option<f64> {
    let (gr, hr) = (g - gl, h - hl);
    let lambda = config.l2_weight;
    if hl < config.min_child_hessian || hr < config.min_child_hessian {
        return None;
    }
    if hl + lambda <= 0.0 || hr + lambda <= 0.0 || h + lambda <= 0.0 {
        return None;
    }
    let gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - config.min_split_gain;
    gain.is_finite().then_some(gain)
}

pub(crate) fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 {
        -g / denom
    } else {
        0.0
    }
}

/// Grows one tree; returns it with each row's leaf index.
fn grow_tree(
    rows: &[&[f64]],
    order: &[Vec<u32>],
    grads: &[f64],
    hess: &[f64],
    config: &TrainConfig,
) -> (Tree, Vec<u32>) {
    let n = rows.len();
    let mut nodes: Vec<TreeNode> = vec![TreeNode::Leaf { weight: 0.0, cover: 0.0 }];
    let mut slot_of = vec![0u32; n];
    let mut leaf_of = vec![0u32; n];
    let (g0, h0) = (grads.iter().sum(), hess.iter().sum());
    let mut frontier = vec![Frontier { arena: 0, g: g0, h: h0 }];

    for _depth in 0..config.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut searches: Vec<Search> = frontier.iter().map(|_| Search::default()).collect();
        for (f, sorted) in order.iter().enumerate() {
            let mut gl = vec![0.0f64; frontier.len()];
            let mut hl = vec![0.0f64; frontier.len()];
            let mut last: Vec<Option<f64>> = vec![None; frontier.len()];
            for &r in sorted {
                let slot = slot_of[r as usize];
                if slot == DONE {
                    continue;
                }
                let s = slot as usize;
                let v = rows[r as usize][f];
                if let Some(prev) = last[s] {
                    if v > prev {
                        if let Some(gain) = split_gain(gl[s], hl[s], frontier[s].g, frontier[s].h, config) {
                            searches[s].offer(Candidate { feature: f, threshold: midpoint(prev, v), gain });
                        }
                    }
                }
                gl[s] += grads[r as usize];
                hl[s] += hess[r as usize];
                last[s] = Some(v);
            }
        }

        let splits: Vec<Option<Candidate>> = searches
            .iter()
            .map(|s| s.winner().filter(|c| c.gain > MIN_SPLIT_GAIN_EPSILON))
            .collect();

        // child slot pairs in the next frontier, per current slot
        let mut next = Vec::new();
        let mut child_slots = vec![None; frontier.len()];
        for (s, node) in frontier.iter().enumerate() {
            match splits[s] {
                Some(c) => {
                    let left = nodes.len();
                    nodes.push(TreeNode::Leaf { weight: 0.0, cover: 0.0 });
                    nodes.push(TreeNode::Leaf { weight: 0.0, cover: 0.0 });
                    nodes[node.arena] = TreeNode::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right: left + 1,
                        value: 0.0,
                        cover: node.h,
                    };
                    child_slots[s] = Some(next.len() as u32);
                    next.push(Frontier { arena: left, g: 0.0, h: 0.0 });
                    next.push(Frontier { arena: left + 1, g: 0.0, h: 0.0 });
                }
                None => {
                    nodes[node.arena] =
                        TreeNode::Leaf { weight: leaf_weight(node.g, node.h, config.l2_weight), cover: node.h };
                }
            }
        }
        for r in 0..n {
            let slot = slot_of[r];
            if slot == DONE {
                continue;
            }
            let s = slot as usize;
            match (splits[s], child_slots[s]) {
                (Some(c), Some(first)) => {
                    let child = if rows[r][c.feature] < c.threshold { first } else { first + 1 };
                    slot_of[r] = child;
                    next[child as usize].g += grads[r];
                    next[child as usize].h += hess[r];
                }
                _ => {
                    leaf_of[r] = frontier[s].arena as u32;
                    slot_of[r] = DONE;
                }
            }
        }
        frontier = next;
    }

    for node in &frontier {
        nodes[node.arena] = TreeNode::Leaf { weight: leaf_weight(node.g, node.h, config.l2_weight), cover: node.h };
    }
    for r in 0..n {
        if slot_of[r] != DONE {
            leaf_of[r] = frontier[slot_of[r] as usize].arena as u32;
        }
    }

    let mut tree = Tree { nodes };
    assign_node_values(&mut tree);
    (tree, leaf_of)
}

/// Sets every split's value to the cover-weighted mean of its leaves.
/// Children always sit after their parent in the arena.
pub(crate) fn assign_node_values(tree: &mut Tree) {
    let len = tree.nodes.len();
    // (Σ cover·weight, Σ cover, Σ weight, leaf count)
    let mut acc = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); len];
    for i in (0..len).rev() {
        match tree.nodes[i] {
            TreeNode::Leaf { weight, cover } => acc[i] = (cover * weight, cover, weight, 1),
            TreeNode::Split { left, right, ref mut value, .. } => {
                let (a, b) = (acc[left], acc[right]);
                let sum = (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3);
                *value = if sum.1 > 0.0 { sum.0 / sum.1 } else { sum.2 / sum.3 as f64 };
                acc[i] = sum;
            }
        }
    }
}
