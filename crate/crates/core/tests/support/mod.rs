//! Exhaustive reference learner shared by the detector and acceptance suites.

use hcla_core::detector::TreeNode;

/// Exhaustive reference: every node re-enumerates every (feature, midpoint)
/// pair and sums gradients directly over the rows on each side.
pub mod reference {
    use hcla_core::detector::{grad_hess, TrainConfig, GAIN_TIE_TOLERANCE};

    #[derive(Debug)]
    pub enum Node {
        Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
        Leaf { weight: f64 },
    }

    impl Node {
        pub fn output(&self, row: &[f64]) -> f64 {
            match self {
                Node::Split { feature, threshold, left, right } => {
                    if row[*feature] < *threshold {
                        left.output(row)
                    } else {
                        right.output(row)
                    }
                }
                Node::Leaf { weight } => *weight,
            }
        }
    }

    fn mid(a: f64, b: f64) -> f64 {
        let m = (a + b) / 2.0;
        if m > a {
            m
        } else {
            b
        }
    }

    fn score(g: f64, h: f64, lambda: f64) -> f64 {
        g * g / (h + lambda)
    }

    #[allow(clippy::needless_range_loop)]
    pub fn grow(rows: &[Vec<f64>], idx: &[usize], g: &[f64], h: &[f64], depth: usize, c: &TrainConfig) -> Node {
        let gs: f64 = idx.iter().map(|i| g[*i]).sum();
        let hs: f64 = idx.iter().map(|i| h[*i]).sum();
        let leaf = Node::Leaf { weight: -gs / (hs + c.l2_weight) };
        if depth == c.max_depth {
            return leaf;
        }
        let mut cands = Vec::new();
        for f in 0..rows[0].len() {
            let mut vals: Vec<f64> = idx.iter().map(|i| rows[*i][f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = mid(w[0], w[1]);
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|i| rows[**i][f] < t);
                let gl: f64 = l.iter().map(|i| g[*i]).sum();
                let hl: f64 = l.iter().map(|i| h[*i]).sum();
                let gr: f64 = r.iter().map(|i| g[*i]).sum();
                let hr: f64 = r.iter().map(|i| h[*i]).sum();
                if hl < c.min_child_hessian || hr < c.min_child_hessian {
                    continue;
                }
                let gain = 0.5 * (score(gl, hl, c.l2_weight) + score(gr, hr, c.l2_weight) - score(gs, hs, c.l2_weight))
                    - c.min_split_gain;
                cands.push((f, t, gain, l, r));
            }
        }
        let Some(best) = cands.iter().map(|c| c.2).reduce(f64::max) else { return leaf };
        let floor = best - GAIN_TIE_TOLERANCE * best.abs().max(1.0);
        // candidates are generated in (feature, threshold) order
        let (f, t, gain, l, r) = cands.into_iter().find(|c| c.2 >= floor).unwrap();
        if gain <= 1e-12 {
            return leaf;
        }
        Node::Split {
            feature: f,
            threshold: t,
            left: Box::new(grow(rows, &l, g, h, depth + 1, c)),
            right: Box::new(grow(rows, &r, g, h, depth + 1, c)),
        }
    }

    pub fn train(rows: &[Vec<f64>], labels: &[u8], c: &TrainConfig) -> Vec<Node> {
        let mut margins = vec![0.0; rows.len()];
        let idx: Vec<usize> = (0..rows.len()).collect();
        let mut trees = Vec::new();
        for _ in 0..c.rounds {
            let (g, h): (Vec<f64>, Vec<f64>) = margins.iter().zip(labels).map(|(m, y)| grad_hess(*m, *y)).unzip();
            let tree = grow(rows, &idx, &g, &h, 0, c);
            for (m, row) in margins.iter_mut().zip(rows) {
                *m += c.learning_rate * tree.output(row);
            }
            trees.push(tree);
        }
        trees
    }
}

pub fn same_structure(nodes: &[TreeNode], i: usize, oracle: &reference::Node) -> Result<(), String> {
    match (&nodes[i], oracle) {
        (
            TreeNode::Split { feature, threshold, left, right, .. },
            reference::Node::Split { feature: f, threshold: t, left: l, right: r },
        ) => {
            if feature != f || threshold != t {
                return Err(format!("node {i}: split ({feature}, {threshold}) vs reference ({f}, {t})"));
            }
            same_structure(nodes, *left, l)?;
            same_structure(nodes, *right, r)
        }
        (TreeNode::Leaf { weight, .. }, reference::Node::Leaf { weight: w }) => {
            if (weight - w).abs() > 1e-9 * w.abs().max(1.0) {
                return Err(format!("node {i}: leaf {weight} vs reference {w}"));
            }
            Ok(())
        }
        (a, b) => Err(format!("node {i}: {a:?} vs reference {b:?}")),
    }
}

