//! Plain CART trees (regression and ±1 classification) used by the
//! imputation forests. Splits minimize within-child sum of squares, which for
//! ±1 labels is equivalent to the Gini criterion.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct CartConfig {
    /// Candidate features per node.
    pub mtry: usize,
    /// Minimum rows per child (bootstrap repeats counted).
    pub min_node: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CartKind {
    Regression,
    /// Labels are ±1; leaves predict the majority sign, ties +1.
    Classification,
}

#[derive(Debug, Clone)]
pub enum CartNode {
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    Leaf { value: f64 },
}

#[derive(Debug, Clone)]
pub struct CartTree {
    pub nodes: Vec<CartNode>,
}

/// Grow one tree on the row multiset `rows` (repeats allowed). `columns` are
/// the predictor columns, `y` the target, both indexed by row id.
pub fn grow_cart(
    columns: &[&[f64]],
    rows: &[usize],
    y: &[f64],
    kind: CartKind,
    cfg: &CartConfig,
    rng: &mut ChaCha8Rng,
) -> CartTree {
    assert!(!rows.is_empty(), "cart tree needs at least one row");
    let mut builder = CartBuilder {
        columns,
        y,
        kind,
        mtry: cfg.mtry.clamp(1, columns.len().max(1)),
        min_node: cfg.min_node.max(1),
        nodes: Vec::new(),
        pool: (0..columns.len()).collect(),
        scratch: Vec::new(),
    };
    builder.build(rows.to_vec(), rng);
    CartTree { nodes: builder.nodes }
}

/// Route a row through the tree using an arbitrary feature accessor.
pub fn predict_row(tree: &CartTree, mut value: impl FnMut(usize) -> f64) -> f64 {
    let mut cur = 0usize;
    loop {
        match &tree.nodes[cur] {
            CartNode::Leaf { value } => return *value,
            CartNode::Split { feature, threshold, left, right } => {
                cur = if value(*feature as usize) <= *threshold {
                    *left as usize
                } else {
                    *right as usize
                };
            }
        }
    }
}

struct CartBuilder<'a> {
    columns: &'a [&'a [f64]],
    y: &'a [f64],
    kind: CartKind,
    mtry: usize,
    min_node: usize,
    nodes: Vec<CartNode>,
    pool: Vec<usize>,
    scratch: Vec<usize>,
}

impl CartBuilder<'_> {
    fn build(&mut self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> u32 {
        let idx = self.nodes.len() as u32;
        self.nodes.push(CartNode::Leaf { value: 0.0 });

        match self.choose_split(&rows, rng) {
            None => {
                self.nodes[idx as usize] = CartNode::Leaf { value: self.leaf_value(&rows) };
            }
            Some((feature, threshold)) => {
                let (left, right): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&r| self.columns[feature][r] <= threshold);
                let li = self.build(left, rng);
                let ri = self.build(right, rng);
                self.nodes[idx as usize] = CartNode::Split {
                    feature: feature as u32,
                    threshold,
                    left: li,
                    right: ri,
                };
            }
        }
        idx
    }

    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let mean = rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64;
        match self.kind {
            CartKind::Regression => mean,
            CartKind::Classification => {
                if mean >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    fn choose_split(&mut self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let n = rows.len();
        if n < 2 * self.min_node || self.columns.is_empty() {
            return None;
        }
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let first = self.y[rows[0]];
        if rows.iter().all(|&r| self.y[r] == first) {
            return None;
        }
        let base = total * total / n as f64;

        let m = self.pool.len();
        let k_draw = self.mtry.min(m);
        for k in 0..k_draw {
            let j = k + rng.random_range(0..(m - k));
            self.pool.swap(k, j);
        }
        let mut candidates: Vec<usize> = self.pool[..k_draw].to_vec();
        candidates.sort_unstable();

        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = std::mem::take(&mut self.scratch);
        for &f in &candidates {
            let col = self.columns[f];
            order.clear();
            order.extend(rows.iter().copied());
            order.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap().then(a.cmp(&b)));

            let mut sum_l = 0.0;
            for (k, &r) in order.iter().enumerate() {
                if k > 0 && col[r] != col[order[k - 1]] && k >= self.min_node && n - k >= self.min_node
                {
                    let nl = k as f64;
                    let nr = (n - k) as f64;
                    let sr = total - sum_l;
                    let score = sum_l * sum_l / nl + sr * sr / nr;
                    // Strict improvement over no split; ties keep the
                    // earlier (lower feature, lower threshold) candidate.
                    if score > base && best.map_or(true, |(s, _, _)| score > s) {
                        best = Some((score, f, 0.5 * (col[order[k - 1]] + col[r])));
                    }
                }
                sum_l += self.y[r];
            }
        }
        self.scratch = order;
        best.map(|(_, f, thr)| (f, thr))
    }
}
