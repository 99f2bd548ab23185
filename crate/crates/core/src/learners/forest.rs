//! Random forest of CART regression trees exposed as a weight smoother.
//!
//! Each tree grows on a bootstrap resample with axis-aligned
//! variance-reduction splits over a random feature subset per node. After
//! growth, leaves are repopulated with the full training set by traversal,
//! and a query point's weight on training row `i` is the average over trees
//! of `1{i ∈ leaf(x)} / |leaf(x)|`. Per-tree weights sum to one, so the
//! forest weights form a simplex by construction.

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LearnerError, WeightSmoother};
use crate::exec;

/// Minimum leaf size, either as a fraction of the training-set size or as an
/// absolute sample count. Bootstrap multiplicities count toward the minimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinLeaf {
    Fraction(f64),
    Count(usize),
}

impl MinLeaf {
    fn resolve(&self, m: usize) -> Result<f64, LearnerError> {
        match *self {
            MinLeaf::Fraction(f) => {
                if !(f > 0.0 && f < 1.0) {
                    return Err(LearnerError::BadSpec(format!("min leaf fraction {f}")));
                }
                Ok((f * m as f64).ceil().max(1.0))
            }
            MinLeaf::Count(c) => {
                if c == 0 {
                    return Err(LearnerError::BadSpec("min leaf count 0".into()));
                }
                Ok(c as f64)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestSpec {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_leaf: MinLeaf,
    /// Features tried per node; `None` means ⌈d/3⌉.
    pub max_features: Option<usize>,
}

impl Default for ForestSpec {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: 6,
            min_leaf: MinLeaf::Fraction(0.05),
            max_features: None,
        }
    }
}

enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        start: u32,
        len: u32,
    },
}

struct Tree {
    nodes: Vec<Node>,
    // distinct training-row ids, partitioned so each leaf owns a slice
    members: Vec<u32>,
}

impl Tree {
    fn leaf_node_of(&self, x: ArrayView1<f64>) -> usize {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { .. } => return node,
            }
        }
    }

    fn leaf_members(&self, x: ArrayView1<f64>) -> &[u32] {
        match &self.nodes[self.leaf_node_of(x)] {
            Node::Leaf { start, len } => {
                &self.members[*start as usize..(*start + *len) as usize]
            }
            Node::Split { .. } => unreachable!("leaf_node_of returns leaves"),
        }
    }
}

pub struct ForestSmoother {
    trees: Vec<Tree>,
    n_train: usize,
}

impl ForestSmoother {
    pub fn fit(
        x: ArrayView2<f64>,
        targets: Option<&[f64]>,
        spec: &ForestSpec,
        seed: u64,
    ) -> Result<Self, LearnerError> {
        let (m, d) = (x.nrows(), x.ncols());
        if m == 0 || d == 0 {
            return Err(LearnerError::EmptyInput);
        }
        if spec.n_estimators == 0 || spec.max_depth == 0 {
            return Err(LearnerError::BadSpec(
                "n_estimators and max_depth must be positive".into(),
            ));
        }
        let min_leaf = spec.min_leaf.resolve(m)?;
        let mtry = spec
            .max_features
            .unwrap_or_else(|| d.div_ceil(3))
            .clamp(1, d);
        // splitting on a constant target degenerates to random splits; the
        // uniform fallback keeps weights meaningful either way
        let flat = vec![0.0; m];
        let t: &[f64] = match targets {
            Some(t) if t.len() == m => t,
            Some(t) => {
                return Err(LearnerError::BadSpec(format!(
                    "{} targets for {} rows",
                    t.len(),
                    m
                )))
            }
            None => &flat,
        };
        let trees = exec::par_map(spec.n_estimators, |k| {
            let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(seed, k as u64));
            let mut tree = grow_tree(x, t, spec.max_depth, min_leaf, mtry, &mut rng);
            repopulate_leaves(&mut tree, x);
            tree
        });
        Ok(Self { trees, n_train: m })
    }
}

/// Leaf occupancy of an external row set under an already-grown forest:
/// `members[t][node]` lists the external rows landing in that node of tree
/// `t`. Lets second-stage smoothers learn the partition on one half-sample
/// and weight the other half's pseudo-outcomes.
pub struct LeafOccupancy {
    members: Vec<Vec<Vec<u32>>>,
    pub n_rows: usize,
}

impl ForestSmoother {
    /// Drops `rows` down every tree and records, per tree and node, which
    /// rows occupy each leaf.
    pub fn occupy(&self, rows: ArrayView2<f64>) -> LeafOccupancy {
        let members = self
            .trees
            .iter()
            .map(|tree| {
                let mut per_node: Vec<Vec<u32>> = vec![Vec::new(); tree.nodes.len()];
                for (r, row) in rows.rows().into_iter().enumerate() {
                    per_node[tree.leaf_node_of(row)].push(r as u32);
                }
                per_node
            })
            .collect();
        LeafOccupancy {
            members,
            n_rows: rows.nrows(),
        }
    }

    /// Simplex weights over the occupancy rows for a query point. Trees whose
    /// leaf holds no external row are skipped; if every tree comes up empty
    /// the weights fall back to uniform.
    pub fn external_weights(&self, occ: &LeafOccupancy, x: ArrayView1<f64>) -> Vec<f64> {
        let mut w = vec![0.0f64; occ.n_rows];
        let mut used = 0usize;
        for (tree, per_node) in self.trees.iter().zip(&occ.members) {
            let members = &per_node[tree.leaf_node_of(x)];
            if members.is_empty() {
                continue;
            }
            used += 1;
            let share = 1.0 / members.len() as f64;
            for &i in members {
                w[i as usize] += share;
            }
        }
        if used == 0 {
            return vec![1.0 / occ.n_rows as f64; occ.n_rows];
        }
        let inv = 1.0 / used as f64;
        let mut sum = 0.0;
        for wi in w.iter_mut() {
            *wi *= inv;
            sum += *wi;
        }
        for wi in w.iter_mut() {
            *wi /= sum;
        }
        w
    }
}

impl WeightSmoother for ForestSmoother {
    fn weights(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let mut w = vec![0.0f64; self.n_train];
        for tree in &self.trees {
            let members = tree.leaf_members(x);
            let share = 1.0 / members.len() as f64;
            for &i in members {
                w[i as usize] += share;
            }
        }
        let inv = 1.0 / self.trees.len() as f64;
        let mut sum = 0.0;
        for wi in w.iter_mut() {
            *wi *= inv;
            sum += *wi;
        }
        // exact up to rounding; renormalize to meet the 1e-9 contract
        if sum > 0.0 {
            for wi in w.iter_mut() {
                *wi /= sum;
            }
        }
        w
    }

    fn n_train(&self) -> usize {
        self.n_train
    }
}

fn grow_tree(
    x: ArrayView2<f64>,
    targets: &[f64],
    max_depth: usize,
    min_leaf: f64,
    mtry: usize,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let m = x.nrows();
    let d = x.ncols();

    // bootstrap with replacement, kept as per-row counts
    let mut counts = vec![0u32; m];
    for _ in 0..m {
        counts[rng.random_range(0..m)] += 1;
    }
    let mut members: Vec<u32> = (0..m as u32).filter(|&i| counts[i as usize] > 0).collect();

    let mut nodes: Vec<Node> = Vec::new();
    nodes.push(Node::Leaf { start: 0, len: 0 }); // root placeholder
    let mut queue: Vec<(usize, usize, usize, usize)> = vec![(0, 0, members.len(), 0)];
    let mut features: Vec<usize> = (0..d).collect();
    let mut scratch: Vec<(f64, u32)> = Vec::with_capacity(members.len());

    while let Some((slot, start, len, depth)) = queue.pop() {
        let slice = &members[start..start + len];
        let total_w: f64 = slice.iter().map(|&i| counts[i as usize] as f64).sum();
        let make_leaf = depth >= max_depth || total_w < 2.0 * min_leaf || len < 2;
        let best = if make_leaf {
            None
        } else {
            find_best_split(
                x,
                targets,
                &counts,
                slice,
                total_w,
                min_leaf,
                mtry,
                &mut features,
                &mut scratch,
                rng,
            )
        };
        match best {
            None => {
                nodes[slot] = Node::Leaf {
                    start: start as u32,
                    len: len as u32,
                };
            }
            Some((feature, threshold)) => {
                // partition the slice in place around the threshold
                let slice = &mut members[start..start + len];
                slice.sort_unstable_by(|&a, &b| {
                    x[[a as usize, feature]].total_cmp(&x[[b as usize, feature]])
                });
                let split_at = slice.partition_point(|&i| x[[i as usize, feature]] <= threshold);
                let left = nodes.len();
                nodes.push(Node::Leaf { start: 0, len: 0 });
                let right = nodes.len();
                nodes.push(Node::Leaf { start: 0, len: 0 });
                nodes[slot] = Node::Split {
                    feature: feature as u32,
                    threshold,
                    left: left as u32,
                    right: right as u32,
                };
                queue.push((right, start + split_at, len - split_at, depth + 1));
                queue.push((left, start, split_at, depth + 1));
            }
        }
    }
    Tree { nodes, members }
}

// Leaf membership is defined over the whole training set, not just the
// bootstrap draw that shaped the splits: every row is routed to its leaf and
// the arena is rewritten in leaf order.
fn repopulate_leaves(tree: &mut Tree, x: ArrayView2<f64>) {
    let m = x.nrows();
    let mut leaf_of = vec![0u32; m];
    let mut counts: Vec<u32> = vec![0; tree.nodes.len()];
    for i in 0..m {
        let node = tree.leaf_node_of(x.row(i)) as u32;
        leaf_of[i] = node;
        counts[node as usize] += 1;
    }
    let mut starts: Vec<u32> = vec![0; tree.nodes.len()];
    let mut acc = 0u32;
    for (node, c) in counts.iter().enumerate() {
        starts[node] = acc;
        acc += c;
        if let Node::Leaf { start, len } = &mut tree.nodes[node] {
            *start = starts[node];
            *len = *c;
        }
    }
    let mut members = vec![0u32; m];
    let mut cursor = starts;
    for (i, &node) in leaf_of.iter().enumerate() {
        members[cursor[node as usize] as usize] = i as u32;
        cursor[node as usize] += 1;
    }
    tree.members = members;
}

// Best (feature, threshold) by weighted variance reduction, i.e. maximal
// sum_L²/w_L + sum_R²/w_R. Returns None when no split satisfies the leaf
// minimum or every candidate feature is constant on the node.
#[allow(clippy::too_many_arguments)]
fn find_best_split(
    x: ArrayView2<f64>,
    targets: &[f64],
    counts: &[u32],
    slice: &[u32],
    total_w: f64,
    min_leaf: f64,
    mtry: usize,
    features: &mut [usize],
    scratch: &mut Vec<(f64, u32)>,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, f64)> {
    let d = features.len();
    // partial Fisher-Yates: first `mtry` entries become the candidate set
    for k in 0..mtry.min(d) {
        let j = rng.random_range(k..d);
        features.swap(k, j);
    }
    let total_sum: f64 = slice
        .iter()
        .map(|&i| counts[i as usize] as f64 * targets[i as usize])
        .sum();

    let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, score)
    for &feature in features[..mtry.min(d)].iter() {
        scratch.clear();
        scratch.extend(slice.iter().map(|&i| (x[[i as usize, feature]], i)));
        scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut w_l = 0.0;
        let mut sum_l = 0.0;
        for p in 0..scratch.len() - 1 {
            let (v, i) = scratch[p];
            let c = counts[i as usize] as f64;
            w_l += c;
            sum_l += c * targets[i as usize];
            let v_next = scratch[p + 1].0;
            if v == v_next {
                continue;
            }
            let w_r = total_w - w_l;
            if w_l < min_leaf || w_r < min_leaf {
                continue;
            }
            let sum_r = total_sum - sum_l;
            let score = sum_l * sum_l / w_l + sum_r * sum_r / w_r;
            if best.map_or(true, |(_, _, s)| score > s) {
                best = Some((feature, 0.5 * (v + v_next), score));
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn step_data(n: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-2.0..2.0));
        let y: Vec<f64> = (0..n)
            .map(|i| if x[[i, 0]] > 0.0 { 3.0 } else { -3.0 })
            .collect();
        (x, y)
    }

    #[test]
    fn learns_a_step_function() {
        let (x, y) = step_data(600, 1);
        let sm = ForestSmoother::fit(x.view(), Some(&y), &ForestSpec::default(), 5).unwrap();
        for (x0, want) in [(-1.5, -3.0), (-0.4, -3.0), (0.4, 3.0), (1.5, 3.0)] {
            let w = sm.weights(array![x0, 0.0].view());
            let pred: f64 = w.iter().zip(&y).map(|(wi, yi)| wi * yi).sum();
            assert!(
                (pred - want).abs() < 0.5,
                "prediction at {x0} was {pred}, want {want}"
            );
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = step_data(200, 2);
        let a = ForestSmoother::fit(x.view(), Some(&y), &ForestSpec::default(), 9).unwrap();
        let b = ForestSmoother::fit(x.view(), Some(&y), &ForestSpec::default(), 9).unwrap();
        let q = array![0.3, -0.7];
        assert_eq!(a.weights(q.view()), b.weights(q.view()));
        let c = ForestSmoother::fit(x.view(), Some(&y), &ForestSpec::default(), 10).unwrap();
        assert_ne!(a.weights(q.view()), c.weights(q.view()));
    }

    #[test]
    fn respects_min_leaf_count() {
        let (x, y) = step_data(100, 3);
        let spec = ForestSpec {
            n_estimators: 20,
            max_depth: 20,
            min_leaf: MinLeaf::Count(30),
            max_features: Some(2),
        };
        let sm = ForestSmoother::fit(x.view(), Some(&y), &spec, 4).unwrap();
        for tree in &sm.trees {
            for node in &tree.nodes {
                if let Node::Leaf { len, .. } = node {
                    // distinct members can undershoot the weighted minimum,
                    // but not by more than the bootstrap duplication factor
                    assert!(*len >= 10, "leaf with {len} distinct members");
                }
            }
        }
    }

    #[test]
    fn constant_design_yields_single_leaf() {
        let x = Array2::from_elem((30, 2), 1.0);
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let sm = ForestSmoother::fit(x.view(), Some(&y), &ForestSpec::default(), 6).unwrap();
        for tree in &sm.trees {
            assert_eq!(tree.nodes.len(), 1);
        }
        let w = sm.weights(array![1.0, 1.0].view());
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_specs_rejected() {
        let (x, y) = step_data(50, 8);
        let bad = ForestSpec {
            n_estimators: 0,
            ..ForestSpec::default()
        };
        assert!(ForestSmoother::fit(x.view(), Some(&y), &bad, 0).is_err());
        let bad = ForestSpec {
            min_leaf: MinLeaf::Fraction(1.5),
            ..ForestSpec::default()
        };
        assert!(ForestSmoother::fit(x.view(), Some(&y), &bad, 0).is_err());
    }
}
