//! CART regression trees with variance-reduction splits.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{RegressError, TreeParams};

/// A fitted tree stored as parallel node arrays. Node 0 is the root.
///
/// A node is a leaf when `feature[i] == LEAF`; otherwise rows with
/// `x[feature] <= threshold` go to `left[i]` and the rest to `right[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<u32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
    /// Weighted squared-error decrease of each split, 0 at leaves.
    pub gain: Vec<f64>,
}

pub const LEAF: u32 = u32::MAX;

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            let feature = self.feature[node];
            if feature == LEAF {
                return self.value[node];
            }
            node = if row[feature as usize] <= self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.feature.iter().filter(|&&f| f == LEAF).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(tree: &Tree, node: usize) -> usize {
            if tree.feature[node] == LEAF {
                0
            } else {
                1 + walk(tree, tree.left[node] as usize).max(walk(tree, tree.right[node] as usize))
            }
        }
        walk(self, 0)
    }

    /// Add each split's gain to its feature's slot.
    pub fn accumulate_gain(&self, out: &mut [f64]) {
        for (i, &f) in self.feature.iter().enumerate() {
            if f != LEAF {
                out[f as usize] += self.gain[i];
            }
        }
    }

    fn push_leaf(&mut self, value: f64) -> usize {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(LEAF);
        self.right.push(LEAF);
        self.value.push(value);
        self.gain.push(0.0);
        self.feature.len() - 1
    }
}

/// How many features each split may look at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Third,
    Fraction(f64),
}

impl MaxFeatures {
    pub fn count(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().round() as usize,
            MaxFeatures::Third => n_features / 3,
            MaxFeatures::Fraction(f) => (f * n_features as f64).round() as usize,
        };
        k.clamp(1, n_features.max(1))
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Grows one tree over `samples` (row indices, repeats allowed).
///
/// Every feature keeps its own copy of the node's samples sorted by that
/// feature; a split stably partitions each copy, so sorting happens once.
pub(super) struct Grower<'a, R: Rng> {
    rows: &'a [Vec<f64>],
    targets: &'a [f64],
    params: TreeParams,
    n_candidates: usize,
    rng: Option<&'a mut R>,
    /// `sorted[f]` holds sample slots ordered by feature `f`.
    sorted: Vec<Vec<u32>>,
    /// Row index of each slot.
    slot_row: Vec<u32>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    tree: Tree,
}

impl<'a, R: Rng> Grower<'a, R> {
    pub(super) fn new(
        rows: &'a [Vec<f64>],
        targets: &'a [f64],
        samples: &[u32],
        params: TreeParams,
        max_features: MaxFeatures,
        rng: Option<&'a mut R>,
    ) -> Self {
        let n_features = rows.first().map_or(0, Vec::len);
        let slots: Vec<u32> = (0..samples.len() as u32).collect();
        let sorted = (0..n_features)
            .map(|f| {
                let mut order = slots.clone();
                // stable: equal values keep slot order
                order.sort_by(|&a, &b| {
                    let xa = rows[samples[a as usize] as usize][f];
                    let xb = rows[samples[b as usize] as usize][f];
                    xa.total_cmp(&xb)
                });
                order
            })
            .collect();
        Grower {
            rows,
            targets,
            params,
            n_candidates: max_features.count(n_features),
            rng,
            sorted,
            slot_row: samples.to_vec(),
            goes_left: vec![false; samples.len()],
            scratch: Vec::with_capacity(samples.len()),
            tree: Tree {
                feature: Vec::new(),
                threshold: Vec::new(),
                left: Vec::new(),
                right: Vec::new(),
                value: Vec::new(),
                gain: Vec::new(),
            },
        }
    }

    pub(super) fn grow(mut self) -> Tree {
        let n = self.slot_row.len();
        self.build(0, n, 0);
        self.tree
    }

    fn x(&self, slot: u32, feature: usize) -> f64 {
        self.rows[self.slot_row[slot as usize] as usize][feature]
    }

    fn y(&self, slot: u32) -> f64 {
        self.targets[self.slot_row[slot as usize] as usize]
    }

    fn build(&mut self, lo: usize, hi: usize, depth: usize) -> usize {
        let n = hi - lo;
        let slot_at = |pos: usize| self.sorted.first().map_or(pos as u32, |order| order[pos]);
        let mut sum = 0.0;
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for pos in lo..hi {
            let y = self.y(slot_at(pos));
            sum += y;
            min = min.min(y);
            max = max.max(y);
        }
        let mean = sum / n as f64;

        let splittable = !self.sorted.is_empty()
            && depth < self.params.max_depth
            && n >= self.params.min_samples_split
            && n >= 2 * self.params.min_samples_leaf
            && min < max;
        let split = if splittable { self.best_split(lo, hi, sum) } else { None };
        let Some(split) = split else {
            return self.tree.push_leaf(mean);
        };

        let node = self.tree.push_leaf(mean);
        self.tree.feature[node] = split.feature as u32;
        self.tree.threshold[node] = split.threshold;
        self.tree.gain[node] = split.gain;

        for pos in lo..hi {
            let slot = self.sorted[split.feature][pos];
            self.goes_left[slot as usize] = self.x(slot, split.feature) <= split.threshold;
        }
        let mut n_left = 0;
        for f in 0..self.sorted.len() {
            self.scratch.clear();
            let order = &mut self.sorted[f];
            let mut write = lo;
            for pos in lo..hi {
                let slot = order[pos];
                if self.goes_left[slot as usize] {
                    order[write] = slot;
                    write += 1;
                } else {
                    self.scratch.push(slot);
                }
            }
            order[write..hi].copy_from_slice(&self.scratch);
            n_left = write - lo;
        }

        let left = self.build(lo, lo + n_left, depth + 1);
        let right = self.build(lo + n_left, hi, depth + 1);
        self.tree.left[node] = left as u32;
        self.tree.right[node] = right as u32;
        node
    }

    fn candidates(&mut self) -> Vec<usize> {
        let n_features = self.sorted.len();
        match self.rng.as_deref_mut() {
            Some(rng) if self.n_candidates < n_features => {
                let mut chosen = sample(rng, n_features, self.n_candidates).into_vec();
                chosen.sort_unstable();
                chosen
            }
            _ => (0..n_features).collect(),
        }
    }

    fn best_split(&mut self, lo: usize, hi: usize, sum: f64) -> Option<Split> {
        let n = hi - lo;
        let min_leaf = self.params.min_samples_leaf;
        let mean = sum / n as f64;
        let mut best: Option<Split> = None;
        for feature in self.candidates() {
            let order = &self.sorted[feature];
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                let slot = order[lo + i];
                left_sum += self.y(slot);
                let n_left = i + 1;
                if n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let a = self.x(slot, feature);
                let b = self.x(order[lo + i + 1], feature);
                if a >= b {
                    continue;
                }
                // squared-error decrease, from the left sum centred on the node mean
                let centred = left_sum - n_left as f64 * mean;
                let gain = centred * centred * n as f64 / (n_left * (n - n_left)) as f64;
                if gain > best.as_ref().map_or(0.0, |s| s.gain) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    best = Some(Split {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Fit a single tree on all rows.
pub fn grow_tree(
    rows: &[Vec<f64>],
    targets: &[f64],
    params: TreeParams,
) -> Result<Tree, RegressError> {
    params.validate()?;
    let samples: Vec<u32> = (0..rows.len() as u32).collect();
    Ok(Grower::<rand_chacha::ChaCha8Rng>::new(rows, targets, &samples, params, MaxFeatures::All, None).grow())
}
