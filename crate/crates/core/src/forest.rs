//! Random forest of CART trees grown on bootstrap resamples.
//!
//! Each split considers `min(mtry, d)` features drawn without replacement
//! and picks the threshold (a midpoint between consecutive distinct values)
//! minimizing weighted Gini impurity. Trees vote; the plurality class wins
//! with ties broken toward the smallest class id.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{check_input, vote_winner, PixelClassifier};
use crate::error::{Error, Result};
use crate::labels::SampleSet;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Upper bound on features tried per split; the effective value is
    /// `min(mtry, d)`.
    pub mtry: usize,
    pub min_leaf: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            mtry: 10,
            min_leaf: 1,
            max_depth: 32,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { class: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(class: u8) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { class }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f32]) -> u8 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { class } => return class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if (x[feature] as f64) <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<Tree>,
    classes: Vec<u8>,
    n_features: usize,
    mtry: usize,
    config: ForestConfig,
}

impl ForestModel {
    /// Assembles a forest from prebuilt trees.
    pub fn from_trees(trees: Vec<Tree>, classes: Vec<u8>, n_features: usize) -> Result<Self> {
        let config = ForestConfig {
            n_trees: trees.len(),
            mtry: n_features,
            ..ForestConfig::default()
        };
        let model = ForestModel {
            trees,
            classes,
            n_features,
            mtry: n_features,
            config,
        };
        model.validate()?;
        Ok(model)
    }

    /// Structural checks: leaf classes belong to the model, split features
    /// are in range, and every child index points forward inside its tree.
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || !self.classes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Validation("model classes must be non-empty and strictly increasing".into()));
        }
        let valid = |c: u8| self.classes.binary_search(&c).is_ok();
        for t in &self.trees {
            if t.nodes.is_empty() {
                return Err(Error::Validation("empty tree".into()));
            }
            for (i, n) in t.nodes.iter().enumerate() {
                match *n {
                    Node::Leaf { class } if !valid(class) => {
                        return Err(Error::Validation(format!("leaf class {class} not in model classes")))
                    }
                    Node::Split { feature, .. } if feature >= self.n_features => {
                        return Err(Error::Validation(format!("split feature {feature} >= {}", self.n_features)))
                    }
                    Node::Split { left, right, .. }
                        if left <= i || right <= i || left >= t.nodes.len() || right >= t.nodes.len() =>
                    {
                        return Err(Error::Validation(format!("node {i} has out-of-order children")))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }
    pub fn classes(&self) -> &[u8] {
        &self.classes
    }
    pub fn mtry(&self) -> usize {
        self.mtry
    }
    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    /// Per-class vote counts in `classes()` order.
    pub fn votes(&self, x: &[f32]) -> Result<Vec<(u8, usize)>> {
        check_input(x, self.n_features)?;
        let mut votes: Vec<(u8, usize)> = self.classes.iter().map(|&c| (c, 0)).collect();
        for t in &self.trees {
            let c = t.predict(x);
            let slot = self.classes.binary_search(&c).expect("leaf classes validated");
            votes[slot].1 += 1;
        }
        Ok(votes)
    }
}

/// Returns the winning class and the full vote table.
pub fn forest_predict(model: &ForestModel, x: &[f32]) -> Result<(u8, Vec<(u8, usize)>)> {
    let votes = model.votes(x)?;
    let winner = vote_winner(&votes).ok_or_else(|| Error::DegenerateModel("forest has no classes".into()))?;
    Ok((winner, votes))
}

impl PixelClassifier for ForestModel {
    fn n_features(&self) -> usize {
        self.n_features
    }
    fn predict_pixel(&self, x: &[f32]) -> Result<u8> {
        forest_predict(self, x).map(|(c, _)| c)
    }
}

struct Grower<'a> {
    samples: &'a SampleSet,
    /// Dense class index per sample.
    y: Vec<usize>,
    classes: &'a [u8],
    mtry: usize,
    min_leaf: usize,
    max_depth: usize,
}

impl Grower<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.classes.len()];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn majority(&self, counts: &[usize]) -> u8 {
        let votes: Vec<(u8, usize)> = self.classes.iter().copied().zip(counts.iter().copied()).collect();
        vote_winner(&votes).expect("nonempty classes")
    }

    /// Best `(feature, threshold, weighted impurity)` over the drawn features.
    fn best_split(&self, idx: &[usize], features: &[usize]) -> Option<(usize, f64, f64)> {
        let n = idx.len();
        let k = self.classes.len();
        let total = self.counts(idx);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut pairs: Vec<(f32, usize)> = Vec::with_capacity(n);
        let mut left = vec![0usize; k];
        for &f in features {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.samples.row(i)[f], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            left.iter_mut().for_each(|c| *c = 0);
            let mut sum_sq_left = 0f64;
            let mut sum_sq_right: f64 = total.iter().map(|&c| (c * c) as f64).sum();
            for pos in 0..n - 1 {
                let (v, c) = pairs[pos];
                let lc = left[c] as f64;
                let rc = (total[c] - left[c]) as f64;
                sum_sq_left += 2.0 * lc + 1.0;
                sum_sq_right -= 2.0 * rc - 1.0;
                left[c] += 1;
                let next = pairs[pos + 1].0;
                if next == v {
                    continue;
                }
                let nl = pos + 1;
                let nr = n - nl;
                if nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                // n * weighted gini = nl*(1 - Σl²/nl²) + nr*(1 - Σr²/nr²)
                let impurity = (n as f64 - sum_sq_left / nl as f64 - sum_sq_right / nr as f64) / n as f64;
                if best.is_none_or(|(_, _, b)| impurity < b) {
                    let threshold = (v as f64 + next as f64) / 2.0;
                    best = Some((f, threshold, impurity));
                }
            }
        }
        best
    }

    fn grow(&self, idx: &mut [usize], depth: usize, rng: &mut rng::Rng, nodes: &mut Vec<Node>) -> usize {
        let counts = self.counts(idx);
        let me = nodes.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            nodes.push(Node::Leaf {
                class: self.majority(&counts),
            });
            return me;
        }
        let d = self.samples.n_features();
        let mut pool: Vec<usize> = (0..d).collect();
        for i in 0..self.mtry {
            let j = rng.random_range(i..d);
            pool.swap(i, j);
        }
        let Some((feature, threshold, _)) = self.best_split(idx, &pool[..self.mtry]) else {
            nodes.push(Node::Leaf {
                class: self.majority(&counts),
            });
            return me;
        };
        nodes.push(Node::Leaf { class: 0 });
        let mut split = 0;
        for i in 0..idx.len() {
            if (self.samples.row(idx[i])[feature] as f64) <= threshold {
                idx.swap(i, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1, rng, nodes);
        let right = self.grow(r, depth + 1, rng, nodes);
        nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

/// Grows `n_trees` trees, each on `n` draws with replacement. Tree `t`
/// uses its own stream of the master seed, so the forest is identical
/// however the trees are scheduled.
pub fn train_forest(samples: &SampleSet, config: &ForestConfig) -> Result<ForestModel> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    let classes = samples.classes();
    if classes.len() < 2 {
        return Err(Error::DegenerateModel(format!(
            "random forest needs at least 2 classes, found {classes:?}"
        )));
    }
    if config.n_trees == 0 || config.mtry == 0 || config.min_leaf == 0 {
        return Err(Error::Validation("n_trees, mtry and min_leaf must be positive".into()));
    }
    let d = samples.n_features();
    let mtry = config.mtry.min(d);
    let y = samples
        .labels()
        .iter()
        .map(|l| classes.binary_search(l).expect("class list built from labels"))
        .collect();
    let grower = Grower {
        samples,
        y,
        classes: &classes,
        mtry,
        min_leaf: config.min_leaf,
        max_depth: config.max_depth,
    };
    let n = samples.len();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(config.seed, t as u64);
            let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut nodes = Vec::new();
            grower.grow(&mut idx, 0, &mut rng, &mut nodes);
            Tree { nodes }
        })
        .collect();
    Ok(ForestModel {
        trees,
        classes,
        n_features: d,
        mtry,
        config: config.clone(),
    })
}
