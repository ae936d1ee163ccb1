use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::schema::{FeatureKind, FeatureSchema, FeatureValue};

/// Axis-aligned test; rows satisfying it go left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitTest {
    /// Continuous feature: `value <= threshold`.
    LessEq(f64),
    /// Categorical feature, one-vs-rest: `value == category`.
    Equals(u32),
}

impl SplitTest {
    #[inline]
    pub fn goes_left(&self, value: FeatureValue) -> bool {
        match (self, value) {
            (SplitTest::LessEq(t), FeatureValue::Real(v)) => v <= *t,
            (SplitTest::Equals(c), FeatureValue::Category(v)) => v == *c,
            // kind mismatches are rejected before prediction; route them right
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        test: SplitTest,
        left: usize,
        right: usize,
    },
    /// `counts` is the (bootstrap-weighted) class histogram, `proba` its normalization.
    Leaf { counts: Vec<f64>, proba: Vec<f64> },
}

impl Node {
    pub fn leaf(counts: Vec<f64>) -> Node {
        let total: f64 = counts.iter().sum();
        let proba = counts.iter().map(|c| c / total).collect();
        Node::Leaf { counts, proba }
    }
}

/// Binary decision tree stored as a flat node list; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    /// Builds a tree from explicit nodes, checking structure against the schema.
    pub fn from_nodes(
        nodes: Vec<Node>,
        schema: &FeatureSchema,
        n_classes: usize,
    ) -> Result<Self, ModelError> {
        let tree = DecisionTree { nodes };
        tree.validate(schema, n_classes)?;
        Ok(tree)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    #[inline]
    pub fn leaf_proba(&self, x: &[FeatureValue]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    test,
                    left,
                    right,
                } => {
                    i = if test.goes_left(x[*feature]) {
                        *left
                    } else {
                        *right
                    };
                }
                Node::Leaf { proba, .. } => return proba,
            }
        }
    }

    pub(crate) fn validate(
        &self,
        schema: &FeatureSchema,
        n_classes: usize,
    ) -> Result<(), ModelError> {
        if self.nodes.is_empty() {
            return Err(ModelError::Malformed("tree has no nodes".into()));
        }
        let mut reached = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if reached[i] {
                return Err(ModelError::Malformed(format!("node {i} reached twice")));
            }
            reached[i] = true;
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    test,
                    left,
                    right,
                } => {
                    let kind = schema
                        .features()
                        .get(*feature)
                        .map(|f| &f.kind)
                        .ok_or_else(|| {
                            ModelError::Malformed(format!("node {i} tests feature {feature}"))
                        })?;
                    let compatible = matches!(
                        (kind, test),
                        (FeatureKind::Continuous, SplitTest::LessEq(_))
                            | (FeatureKind::Categorical { .. }, SplitTest::Equals(_))
                    );
                    if !compatible {
                        return Err(ModelError::Malformed(format!(
                            "node {i} test does not match the kind of feature {feature}"
                        )));
                    }
                    for &child in [left, right] {
                        if child >= self.nodes.len() || child <= i {
                            return Err(ModelError::Malformed(format!(
                                "node {i} has bad child {child}"
                            )));
                        }
                        stack.push(child);
                    }
                }
                Node::Leaf { counts, proba } => {
                    let total: f64 = counts.iter().sum();
                    if counts.len() != n_classes || proba.len() != n_classes || !(total > 0.0) {
                        return Err(ModelError::Malformed(format!(
                            "leaf {i} has an empty or mis-sized histogram"
                        )));
                    }
                    if counts.iter().any(|c| *c < 0.0) {
                        return Err(ModelError::Malformed(format!(
                            "leaf {i} has negative counts"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: f64,
    pub features_per_split: usize,
}

/// Training view over the rows that made it into one bootstrap sample.
pub(crate) struct TrainView<'a> {
    pub rows: &'a [&'a [FeatureValue]],
    pub labels: &'a [usize],
    pub weights: &'a [f64],
    pub kinds: &'a [FeatureKind],
    pub n_classes: usize,
}

struct Candidate {
    score: f64,
    feature: usize,
    test: SplitTest,
}

pub(crate) fn grow<R: Rng>(view: &TrainView<'_>, cfg: &TreeConfig, rng: &mut R) -> DecisionTree {
    let mut nodes = Vec::new();
    let idx: Vec<usize> = (0..view.rows.len())
        .filter(|&i| view.weights[i] > 0.0)
        .collect();
    build(view, cfg, rng, idx, 0, &mut nodes);
    DecisionTree { nodes }
}

fn histogram(view: &TrainView<'_>, idx: &[usize]) -> Vec<f64> {
    let mut counts = vec![0.0; view.n_classes];
    for &i in idx {
        counts[view.labels[i]] += view.weights[i];
    }
    counts
}

/// Weighted Gini impurity times total weight.
fn gini_mass(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    total - counts.iter().map(|c| c * c).sum::<f64>() / total
}

fn build<R: Rng>(
    view: &TrainView<'_>,
    cfg: &TreeConfig,
    rng: &mut R,
    idx: Vec<usize>,
    depth: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    let counts = histogram(view, &idx);
    let total: f64 = counts.iter().sum();
    let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
    if depth >= cfg.max_depth || pure || total < 2.0 * cfg.min_leaf {
        nodes.push(Node::leaf(counts));
        return id;
    }

    let parent = gini_mass(&counts);
    let m = view.kinds.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut best: Option<Candidate> = None;
    for (tried, &feature) in order.iter().enumerate() {
        if tried >= cfg.features_per_split && best.is_some() {
            break;
        }
        let found = match &view.kinds[feature] {
            FeatureKind::Continuous => best_threshold(view, &idx, feature, cfg.min_leaf),
            FeatureKind::Categorical { vocabulary } => {
                best_category(view, &idx, feature, vocabulary.len(), cfg.min_leaf)
            }
        };
        if let Some(c) = found {
            let better = match &best {
                None => true,
                Some(b) => c.score < b.score,
            };
            if better {
                best = Some(c);
            }
        }
    }
    let split = match best {
        Some(c) if c.score < parent - 1e-12 => c,
        _ => {
            nodes.push(Node::leaf(counts));
            return id;
        }
    };

    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
        .iter()
        .partition(|&&i| split.test.goes_left(view.rows[i][split.feature]));
    nodes.push(Node::leaf(counts)); // placeholder, replaced below
    let left = build(view, cfg, rng, left_idx, depth + 1, nodes);
    let right = build(view, cfg, rng, right_idx, depth + 1, nodes);
    nodes[id] = Node::Split {
        feature: split.feature,
        test: split.test,
        left,
        right,
    };
    id
}

fn best_threshold(
    view: &TrainView<'_>,
    idx: &[usize],
    feature: usize,
    min_leaf: f64,
) -> Option<Candidate> {
    let value = |i: usize| view.rows[i][feature].as_f64();
    let mut sorted = idx.to_vec();
    sorted.sort_by(|&a, &b| value(a).total_cmp(&value(b)));
    let mut right = histogram(view, &sorted);
    let mut left = vec![0.0; view.n_classes];
    let total: f64 = right.iter().sum();
    let mut left_w = 0.0;
    let mut best: Option<Candidate> = None;
    for k in 0..sorted.len() - 1 {
        let i = sorted[k];
        left[view.labels[i]] += view.weights[i];
        right[view.labels[i]] -= view.weights[i];
        left_w += view.weights[i];
        let (a, b) = (value(i), value(sorted[k + 1]));
        if a == b || left_w < min_leaf || total - left_w < min_leaf {
            continue;
        }
        let score = gini_mass(&left) + gini_mass(&right);
        if best.as_ref().is_none_or(|c| score < c.score) {
            best = Some(Candidate {
                score,
                feature,
                test: SplitTest::LessEq(0.5 * (a + b)),
            });
        }
    }
    best
}

fn best_category(
    view: &TrainView<'_>,
    idx: &[usize],
    feature: usize,
    n_categories: usize,
    min_leaf: f64,
) -> Option<Candidate> {
    let mut per_cat = vec![vec![0.0; view.n_classes]; n_categories];
    for &i in idx {
        if let FeatureValue::Category(c) = view.rows[i][feature] {
            per_cat[c as usize][view.labels[i]] += view.weights[i];
        }
    }
    let all = histogram(view, idx);
    let total: f64 = all.iter().sum();
    let mut best: Option<Candidate> = None;
    for (c, left) in per_cat.iter().enumerate() {
        let left_w: f64 = left.iter().sum();
        if left_w < min_leaf || total - left_w < min_leaf {
            continue;
        }
        let right: Vec<f64> = all.iter().zip(left).map(|(a, l)| a - l).collect();
        let score = gini_mass(left) + gini_mass(&right);
        if best.as_ref().is_none_or(|b| score < b.score) {
            best = Some(Candidate {
                score,
                feature,
                test: SplitTest::Equals(c as u32),
            });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Feature;

    #[test]
    fn gini_of_pure_node_is_zero() {
        assert_eq!(gini_mass(&[4.0, 0.0]), 0.0);
        assert!((gini_mass(&[2.0, 2.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_kind_mismatch_and_empty_leaves() {
        let schema = FeatureSchema::new(vec![Feature::continuous("a", true)]).unwrap();
        let bad_test = vec![
            Node::Split {
                feature: 0,
                test: SplitTest::Equals(1),
                left: 1,
                right: 2,
            },
            Node::leaf(vec![1.0, 0.0]),
            Node::leaf(vec![0.0, 1.0]),
        ];
        assert!(DecisionTree::from_nodes(bad_test, &schema, 2).is_err());
        let empty_leaf = vec![Node::Leaf {
            counts: vec![0.0, 0.0],
            proba: vec![0.0, 0.0],
        }];
        assert!(DecisionTree::from_nodes(empty_leaf, &schema, 2).is_err());
        let out_of_range = vec![
            Node::Split {
                feature: 3,
                test: SplitTest::LessEq(0.5),
                left: 1,
                right: 2,
            },
            Node::leaf(vec![1.0, 0.0]),
            Node::leaf(vec![0.0, 1.0]),
        ];
        assert!(DecisionTree::from_nodes(out_of_range, &schema, 2).is_err());
    }
}
