//! CART-style regression trees with squared-error impurity.
//!
//! Genotype codes are treated as ordinal, so every split is a threshold at the
//! midpoint between two adjacent observed values. Rows with a missing value
//! for the split variable follow the child that received more of the
//! non-missing training rows; the choice is stored on the split.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::rule::{Features, PathStep, Rule, RuleOrigin, Variable};
use crate::error::{LerError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub variable: Variable,
    pub threshold: f64,
    pub missing_left: bool,
}

impl Split {
    #[inline]
    pub fn goes_left(&self, value: f64) -> bool {
        if value.is_nan() {
            self.missing_left
        } else {
            value <= self.threshold
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub depth: usize,
    pub n: usize,
    pub value: f64,
    /// Training sum of squared deviations from `value`.
    pub sse: f64,
    pub split: Option<Split>,
    pub children: Option<(usize, usize)>,
}

/// Optional post-growth pruning; off unless requested.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pruning {
    #[default]
    None,
    /// Collapse any subtree whose total impurity reduction is below
    /// `cp` times the root impurity.
    CostComplexity { cp: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_node: usize,
    pub pruning: Pruning,
}

/// Nodes in breadth-first creation order; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

struct Candidate {
    gain: f64,
    split: Split,
}

/// Grow a tree on `rows` of `features`, with `targets[k]` belonging to
/// `rows[k]`, considering only `vars`.
pub fn grow_tree(
    features: &Features<'_>,
    rows: &[usize],
    targets: &[f64],
    vars: &[Variable],
    params: TreeParams,
) -> Result<RegressionTree> {
    if rows.len() != targets.len() {
        return Err(LerError::Argument("rows and targets differ in length".into()));
    }
    if params.min_node == 0 {
        return Err(LerError::Argument("min_node must be at least 1".into()));
    }
    if rows.len() < 2 * params.min_node {
        return Err(LerError::Argument(format!(
            "{} rows cannot support min_node = {}",
            rows.len(),
            params.min_node
        )));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(LerError::Argument("tree targets must be finite".into()));
    }
    let mut nodes = Vec::new();
    // work items carry positions into rows/targets
    let mut queue: VecDeque<(usize, Vec<usize>)> = VecDeque::new();
    let all: Vec<usize> = (0..rows.len()).collect();
    let (value, sse) = mean_sse(targets, &all);
    nodes.push(TreeNode {
        parent: None,
        depth: 0,
        n: all.len(),
        value,
        sse,
        split: None,
        children: None,
    });
    queue.push_back((0, all));
    let mut scratch = Vec::with_capacity(rows.len());
    while let Some((id, members)) = queue.pop_front() {
        let node = &nodes[id];
        if node.depth >= params.max_depth || members.len() < 2 * params.min_node {
            continue;
        }
        if node.sse <= 1e-12 * (node.value * node.value * node.n as f64).max(1e-300) {
            continue;
        }
        let mean = node.value;
        let node_sse = node.sse;
        // gains within this of the incumbent count as ties; first one wins
        let margin = 1e-10 * node_sse;
        let mut best: Option<Candidate> = None;
        for &var in vars {
            if let Some(c) = best_split(
                features,
                rows,
                targets,
                &members,
                var,
                mean,
                params.min_node,
                margin,
                &mut scratch,
            ) {
                if best.as_ref().is_none_or(|b| c.gain > b.gain + margin) {
                    best = Some(c);
                }
            }
        }
        let Some(best) = best else { continue };
        if best.gain <= 1e-12 * node_sse {
            continue;
        }
        let (left, right): (Vec<usize>, Vec<usize>) = members
            .iter()
            .partition(|&&k| best.split.goes_left(features.value(rows[k], best.split.variable)));
        let depth = nodes[id].depth + 1;
        let left_id = nodes.len();
        for part in [&left, &right] {
            let (value, sse) = mean_sse(targets, part);
            nodes.push(TreeNode {
                parent: Some(id),
                depth,
                n: part.len(),
                value,
                sse,
                split: None,
                children: None,
            });
        }
        nodes[id].split = Some(best.split);
        nodes[id].children = Some((left_id, left_id + 1));
        queue.push_back((left_id, left));
        queue.push_back((left_id + 1, right));
    }
    let mut tree = RegressionTree { nodes };
    if let Pruning::CostComplexity { cp } = params.pruning {
        tree.prune(cp);
    }
    Ok(tree)
}

fn mean_sse(targets: &[f64], members: &[usize]) -> (f64, f64) {
    if members.is_empty() {
        return (0.0, 0.0);
    }
    let n = members.len() as f64;
    let mean = members.iter().map(|&k| targets[k]).sum::<f64>() / n;
    let sse = members.iter().map(|&k| (targets[k] - mean) * (targets[k] - mean)).sum();
    (mean, sse)
}

#[allow(clippy::too_many_arguments)]
fn best_split(
    features: &Features<'_>,
    rows: &[usize],
    targets: &[f64],
    members: &[usize],
    var: Variable,
    mean: f64,
    min_node: usize,
    margin: f64,
    scratch: &mut Vec<(f64, f64)>,
) -> Option<Candidate> {
    scratch.clear();
    let mut miss_n = 0usize;
    let mut miss_sum = 0.0;
    for &k in members {
        let v = features.value(rows[k], var);
        let t = targets[k] - mean;
        if v.is_nan() {
            miss_n += 1;
            miss_sum += t;
        } else {
            scratch.push((v, t));
        }
    }
    if scratch.len() < 2 {
        return None;
    }
    scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total_n = scratch.len();
    let total_sum: f64 = scratch.iter().map(|p| p.1).sum();
    let mut left_n = 0usize;
    let mut left_sum = 0.0;
    let mut best: Option<Candidate> = None;
    for k in 0..total_n - 1 {
        left_n += 1;
        left_sum += scratch[k].1;
        let (a, b) = (scratch[k].0, scratch[k + 1].0);
        if a == b {
            continue;
        }
        let right_n = total_n - left_n;
        let right_sum = total_sum - left_sum;
        let missing_left = left_n >= right_n;
        let (ln, ls, rn, rs) = if missing_left {
            (left_n + miss_n, left_sum + miss_sum, right_n, right_sum)
        } else {
            (left_n, left_sum, right_n + miss_n, right_sum + miss_sum)
        };
        if ln < min_node || rn < min_node {
            continue;
        }
        // targets are centered at the node mean, so the parent term is ~0
        let all_n = (ln + rn) as f64;
        let all_s = ls + rs;
        let gain = ls * ls / ln as f64 + rs * rs / rn as f64 - all_s * all_s / all_n;
        if best.as_ref().is_none_or(|c| gain > c.gain + margin) {
            best = Some(Candidate {
                gain,
                split: Split {
                    variable: var,
                    threshold: 0.5 * (a + b),
                    missing_left,
                },
            });
        }
    }
    best
}

impl RegressionTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Node ids visited by `row` from the root down to its leaf.
    pub fn route(&self, features: &Features<'_>, row: usize) -> Vec<usize> {
        let mut path = vec![0];
        let mut id = 0;
        while let (Some(split), Some((l, r))) = (self.nodes[id].split, self.nodes[id].children) {
            id = if split.goes_left(features.value(row, split.variable)) {
                l
            } else {
                r
            };
            path.push(id);
        }
        path
    }

    /// Whether `row` passes through `node` on its way down the tree.
    pub fn reaches(&self, features: &Features<'_>, row: usize, node: usize) -> bool {
        self.route(features, row).contains(&node)
    }

    pub fn predict(&self, features: &Features<'_>, row: usize) -> f64 {
        let mut id = 0;
        while let (Some(split), Some((l, r))) = (self.nodes[id].split, self.nodes[id].children) {
            id = if split.goes_left(features.value(row, split.variable)) {
                l
            } else {
                r
            };
        }
        self.nodes[id].value
    }

    fn path_to(&self, node: usize) -> Vec<PathStep> {
        let mut steps = Vec::new();
        let mut id = node;
        while let Some(parent) = self.nodes[id].parent {
            let split = self.nodes[parent].split.expect("parent has a split");
            let (l, _) = self.nodes[parent].children.expect("parent has children");
            steps.push(PathStep {
                variable: split.variable,
                threshold: split.threshold,
                went_left: id == l,
                missing_left: split.missing_left,
            });
            id = parent;
        }
        steps.reverse();
        steps
    }

    /// Rules for every non-root node, internal and leaf, in node order.
    pub fn extract_rules(&self, region: usize, tree: usize) -> Vec<Rule> {
        (1..self.nodes.len())
            .map(|node| Rule::from_path(&self.path_to(node), RuleOrigin { region, tree, node }))
            .collect()
    }

    fn prune(&mut self, cp: f64) {
        let root_sse = self.nodes[0].sse;
        // children always have larger ids than parents, so walk backwards
        let mut subtree_leaf_sse = vec![0.0; self.nodes.len()];
        for id in (0..self.nodes.len()).rev() {
            subtree_leaf_sse[id] = match self.nodes[id].children {
                Some((l, r)) => subtree_leaf_sse[l] + subtree_leaf_sse[r],
                None => self.nodes[id].sse,
            };
        }
        let mut keep = vec![true; self.nodes.len()];
        for id in 0..self.nodes.len() {
            if !keep[id] {
                if let Some((l, r)) = self.nodes[id].children {
                    keep[l] = false;
                    keep[r] = false;
                }
                continue;
            }
            if self.nodes[id].children.is_some() && self.nodes[id].sse - subtree_leaf_sse[id] < cp * root_sse {
                let (l, r) = self.nodes[id].children.unwrap();
                keep[l] = false;
                keep[r] = false;
                self.nodes[id].split = None;
                self.nodes[id].children = None;
            }
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if keep[id] {
                remap[id] = nodes.len();
                nodes.push(node.clone());
            }
        }
        for node in nodes.iter_mut() {
            node.parent = node.parent.map(|p| remap[p]);
            node.children = node.children.map(|(l, r)| (remap[l], remap[r]));
        }
        self.nodes = nodes;
    }
}
