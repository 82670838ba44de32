//! Decision-tree assignment policies.
//!
//! A split node sends `x` down its `true` branch iff `x[var] >= threshold`.
//! Leaves carry the assigned arm. The JSON document layout is
//!
//! ```text
//! {"covariates":[names],
//!  "root": {"split":{"var":i,"ge":t,"true":<node>,"false":<node>}} | {"leaf":"T|NT|O"}}
//! ```

use std::fmt::{self, Write as _};

use serde_json::{json, Map, Value};

use crate::data::{Arm, RctDataset};
use crate::error::{Error, Result};

/// Deepest tree accepted anywhere in the crate.
pub const MAX_DEPTH: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(Arm),
    Split {
        var: usize,
        threshold: f64,
        true_branch: Box<Node>,
        false_branch: Box<Node>,
    },
}

impl Node {
    pub fn split(var: usize, threshold: f64, true_branch: Node, false_branch: Node) -> Node {
        Node::Split {
            var,
            threshold,
            true_branch: Box::new(true_branch),
            false_branch: Box::new(false_branch),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Split {
                true_branch,
                false_branch,
                ..
            } => 1 + true_branch.depth().max(false_branch.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Split {
                true_branch,
                false_branch,
                ..
            } => true_branch.n_leaves() + false_branch.n_leaves(),
        }
    }

    /// Arm reached by `x`. The caller guarantees `x` is long enough.
    pub fn route(&self, x: &[f64]) -> Arm {
        let mut node = self;
        loop {
            match node {
                Node::Leaf(arm) => return *arm,
                Node::Split {
                    var,
                    threshold,
                    true_branch,
                    false_branch,
                } => {
                    node = if x[*var] >= *threshold {
                        true_branch
                    } else {
                        false_branch
                    };
                }
            }
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Node::Leaf(_) => None,
            Node::Split {
                var,
                true_branch,
                false_branch,
                ..
            } => [Some(*var), true_branch.max_var(), false_branch.max_var()]
                .into_iter()
                .flatten()
                .max(),
        }
    }

    fn collect_arms(&self, out: &mut Vec<Arm>) {
        match self {
            Node::Leaf(a) => {
                if !out.contains(a) {
                    out.push(*a);
                }
            }
            Node::Split {
                true_branch,
                false_branch,
                ..
            } => {
                true_branch.collect_arms(out);
                false_branch.collect_arms(out);
            }
        }
    }

    /// Collapses splits whose two children are the same leaf. Assignments are
    /// unchanged.
    pub fn pruned(&self) -> Node {
        match self {
            Node::Leaf(a) => Node::Leaf(*a),
            Node::Split {
                var,
                threshold,
                true_branch,
                false_branch,
            } => {
                let t = true_branch.pruned();
                let f = false_branch.pruned();
                match (&t, &f) {
                    (Node::Leaf(a), Node::Leaf(b)) if a == b => Node::Leaf(*a),
                    _ => Node::split(*var, *threshold, t, f),
                }
            }
        }
    }
}

/// A tree together with the covariate names it splits on.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub covariates: Vec<String>,
    pub root: Node,
}

impl DecisionTree {
    pub fn new(covariates: Vec<String>, root: Node) -> Result<Self> {
        if let Some(v) = root.max_var() {
            if v >= covariates.len() {
                return Err(Error::Tree(format!(
                    "split on covariate {v} but only {} covariates named",
                    covariates.len()
                )));
            }
        }
        if root.depth() > MAX_DEPTH {
            return Err(Error::Tree(format!(
                "depth {} exceeds {MAX_DEPTH}",
                root.depth()
            )));
        }
        Ok(DecisionTree { covariates, root })
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }
}

/// A total map from covariate vectors to arms.
#[derive(Debug, Clone, PartialEq)]
pub enum AssignmentPolicy {
    Uniform(Arm),
    Tree(DecisionTree),
}

impl AssignmentPolicy {
    /// Wraps a tree, turning a leaf-only tree into a uniform policy.
    pub fn from_tree(tree: DecisionTree) -> Self {
        match tree.root {
            Node::Leaf(a) => AssignmentPolicy::Uniform(a),
            _ => AssignmentPolicy::Tree(tree),
        }
    }

    pub fn assign(&self, x: &[f64]) -> Result<Arm> {
        match self {
            AssignmentPolicy::Uniform(a) => Ok(*a),
            AssignmentPolicy::Tree(t) => {
                if x.len() != t.covariates.len() {
                    return Err(Error::Dimension {
                        expected: t.covariates.len(),
                        got: x.len(),
                    });
                }
                Ok(t.root.route(x))
            }
        }
    }

    /// Assigned arm for every row of `ds`.
    pub fn assign_all(&self, ds: &RctDataset) -> Result<Vec<Arm>> {
        if let AssignmentPolicy::Tree(t) = self {
            if t.covariates.len() != ds.dim() {
                return Err(Error::Dimension {
                    expected: t.covariates.len(),
                    got: ds.dim(),
                });
            }
        }
        ds.rows().iter().map(|r| self.assign(&r.x)).collect()
    }

    pub fn depth(&self) -> usize {
        match self {
            AssignmentPolicy::Uniform(_) => 0,
            AssignmentPolicy::Tree(t) => t.depth(),
        }
    }

    /// Arms that appear on at least one leaf, in `NT < T < O` order.
    pub fn arms(&self) -> Vec<Arm> {
        let mut out = Vec::new();
        match self {
            AssignmentPolicy::Uniform(a) => out.push(*a),
            AssignmentPolicy::Tree(t) => t.root.collect_arms(&mut out),
        }
        out.sort();
        out
    }

    pub fn root(&self) -> Node {
        match self {
            AssignmentPolicy::Uniform(a) => Node::Leaf(*a),
            AssignmentPolicy::Tree(t) => t.root.clone(),
        }
    }

    /// Fraction of rows of `ds` assigned to each arm.
    pub fn shares(&self, ds: &RctDataset) -> Result<Shares> {
        Ok(Shares::from_assignments(&self.assign_all(ds)?))
    }

    pub fn to_json(&self, covariates: &[String]) -> String {
        tree_to_json(&self.as_tree(covariates))
    }

    pub fn as_tree(&self, covariates: &[String]) -> DecisionTree {
        match self {
            AssignmentPolicy::Uniform(a) => DecisionTree {
                covariates: covariates.to_vec(),
                root: Node::Leaf(*a),
            },
            AssignmentPolicy::Tree(t) => t.clone(),
        }
    }
}

/// Assignment shares per arm, indexed by [`Arm::index`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shares(pub [f64; 3]);

impl Shares {
    pub fn from_assignments(assigned: &[Arm]) -> Self {
        let mut counts = [0usize; 3];
        for a in assigned {
            counts[a.index()] += 1;
        }
        let n = assigned.len().max(1) as f64;
        Shares(counts.map(|c| c as f64 / n))
    }

    pub fn get(&self, arm: Arm) -> f64 {
        self.0[arm.index()]
    }
}

impl fmt::Display for Shares {
    /// `37% T, 19% NT, 44% O`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = [Arm::T, Arm::NT, Arm::O]
            .iter()
            .map(|&a| format!("{:.0}% {a}", 100.0 * self.get(a)))
            .collect();
        f.write_str(&parts.join(", "))
    }
}

fn node_to_value(node: &Node) -> Value {
    match node {
        Node::Leaf(a) => json!({ "leaf": a.as_str() }),
        Node::Split {
            var,
            threshold,
            true_branch,
            false_branch,
        } => json!({
            "split": {
                "var": var,
                "ge": threshold,
                "true": node_to_value(true_branch),
                "false": node_to_value(false_branch),
            }
        }),
    }
}

pub fn tree_to_json(tree: &DecisionTree) -> String {
    let doc = json!({
        "covariates": tree.covariates,
        "root": node_to_value(&tree.root),
    });
    serde_json::to_string_pretty(&doc).expect("tree document serializes")
}

fn value_to_node(v: &Value, depth: usize) -> Result<Node> {
    if depth > MAX_DEPTH {
        return Err(Error::Tree(format!("depth exceeds {MAX_DEPTH}")));
    }
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Tree("node must be an object".into()))?;
    if let Some(leaf) = obj.get("leaf") {
        let token = leaf
            .as_str()
            .ok_or_else(|| Error::Tree("leaf must be a string".into()))?;
        let arm = match token {
            "T" => Arm::T,
            "NT" => Arm::NT,
            "O" => Arm::O,
            other => return Err(Error::Tree(format!("unknown arm token `{other}`"))),
        };
        return Ok(Node::Leaf(arm));
    }
    let split: &Map<String, Value> = obj
        .get("split")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::Tree("node must have `leaf` or `split`".into()))?;
    let var = split
        .get("var")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Tree("split.var must be a non-negative integer".into()))?
        as usize;
    let threshold = split
        .get("ge")
        .and_then(Value::as_f64)
        .filter(|t| t.is_finite())
        .ok_or_else(|| Error::Tree("split.ge must be a finite number".into()))?;
    let child = |key: &str| {
        split
            .get(key)
            .ok_or_else(|| Error::Tree(format!("split.{key} missing")))
            .and_then(|c| value_to_node(c, depth + 1))
    };
    Ok(Node::split(var, threshold, child("true")?, child("false")?))
}

pub fn tree_from_json(text: &str) -> Result<DecisionTree> {
    let doc: Value = serde_json::from_str(text)?;
    let covariates = doc
        .get("covariates")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Tree("`covariates` must be an array".into()))?
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::Tree("covariate names must be strings".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let root = doc
        .get("root")
        .ok_or_else(|| Error::Tree("`root` missing".into()))?;
    DecisionTree::new(covariates, value_to_node(root, 0)?)
}

/// Parses a tree document straight into a policy.
pub fn policy_from_json(text: &str) -> Result<AssignmentPolicy> {
    tree_from_json(text).map(AssignmentPolicy::from_tree)
}

// Display only: 12 significant digits hides midpoint rounding noise.
fn short(v: f64) -> String {
    let s = format!("{:.*e}", 11, v);
    s.parse::<f64>().map(|r| r.to_string()).unwrap_or(s)
}

/// Indented yes/no rendering of the tree.
pub fn render_text(tree: &DecisionTree) -> String {
    fn walk(node: &Node, names: &[String], indent: usize, out: &mut String) {
        let pad = "  ".repeat(indent);
        match node {
            Node::Leaf(a) => {
                let _ = writeln!(out, "{pad}-> {a}");
            }
            Node::Split {
                var,
                threshold,
                true_branch,
                false_branch,
            } => {
                let name = names.get(*var).map(String::as_str).unwrap_or("?");
                let _ = writeln!(out, "{pad}{name} >= {}?", short(*threshold));
                let _ = writeln!(out, "{pad}  yes:");
                walk(true_branch, names, indent + 2, out);
                let _ = writeln!(out, "{pad}  no:");
                walk(false_branch, names, indent + 2, out);
            }
        }
    }
    let mut out = String::new();
    walk(&tree.root, &tree.covariates, 0, &mut out);
    out
}

/// Graphviz rendering of the tree.
pub fn render_dot(tree: &DecisionTree) -> String {
    fn walk(node: &Node, names: &[String], next: &mut usize, out: &mut String) -> usize {
        let id = *next;
        *next += 1;
        match node {
            Node::Leaf(a) => {
                let _ = writeln!(out, "  n{id} [shape=box, label=\"{a}\"];");
            }
            Node::Split {
                var,
                threshold,
                true_branch,
                false_branch,
            } => {
                let name = names.get(*var).map(String::as_str).unwrap_or("?");
                let _ = writeln!(out, "  n{id} [label=\"{name} >= {}\"];", short(*threshold));
                let t = walk(true_branch, names, next, out);
                let f = walk(false_branch, names, next, out);
                let _ = writeln!(out, "  n{id} -> n{t} [label=\"yes\"];");
                let _ = writeln!(out, "  n{id} -> n{f} [label=\"no\"];");
            }
        }
        id
    }
    let mut out = String::from("digraph policy {\n");
    let mut next = 0;
    walk(&tree.root, &tree.covariates, &mut next, &mut out);
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["x1".into(), "x2".into()]
    }

    /// Depth-2 tree: root on x1 at a1; the true side splits x2 at a2, the false
    /// side splits x1 again at a3 < a1.
    fn figure_b1(a1: f64, a2: f64, a3: f64) -> DecisionTree {
        let root = Node::split(
            0,
            a1,
            Node::split(1, a2, Node::Leaf(Arm::T), Node::Leaf(Arm::NT)),
            Node::split(0, a3, Node::Leaf(Arm::NT), Node::Leaf(Arm::O)),
        );
        DecisionTree::new(names(), root).unwrap()
    }

    #[test]
    fn uniform_ignores_x() {
        let p = AssignmentPolicy::Uniform(Arm::NT);
        assert_eq!(p.assign(&[1.0, -3.0]).unwrap(), Arm::NT);
        assert_eq!(p.assign(&[]).unwrap(), Arm::NT);
    }

    #[test]
    fn split_is_inclusive() {
        let tree = DecisionTree::new(
            names(),
            Node::split(0, 0.25, Node::Leaf(Arm::T), Node::Leaf(Arm::NT)),
        )
        .unwrap();
        let p = AssignmentPolicy::from_tree(tree);
        assert_eq!(p.assign(&[0.25, 0.0]).unwrap(), Arm::T);
        assert_eq!(p.assign(&[0.2499, 0.0]).unwrap(), Arm::NT);
    }

    #[test]
    fn depth_two_lower_left_region_is_opt_in() {
        let p = AssignmentPolicy::from_tree(figure_b1(0.6, 0.5, 0.3));
        assert_eq!(p.assign(&[0.3 - 1e-9, 0.9]).unwrap(), Arm::O);
        assert_eq!(p.assign(&[0.4, 0.9]).unwrap(), Arm::NT);
        assert_eq!(p.assign(&[0.7, 0.5]).unwrap(), Arm::T);
        assert_eq!(p.assign(&[0.7, 0.4]).unwrap(), Arm::NT);
    }

    #[test]
    fn dimension_mismatch() {
        let p = AssignmentPolicy::from_tree(figure_b1(0.6, 0.5, 0.3));
        assert!(matches!(
            p.assign(&[0.1]),
            Err(Error::Dimension {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn json_roundtrip() {
        let tree = figure_b1(0.6, 0.5, 0.3);
        let text = tree_to_json(&tree);
        assert_eq!(tree_from_json(&text).unwrap(), tree);
    }

    #[test]
    fn leaf_document_is_uniform() {
        let p = policy_from_json(r#"{"covariates":["x1"],"root":{"leaf":"O"}}"#).unwrap();
        assert_eq!(p, AssignmentPolicy::Uniform(Arm::O));
    }

    #[test]
    fn malformed_documents() {
        let nan = r#"{"covariates":["x1"],"root":{"split":{"var":0,"ge":"NaN","true":{"leaf":"T"},"false":{"leaf":"NT"}}}}"#;
        assert!(matches!(tree_from_json(nan), Err(Error::Tree(_))));
        let arm = r#"{"covariates":["x1"],"root":{"leaf":"X"}}"#;
        assert!(matches!(tree_from_json(arm), Err(Error::Tree(_))));
        let var = r#"{"covariates":["x1"],"root":{"split":{"var":3,"ge":0,"true":{"leaf":"T"},"false":{"leaf":"NT"}}}}"#;
        assert!(matches!(tree_from_json(var), Err(Error::Tree(_))));
        assert!(tree_from_json("{").is_err());

        let mut node = Node::Leaf(Arm::T);
        for _ in 0..7 {
            node = Node::split(0, 0.0, node, Node::Leaf(Arm::NT));
        }
        let deep = format!(
            r#"{{"covariates":["x1"],"root":{}}}"#,
            node_to_value(&node)
        );
        assert!(matches!(tree_from_json(&deep), Err(Error::Tree(_))));
    }

    #[test]
    fn leaf_count_bound() {
        let t = figure_b1(0.6, 0.5, 0.3);
        assert!(t.root.n_leaves() <= 1 << t.depth());
    }

    #[test]
    fn shares_format_and_sum() {
        let s = Shares::from_assignments(&[Arm::T, Arm::O, Arm::O, Arm::NT]);
        assert_eq!(s.to_string(), "25% T, 25% NT, 50% O");
        assert!((s.0.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pruning_keeps_assignments() {
        let root = Node::split(
            0,
            0.5,
            Node::split(1, 0.5, Node::Leaf(Arm::T), Node::Leaf(Arm::T)),
            Node::Leaf(Arm::NT),
        );
        let pruned = root.pruned();
        assert_eq!(pruned.depth(), 1);
        for x in [[0.7, 0.7], [0.7, 0.2], [0.1, 0.9]] {
            assert_eq!(root.route(&x), pruned.route(&x));
        }
    }

    #[test]
    fn text_rendering_mentions_names() {
        let text = render_text(&figure_b1(0.6, 0.5, 0.3));
        assert!(text.starts_with("x1 >= 0.6?"));
        assert!(text.contains("-> O"));
        assert!(render_dot(&figure_b1(0.6, 0.5, 0.3)).contains("digraph"));
    }
}
