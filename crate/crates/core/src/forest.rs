//! Ulam-Harris labelled trees and forests.
//!
//! A tree is stored as an arena whose node 0 is the root. The `k`-th child of
//! a node (Ulam-Harris index `k`, counting from 1) is `children[k - 1]`, so a
//! label is resolved by walking down from the root. Pruned nodes keep their
//! potential birth time; it is written as `inf` on export.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Word over the positive integers; the empty word is the root.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UlamLabel(pub Vec<u32>);

impl UlamLabel {
    pub fn root() -> Self {
        UlamLabel(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, index: u32) -> Self {
        let mut v = self.0.clone();
        v.push(index);
        UlamLabel(v)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(UlamLabel(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    /// `self ⪯ other`: `self` is an ancestor of (or equal to) `other`.
    pub fn is_prefix_of(&self, other: &UlamLabel) -> bool {
        other.0.starts_with(&self.0)
    }
}

impl fmt::Display for UlamLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(".")?;
            }
            write!(f, "{i}")?;
        }
        Ok(())
    }
}

impl FromStr for UlamLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Ok(UlamLabel::root());
        }
        s.split('.')
            .map(|p| match p.parse::<u32>() {
                Ok(0) | Err(_) => Err(Error::Parse(format!("bad label component {p:?} in {s:?}"))),
                Ok(i) => Ok(i),
            })
            .collect::<Result<Vec<_>>>()
            .map(UlamLabel)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeStatus {
    Kept,
    Pruned,
}

impl NodeStatus {
    pub fn is_kept(self) -> bool {
        self == NodeStatus::Kept
    }

    fn as_str(self) -> &'static str {
        match self {
            NodeStatus::Kept => "kept",
            NodeStatus::Pruned => "pruned",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Potential birth time; the actual one when the node is kept.
    pub birth_time: f64,
    pub status: NodeStatus,
    pub parent: Option<usize>,
    /// Ulam-Harris index among the parent's children (0 for the root).
    pub index: u32,
    pub depth: usize,
    pub children: Vec<usize>,
}

/// Equality is structural: two trees are equal when they have the same
/// labels with the same times and statuses, whatever the arena layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl PartialEq for Tree {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.preorder().eq(other.preorder())
    }
}

impl Tree {
    /// A tree reduced to its root, born at `birth_time` (typically `≤ 0`).
    pub fn new(birth_time: f64) -> Self {
        Tree {
            nodes: vec![Node {
                birth_time,
                status: NodeStatus::Kept,
                parent: None,
                index: 0,
                depth: 0,
                children: Vec::new(),
            }],
        }
    }

    pub fn root_time(&self) -> f64 {
        self.nodes[0].birth_time
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kept_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.status.is_kept()).count()
    }

    /// Appends the next child of `parent`; returns its id.
    pub fn add_child(&mut self, parent: usize, birth_time: f64, status: NodeStatus) -> Result<usize> {
        let p = self
            .nodes
            .get(parent)
            .ok_or_else(|| Error::arg(format!("no node with id {parent}")))?;
        if !(birth_time >= p.birth_time) {
            return Err(Error::Invariant(format!(
                "child born at {birth_time} before its parent ({})",
                p.birth_time
            )));
        }
        if let Some(&last) = p.children.last() {
            if birth_time < self.nodes[last].birth_time {
                return Err(Error::Invariant("children must be added in order of birth".into()));
            }
        }
        if !p.status.is_kept() && status.is_kept() {
            return Err(Error::Invariant("a pruned node cannot have kept descendants".into()));
        }
        let id = self.nodes.len();
        let node = Node {
            birth_time,
            status,
            parent: Some(parent),
            index: p.children.len() as u32 + 1,
            depth: p.depth + 1,
            children: Vec::new(),
        };
        self.nodes[parent].children.push(id);
        self.nodes.push(node);
        Ok(id)
    }

    /// `(depth, index, birth time, status)` in depth-first order.
    fn preorder(&self) -> impl Iterator<Item = (usize, u32, f64, NodeStatus)> + '_ {
        let mut stack = vec![0usize];
        std::iter::from_fn(move || {
            let id = stack.pop()?;
            let n = &self.nodes[id];
            stack.extend(n.children.iter().rev());
            Some((n.depth, n.index, n.birth_time, n.status))
        })
    }

    pub fn label(&self, id: usize) -> UlamLabel {
        let mut path = Vec::with_capacity(self.nodes[id].depth);
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(self.nodes[cur].index);
            cur = p;
        }
        path.reverse();
        UlamLabel(path)
    }

    pub fn find(&self, label: &UlamLabel) -> Option<usize> {
        let mut cur = 0;
        for &i in &label.0 {
            cur = *self.nodes[cur].children.get((i as usize).checked_sub(1)?)?;
        }
        Some(cur)
    }

    /// Birth times from `label` back to the root.
    pub fn birth_chain(&self, label: &UlamLabel) -> Result<Vec<f64>> {
        let id = self
            .find(label)
            .filter(|&id| self.nodes[id].status.is_kept())
            .ok_or_else(|| Error::MissingNode(label.to_string()))?;
        Ok(self.chain_of(id))
    }

    pub(crate) fn chain_of(&self, id: usize) -> Vec<f64> {
        let mut out = vec![self.nodes[id].birth_time];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            out.push(self.nodes[p].birth_time);
            cur = p;
        }
        out
    }

    /// Nodes with depth `≤ generations` and birth time `≤ time`.
    pub fn truncate(&self, generations: usize, time: f64) -> Tree {
        let mut out = Tree::new(self.root_time());
        out.nodes[0].status = self.nodes[0].status;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((src, dst)) = stack.pop() {
            if self.nodes[src].depth >= generations {
                continue;
            }
            for &c in &self.nodes[src].children {
                let node = &self.nodes[c];
                if node.birth_time > time {
                    // Children are ordered by birth time.
                    break;
                }
                let id = out.nodes.len();
                out.nodes[dst].children.push(id);
                out.nodes.push(Node {
                    birth_time: node.birth_time,
                    status: node.status,
                    parent: Some(dst),
                    index: node.index,
                    depth: node.depth,
                    children: Vec::new(),
                });
                stack.push((c, id));
            }
        }
        out
    }

    /// `(label, birth time)` of every kept node.
    pub fn kept_nodes(&self) -> Vec<(UlamLabel, f64)> {
        (0..self.nodes.len())
            .filter(|&id| self.nodes[id].status.is_kept())
            .map(|id| (self.label(id), self.nodes[id].birth_time))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (id, node) in self.nodes.iter().enumerate() {
            for (k, &c) in node.children.iter().enumerate() {
                let child = &self.nodes[c];
                if child.parent != Some(id) || child.index as usize != k + 1 || child.depth != node.depth + 1 {
                    return Err(Error::Invariant(format!("inconsistent links at {}", self.label(c))));
                }
                if child.birth_time < node.birth_time {
                    return Err(Error::Invariant(format!("{} born before its parent", self.label(c))));
                }
                if !node.status.is_kept() && child.status.is_kept() {
                    return Err(Error::Invariant(format!("{} is kept under a pruned node", self.label(c))));
                }
                if k > 0 && child.birth_time < self.nodes[node.children[k - 1]].birth_time {
                    return Err(Error::Invariant(format!("children of {} out of order", self.label(id))));
                }
            }
        }
        Ok(())
    }
}

/// Outcome of comparing two trees on a window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LocalComparison {
    Equal,
    Differ,
}

/// Compares the kept nodes (labels and exact birth times) of the truncations
/// at `generations` and `time`.
pub fn local_distance(a: &Tree, b: &Tree, generations: usize, time: f64) -> LocalComparison {
    let key = |t: &Tree| -> HashSet<(UlamLabel, u64)> {
        t.truncate(generations, time)
            .kept_nodes()
            .into_iter()
            .map(|(l, s)| (l, s.to_bits()))
            .collect()
    };
    if key(a) == key(b) {
        LocalComparison::Equal
    } else {
        LocalComparison::Differ
    }
}

/// One tree per ancestor, observed up to `horizon`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    horizon: f64,
}

impl Forest {
    pub fn new(trees: Vec<Tree>, horizon: f64) -> Self {
        Forest { trees, horizon }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn tree(&self, ancestor: usize) -> &Tree {
        &self.trees[ancestor]
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of ancestors `N`.
    pub fn ancestors(&self) -> usize {
        self.trees.len()
    }

    pub fn node_count(&self) -> usize {
        self.trees.iter().map(Tree::len).sum()
    }

    pub fn kept_count(&self) -> usize {
        self.trees.iter().map(Tree::kept_count).sum()
    }

    /// Kept nodes born at or before `t`, roots included.
    pub fn kept_count_at(&self, t: f64) -> usize {
        self.trees
            .iter()
            .flat_map(|tr| tr.nodes.iter())
            .filter(|n| n.status.is_kept() && n.birth_time <= t)
            .count()
    }

    pub fn truncate(&self, generations: usize, time: f64) -> Forest {
        Forest {
            trees: self.trees.iter().map(|t| t.truncate(generations, time)).collect(),
            horizon: self.horizon.min(time),
        }
    }

    pub fn birth_chain(&self, ancestor: usize, label: &UlamLabel) -> Result<Vec<f64>> {
        self.trees
            .get(ancestor)
            .ok_or_else(|| Error::MissingNode(format!("ancestor {ancestor}")))?
            .birth_chain(label)
    }

    pub fn validate(&self) -> Result<()> {
        self.trees.iter().try_for_each(Tree::validate)
    }

    /// Rows `ancestor,label,birth_time,status,potential_time` in depth-first
    /// order. `birth_time` is `inf` for pruned nodes; the last column always
    /// holds the (potential) time so that the export can be read back.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "ancestor,label,birth_time,status,potential_time")?;
        for (i, tree) in self.trees.iter().enumerate() {
            let mut stack = vec![0usize];
            while let Some(id) = stack.pop() {
                let n = &tree.nodes[id];
                let shown = if n.status.is_kept() {
                    n.birth_time.to_string()
                } else {
                    "inf".to_string()
                };
                writeln!(
                    out,
                    "{i},{},{shown},{},{}",
                    tree.label(id),
                    n.status.as_str(),
                    n.birth_time
                )?;
                stack.extend(n.children.iter().rev());
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, horizon: f64) -> Result<Forest> {
        let mut trees: Vec<Tree> = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 1));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(bad("expected five columns"));
            }
            let ancestor: usize = fields[0].parse().map_err(|_| bad("ancestor index"))?;
            let label: UlamLabel = fields[1].parse()?;
            let status = match fields[3] {
                "kept" => NodeStatus::Kept,
                "pruned" => NodeStatus::Pruned,
                _ => return Err(bad("status")),
            };
            let time: f64 = fields[4].parse().map_err(|_| bad("potential time"))?;
            match label.parent() {
                None => {
                    if ancestor != trees.len() {
                        return Err(bad("ancestors must appear in order"));
                    }
                    let mut t = Tree::new(time);
                    t.nodes[0].status = status;
                    trees.push(t);
                }
                Some(parent) => {
                    let tree = trees.get_mut(ancestor).ok_or_else(|| bad("unknown ancestor"))?;
                    let pid = tree.find(&parent).ok_or_else(|| bad("parent row missing"))?;
                    let id = tree.add_child(pid, time, status)?;
                    if tree.nodes[id].index != *label.0.last().expect("non-root") {
                        return Err(bad("children must appear in index order"));
                    }
                }
            }
        }
        Ok(Forest { trees, horizon })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Tree {
        let mut t = Tree::new(-0.3);
        let c = t.add_child(0, 0.7, NodeStatus::Kept).unwrap();
        t.add_child(c, 1.9, NodeStatus::Kept).unwrap();
        t
    }

    fn label(s: &str) -> UlamLabel {
        s.parse().unwrap()
    }

    #[test]
    fn labels_round_trip_through_text() {
        for s in ["", "1", "3.1.4"] {
            assert_eq!(label(s).to_string(), s);
        }
        assert!("1.0".parse::<UlamLabel>().is_err());
        assert!("1..2".parse::<UlamLabel>().is_err());
        assert!(label("1").is_prefix_of(&label("1.2")));
        assert!(!label("2").is_prefix_of(&label("1.2")));
        assert!(UlamLabel::root().is_prefix_of(&label("5")));
    }

    #[test]
    fn generation_and_time_cuts() {
        let t = chain();
        let f = Forest::new(vec![t.clone(), Tree::new(-1.0)], 10.0);
        let k0 = f.truncate(0, 10.0);
        assert_eq!(k0.node_count(), 2);
        assert_eq!(t.truncate(1, 10.0).kept_nodes(), vec![(label(""), -0.3), (label("1"), 0.7)]);
        assert_eq!(t.truncate(5, 1.5).kept_nodes(), vec![(label(""), -0.3), (label("1"), 0.7)]);
    }

    #[test]
    fn birth_chain_reads_the_path() {
        let t = chain();
        assert_eq!(t.birth_chain(&label("")).unwrap(), vec![-0.3]);
        assert_eq!(t.birth_chain(&label("1.1")).unwrap(), vec![1.9, 0.7, -0.3]);
        assert!(matches!(t.birth_chain(&label("2")), Err(Error::MissingNode(_))));
        let mut p = chain();
        p.add_child(0, 2.0, NodeStatus::Pruned).unwrap();
        assert!(matches!(p.birth_chain(&label("2")), Err(Error::MissingNode(_))));
    }

    #[test]
    fn local_comparison() {
        let t = chain();
        assert_eq!(local_distance(&t, &t, 3, 5.0), LocalComparison::Equal);
        let mut pruned = Tree::new(-0.3);
        let c = pruned.add_child(0, 0.7, NodeStatus::Kept).unwrap();
        pruned.add_child(c, 1.9, NodeStatus::Pruned).unwrap();
        assert_eq!(local_distance(&t, &pruned, 3, 5.0), LocalComparison::Differ);
        // The difference is invisible below generation 2 or before time 1.9.
        assert_eq!(local_distance(&t, &pruned, 1, 5.0), LocalComparison::Equal);
        assert_eq!(local_distance(&t, &pruned, 3, 1.8), LocalComparison::Equal);
    }

    #[test]
    fn structural_violations_are_rejected() {
        let mut t = chain();
        assert!(t.add_child(0, -1.0, NodeStatus::Kept).is_err());
        assert!(t.add_child(0, 0.5, NodeStatus::Kept).is_err());
        let p = t.add_child(0, 3.0, NodeStatus::Pruned).unwrap();
        assert!(t.add_child(p, 4.0, NodeStatus::Kept).is_err());
        t.validate().unwrap();
    }

    fn random_tree(seed: u64, size: usize) -> Tree {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut t = Tree::new(-rng.random::<f64>());
        // Grow by attaching each new node to a random kept node after its
        // last child.
        for _ in 0..size {
            let kept: Vec<usize> = (0..t.len()).filter(|&i| t.nodes[i].status.is_kept()).collect();
            let p = kept[rng.random_range(0..kept.len())];
            let floor = t.nodes[p]
                .children
                .last()
                .map_or(t.nodes[p].birth_time, |&c| t.nodes[c].birth_time);
            let s = floor + rng.random::<f64>();
            let status = if rng.random::<f64>() < 0.8 {
                NodeStatus::Kept
            } else {
                NodeStatus::Pruned
            };
            t.add_child(p, s, status).unwrap();
        }
        t
    }

    #[test]
    fn chains_are_nonincreasing_over_many_nodes() {
        let mut checked = 0;
        for seed in 0..13 {
            let t = random_tree(seed, 1000);
            t.validate().unwrap();
            for (l, s) in t.kept_nodes() {
                let c = t.birth_chain(&l).unwrap();
                assert_eq!(c.len(), l.len() + 1);
                assert_eq!(c[0], s);
                assert!(c.windows(2).all(|w| w[0] >= w[1]));
                // The chain of the parent is the tail of the chain.
                if let Some(p) = l.parent() {
                    assert_eq!(t.birth_chain(&p).unwrap(), c[1..]);
                }
                checked += 1;
            }
        }
        assert!(checked >= 10_000, "{checked}");
    }

    #[test]
    fn truncation_is_idempotent_and_commutes() {
        let t = random_tree(42, 500);
        let a = t.truncate(4, 2.0);
        assert_eq!(a.truncate(4, 2.0), a);
        assert_eq!(t.truncate(4, 10.0).truncate(10, 2.0), t.truncate(10, 2.0).truncate(4, 10.0));
        assert_eq!(t.truncate(4, 10.0).truncate(10, 2.0), a);
        a.validate().unwrap();
    }

    #[test]
    fn csv_round_trip() {
        let f = Forest::new(vec![random_tree(1, 200), random_tree(2, 50), Tree::new(-0.5)], 7.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("0,,"));
        assert!(text.contains(",inf,pruned,"));
        let back = Forest::read_csv(&buf[..], 7.0).unwrap();
        assert_eq!(back, f);
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(serde_json::from_str::<Forest>(&json).unwrap(), f);
    }
}
