//! Tree-structured parameter spaces.
//!
//! A space is a rooted tree in which every vertex carries a (possibly empty)
//! bounded continuous block and every vertex with two or more children
//! contributes one categorical variable whose settings are the child edge
//! labels. A point in the space picks one root-to-leaf path and assigns a
//! value to every continuous variable along that path.
//!
//! Vertices are numbered in breadth-first order at construction time and all
//! derived data (paths, slot layout, shared prefixes) is fixed thereafter, so
//! a [`TreeSpec`] can be shared freely between threads.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer};
use thiserror::Error;

/// Errors raised while parsing or constructing a tree spec.
#[derive(Debug, Error)]
pub enum SpecError {
    #[error("invalid spec JSON: {0}")]
    Json(String),
    #[error("vertex {vertex}: duplicate child label {label:?}")]
    DuplicateChildLabel { vertex: usize, label: String },
    #[error("vertex {vertex}: duplicate variable name {name:?} along one path")]
    DuplicateVariableName { vertex: usize, name: String },
    #[error("vertex {vertex}: variable {name:?} has empty or inverted bounds [{low}, {high}]")]
    InvalidBounds {
        vertex: usize,
        name: String,
        low: f64,
        high: f64,
    },
    #[error("vertex graph is not a rooted tree: {0}")]
    NotATree(String),
    #[error("child vertex {child} must have a larger BFS index than its parent {parent}")]
    BadBfsOrder { parent: usize, child: usize },
}

/// Errors raised when a point does not fit a spec.
#[derive(Debug, Error)]
pub enum PointError {
    #[error("vertex {vertex} has no child labelled {label:?}")]
    UnknownChoice { vertex: usize, label: String },
    #[error("missing categorical choice at branching vertex {vertex}")]
    MissingChoice { vertex: usize },
    #[error("choice given for vertex {vertex} which is not a branching vertex on the selected path")]
    ExtraChoice { vertex: usize },
    #[error("missing values for vertex {vertex}")]
    MissingValues { vertex: usize },
    #[error("values given for vertex {vertex} which carries no block on the selected path")]
    ExtraValues { vertex: usize },
    #[error("vertex {vertex}: expected {expected} values, got {got}")]
    WrongArity {
        vertex: usize,
        expected: usize,
        got: usize,
    },
    #[error("vertex {vertex}, variable {name:?}: value {value} outside [{low}, {high}]")]
    OutOfBounds {
        vertex: usize,
        name: String,
        value: f64,
        low: f64,
        high: f64,
    },
    #[error("slot vector has length {got}, layout requires {expected}")]
    BadSlotLength { expected: usize, got: usize },
    #[error("slot tags are not consistent with any root-to-leaf path")]
    InconsistentSlots,
}

/// A bounded block of continuous variables attached to one vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousBlock {
    names: Vec<String>,
    lows: Vec<f64>,
    highs: Vec<f64>,
}

impl ContinuousBlock {
    /// Build a block from parallel name/bound arrays. Bounds must satisfy
    /// `low < high` and names must be unique within the block.
    pub fn new(names: Vec<String>, lows: Vec<f64>, highs: Vec<f64>) -> Result<Self, SpecError> {
        assert_eq!(names.len(), lows.len());
        assert_eq!(names.len(), highs.len());
        let block = Self { names, lows, highs };
        block.validate(usize::MAX)?;
        Ok(block)
    }

    /// The empty block, for vertices that only route categorical choices.
    pub fn empty() -> Self {
        Self {
            names: Vec::new(),
            lows: Vec::new(),
            highs: Vec::new(),
        }
    }

    fn validate(&self, vertex: usize) -> Result<(), SpecError> {
        for i in 0..self.names.len() {
            if !(self.lows[i] < self.highs[i]) {
                return Err(SpecError::InvalidBounds {
                    vertex,
                    name: self.names[i].clone(),
                    low: self.lows[i],
                    high: self.highs[i],
                });
            }
            if self.names[i..].iter().skip(1).any(|n| *n == self.names[i]) {
                return Err(SpecError::DuplicateVariableName {
                    vertex,
                    name: self.names[i].clone(),
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn low(&self, d: usize) -> f64 {
        self.lows[d]
    }

    pub fn high(&self, d: usize) -> f64 {
        self.highs[d]
    }

    pub fn width(&self, d: usize) -> f64 {
        self.highs[d] - self.lows[d]
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.len() == self.dim()
            && values
                .iter()
                .enumerate()
                .all(|(d, v)| *v >= self.lows[d] && *v <= self.highs[d])
    }

    /// Box midpoint, used by the one-hot baseline to impute off-path values.
    pub fn midpoint(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|d| 0.5 * (self.lows[d] + self.highs[d]))
            .collect()
    }
}

/// One vertex of the tree: a BFS index, a continuous block and an ordered
/// list of labelled child edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    id: usize,
    block: ContinuousBlock,
    children: Vec<(String, usize)>,
}

impl Vertex {
    pub fn new(id: usize, block: ContinuousBlock, children: Vec<(String, usize)>) -> Self {
        Self {
            id,
            block,
            children,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn block(&self) -> &ContinuousBlock {
        &self.block
    }

    /// Child edges in spec-file order; the ordinal position is the child's
    /// sibling rank used by the linear encoding.
    pub fn children(&self) -> &[(String, usize)] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// A vertex with two or more outgoing edges carries one categorical
    /// variable; single-child vertices route unconditionally.
    pub fn is_branching(&self) -> bool {
        self.children.len() >= 2
    }

    pub fn child_by_label(&self, label: &str) -> Option<usize> {
        self.children
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, c)| *c)
    }
}

/// A validated tree-structured parameter space.
///
/// Holds the BFS-ordered vertex list, every root-to-leaf path (ordered by
/// leaf BFS index), the slot layout of the linear encoding and memoized
/// shared-prefix data used by the covariance function.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSpec {
    vertices: Vec<Vertex>,
    root: usize,
    parent: Vec<Option<usize>>,
    paths: Vec<Vec<usize>>,
    /// Leaf vertex id -> path index.
    leaf_path: BTreeMap<usize, usize>,
    /// Slot offset of each vertex in the linear encoding.
    slot_offset: Vec<usize>,
    slot_len: usize,
    /// Block-carrying vertex ids on the shared prefix of each path pair.
    shared_block: Vec<Vec<Vec<usize>>>,
}

impl TreeSpec {
    /// Validate a vertex list and derive all path data. `vertices[i].id()`
    /// must equal `i`; the graph must be a rooted tree in BFS order.
    pub fn from_vertices(vertices: Vec<Vertex>, root: usize) -> Result<Self, SpecError> {
        if vertices.is_empty() {
            return Err(SpecError::NotATree("no vertices".into()));
        }
        if root >= vertices.len() {
            return Err(SpecError::NotATree(format!("root {root} out of range")));
        }
        for (i, v) in vertices.iter().enumerate() {
            if v.id() != i {
                return Err(SpecError::NotATree(format!(
                    "vertex at position {i} has id {}",
                    v.id()
                )));
            }
            v.block.validate(i)?;
            for (j, (label, _)) in v.children.iter().enumerate() {
                if v.children[..j].iter().any(|(l, _)| l == label) {
                    return Err(SpecError::DuplicateChildLabel {
                        vertex: i,
                        label: label.clone(),
                    });
                }
            }
        }

        // Single parent per non-root vertex, children listed after parents.
        let mut parent: Vec<Option<usize>> = vec![None; vertices.len()];
        for v in &vertices {
            for &(_, c) in &v.children {
                if c >= vertices.len() {
                    return Err(SpecError::NotATree(format!("child {c} out of range")));
                }
                if c == root {
                    return Err(SpecError::NotATree(format!("root {root} has a parent")));
                }
                if parent[c].is_some() {
                    return Err(SpecError::NotATree(format!("vertex {c} has two parents")));
                }
                if c <= v.id() {
                    return Err(SpecError::BadBfsOrder {
                        parent: v.id(),
                        child: c,
                    });
                }
                parent[c] = Some(v.id());
            }
        }
        for (i, p) in parent.iter().enumerate() {
            if i != root && p.is_none() {
                return Err(SpecError::NotATree(format!(
                    "vertex {i} is unreachable from the root"
                )));
            }
        }

        // Root-to-leaf paths, ordered by leaf BFS index. The BFS-order check
        // above rules out cycles, so the walk below terminates.
        let mut paths = Vec::new();
        let mut leaf_path = BTreeMap::new();
        for v in &vertices {
            if v.is_leaf() {
                let mut path = vec![v.id()];
                let mut cur = v.id();
                while let Some(p) = parent[cur] {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                leaf_path.insert(v.id(), paths.len());
                paths.push(path);
            }
        }

        // Per-path duplicate-name check (the external protocol keys request
        // parameters by name, so names must be unambiguous along a path).
        for path in &paths {
            let mut seen: Vec<(&str, usize)> = Vec::new();
            for &v in path {
                for name in vertices[v].block.names() {
                    if let Some(&(_, first)) = seen.iter().find(|(n, _)| *n == name) {
                        let _ = first;
                        return Err(SpecError::DuplicateVariableName {
                            vertex: v,
                            name: name.clone(),
                        });
                    }
                    seen.push((name, v));
                }
            }
        }

        let mut slot_offset = Vec::with_capacity(vertices.len());
        let mut off = 0;
        for v in &vertices {
            slot_offset.push(off);
            off += 1 + v.block.dim();
        }

        let shared_block = memo_shared_blocks(&vertices, &paths);

        Ok(Self {
            vertices,
            root,
            parent,
            paths,
            leaf_path,
            slot_offset,
            slot_len: off,
            shared_block,
        })
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, id: usize) -> &Vertex {
        &self.vertices[id]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parent[id]
    }

    /// Root-to-leaf vertex sequences, ordered by leaf BFS index.
    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }

    pub fn path(&self, index: usize) -> &[usize] {
        &self.paths[index]
    }

    pub fn leaf_count(&self) -> usize {
        self.paths.len()
    }

    /// Number of vertices on each root-to-leaf path.
    pub fn depth_per_path(&self) -> Vec<usize> {
        self.paths.iter().map(|p| p.len()).collect()
    }

    /// Path index of a leaf vertex.
    pub fn path_of_leaf(&self, leaf: usize) -> Option<usize> {
        self.leaf_path.get(&leaf).copied()
    }

    /// Sibling rank: ordinal position among the parent's children (the root
    /// ranks 0). This is the tag an on-path vertex carries in the linear
    /// encoding.
    pub fn sibling_rank(&self, id: usize) -> usize {
        match self.parent[id] {
            None => 0,
            Some(p) => self.vertices[p]
                .children
                .iter()
                .position(|&(_, c)| c == id)
                .expect("parent/child tables agree"),
        }
    }

    /// Length of the linear encoding: one tag slot per vertex plus one slot
    /// per continuous dimension.
    pub fn slot_len(&self) -> usize {
        self.slot_len
    }

    /// Offset of a vertex's tag slot; its values follow immediately.
    pub fn slot_offset(&self, id: usize) -> usize {
        self.slot_offset[id]
    }

    /// Block-carrying vertices on the shared prefix of two paths (memoized).
    pub fn shared_block_vertices(&self, path_i: usize, path_j: usize) -> &[usize] {
        &self.shared_block[path_i][path_j]
    }

    /// Vertex ids with nonempty blocks, in BFS order.
    pub fn block_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        self.vertices
            .iter()
            .filter(|v| !v.block.is_empty())
            .map(|v| v.id())
    }

    /// Walk the tree following a point's categorical choices and return the
    /// index of the selected path.
    pub fn path_of_point(&self, point: &StructuredPoint) -> Result<usize, PointError> {
        let mut cur = self.root;
        loop {
            let v = &self.vertices[cur];
            if v.is_leaf() {
                return Ok(self.leaf_path[&cur]);
            }
            if v.children.len() == 1 {
                cur = v.children[0].1;
                continue;
            }
            let label = point
                .choices
                .get(&cur)
                .ok_or(PointError::MissingChoice { vertex: cur })?;
            cur = v
                .child_by_label(label)
                .ok_or_else(|| PointError::UnknownChoice {
                    vertex: cur,
                    label: label.clone(),
                })?;
        }
    }

    /// Check a point against the spec: choices select a unique path, values
    /// cover exactly the on-path nonempty blocks and respect all bounds.
    pub fn validate_point(&self, point: &StructuredPoint) -> Result<usize, PointError> {
        let path_idx = self.path_of_point(point)?;
        let path = &self.paths[path_idx];
        for (&v, _) in &point.choices {
            if !path.contains(&v) || !self.vertices[v].is_branching() {
                return Err(PointError::ExtraChoice { vertex: v });
            }
        }
        for &v in path {
            if self.vertices[v].is_branching() && !point.choices.contains_key(&v) {
                return Err(PointError::MissingChoice { vertex: v });
            }
        }
        for &v in path {
            let block = &self.vertices[v].block;
            if block.is_empty() {
                if point.values.contains_key(&v) {
                    return Err(PointError::ExtraValues { vertex: v });
                }
                continue;
            }
            let values = point
                .values
                .get(&v)
                .ok_or(PointError::MissingValues { vertex: v })?;
            if values.len() != block.dim() {
                return Err(PointError::WrongArity {
                    vertex: v,
                    expected: block.dim(),
                    got: values.len(),
                });
            }
            for (d, &x) in values.iter().enumerate() {
                if x < block.low(d) || x > block.high(d) {
                    return Err(PointError::OutOfBounds {
                        vertex: v,
                        name: block.names()[d].clone(),
                        value: x,
                        low: block.low(d),
                        high: block.high(d),
                    });
                }
            }
        }
        for (&v, _) in &point.values {
            if !path.contains(&v) {
                return Err(PointError::ExtraValues { vertex: v });
            }
        }
        Ok(path_idx)
    }

    /// Share the spec between owners (kernels, datasets, strategies).
    pub fn into_shared(self) -> Arc<TreeSpec> {
        Arc::new(self)
    }
}

fn memo_shared_blocks(vertices: &[Vertex], paths: &[Vec<usize>]) -> Vec<Vec<Vec<usize>>> {
    let n = paths.len();
    let mut memo = vec![vec![Vec::new(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let prefix = common_prefix(&paths[i], &paths[j]);
            memo[i][j] = prefix
                .iter()
                .copied()
                .filter(|&v| !vertices[v].block.is_empty())
                .collect();
        }
    }
    memo
}

fn common_prefix<'a>(a: &'a [usize], b: &[usize]) -> &'a [usize] {
    let mut k = 0;
    while k < a.len() && k < b.len() && a[k] == b[k] {
        k += 1;
    }
    &a[..k]
}

/// Vertices from the root to the lowest common ancestor of two paths,
/// inclusive. Because both arguments are root-to-leaf paths of the same
/// tree, this is their longest common prefix.
pub fn shared_prefix(spec: &TreeSpec, path_i: usize, path_j: usize) -> Vec<usize> {
    common_prefix(spec.path(path_i), spec.path(path_j)).to_vec()
}

/// Ambient and per-leaf effective dimensions.
///
/// The ambient dimension counts every continuous dimension plus one
/// dimension per branching categorical variable; the effective dimension of
/// a leaf counts only the continuous dimensions along its path.
pub fn dimensions(spec: &TreeSpec) -> (usize, Vec<usize>) {
    let continuous: usize = spec.vertices().iter().map(|v| v.block().dim()).sum();
    let categorical = spec.vertices().iter().filter(|v| v.is_branching()).count();
    let per_leaf = spec
        .paths()
        .iter()
        .map(|p| p.iter().map(|&v| spec.vertex(v).block().dim()).sum())
        .collect();
    (continuous + categorical, per_leaf)
}

/// A point in a tree-structured space: categorical choices at the branching
/// vertices of one root-to-leaf path and values for every nonempty block
/// along it.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredPoint {
    choices: BTreeMap<usize, String>,
    values: BTreeMap<usize, Vec<f64>>,
}

impl StructuredPoint {
    /// Build and validate a point against its spec.
    pub fn new(
        spec: &TreeSpec,
        choices: BTreeMap<usize, String>,
        values: BTreeMap<usize, Vec<f64>>,
    ) -> Result<Self, PointError> {
        let point = Self { choices, values };
        spec.validate_point(&point)?;
        Ok(point)
    }

    /// Build a point on a given path from per-vertex values in path order
    /// (one entry per block-carrying vertex on the path).
    pub fn on_path(
        spec: &TreeSpec,
        path_index: usize,
        values_in_path_order: &[Vec<f64>],
    ) -> Result<Self, PointError> {
        let path = spec.path(path_index);
        let mut choices = BTreeMap::new();
        for w in path.windows(2) {
            let (v, child) = (w[0], w[1]);
            if spec.vertex(v).is_branching() {
                let label = spec
                    .vertex(v)
                    .children()
                    .iter()
                    .find(|&&(_, c)| c == child)
                    .map(|(l, _)| l.clone())
                    .expect("path edges exist");
                choices.insert(v, label);
            }
        }
        let mut values = BTreeMap::new();
        let mut it = values_in_path_order.iter();
        for &v in path {
            if !spec.vertex(v).block().is_empty() {
                let vals = it.next().ok_or(PointError::MissingValues { vertex: v })?;
                values.insert(v, vals.clone());
            }
        }
        Self::new(spec, choices, values)
    }

    pub fn choices(&self) -> &BTreeMap<usize, String> {
        &self.choices
    }

    pub fn values(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.values
    }

    pub fn values_at(&self, vertex: usize) -> Option<&[f64]> {
        self.values.get(&vertex).map(|v| v.as_slice())
    }
}

impl fmt::Display for StructuredPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<&str> = self.choices.values().map(|s| s.as_str()).collect();
        write!(f, "path={:?} values={{", labels)?;
        for (i, (v, vals)) in self.values.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "v{v}:{vals:?}")?;
        }
        write!(f, "}}")
    }
}

/// The flat tag-slot encoding of a point.
///
/// Slots are laid out in BFS vertex order as `(tag, values...)` per vertex.
/// An on-path vertex with a nonempty block carries its sibling rank as the
/// tag; off-path vertices and vertices without continuous variables carry a
/// sentinel that is unique per `(uid, vertex)` so it never compares equal
/// across points or vertices. The covariance function never reads these
/// sentinels; they only make accidental tag collisions impossible when the
/// encoding is used as a serialization or debug format.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPoint {
    slots: Vec<f64>,
    uid: u64,
}

impl LinearPoint {
    pub fn slots(&self) -> &[f64] {
        &self.slots
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn tag(&self, spec: &TreeSpec, vertex: usize) -> f64 {
        self.slots[spec.slot_offset(vertex)]
    }

    pub fn values(&self, spec: &TreeSpec, vertex: usize) -> &[f64] {
        let off = spec.slot_offset(vertex);
        &self.slots[off + 1..off + 1 + spec.vertex(vertex).block().dim()]
    }
}

fn sentinel(spec: &TreeSpec, uid: u64, vertex: usize) -> f64 {
    // Strictly negative, distinct for every (uid, vertex) pair; sibling
    // ranks are non-negative so a sentinel can never masquerade as one.
    -(1.0 + (uid as f64) * (spec.vertices().len() as f64) + vertex as f64)
}

/// Encode a point as a flat tag-slot vector.
///
/// `uid` must be unique per observation; it parameterizes the sentinel tags
/// of off-path and block-less vertices. Off-path value slots are zero-filled
/// and carry no information.
pub fn linearize(spec: &TreeSpec, point: &StructuredPoint, uid: u64) -> Result<LinearPoint, PointError> {
    let path_idx = spec.validate_point(point)?;
    let path = spec.path(path_idx);
    let mut slots = vec![0.0; spec.slot_len()];
    for v in spec.vertices() {
        let off = spec.slot_offset(v.id());
        let on_path = path.contains(&v.id());
        if on_path && !v.block().is_empty() {
            slots[off] = spec.sibling_rank(v.id()) as f64;
            let vals = point.values_at(v.id()).expect("validated above");
            slots[off + 1..off + 1 + vals.len()].copy_from_slice(vals);
        } else {
            slots[off] = sentinel(spec, uid, v.id());
        }
    }
    Ok(LinearPoint { slots, uid })
}

/// Decode a tag-slot vector back into a structured point (the uid is
/// discarded). The selected path is the one whose block-carrying vertices
/// all carry their sibling-rank tags while every other block-carrying
/// vertex does not; if several paths are consistent (possible only when a
/// branching decision is followed by block-less vertices all the way to a
/// leaf), the lowest path index wins.
pub fn delinearize(spec: &TreeSpec, lp: &LinearPoint) -> Result<StructuredPoint, PointError> {
    if lp.slots.len() != spec.slot_len() {
        return Err(PointError::BadSlotLength {
            expected: spec.slot_len(),
            got: lp.slots.len(),
        });
    }
    let rank_tagged: Vec<bool> = spec
        .vertices()
        .iter()
        .map(|v| lp.slots[spec.slot_offset(v.id())] == spec.sibling_rank(v.id()) as f64)
        .collect();

    let path_idx = (0..spec.leaf_count())
        .find(|&i| {
            spec.vertices().iter().all(|v| {
                if v.block().is_empty() {
                    return true;
                }
                let on_path = spec.path(i).contains(&v.id());
                rank_tagged[v.id()] == on_path
            })
        })
        .ok_or(PointError::InconsistentSlots)?;

    let values: Vec<Vec<f64>> = spec
        .path(path_idx)
        .iter()
        .filter(|&&v| !spec.vertex(v).block().is_empty())
        .map(|&v| lp.values(spec, v).to_vec())
        .collect();
    StructuredPoint::on_path(spec, path_idx, &values)
}

/// Draw a point on a fixed root-to-leaf path: the categorical choices are
/// determined by the path and each on-path continuous value is uniform
/// within its bounds.
pub fn sample_on_path<R: Rng>(spec: &TreeSpec, path_index: usize, rng: &mut R) -> StructuredPoint {
    let values: Vec<Vec<f64>> = spec
        .path(path_index)
        .iter()
        .filter_map(|&v| {
            let block = spec.vertex(v).block();
            if block.is_empty() {
                return None;
            }
            Some(
                (0..block.dim())
                    .map(|d| rng.gen_range(block.low(d)..block.high(d)))
                    .collect(),
            )
        })
        .collect();
    StructuredPoint::on_path(spec, path_index, &values).expect("sampled values are in bounds")
}

/// Draw a point uniformly: each branching choice uniform over children,
/// each continuous value uniform within its bounds.
pub fn sample_uniform<R: Rng>(spec: &TreeSpec, rng: &mut R) -> StructuredPoint {
    let mut choices = BTreeMap::new();
    let mut values = BTreeMap::new();
    let mut cur = spec.root();
    loop {
        let v = spec.vertex(cur);
        if !v.block().is_empty() {
            let vals: Vec<f64> = (0..v.block().dim())
                .map(|d| rng.gen_range(v.block().low(d)..v.block().high(d)))
                .collect();
            values.insert(cur, vals);
        }
        if v.is_leaf() {
            break;
        }
        let pick = if v.children().len() == 1 {
            0
        } else {
            rng.gen_range(0..v.children().len())
        };
        let (label, child) = &v.children()[pick];
        if v.is_branching() {
            choices.insert(cur, label.clone());
        }
        cur = *child;
    }
    StructuredPoint { choices, values }
}

// --- spec-file parsing ----------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VertexSource {
    #[serde(default)]
    continuous: Vec<VariableSource>,
    #[serde(default, deserialize_with = "ordered_children")]
    children: Vec<(String, VertexSource)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableSource {
    name: String,
    low: f64,
    high: f64,
}

/// Deserialize a JSON object into an ordered child list, keeping duplicate
/// keys so validation can reject them with a proper error.
fn ordered_children<'de, D>(deserializer: D) -> Result<Vec<(String, VertexSource)>, D::Error>
where
    D: Deserializer<'de>,
{
    struct ChildVisitor;

    impl<'de> Visitor<'de> for ChildVisitor {
        type Value = Vec<(String, VertexSource)>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a map of child label to vertex object")
        }

        fn visit_map<A>(self, mut access: A) -> Result<Self::Value, A::Error>
        where
            A: MapAccess<'de>,
        {
            let mut out = Vec::new();
            while let Some((label, child)) = access.next_entry::<String, VertexSource>()? {
                out.push((label, child));
            }
            Ok(out)
        }
    }

    deserializer.deserialize_map(ChildVisitor)
}

/// Parse a spec document (JSON, single root object) into a validated
/// [`TreeSpec`] with BFS vertex ids.
pub fn parse_spec(source: &str) -> Result<TreeSpec, SpecError> {
    let root: VertexSource =
        serde_json::from_str(source).map_err(|e| SpecError::Json(e.to_string()))?;

    // Assign BFS ids, then materialize vertices in id order.
    let mut queue: std::collections::VecDeque<(usize, &VertexSource)> =
        std::collections::VecDeque::new();
    let mut sources: Vec<&VertexSource> = vec![&root];
    queue.push_back((0, &root));
    let mut child_ids: Vec<Vec<usize>> = vec![Vec::new()];
    while let Some((id, src)) = queue.pop_front() {
        for (_, child) in &src.children {
            let cid = sources.len();
            sources.push(child);
            child_ids.push(Vec::new());
            child_ids[id].push(cid);
            queue.push_back((cid, child));
        }
    }

    let mut vertices = Vec::with_capacity(sources.len());
    for (id, src) in sources.iter().enumerate() {
        for (j, (label, _)) in src.children.iter().enumerate() {
            if src.children[..j].iter().any(|(l, _)| l == label) {
                return Err(SpecError::DuplicateChildLabel {
                    vertex: id,
                    label: label.clone(),
                });
            }
        }
        let block = ContinuousBlock {
            names: src.continuous.iter().map(|v| v.name.clone()).collect(),
            lows: src.continuous.iter().map(|v| v.low).collect(),
            highs: src.continuous.iter().map(|v| v.high).collect(),
        };
        let children = src
            .children
            .iter()
            .zip(&child_ids[id])
            .map(|((label, _), &cid)| (label.clone(), cid))
            .collect();
        vertices.push(Vertex::new(id, block, children));
    }

    TreeSpec::from_vertices(vertices, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) const EXAMPLE_SPEC: &str = include_str!("../specs/example.json");
    pub(crate) const JENATTON_SPEC: &str = include_str!("../specs/jenatton.json");

    fn example_tree() -> TreeSpec {
        parse_spec(EXAMPLE_SPEC).unwrap()
    }

    fn jenatton_tree() -> TreeSpec {
        parse_spec(JENATTON_SPEC).unwrap()
    }

    #[test]
    fn parse_assigns_bfs_ids_and_paths() {
        let spec = jenatton_tree();
        assert_eq!(spec.vertices().len(), 7);
        assert_eq!(spec.leaf_count(), 4);
        assert_eq!(spec.paths(), &[vec![0, 1, 3], vec![0, 1, 4], vec![0, 2, 5], vec![0, 2, 6]]);
        assert_eq!(spec.depth_per_path(), vec![3, 3, 3, 3]);
        let (ambient, _) = dimensions(&spec);
        assert_eq!(ambient, 9);
    }

    #[test]
    fn parse_single_vertex() {
        let spec = parse_spec(r#"{"continuous":[{"name":"x","low":0.0,"high":1.0}]}"#).unwrap();
        assert_eq!(spec.leaf_count(), 1);
        let (ambient, per_leaf) = dimensions(&spec);
        assert_eq!(ambient, 1);
        assert_eq!(per_leaf, vec![1]);
    }

    #[test]
    fn parse_rejects_duplicate_child_labels() {
        let src = r#"{"children":{"0":{"continuous":[{"name":"a","low":0,"high":1}]},
                                   "0":{"continuous":[{"name":"b","low":0,"high":1}]}}}"#;
        match parse_spec(src) {
            Err(SpecError::DuplicateChildLabel { .. }) => {}
            other => panic!("expected duplicate-label error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_inverted_bounds() {
        let src = r#"{"continuous":[{"name":"x","low":1.0,"high":0.0}]}"#;
        assert!(matches!(parse_spec(src), Err(SpecError::InvalidBounds { .. })));
    }

    #[test]
    fn parse_rejects_unknown_fields() {
        let src = r#"{"continuous":[],"banana":1}"#;
        assert!(matches!(parse_spec(src), Err(SpecError::Json(_))));
    }

    #[test]
    fn from_vertices_rejects_multi_parent() {
        let v0 = Vertex::new(0, ContinuousBlock::empty(), vec![("a".into(), 1), ("b".into(), 2)]);
        let v1 = Vertex::new(1, ContinuousBlock::empty(), vec![("c".into(), 2)]);
        let v2 = Vertex::new(2, ContinuousBlock::empty(), vec![]);
        assert!(matches!(
            TreeSpec::from_vertices(vec![v0, v1, v2], 0),
            Err(SpecError::NotATree(_))
        ));
    }

    #[test]
    fn dimensions_example_tree() {
        let spec = example_tree();
        let (ambient, per_leaf) = dimensions(&spec);
        assert_eq!(ambient, 8);
        assert_eq!(per_leaf, vec![4, 5]);
    }

    #[test]
    fn dimensions_perfect_binary_depth_three() {
        // Depth 3, every vertex carries one 1-dim variable.
        let mut json = String::from(r#"{"continuous":[{"name":"v0","low":0,"high":1}],"children":{"#);
        for (i, (a, b, c)) in [(1, 3, 4), (2, 5, 6)].iter().enumerate() {
            if i > 0 {
                json.push(',');
            }
            json.push_str(&format!(
                r#""{i}":{{"continuous":[{{"name":"v{a}","low":0,"high":1}}],"children":{{
                    "0":{{"continuous":[{{"name":"v{b}","low":0,"high":1}}]}},
                    "1":{{"continuous":[{{"name":"v{c}","low":0,"high":1}}]}}}}}}"#
            ));
        }
        json.push_str("}}");
        let spec = parse_spec(&json).unwrap();
        let (ambient, per_leaf) = dimensions(&spec);
        assert_eq!(ambient, 10); // 3 * 2^2 - 2
        assert_eq!(per_leaf, vec![3, 3, 3, 3]);
    }

    #[test]
    fn effective_never_exceeds_ambient() {
        for src in [EXAMPLE_SPEC, JENATTON_SPEC] {
            let spec = parse_spec(src).unwrap();
            let (ambient, per_leaf) = dimensions(&spec);
            assert!(per_leaf.iter().all(|&e| e <= ambient));
        }
    }

    fn example_left_point(spec: &TreeSpec) -> StructuredPoint {
        StructuredPoint::on_path(spec, 0, &[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap()
    }

    #[test]
    fn linearize_left_path_slots() {
        let spec = example_tree();
        let lp = linearize(&spec, &example_left_point(&spec), 17).unwrap();
        let s = lp.slots();
        assert_eq!(s.len(), 10);
        assert_eq!(&s[0..6], &[0.0, 0.1, 0.2, 0.0, 0.3, 0.4]);
        assert!(s[6] < 0.0, "off-path vertex carries a sentinel tag");
    }

    #[test]
    fn linearize_right_path_slots() {
        let spec = example_tree();
        let p = StructuredPoint::on_path(&spec, 1, &[vec![0.5, 0.6], vec![0.7, 0.8, 0.9]]).unwrap();
        let lp = linearize(&spec, &p, 3).unwrap();
        let s = lp.slots();
        assert_eq!(&s[0..3], &[0.0, 0.5, 0.6]);
        assert!(s[3] < 0.0);
        assert_eq!(&s[6..10], &[1.0, 0.7, 0.8, 0.9]);
    }

    #[test]
    fn linearize_single_vertex() {
        let spec = parse_spec(r#"{"continuous":[{"name":"x","low":0.0,"high":1.0}]}"#).unwrap();
        let p = StructuredPoint::on_path(&spec, 0, &[vec![0.3]]).unwrap();
        let lp = linearize(&spec, &p, 0).unwrap();
        assert_eq!(lp.slots(), &[0.0, 0.3]);
    }

    #[test]
    fn sentinels_distinct_across_points_and_vertices() {
        let spec = example_tree();
        let lp1 = linearize(&spec, &example_left_point(&spec), 1).unwrap();
        let lp2 = linearize(&spec, &example_left_point(&spec), 2).unwrap();
        assert_ne!(lp1.tag(&spec, 2), lp2.tag(&spec, 2));
    }

    #[test]
    fn delinearize_inverts_worked_examples() {
        let spec = example_tree();
        let left = example_left_point(&spec);
        let right =
            StructuredPoint::on_path(&spec, 1, &[vec![0.5, 0.6], vec![0.7, 0.8, 0.9]]).unwrap();
        for p in [left, right] {
            let lp = linearize(&spec, &p, 42).unwrap();
            assert_eq!(delinearize(&spec, &lp).unwrap(), p);
        }
    }

    #[test]
    fn delinearize_roundtrip_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for spec in [example_tree(), jenatton_tree()] {
            for uid in 0..1000u64 {
                let p = sample_uniform(&spec, &mut rng);
                let lp = linearize(&spec, &p, uid).unwrap();
                assert_eq!(delinearize(&spec, &lp).unwrap(), p);
            }
        }
    }

    #[test]
    fn delinearize_rejects_garbage() {
        let spec = example_tree();
        let lp = LinearPoint {
            slots: vec![-5.0; spec.slot_len()],
            uid: 0,
        };
        assert!(matches!(
            delinearize(&spec, &lp),
            Err(PointError::InconsistentSlots)
        ));
    }

    #[test]
    fn sample_uniform_respects_bounds_and_choice_frequency() {
        let spec = jenatton_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut left = 0usize;
        let n = 10_000;
        for _ in 0..n {
            let p = sample_uniform(&spec, &mut rng);
            spec.validate_point(&p).unwrap();
            if p.choices()[&0] == "0" {
                left += 1;
            }
        }
        let freq = left as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.05, "root choice frequency {freq}");
    }

    #[test]
    fn sample_uniform_is_deterministic() {
        let spec = jenatton_tree();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            assert_eq!(sample_uniform(&spec, &mut a), sample_uniform(&spec, &mut b));
        }
    }

    #[test]
    fn shared_prefix_cases() {
        let spec = jenatton_tree();
        // Same leaf: the whole path.
        assert_eq!(shared_prefix(&spec, 0, 0), vec![0, 1, 3]);
        // Two leaves under the same mid vertex.
        assert_eq!(shared_prefix(&spec, 0, 1), vec![0, 1]);
        // Leaves in different halves share only the (block-less) root.
        assert_eq!(shared_prefix(&spec, 0, 2), vec![0]);
        // Symmetry and prefix property.
        for i in 0..4 {
            for j in 0..4 {
                let ij = shared_prefix(&spec, i, j);
                assert_eq!(ij, shared_prefix(&spec, j, i));
                assert_eq!(&spec.path(i)[..ij.len()], ij.as_slice());
            }
        }
    }

    #[test]
    fn every_vertex_on_some_path() {
        for src in [EXAMPLE_SPEC, JENATTON_SPEC] {
            let spec = parse_spec(src).unwrap();
            for v in spec.vertices() {
                assert!(spec.paths().iter().any(|p| p.contains(&v.id())));
            }
        }
    }
}
