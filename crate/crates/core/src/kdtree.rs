//! Bucketed 3-d tree construction with the sliding-midpoint split rule.
//!
//! Leaves are buckets of up to `leaf_size` points stored as contiguous
//! ranges of a global index permutation, so a leaf scan is a linear pass
//! over a few cache lines rather than a pointer chase. Internal nodes keep
//! the split plane, the exact partition rule that was applied, and the cell
//! (the root bounding box clipped at every split on the way down). Cells are
//! inherited rather than recomputed tightly per node: the slide of the
//! sliding-midpoint rule only ever fires against an inherited cell.

use std::num::NonZeroUsize;

use thiserror::Error;

use crate::cloud::{Aabb, PointCloud};

pub type NodeId = u32;

/// Maximum bucket capacity for a build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BuildConfig {
    pub leaf_size: NonZeroUsize,
}

impl BuildConfig {
    pub fn new(leaf_size: usize) -> Option<Self> {
        NonZeroUsize::new(leaf_size).map(|leaf_size| Self { leaf_size })
    }
}

/// Splitting hyperplane: `dim` is the axis, `value` the plane position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitPlane {
    pub dim: usize,
    pub value: f64,
}

/// How a node's points were divided between its children.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitRule {
    /// left: coord < value, right: coord >= value (midpoint, or a slide to
    /// the maximum coordinate when everything sat below the midpoint).
    Strict,
    /// left: coord <= value, right: coord > value (slide to the minimum
    /// coordinate when everything sat at or above the midpoint).
    LeftInclusive,
    /// Points identical in every dimension: the first ceil(n/2) indices of
    /// the segment go left. Membership is positional, not coordinate-based.
    CountSplit,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Internal(InternalNode),
    Leaf(LeafNode),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InternalNode {
    pub split: SplitPlane,
    pub rule: SplitRule,
    pub cell: Aabb,
    pub left: NodeId,
    pub right: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeafNode {
    /// Range `[begin, end)` into the tree's permutation array.
    pub begin: u32,
    pub end: u32,
    pub cell: Aabb,
}

/// Immutable bucketed 3-d tree over a [`PointCloud`].
#[derive(Clone, Debug, PartialEq)]
pub struct KdTree {
    pub(crate) leaf_size: usize,
    pub(crate) perm: Vec<u32>,
    pub(crate) nodes: Vec<Node>,
    pub(crate) root: NodeId,
    pub(crate) root_cell: Aabb,
}

impl KdTree {
    pub const DIMS: usize = 3;

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn root_cell(&self) -> Aabb {
        self.root_cell
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn perm(&self) -> &[u32] {
        &self.perm
    }

    /// Point indices of one leaf bucket.
    pub fn bucket(&self, leaf: &LeafNode) -> &[u32] {
        &self.perm[leaf.begin as usize..leaf.end as usize]
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BuildError {
    #[error("cannot build a tree over an empty cloud")]
    EmptyCloud,
    #[error("cloud of {0} points exceeds the 32-bit index space")]
    TooManyPoints(usize),
}

/// All points coincide in every dimension; no plane can separate them.
#[derive(Debug, PartialEq, Eq)]
pub struct DegenerateSplit;

/// Pick the split for one node: the midpoint of the cell's longest side
/// among axes where the points actually spread (ties to the lowest axis),
/// sliding to the nearest point when one side of the midpoint would be
/// empty. The returned rule always yields two non-empty sides.
pub fn choose_split(
    indices: &[u32],
    cell: &Aabb,
    cloud: &PointCloud,
) -> Result<(SplitPlane, SplitRule), DegenerateSplit> {
    debug_assert!(indices.len() >= 2);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in indices {
        let p = cloud.point(i as usize);
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let mut dim = usize::MAX;
    let mut best_side = f64::NEG_INFINITY;
    for d in 0..3 {
        if lo[d] < hi[d] && cell.side(d) > best_side {
            best_side = cell.side(d);
            dim = d;
        }
    }
    if dim == usize::MAX {
        return Err(DegenerateSplit);
    }
    let mid = cell.midpoint(dim);
    let (value, rule) = if lo[dim] >= mid {
        // nothing strictly below the midpoint: slide down onto the nearest
        // point and keep it on the left
        (lo[dim], SplitRule::LeftInclusive)
    } else if hi[dim] < mid {
        // nothing at or above the midpoint: slide up onto the farthest point
        (hi[dim], SplitRule::Strict)
    } else {
        (mid, SplitRule::Strict)
    };
    Ok((SplitPlane { dim, value }, rule))
}

/// Rearrange a permutation segment in place so that all indices satisfying
/// the rule's left predicate precede the rest, returning the two halves.
/// Both halves are non-empty for planes produced by [`choose_split`] and for
/// the count-split fallback on segments of at least two points.
pub fn partition<'a>(
    seg: &'a mut [u32],
    plane: &SplitPlane,
    rule: SplitRule,
    cloud: &PointCloud,
) -> (&'a mut [u32], &'a mut [u32]) {
    let boundary = match rule {
        SplitRule::CountSplit => seg.len().div_ceil(2),
        SplitRule::Strict | SplitRule::LeftInclusive => {
            let goes_left = |idx: u32| {
                let c = cloud.coord(idx as usize, plane.dim);
                match rule {
                    SplitRule::Strict => c < plane.value,
                    SplitRule::LeftInclusive => c <= plane.value,
                    SplitRule::CountSplit => unreachable!(),
                }
            };
            let mut i = 0usize;
            let mut j = seg.len();
            while i < j {
                if goes_left(seg[i]) {
                    i += 1;
                } else {
                    j -= 1;
                    seg.swap(i, j);
                }
            }
            i
        }
    };
    seg.split_at_mut(boundary)
}

pub(crate) struct BuildCtx<'a> {
    pub cloud: &'a PointCloud,
    pub leaf_size: usize,
}

/// Recursive construction over one permutation segment. `seg_offset` is the
/// segment's absolute start within the tree-wide permutation, recorded in
/// leaf ranges. Children are emitted before their parent, so a subtree
/// occupies a contiguous arena run ending at its root.
pub(crate) fn build_node(
    ctx: &BuildCtx<'_>,
    seg: &mut [u32],
    seg_offset: u32,
    cell: Aabb,
    nodes: &mut Vec<Node>,
) -> NodeId {
    if seg.len() <= ctx.leaf_size {
        nodes.push(Node::Leaf(LeafNode {
            begin: seg_offset,
            end: seg_offset + seg.len() as u32,
            cell,
        }));
        return (nodes.len() - 1) as NodeId;
    }
    let (plane, rule) = split_or_fallback(seg, &cell, ctx.cloud);
    let (left_seg, right_seg) = partition(seg, &plane, rule, ctx.cloud);
    debug_assert!(!left_seg.is_empty() && !right_seg.is_empty());
    let boundary = left_seg.len() as u32;
    let left_cell = cell.clipped_below(plane.dim, plane.value);
    let right_cell = cell.clipped_above(plane.dim, plane.value);
    let left = build_node(ctx, left_seg, seg_offset, left_cell, nodes);
    let right = build_node(ctx, right_seg, seg_offset + boundary, right_cell, nodes);
    nodes.push(Node::Internal(InternalNode {
        split: plane,
        rule,
        cell,
        left,
        right,
    }));
    (nodes.len() - 1) as NodeId
}

/// choose_split with the duplicate-bucket fallback: when every point is
/// identical in every dimension the bucket is halved by index count, which
/// guarantees termination.
pub(crate) fn split_or_fallback(
    seg: &[u32],
    cell: &Aabb,
    cloud: &PointCloud,
) -> (SplitPlane, SplitRule) {
    match choose_split(seg, cell, cloud) {
        Ok(split) => split,
        Err(DegenerateSplit) => (
            SplitPlane {
                dim: 0,
                value: cloud.coord(seg[0] as usize, 0),
            },
            SplitRule::CountSplit,
        ),
    }
}

/// Sequential construction of the bucketed tree.
pub fn build(cloud: &PointCloud, cfg: BuildConfig) -> Result<KdTree, BuildError> {
    if cloud.is_empty() {
        return Err(BuildError::EmptyCloud);
    }
    if cloud.len() > u32::MAX as usize {
        return Err(BuildError::TooManyPoints(cloud.len()));
    }
    let root_cell = cloud.bbox().expect("non-empty cloud has a bbox");
    let leaf_size = cfg.leaf_size.get();
    let mut perm: Vec<u32> = (0..cloud.len() as u32).collect();
    let mut nodes = Vec::new();
    let ctx = BuildCtx { cloud, leaf_size };
    let root = build_node(&ctx, &mut perm, 0, root_cell, &mut nodes);
    Ok(KdTree {
        leaf_size,
        perm,
        nodes,
        root,
        root_cell,
    })
}

/// One structural defect found by [`validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// perm length differs from the cloud's point count.
    PermLengthMismatch { expected: usize, actual: usize },
    /// A point index appears in no leaf or more than one leaf.
    CoverageError { index: u32, occurrences: usize },
    /// Leaf bucket larger than the configured capacity.
    OverCapacity { node: NodeId, len: usize },
    /// Leaf bucket with no points under an internal parent.
    EmptyLeaf { node: NodeId },
    /// A point sits on the wrong side of its ancestor's recorded rule.
    SideInconsistent { node: NodeId, index: u32 },
    /// A count-split node whose halves are not ceil/floor of the segment.
    BadCountSplit { node: NodeId },
    /// Child cell is not the parent cell clipped at the split plane.
    CellMismatch { node: NodeId },
    /// A point lies outside its leaf's closed cell.
    PointOutsideCell { node: NodeId, index: u32 },
    /// Children's permutation spans are not adjacent.
    NonContiguousChildren { node: NodeId },
    /// Node reachable twice or child id out of range.
    MalformedArena { node: NodeId },
    /// The root does not span the whole permutation.
    BadRootSpan { begin: u32, end: u32 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::PermLengthMismatch { expected, actual } => {
                write!(f, "permutation has {actual} entries, cloud has {expected}")
            }
            Violation::CoverageError { index, occurrences } => {
                write!(f, "point {index} covered by {occurrences} bucket slots")
            }
            Violation::OverCapacity { node, len } => {
                write!(f, "leaf {node} holds {len} points, over capacity")
            }
            Violation::EmptyLeaf { node } => write!(f, "leaf {node} is empty"),
            Violation::SideInconsistent { node, index } => {
                write!(f, "point {index} violates the split rule of node {node}")
            }
            Violation::BadCountSplit { node } => {
                write!(f, "count-split node {node} has unbalanced halves")
            }
            Violation::CellMismatch { node } => {
                write!(f, "cell of node {node} is not its parent's cell clipped at the plane")
            }
            Violation::PointOutsideCell { node, index } => {
                write!(f, "point {index} lies outside the cell of leaf {node}")
            }
            Violation::NonContiguousChildren { node } => {
                write!(f, "children of node {node} cover non-adjacent ranges")
            }
            Violation::MalformedArena { node } => {
                write!(f, "node {node} is reachable twice or out of range")
            }
            Violation::BadRootSpan { begin, end } => {
                write!(f, "root spans [{begin}, {end}) instead of the full permutation")
            }
        }
    }
}

/// Outcome of a structural validation pass; violations are data, not errors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Validator<'a> {
    tree: &'a KdTree,
    cloud: &'a PointCloud,
    visited: Vec<bool>,
    violations: Vec<Violation>,
}

impl Validator<'_> {
    /// Returns the permutation span `[begin, end)` covered by `id`.
    fn walk(&mut self, id: NodeId, expected_cell: &Aabb) -> Option<(u32, u32)> {
        let Some(slot) = self.visited.get_mut(id as usize) else {
            self.violations.push(Violation::MalformedArena { node: id });
            return None;
        };
        if std::mem::replace(slot, true) {
            self.violations.push(Violation::MalformedArena { node: id });
            return None;
        }
        match self.tree.node(id) {
            Node::Leaf(leaf) => {
                if leaf.cell != *expected_cell {
                    self.violations.push(Violation::CellMismatch { node: id });
                }
                let len = (leaf.end - leaf.begin) as usize;
                if len == 0 && self.tree.node_count() > 1 {
                    self.violations.push(Violation::EmptyLeaf { node: id });
                }
                if len > self.tree.leaf_size {
                    self.violations.push(Violation::OverCapacity { node: id, len });
                }
                if leaf.begin <= leaf.end && leaf.end as usize <= self.tree.perm.len() {
                    let tree = self.tree;
                    let cloud = self.cloud;
                    for &idx in tree.bucket(leaf) {
                        if !leaf.cell.contains(cloud.point(idx as usize)) {
                            self.violations
                                .push(Violation::PointOutsideCell { node: id, index: idx });
                        }
                    }
                }
                Some((leaf.begin, leaf.end))
            }
            Node::Internal(node) => {
                if node.cell != *expected_cell {
                    self.violations.push(Violation::CellMismatch { node: id });
                }
                let left_cell = node.cell.clipped_below(node.split.dim, node.split.value);
                let right_cell = node.cell.clipped_above(node.split.dim, node.split.value);
                let left = self.walk(node.left, &left_cell);
                let right = self.walk(node.right, &right_cell);
                let (Some((lb, le)), Some((rb, re))) = (left, right) else {
                    return None;
                };
                if le != rb {
                    self.violations.push(Violation::NonContiguousChildren { node: id });
                    return None;
                }
                self.check_sides(id, node, (lb, le), (rb, re));
                Some((lb, re))
            }
        }
    }

    fn check_sides(&mut self, id: NodeId, node: &InternalNode, left: (u32, u32), right: (u32, u32)) {
        let tree = self.tree;
        let cloud = self.cloud;
        let coord = |at: u32| cloud.coord(tree.perm[at as usize] as usize, node.split.dim);
        match node.rule {
            SplitRule::Strict | SplitRule::LeftInclusive => {
                let strict = node.rule == SplitRule::Strict;
                for at in left.0..left.1 {
                    let c = coord(at);
                    let ok = if strict { c < node.split.value } else { c <= node.split.value };
                    if !ok {
                        self.violations.push(Violation::SideInconsistent {
                            node: id,
                            index: tree.perm[at as usize],
                        });
                    }
                }
                for at in right.0..right.1 {
                    let c = coord(at);
                    let ok = if strict { c >= node.split.value } else { c > node.split.value };
                    if !ok {
                        self.violations.push(Violation::SideInconsistent {
                            node: id,
                            index: tree.perm[at as usize],
                        });
                    }
                }
            }
            SplitRule::CountSplit => {
                let total = (right.1 - left.0) as usize;
                let left_len = (left.1 - left.0) as usize;
                if left_len != total.div_ceil(2) {
                    self.violations.push(Violation::BadCountSplit { node: id });
                }
                // the fallback is only legal over fully identical points
                let first = cloud.point(tree.perm[left.0 as usize] as usize);
                for at in left.0..right.1 {
                    let idx = tree.perm[at as usize];
                    if cloud.point(idx as usize) != first {
                        self.violations
                            .push(Violation::SideInconsistent { node: id, index: idx });
                    }
                }
            }
        }
    }
}

/// Check every structural invariant of a built tree against its cloud:
/// disjoint covering buckets, bucket capacity, recorded-rule side
/// consistency, cell nesting and point containment.
pub fn validate(tree: &KdTree, cloud: &PointCloud) -> ValidationReport {
    let mut v = Validator {
        tree,
        cloud,
        visited: vec![false; tree.node_count()],
        violations: Vec::new(),
    };
    if tree.perm.len() != cloud.len() {
        v.violations.push(Violation::PermLengthMismatch {
            expected: cloud.len(),
            actual: tree.perm.len(),
        });
    }
    let root_cell = tree.root_cell;
    let span = v.walk(tree.root, &root_cell);
    if let Some((b, e)) = span {
        if (b, e) != (0, tree.perm.len() as u32) {
            v.violations.push(Violation::BadRootSpan { begin: b, end: e });
        }
    }
    // bucket multiset must be exactly {0..n-1}
    let mut seen = vec![0u32; cloud.len()];
    for &idx in &tree.perm {
        match seen.get_mut(idx as usize) {
            Some(c) => *c += 1,
            None => v.violations.push(Violation::CoverageError {
                index: idx,
                occurrences: usize::MAX,
            }),
        }
    }
    for (idx, &count) in seen.iter().enumerate() {
        if count != 1 {
            v.violations.push(Violation::CoverageError {
                index: idx as u32,
                occurrences: count as usize,
            });
        }
    }
    ValidationReport {
        violations: v.violations,
    }
}

/// Shape summary of a built tree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeStats {
    pub depth: usize,
    pub internal_nodes: usize,
    pub leaf_nodes: usize,
    pub min_occupancy: usize,
    pub max_occupancy: usize,
    pub mean_occupancy: f64,
    pub memory_bytes: usize,
}

pub fn stats(tree: &KdTree) -> TreeStats {
    fn visit(tree: &KdTree, id: NodeId, depth: usize, s: &mut TreeStats) {
        match tree.node(id) {
            Node::Leaf(leaf) => {
                let occ = (leaf.end - leaf.begin) as usize;
                s.leaf_nodes += 1;
                s.depth = s.depth.max(depth);
                s.min_occupancy = s.min_occupancy.min(occ);
                s.max_occupancy = s.max_occupancy.max(occ);
            }
            Node::Internal(node) => {
                s.internal_nodes += 1;
                visit(tree, node.left, depth + 1, s);
                visit(tree, node.right, depth + 1, s);
            }
        }
    }
    let mut s = TreeStats {
        depth: 0,
        internal_nodes: 0,
        leaf_nodes: 0,
        min_occupancy: usize::MAX,
        max_occupancy: 0,
        mean_occupancy: 0.0,
        memory_bytes: tree.nodes.len() * std::mem::size_of::<Node>()
            + tree.perm.len() * std::mem::size_of::<u32>(),
    };
    visit(tree, tree.root, 0, &mut s);
    if s.leaf_nodes > 0 {
        s.mean_occupancy = tree.len() as f64 / s.leaf_nodes as f64;
    } else {
        s.min_occupancy = 0;
    }
    s
}
