//! Parallel tree construction: the recursion of the sequential builder with
//! the two subtree calls delegated to the children of a binary worker
//! topology, fork-join style, down to the topology's height.
//!
//! The topology is a static in-process task tree. Virtual (non-leaf) slots
//! are elected from the real workers by capacity, so the most capable
//! workers own the upper, heavier tasks. Delegated tasks operate on disjoint
//! halves of the permutation array and build into private arenas merged at
//! join points, which makes the result bit-identical to the sequential
//! build no matter how the tasks are scheduled.

use thiserror::Error;

use crate::cloud::{Aabb, PointCloud};
use crate::kdtree::{
    build_node, split_or_fallback, BuildConfig, BuildCtx, BuildError, InternalNode, KdTree,
    LeafNode, Node, NodeId,
};

/// A real worker available for construction tasks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkerDescriptor {
    pub id: u32,
    /// Abstract performance measure used for virtual-node election.
    pub capacity: f64,
}

impl WorkerDescriptor {
    pub fn new(id: u32, capacity: f64) -> Self {
        Self { id, capacity }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("cannot build a topology with no workers")]
    NoWorkers,
    #[error("duplicate worker id {0}")]
    DuplicateWorkerId(u32),
    #[error("worker {id} has invalid capacity {capacity}")]
    InvalidCapacity { id: u32, capacity: f64 },
    #[error("topology height {0} exceeds the supported maximum of 24")]
    HeightTooLarge(u32),
}

/// One node of the worker topology. Level 0 nodes are the real leaf slots;
/// every higher node is a virtual slot elected from the workers beneath it.
#[derive(Clone, Debug, PartialEq)]
pub struct TopologyNode {
    pub elected_worker: u32,
    pub level: u32,
    children: Option<Box<(TopologyNode, TopologyNode)>>,
}

impl TopologyNode {
    /// Both children, or `None` at leaf level (a node never has just one).
    pub fn children(&self) -> Option<(&TopologyNode, &TopologyNode)> {
        self.children.as_ref().map(|b| (&b.0, &b.1))
    }

    pub fn left(&self) -> Option<&TopologyNode> {
        self.children().map(|(l, _)| l)
    }

    pub fn right(&self) -> Option<&TopologyNode> {
        self.children().map(|(_, r)| r)
    }

    /// Height of the subtree (0 for a leaf-level node).
    pub fn height(&self) -> u32 {
        self.level
    }
}

/// Build a complete binary topology of the given height.
///
/// Leaf slots are filled round-robin over the workers in descending
/// capacity order (ties to the lower id); each virtual node elects the
/// highest-capacity worker among its subtree's leaves, again breaking ties
/// toward the lower id. A worker may therefore serve at several levels.
pub fn build_topology(
    workers: &[WorkerDescriptor],
    height: u32,
) -> Result<TopologyNode, TopologyError> {
    if workers.is_empty() {
        return Err(TopologyError::NoWorkers);
    }
    if height > 24 {
        return Err(TopologyError::HeightTooLarge(height));
    }
    let mut order: Vec<WorkerDescriptor> = workers.to_vec();
    for w in &order {
        if !(w.capacity.is_finite() && w.capacity >= 0.0) {
            return Err(TopologyError::InvalidCapacity {
                id: w.id,
                capacity: w.capacity,
            });
        }
    }
    order.sort_by(|a, b| b.capacity.total_cmp(&a.capacity).then(a.id.cmp(&b.id)));
    for pair in order.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(TopologyError::DuplicateWorkerId(pair[0].id));
        }
    }
    let slots = 1usize << height;
    let leaves: Vec<WorkerDescriptor> = (0..slots).map(|i| order[i % order.len()]).collect();

    fn assemble(level: u32, leaves: &[WorkerDescriptor]) -> (TopologyNode, WorkerDescriptor) {
        if level == 0 {
            let w = leaves[0];
            return (
                TopologyNode {
                    elected_worker: w.id,
                    level: 0,
                    children: None,
                },
                w,
            );
        }
        let half = leaves.len() / 2;
        let (left, best_left) = assemble(level - 1, &leaves[..half]);
        let (right, best_right) = assemble(level - 1, &leaves[half..]);
        let best = if best_right.capacity > best_left.capacity
            || (best_right.capacity == best_left.capacity && best_right.id < best_left.id)
        {
            best_right
        } else {
            best_left
        };
        (
            TopologyNode {
                elected_worker: best.id,
                level,
                children: Some(Box::new((left, right))),
            },
            best,
        )
    }

    Ok(assemble(height, &leaves).0)
}

/// A topology plus the matching construction cutoff: tree levels shallower
/// than `cutoff_depth` are delegated, everything below runs sequentially on
/// the worker that owns the task.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelPlan {
    topology: TopologyNode,
    cutoff_depth: u32,
}

impl ParallelPlan {
    pub fn new(topology: TopologyNode) -> Self {
        let cutoff_depth = topology.height();
        Self {
            topology,
            cutoff_depth,
        }
    }

    /// Plan for `count` equal-capacity workers: the smallest complete
    /// topology with at least one leaf slot per worker.
    pub fn for_worker_count(count: usize) -> Result<Self, TopologyError> {
        if count == 0 {
            return Err(TopologyError::NoWorkers);
        }
        let workers: Vec<WorkerDescriptor> = (0..count as u32)
            .map(|id| WorkerDescriptor::new(id, 1.0))
            .collect();
        let height = count.next_power_of_two().trailing_zeros();
        Ok(Self::new(build_topology(&workers, height)?))
    }

    pub fn topology(&self) -> &TopologyNode {
        &self.topology
    }

    pub fn cutoff_depth(&self) -> u32 {
        self.cutoff_depth
    }
}

/// Append a subtree arena built by a delegated task, rebasing its node ids.
fn merge_arena(nodes: &mut Vec<Node>, local: Vec<Node>, local_root: NodeId) -> NodeId {
    let base = nodes.len() as u32;
    nodes.extend(local.into_iter().map(|node| match node {
        Node::Leaf(leaf) => Node::Leaf(leaf),
        Node::Internal(n) => Node::Internal(InternalNode {
            left: n.left + base,
            right: n.right + base,
            ..n
        }),
    }));
    base + local_root
}

fn par_node(
    ctx: &BuildCtx<'_>,
    seg: &mut [u32],
    seg_offset: u32,
    cell: Aabb,
    topo: &TopologyNode,
    nodes: &mut Vec<Node>,
) -> NodeId {
    let Some((topo_left, topo_right)) = topo.children() else {
        // reached the topology floor: this worker finishes the subtree alone
        return build_node(ctx, seg, seg_offset, cell, nodes);
    };
    if seg.len() <= ctx.leaf_size {
        nodes.push(Node::Leaf(LeafNode {
            begin: seg_offset,
            end: seg_offset + seg.len() as u32,
            cell,
        }));
        return (nodes.len() - 1) as NodeId;
    }
    let (plane, rule) = split_or_fallback(seg, &cell, ctx.cloud);
    let (left_seg, right_seg) = crate::kdtree::partition(seg, &plane, rule, ctx.cloud);
    let boundary = left_seg.len() as u32;
    let left_cell = cell.clipped_below(plane.dim, plane.value);
    let right_cell = cell.clipped_above(plane.dim, plane.value);

    let ((left_local, left_root), (right_local, right_root)) = std::thread::scope(|scope| {
        let left_task = scope.spawn(move || {
            let mut local = Vec::new();
            let root = par_node(ctx, left_seg, seg_offset, left_cell, topo_left, &mut local);
            (local, root)
        });
        let mut right_local = Vec::new();
        let right_root = par_node(
            ctx,
            right_seg,
            seg_offset + boundary,
            right_cell,
            topo_right,
            &mut right_local,
        );
        (
            left_task.join().expect("construction task panicked"),
            (right_local, right_root),
        )
    });

    // left subtree, then right subtree, then this node: the same arena
    // layout the sequential post-order emit produces
    let left = merge_arena(nodes, left_local, left_root);
    let right = merge_arena(nodes, right_local, right_root);
    nodes.push(Node::Internal(InternalNode {
        split: plane,
        rule,
        cell,
        left,
        right,
    }));
    (nodes.len() - 1) as NodeId
}

/// Parallel construction. The result is structurally identical to
/// [`crate::kdtree::build`] on the same inputs: same splits, same partition
/// rules, same buckets in the same order.
pub fn par_build(
    cloud: &PointCloud,
    cfg: BuildConfig,
    plan: &ParallelPlan,
) -> Result<KdTree, BuildError> {
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
    let root = par_node(&ctx, &mut perm, 0, root_cell, plan.topology(), &mut nodes);
    Ok(KdTree {
        leaf_size,
        perm,
        nodes,
        root,
        root_cell,
    })
}

/// Canonical pre-order serialization of a tree's logical structure: node
/// kind, split dimension, split value bits and rule for internal nodes, the
/// bucket's index list for leaves. Two trees are structurally identical iff
/// their serializations are equal.
pub fn canonical_bytes(tree: &KdTree) -> Vec<u8> {
    fn visit(tree: &KdTree, id: NodeId, out: &mut Vec<u8>) {
        match tree.node(id) {
            Node::Leaf(leaf) => {
                out.push(0);
                let bucket = tree.bucket(leaf);
                out.extend_from_slice(&(bucket.len() as u32).to_le_bytes());
                for &idx in bucket {
                    out.extend_from_slice(&idx.to_le_bytes());
                }
            }
            Node::Internal(node) => {
                out.push(1);
                out.push(node.split.dim as u8);
                out.extend_from_slice(&node.split.value.to_bits().to_le_bytes());
                out.push(match node.rule {
                    crate::kdtree::SplitRule::Strict => 0,
                    crate::kdtree::SplitRule::LeftInclusive => 1,
                    crate::kdtree::SplitRule::CountSplit => 2,
                });
                visit(tree, node.left, out);
                visit(tree, node.right, out);
            }
        }
    }
    let mut out = Vec::with_capacity(tree.node_count() * 16 + tree.len() * 4);
    visit(tree, tree.root(), &mut out);
    out
}

/// 64-bit FNV-1a digest of [`canonical_bytes`]. Equal trees always hash
/// equal; unequal trees collide only with negligible probability, and tests
/// needing certainty compare the serializations directly.
pub fn structural_hash(tree: &KdTree) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in canonical_bytes(tree) {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate, GenMode, GenSpec};
    use crate::kdtree::build;
    use proptest::prelude::*;

    fn cfg(leaf_size: usize) -> BuildConfig {
        BuildConfig::new(leaf_size).unwrap()
    }

    fn equal_workers(n: u32) -> Vec<WorkerDescriptor> {
        (0..n).map(|id| WorkerDescriptor::new(id, 1.0)).collect()
    }

    fn uniform_cloud(n: usize, seed: u64) -> PointCloud {
        generate(&GenSpec {
            n,
            mode: GenMode::Uniform {
                bbox: Aabb::new([0.0; 3], [50.0; 3]),
            },
            seed,
        })
        .unwrap()
    }

    #[test]
    fn single_worker_topology_is_one_node() {
        let topo = build_topology(&equal_workers(1), 0).unwrap();
        assert_eq!(topo.elected_worker, 0);
        assert_eq!(topo.level, 0);
        assert!(topo.children().is_none());
    }

    #[test]
    fn equal_workers_elect_lowest_id() {
        let topo = build_topology(&equal_workers(4), 2).unwrap();
        assert_eq!(topo.elected_worker, 0);
        let (l, r) = topo.children().unwrap();
        assert_eq!((l.elected_worker, r.elected_worker), (0, 2));
        let leaves: Vec<u32> = [l, r]
            .iter()
            .flat_map(|n| {
                let (a, b) = n.children().unwrap();
                [a.elected_worker, b.elected_worker]
            })
            .collect();
        assert_eq!(leaves, vec![0, 1, 2, 3]);
    }

    #[test]
    fn capacity_wins_election() {
        let workers = vec![WorkerDescriptor::new(0, 1.0), WorkerDescriptor::new(1, 9.0)];
        let topo = build_topology(&workers, 1).unwrap();
        assert_eq!(topo.elected_worker, 1);
        let (l, r) = topo.children().unwrap();
        // descending capacity assigns the strong worker to the first slot
        assert_eq!((l.elected_worker, r.elected_worker), (1, 0));
    }

    #[test]
    fn no_workers_is_an_error() {
        assert_eq!(build_topology(&[], 1).unwrap_err(), TopologyError::NoWorkers);
        assert_eq!(
            ParallelPlan::for_worker_count(0).unwrap_err(),
            TopologyError::NoWorkers
        );
    }

    #[test]
    fn duplicate_ids_are_an_error() {
        let workers = vec![WorkerDescriptor::new(3, 1.0), WorkerDescriptor::new(3, 2.0)];
        assert_eq!(
            build_topology(&workers, 1).unwrap_err(),
            TopologyError::DuplicateWorkerId(3)
        );
    }

    #[test]
    fn plan_cutoff_matches_topology_height() {
        for count in [1usize, 2, 3, 4, 7, 8] {
            let plan = ParallelPlan::for_worker_count(count).unwrap();
            assert_eq!(plan.cutoff_depth(), plan.topology().height());
            assert_eq!(
                plan.cutoff_depth(),
                count.next_power_of_two().trailing_zeros()
            );
        }
    }

    #[test]
    fn height_zero_plan_reproduces_sequential_build_exactly() {
        let cloud = uniform_cloud(10_000, 17);
        let plan = ParallelPlan::for_worker_count(1).unwrap();
        let seq = build(&cloud, cfg(64)).unwrap();
        let par = par_build(&cloud, cfg(64), &plan).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn four_workers_match_sequential_hash() {
        let cloud = uniform_cloud(100_000, 23);
        let plan = ParallelPlan::for_worker_count(4).unwrap();
        let seq = build(&cloud, cfg(500)).unwrap();
        let par = par_build(&cloud, cfg(500), &plan).unwrap();
        assert_eq!(structural_hash(&seq), structural_hash(&par));
        assert_eq!(seq, par);
    }

    #[test]
    fn skewed_capacities_do_not_change_the_tree() {
        let cloud = uniform_cloud(20_000, 29);
        let skewed = vec![
            WorkerDescriptor::new(0, 0.5),
            WorkerDescriptor::new(1, 8.0),
            WorkerDescriptor::new(2, 1.5),
        ];
        let plan = ParallelPlan::new(build_topology(&skewed, 2).unwrap());
        let seq = build(&cloud, cfg(128)).unwrap();
        let par = par_build(&cloud, cfg(128), &plan).unwrap();
        assert_eq!(canonical_bytes(&seq), canonical_bytes(&par));
    }

    #[test]
    fn repeated_builds_hash_identically() {
        let cloud = uniform_cloud(5_000, 31);
        let a = build(&cloud, cfg(100)).unwrap();
        let b = build(&cloud, cfg(100)).unwrap();
        assert_eq!(structural_hash(&a), structural_hash(&b));
    }

    #[test]
    fn different_leaf_sizes_hash_differently() {
        let cloud = uniform_cloud(5_000, 37);
        let a = build(&cloud, cfg(100)).unwrap();
        let b = build(&cloud, cfg(1000)).unwrap();
        assert_ne!(structural_hash(&a), structural_hash(&b));
    }

    /// Collect the leaf workers of a subtree.
    fn subtree_leaf_workers(node: &TopologyNode, out: &mut Vec<u32>) {
        match node.children() {
            None => out.push(node.elected_worker),
            Some((l, r)) => {
                subtree_leaf_workers(l, out);
                subtree_leaf_workers(r, out);
            }
        }
    }

    fn check_election(node: &TopologyNode, capacities: &[(u32, f64)]) {
        let Some((l, r)) = node.children() else { return };
        let mut leaves = Vec::new();
        subtree_leaf_workers(node, &mut leaves);
        let cap = |id: u32| capacities.iter().find(|(w, _)| *w == id).unwrap().1;
        let elected_cap = cap(node.elected_worker);
        assert!(leaves.contains(&node.elected_worker));
        for leaf in leaves {
            let c = cap(leaf);
            assert!(
                c < elected_cap || (c == elected_cap && leaf >= node.elected_worker),
                "leaf {leaf} beats elected {}",
                node.elected_worker
            );
        }
        check_election(l, capacities);
        check_election(r, capacities);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn every_virtual_node_elects_its_best_leaf(
            caps in proptest::collection::vec(0.0f64..10.0, 1..9),
            height in 0u32..4,
        ) {
            let workers: Vec<WorkerDescriptor> = caps
                .iter()
                .enumerate()
                .map(|(id, &c)| WorkerDescriptor::new(id as u32, c))
                .collect();
            let capacities: Vec<(u32, f64)> = workers.iter().map(|w| (w.id, w.capacity)).collect();
            let topo = build_topology(&workers, height).unwrap();
            check_election(&topo, &capacities);
        }

        #[test]
        fn par_build_is_height_invariant(
            n in 50usize..2_000,
            leaf_size in 1usize..64,
            height in 0u32..4,
            seed in 0u64..1000,
        ) {
            let cloud = uniform_cloud(n, seed);
            let workers = equal_workers(1 << height);
            let plan = ParallelPlan::new(build_topology(&workers, height).unwrap());
            let seq = build(&cloud, cfg(leaf_size)).unwrap();
            let par = par_build(&cloud, cfg(leaf_size), &plan).unwrap();
            prop_assert_eq!(seq, par);
        }
    }
}
