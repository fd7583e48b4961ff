//! k-nearest-neighbour queries: tree traversal with ball-rectangle pruning
//! plus the exhaustive scan used both standalone and inside leaf buckets.
//!
//! All distance comparisons are on squared Euclidean distance; ties are
//! broken by the lower point index so that results are a single well-defined
//! set regardless of leaf size, traversal order or parallelism.

use std::collections::BinaryHeap;
use std::num::NonZeroUsize;

use thiserror::Error;

use crate::cloud::{Aabb, PointCloud};
use crate::kdtree::{KdTree, Node, SplitRule};

/// One query result: a point index and its squared distance to the query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: u32,
    pub sqdist: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum KnnError {
    #[error("query over an empty tree")]
    EmptyTree,
    #[error("query point has a non-finite coordinate")]
    NonFiniteQuery,
}

/// Heap entry ordered by (sqdist, index); the heap maximum is the current
/// worst candidate, i.e. the k-th nearest so far.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Candidate {
    bits: u64,
    index: u32,
}

impl Candidate {
    fn new(n: Neighbor) -> Self {
        // finite non-negative sqdist: total_cmp order == numeric order
        Self {
            bits: n.sqdist.to_bits(),
            index: n.index,
        }
    }

    fn neighbor(self) -> Neighbor {
        Neighbor {
            index: self.index,
            sqdist: f64::from_bits(self.bits),
        }
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bits.cmp(&other.bits).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded candidate queue holding the best `k` (sqdist, index) pairs seen.
#[derive(Debug)]
pub struct KnnQueue {
    capacity: usize,
    heap: BinaryHeap<Candidate>,
}

impl KnnQueue {
    pub fn new(capacity: NonZeroUsize) -> Self {
        Self {
            capacity: capacity.get(),
            heap: BinaryHeap::with_capacity(capacity.get() + 1),
        }
    }

    pub fn is_full(&self) -> bool {
        self.heap.len() == self.capacity
    }

    /// Squared radius of the current search ball: the worst kept distance
    /// once full, infinite before that.
    pub fn worst(&self) -> f64 {
        if self.is_full() {
            self.heap
                .peek()
                .map(|c| f64::from_bits(c.bits))
                .unwrap_or(f64::INFINITY)
        } else {
            f64::INFINITY
        }
    }

    pub fn offer(&mut self, candidate: Neighbor) {
        let candidate = Candidate::new(candidate);
        if self.heap.len() < self.capacity {
            self.heap.push(candidate);
        } else if let Some(&worst) = self.heap.peek() {
            if candidate < worst {
                self.heap.pop();
                self.heap.push(candidate);
            }
        }
    }

    /// Drain into a list sorted ascending by (sqdist, index).
    pub fn into_sorted(self) -> Vec<Neighbor> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(Candidate::neighbor)
            .collect()
    }
}

#[inline]
fn sqdist_to(cloud: &PointCloud, i: u32, q: [f64; 3]) -> f64 {
    let p = cloud.point(i as usize);
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    let dz = p[2] - q[2];
    dx * dx + dy * dy + dz * dz
}

/// Squared distance from a point to the closest face of a closed box
/// (0 when the point is inside).
pub fn min_sqdist_point_cell(q: [f64; 3], cell: &Aabb) -> f64 {
    let mut acc = 0.0;
    for ((&qd, &lo), &hi) in q.iter().zip(&cell.min).zip(&cell.max) {
        let clamp = (lo - qd).max(0.0).max(qd - hi);
        acc += clamp * clamp;
    }
    acc
}

fn scan(cloud: &PointCloud, indices: &[u32], q: [f64; 3], queue: &mut KnnQueue) {
    for &i in indices {
        queue.offer(Neighbor {
            index: i,
            sqdist: sqdist_to(cloud, i, q),
        });
    }
}

/// Exhaustive candidate enumeration: scan the whole cloud (or the given
/// subset) and keep the best k. This is the reference the tree search must
/// agree with exactly, and the scanner applied inside leaf buckets.
pub fn brute_force_knn(
    cloud: &PointCloud,
    q: [f64; 3],
    k: NonZeroUsize,
    indices: Option<&[u32]>,
) -> Vec<Neighbor> {
    let mut queue = KnnQueue::new(k);
    match indices {
        Some(subset) => scan(cloud, subset, q, &mut queue),
        None => {
            for i in 0..cloud.len() as u32 {
                queue.offer(Neighbor {
                    index: i,
                    sqdist: sqdist_to(cloud, i, q),
                });
            }
        }
    }
    queue.into_sorted()
}

fn search(tree: &KdTree, cloud: &PointCloud, id: u32, q: [f64; 3], queue: &mut KnnQueue) {
    match tree.node(id) {
        Node::Leaf(leaf) => scan(cloud, tree.bucket(leaf), q, queue),
        Node::Internal(node) => {
            // descend toward the query's side first
            let q_coord = q[node.split.dim];
            let near_left = match node.rule {
                SplitRule::Strict => q_coord < node.split.value,
                SplitRule::LeftInclusive => q_coord <= node.split.value,
                SplitRule::CountSplit => true,
            };
            let (near, far) = if near_left {
                (node.left, node.right)
            } else {
                (node.right, node.left)
            };
            search(tree, cloud, near, q, queue);
            // ball-rectangle test: visit the far side only if its cell can
            // still contain a candidate. `>` not `>=`: an equal-distance
            // point with a lower index must still be able to displace the
            // current worst under the (sqdist, index) tie rule.
            let far_cell = match tree.node(far) {
                Node::Leaf(leaf) => &leaf.cell,
                Node::Internal(n) => &n.cell,
            };
            if !queue.is_full() || min_sqdist_point_cell(q, far_cell) <= queue.worst() {
                search(tree, cloud, far, q, queue);
            }
        }
    }
}

/// k nearest neighbours of `q` under squared Euclidean distance, sorted
/// ascending by (sqdist, index). Returns `min(k, n)` results; identical to
/// [`brute_force_knn`] over the full cloud for every tree.
pub fn knn(
    tree: &KdTree,
    cloud: &PointCloud,
    q: [f64; 3],
    k: NonZeroUsize,
) -> Result<Vec<Neighbor>, KnnError> {
    if tree.is_empty() {
        return Err(KnnError::EmptyTree);
    }
    if q.iter().any(|c| !c.is_finite()) {
        return Err(KnnError::NonFiniteQuery);
    }
    let mut queue = KnnQueue::new(k);
    search(tree, cloud, tree.root(), q, &mut queue);
    Ok(queue.into_sorted())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate, GenMode, GenSpec};
    use crate::kdtree::{build, BuildConfig};
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn k(n: usize) -> NonZeroUsize {
        NonZeroUsize::new(n).unwrap()
    }

    fn cfg(leaf_size: usize) -> BuildConfig {
        BuildConfig::new(leaf_size).unwrap()
    }

    fn uniform_cloud(n: usize, seed: u64) -> PointCloud {
        generate(&GenSpec {
            n,
            mode: GenMode::Uniform {
                bbox: Aabb::new([0.0; 3], [10.0; 3]),
            },
            seed,
        })
        .unwrap()
    }

    /// Second-opinion oracle: full sort of every distance, independent of
    /// the queue mechanics shared by `knn` and `brute_force_knn`.
    fn full_sort_knn(cloud: &PointCloud, q: [f64; 3], k: usize) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = (0..cloud.len() as u32)
            .map(|i| Neighbor {
                index: i,
                sqdist: sqdist_to(cloud, i, q),
            })
            .collect();
        all.sort_by(|a, b| a.sqdist.total_cmp(&b.sqdist).then(a.index.cmp(&b.index)));
        all.truncate(k);
        all
    }

    #[test]
    fn exact_hit_has_zero_distance() {
        let cloud = uniform_cloud(100, 1);
        let tree = build(&cloud, cfg(8)).unwrap();
        let q = cloud.point(37);
        let result = knn(&tree, &cloud, q, k(1)).unwrap();
        assert_eq!(result, vec![Neighbor { index: 37, sqdist: 0.0 }]);
    }

    #[test]
    fn equidistant_neighbors_tie_break_by_index() {
        let cloud = PointCloud::from_coords(
            vec![0.0, 1.0, 3.0, 7.0],
            vec![0.0; 4],
            vec![0.0; 4],
        )
        .unwrap();
        let tree = build(&cloud, cfg(1)).unwrap();
        let result = knn(&tree, &cloud, [2.0, 0.0, 0.0], k(2)).unwrap();
        assert_eq!(
            result,
            vec![
                Neighbor { index: 1, sqdist: 1.0 },
                Neighbor { index: 2, sqdist: 1.0 },
            ]
        );
    }

    #[test]
    fn cube_corners_from_centre_all_equidistant() {
        let mut xs = vec![];
        let mut ys = vec![];
        let mut zs = vec![];
        for i in 0..8 {
            xs.push((i & 1) as f64);
            ys.push((i >> 1 & 1) as f64);
            zs.push((i >> 2 & 1) as f64);
        }
        let cloud = PointCloud::from_coords(xs, ys, zs).unwrap();
        let result = brute_force_knn(&cloud, [0.5; 3], k(8), None);
        assert_eq!(result.len(), 8);
        for (i, n) in result.iter().enumerate() {
            assert_eq!(n.index, i as u32, "sorted by index within the tie");
            assert_eq!(n.sqdist, 0.75);
        }
    }

    #[test]
    fn k_larger_than_cloud_clamps() {
        let cloud = PointCloud::from_coords(vec![1.0], vec![2.0], vec![3.0]).unwrap();
        assert_eq!(brute_force_knn(&cloud, [0.0; 3], k(3), None).len(), 1);
        let tree = build(&cloud, cfg(4)).unwrap();
        assert_eq!(knn(&tree, &cloud, [0.0; 3], k(3)).unwrap().len(), 1);
    }

    #[test]
    fn subset_scan_restricts_candidates() {
        let cloud = PointCloud::from_coords(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![0.0; 4],
            vec![0.0; 4],
        )
        .unwrap();
        let result = brute_force_knn(&cloud, [0.0; 3], k(2), Some(&[2, 3]));
        assert_eq!(result[0].index, 2);
        assert_eq!(result[1].index, 3);
    }

    #[test]
    fn brute_force_matches_full_sort_reference() {
        let cloud = uniform_cloud(1000, 5);
        let mut rng = SplitMix64::new(99);
        for _ in 0..100 {
            let q = [
                rng.next_in_range(-2.0, 12.0),
                rng.next_in_range(-2.0, 12.0),
                rng.next_in_range(-2.0, 12.0),
            ];
            for kk in [1usize, 5, 50] {
                assert_eq!(
                    brute_force_knn(&cloud, q, k(kk), None),
                    full_sort_knn(&cloud, q, kk)
                );
            }
        }
    }

    #[test]
    fn min_sqdist_examples() {
        let cell = Aabb::new([0.0; 3], [1.0; 3]);
        assert_eq!(min_sqdist_point_cell([0.5, 0.5, 0.5], &cell), 0.0);
        assert_eq!(min_sqdist_point_cell([1.0, 0.0, 1.0], &cell), 0.0);
        assert_eq!(min_sqdist_point_cell([3.0, 0.0, 0.0], &cell), 4.0);
        assert_eq!(min_sqdist_point_cell([2.0, 2.0, 0.0], &cell), 2.0);
    }

    #[test]
    fn tree_search_matches_brute_force_small() {
        let cloud = PointCloud::from_coords(
            vec![0.0, 1.0, 3.0, 7.0],
            vec![0.0; 4],
            vec![0.0; 4],
        )
        .unwrap();
        for ls in [1usize, 2, 4] {
            let tree = build(&cloud, cfg(ls)).unwrap();
            let got = knn(&tree, &cloud, [2.0, 0.0, 0.0], k(2)).unwrap();
            let want = brute_force_knn(&cloud, [2.0, 0.0, 0.0], k(2), None);
            assert_eq!(got, want, "leaf_size {ls}");
        }
    }

    #[test]
    fn empty_tree_query_impossible_via_build() {
        // build refuses empty clouds, so an empty tree cannot exist; the
        // error is still wired for defensive callers
        let cloud = PointCloud::from_coords(vec![1.0], vec![1.0], vec![1.0]).unwrap();
        let tree = build(&cloud, cfg(1)).unwrap();
        assert!(knn(&tree, &cloud, [f64::NAN, 0.0, 0.0], k(1)).is_err());
    }

    fn arb_cloud() -> impl Strategy<Value = PointCloud> {
        let coord = prop_oneof![(-10.0f64..10.0), Just(0.0), Just(5.0)];
        proptest::collection::vec((coord.clone(), coord.clone(), coord), 1..120).prop_map(|pts| {
            let xs = pts.iter().map(|p| p.0).collect();
            let ys = pts.iter().map(|p| p.1).collect();
            let zs = pts.iter().map(|p| p.2).collect();
            PointCloud::from_coords(xs, ys, zs).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        // the load-bearing equivalence: tree search == exhaustive scan,
        // including distances, ordering, and index tie-breaks
        #[test]
        fn knn_equals_brute_force(
            cloud in arb_cloud(),
            leaf_size in 1usize..16,
            kk in 1usize..12,
            q in [(-12.0f64..12.0), (-12.0f64..12.0), (-12.0f64..12.0)],
        ) {
            let tree = build(&cloud, cfg(leaf_size)).unwrap();
            let got = knn(&tree, &cloud, q, k(kk)).unwrap();
            let want = brute_force_knn(&cloud, q, k(kk), None);
            prop_assert_eq!(got, want);
        }

        // results do not depend on how the cloud was bucketed
        #[test]
        fn results_are_leaf_size_independent(
            cloud in arb_cloud(),
            q in [(-12.0f64..12.0), (-12.0f64..12.0), (-12.0f64..12.0)],
        ) {
            let n = cloud.len();
            let reference = knn(&build(&cloud, cfg(1)).unwrap(), &cloud, q, k(5)).unwrap();
            for ls in [2usize, 7, 64, n.max(1)] {
                let tree = build(&cloud, cfg(ls)).unwrap();
                prop_assert_eq!(&knn(&tree, &cloud, q, k(5)).unwrap(), &reference);
            }
        }

        // the k-result is always a prefix of the (k+1)-result
        #[test]
        fn k_results_are_prefix_monotone(
            cloud in arb_cloud(),
            kk in 1usize..10,
            q in [(-12.0f64..12.0), (-12.0f64..12.0), (-12.0f64..12.0)],
        ) {
            let tree = build(&cloud, cfg(4)).unwrap();
            let smaller = knn(&tree, &cloud, q, k(kk)).unwrap();
            let larger = knn(&tree, &cloud, q, k(kk + 1)).unwrap();
            prop_assert_eq!(&larger[..smaller.len()], &smaller[..]);
        }

        // output ordering invariant
        #[test]
        fn results_sorted_by_sqdist_then_index(
            cloud in arb_cloud(),
            q in [(-12.0f64..12.0), (-12.0f64..12.0), (-12.0f64..12.0)],
        ) {
            let tree = build(&cloud, cfg(8)).unwrap();
            let result = knn(&tree, &cloud, q, k(10)).unwrap();
            for w in result.windows(2) {
                prop_assert!(
                    w[0].sqdist < w[1].sqdist
                        || (w[0].sqdist == w[1].sqdist && w[0].index < w[1].index)
                );
            }
        }
    }
}
