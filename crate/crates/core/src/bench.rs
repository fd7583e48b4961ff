//! Synthetic cloud generation and the leaf-size sweep harness: build time
//! and mean query time per leaf size, emitted as CSV.
//!
//! Everything except the timings themselves is deterministic in the seeds,
//! and the sweep cross-checks that query results are identical across all
//! leaf sizes before reporting a single number.

use std::io::Write;
use std::num::NonZeroUsize;
use std::time::Instant;

use thiserror::Error;

use crate::cloud::{Aabb, PointCloud};
use crate::kdtree::{build, BuildConfig, BuildError, KdTree};
use crate::knn::{knn, KnnError, Neighbor};
use crate::parallel::{par_build, ParallelPlan, TopologyError};
use crate::rng::SplitMix64;

/// How synthetic points are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GenMode {
    /// Independently uniform in the box.
    Uniform { bbox: Aabb },
    /// Cluster centres uniform in the box, points Gaussian around their
    /// centre with standard deviation `sigma` per axis.
    Clustered {
        bbox: Aabb,
        clusters: NonZeroUsize,
        sigma: f64,
    },
}

/// Recipe for a synthetic cloud; a given spec always produces the same
/// cloud, bit for bit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenSpec {
    pub n: usize,
    pub mode: GenMode,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("point count must be at least 1")]
    ZeroPoints,
    #[error("sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("generation box has min > max or non-finite bounds")]
    BadBox,
}

fn check_box(bbox: &Aabb) -> Result<(), GenError> {
    for d in 0..3 {
        if !(bbox.min[d].is_finite() && bbox.max[d].is_finite() && bbox.min[d] <= bbox.max[d]) {
            return Err(GenError::BadBox);
        }
    }
    Ok(())
}

/// Generate a synthetic cloud from a spec.
///
/// Draw order is fixed and documented so independent implementations can
/// reproduce it: a single splitmix64 stream seeded with `spec.seed`.
/// Uniform mode draws x, y, z fractions per point in that order. Clustered
/// mode first draws every cluster centre (x, y, z each), then per point one
/// raw 64-bit value reduced modulo the cluster count to pick a centre,
/// one Box-Muller pair for the x and y offsets and the cosine half of a
/// second pair for z.
pub fn generate(spec: &GenSpec) -> Result<PointCloud, GenError> {
    if spec.n == 0 {
        return Err(GenError::ZeroPoints);
    }
    let mut rng = SplitMix64::new(spec.seed);
    let mut xs = Vec::with_capacity(spec.n);
    let mut ys = Vec::with_capacity(spec.n);
    let mut zs = Vec::with_capacity(spec.n);
    match spec.mode {
        GenMode::Uniform { bbox } => {
            check_box(&bbox)?;
            for _ in 0..spec.n {
                xs.push(rng.next_in_range(bbox.min[0], bbox.max[0]));
                ys.push(rng.next_in_range(bbox.min[1], bbox.max[1]));
                zs.push(rng.next_in_range(bbox.min[2], bbox.max[2]));
            }
        }
        GenMode::Clustered {
            bbox,
            clusters,
            sigma,
        } => {
            check_box(&bbox)?;
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(GenError::BadSigma(sigma));
            }
            let centres: Vec<[f64; 3]> = (0..clusters.get())
                .map(|_| {
                    [
                        rng.next_in_range(bbox.min[0], bbox.max[0]),
                        rng.next_in_range(bbox.min[1], bbox.max[1]),
                        rng.next_in_range(bbox.min[2], bbox.max[2]),
                    ]
                })
                .collect();
            for _ in 0..spec.n {
                let which = (rng.next_u64() % clusters.get() as u64) as usize;
                let c = centres[which];
                let (gx, gy) = rng.next_gaussian_pair();
                let (gz, _) = rng.next_gaussian_pair();
                xs.push(c[0] + sigma * gx);
                ys.push(c[1] + sigma * gy);
                zs.push(c[2] + sigma * gz);
            }
        }
    }
    Ok(PointCloud::from_coords(xs, ys, zs).expect("generated coordinates are finite"))
}

/// One row of a sweep: how one leaf size performed on one cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub n_points: usize,
    pub leaf_size: usize,
    pub build_ms: f64,
    pub avg_query_us: f64,
    pub k: usize,
    pub n_queries: usize,
    pub seed: u64,
    /// 1 means sequential construction.
    pub workers: usize,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("sweep needs at least one leaf size")]
    NoLeafSizes,
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("query {query} returned different results at leaf size {leaf_size} than at leaf size {baseline}")]
    ResultMismatch {
        query: usize,
        leaf_size: usize,
        baseline: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Query points drawn uniformly in the cloud's bounding box; sampling from
/// the box rather than the cloud keeps self-distances out of the picture.
pub fn sample_queries(cloud: &PointCloud, n_queries: usize, query_seed: u64) -> Vec<[f64; 3]> {
    let bbox = cloud.bbox().unwrap_or(Aabb {
        min: [0.0; 3],
        max: [0.0; 3],
    });
    let mut rng = SplitMix64::new(query_seed);
    (0..n_queries)
        .map(|_| {
            [
                rng.next_in_range(bbox.min[0], bbox.max[0]),
                rng.next_in_range(bbox.min[1], bbox.max[1]),
                rng.next_in_range(bbox.min[2], bbox.max[2]),
            ]
        })
        .collect()
}

fn build_for(
    cloud: &PointCloud,
    cfg: BuildConfig,
    plan: Option<&ParallelPlan>,
) -> Result<KdTree, BenchError> {
    match plan {
        Some(plan) => Ok(par_build(cloud, cfg, plan)?),
        None => Ok(build(cloud, cfg)?),
    }
}

/// Run the leaf-size sweep: for each leaf size, time one build and the same
/// deterministic query set, recording means. Query results must be
/// identical across every leaf size or the sweep fails; the timings are the
/// only thing allowed to vary.
pub fn sweep(
    cloud: &PointCloud,
    leaf_sizes: &[NonZeroUsize],
    k: NonZeroUsize,
    n_queries: usize,
    query_seed: u64,
    workers: usize,
) -> Result<Vec<BenchRecord>, BenchError> {
    let plan = if workers > 1 {
        Some(ParallelPlan::for_worker_count(workers)?)
    } else {
        None
    };
    sweep_planned(cloud, leaf_sizes, k, n_queries, query_seed, plan.as_ref(), workers)
}

/// [`sweep`] with a caller-built construction plan (e.g. workers with
/// explicit capacity scores). `workers` only labels the records; builds are
/// parallel iff a plan is given.
pub fn sweep_planned(
    cloud: &PointCloud,
    leaf_sizes: &[NonZeroUsize],
    k: NonZeroUsize,
    n_queries: usize,
    query_seed: u64,
    plan: Option<&ParallelPlan>,
    workers: usize,
) -> Result<Vec<BenchRecord>, BenchError> {
    if leaf_sizes.is_empty() {
        return Err(BenchError::NoLeafSizes);
    }
    let queries = sample_queries(cloud, n_queries, query_seed);

    // one untimed warm-up build at the smallest leaf size settles the
    // allocator before anything is measured
    let smallest = *leaf_sizes.iter().min().unwrap();
    let _ = build_for(cloud, BuildConfig { leaf_size: smallest }, plan)?;

    let mut records = Vec::with_capacity(leaf_sizes.len());
    let mut baseline: Option<(usize, Vec<Vec<Neighbor>>)> = None;
    for &leaf_size in leaf_sizes {
        let cfg = BuildConfig { leaf_size };
        let started = Instant::now();
        let tree = build_for(cloud, cfg, plan)?;
        let build_ms = started.elapsed().as_secs_f64() * 1e3;

        let mut results = Vec::with_capacity(queries.len());
        let started = Instant::now();
        for &q in &queries {
            results.push(knn(&tree, cloud, q, k)?);
        }
        let total = started.elapsed().as_secs_f64();
        let avg_query_us = if queries.is_empty() {
            0.0
        } else {
            total * 1e6 / queries.len() as f64
        };

        match &baseline {
            None => baseline = Some((leaf_size.get(), results)),
            Some((base_ls, base)) => {
                for (qi, (got, want)) in results.iter().zip(base.iter()).enumerate() {
                    if got != want {
                        return Err(BenchError::ResultMismatch {
                            query: qi,
                            leaf_size: leaf_size.get(),
                            baseline: *base_ls,
                        });
                    }
                }
            }
        }

        records.push(BenchRecord {
            n_points: cloud.len(),
            leaf_size: leaf_size.get(),
            build_ms,
            avg_query_us,
            k: k.get(),
            n_queries: queries.len(),
            seed: query_seed,
            workers,
        });
    }
    Ok(records)
}

/// Format a timing with at least three significant digits while staying
/// exactly parseable back to the same f64.
fn format_timing(value: f64) -> String {
    if value == 0.0 {
        return "0.000".to_string();
    }
    let magnitude = value.abs().log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    let fixed = format!("{value:.decimals$}");
    if fixed.parse::<f64>() == Ok(value) {
        fixed
    } else {
        // shortest round-trip representation (always enough digits)
        value.to_string()
    }
}

/// CSV header line for sweep output.
pub const CSV_HEADER: &str = "n_points,leaf_size,build_ms,avg_query_us,k,n_queries,seed,workers";

/// Write records as CSV (header plus one line per record, every line
/// newline-terminated). Returns the number of bytes written.
pub fn write_csv<W: Write>(records: &[BenchRecord], mut sink: W) -> Result<usize, BenchError> {
    let mut text = String::with_capacity(64 * (records.len() + 1));
    text.push_str(CSV_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.n_points,
            r.leaf_size,
            format_timing(r.build_ms),
            format_timing(r.avg_query_us),
            r.k,
            r.n_queries,
            r.seed,
            r.workers,
        ));
    }
    sink.write_all(text.as_bytes())?;
    Ok(text.len())
}
