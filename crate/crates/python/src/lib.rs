//! Python bindings: the point-cloud model, tree construction (sequential or
//! parallel), kNN queries, polygon cropping and the benchmark sweep.

use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lidarkd::bench::{self, GenMode, GenSpec};
use lidarkd::cloud::Aabb;
use lidarkd::ingest::{timed_ingest, InputFormat};
use lidarkd::kdtree::{self, BuildConfig};
use lidarkd::knn as knn_mod;
use lidarkd::parallel::{par_build, structural_hash, ParallelPlan};
use lidarkd::polygon;
use lidarkd::{las, xyz};

/// ((min_x, min_y, min_z), (max_x, max_y, max_z)).
type Bounds = ((f64, f64, f64), (f64, f64, f64));

fn value_err(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn io_err(err: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(err.to_string())
}

fn nonzero(value: usize, what: &str) -> PyResult<NonZeroUsize> {
    NonZeroUsize::new(value).ok_or_else(|| value_err(format!("{what} must be at least 1")))
}

fn bbox_from_bounds(bounds: Bounds) -> PyResult<Aabb> {
    let (min, max) = bounds;
    let min = [min.0, min.1, min.2];
    let max = [max.0, max.1, max.2];
    for d in 0..3 {
        if !(min[d].is_finite() && max[d].is_finite() && min[d] <= max[d]) {
            return Err(value_err("bounds must be finite with min <= max per axis"));
        }
    }
    Ok(Aabb { min, max })
}

fn parse_polygon(vertices: Vec<(f64, f64)>) -> PyResult<polygon::Polygon2D> {
    polygon::Polygon2D::new(vertices).map_err(value_err)
}

/// Columnar LiDAR point cloud.
#[pyclass(name = "PointCloud")]
struct PyPointCloud {
    inner: Arc<lidarkd::PointCloud>,
}

#[pymethods]
impl PyPointCloud {
    /// Build a cloud from coordinate lists.
    #[new]
    fn new(xs: Vec<f64>, ys: Vec<f64>, zs: Vec<f64>) -> PyResult<Self> {
        let cloud = lidarkd::PointCloud::from_coords(xs, ys, zs).map_err(value_err)?;
        Ok(Self { inner: Arc::new(cloud) })
    }

    /// Read a LAS 1.2 file.
    #[staticmethod]
    fn read_las(path: &str) -> PyResult<Self> {
        let (cloud, _) = timed_ingest(Path::new(path), InputFormat::Las).map_err(io_err)?;
        Ok(Self { inner: Arc::new(cloud) })
    }

    /// Read an ASCII xyz file.
    #[staticmethod]
    fn read_xyz(path: &str) -> PyResult<Self> {
        let (cloud, _) = timed_ingest(Path::new(path), InputFormat::Xyz).map_err(io_err)?;
        Ok(Self { inner: Arc::new(cloud) })
    }

    /// Deterministic uniform cloud in a box, seeded.
    #[staticmethod]
    #[pyo3(signature = (n, bounds, seed=0))]
    fn generate_uniform(n: usize, bounds: Bounds, seed: u64) -> PyResult<Self> {
        let spec = GenSpec {
            n,
            mode: GenMode::Uniform { bbox: bbox_from_bounds(bounds)? },
            seed,
        };
        let cloud = bench::generate(&spec).map_err(value_err)?;
        Ok(Self { inner: Arc::new(cloud) })
    }

    /// Deterministic clustered cloud: centres uniform in the box, Gaussian
    /// spread `sigma` around them.
    #[staticmethod]
    #[pyo3(signature = (n, clusters, sigma, bounds, seed=0))]
    fn generate_clustered(
        n: usize,
        clusters: usize,
        sigma: f64,
        bounds: Bounds,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = GenSpec {
            n,
            mode: GenMode::Clustered {
                bbox: bbox_from_bounds(bounds)?,
                clusters: nonzero(clusters, "clusters")?,
                sigma,
            },
            seed,
        };
        let cloud = bench::generate(&spec).map_err(value_err)?;
        Ok(Self { inner: Arc::new(cloud) })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PointCloud({} points)", self.inner.len())
    }

    /// ((min_x, min_y, min_z), (max_x, max_y, max_z)), or None when empty.
    fn bbox(&self) -> Option<Bounds> {
        self.inner.bbox().map(|b| {
            (
                (b.min[0], b.min[1], b.min[2]),
                (b.max[0], b.max[1], b.max[2]),
            )
        })
    }

    fn point(&self, i: usize) -> PyResult<(f64, f64, f64)> {
        if i >= self.inner.len() {
            return Err(value_err(format!("point index {i} out of range")));
        }
        let p = self.inner.point(i);
        Ok((p[0], p[1], p[2]))
    }

    fn xs(&self) -> Vec<f64> {
        self.inner.xs().to_vec()
    }

    fn ys(&self) -> Vec<f64> {
        self.inner.ys().to_vec()
    }

    fn zs(&self) -> Vec<f64> {
        self.inner.zs().to_vec()
    }

    fn intensity(&self) -> Option<Vec<u16>> {
        self.inner.intensity().map(|v| v.to_vec())
    }

    fn classification(&self) -> Option<Vec<u8>> {
        self.inner.classification().map(|v| v.to_vec())
    }

    /// Sub-cloud of points whose (x, y) fall inside the polygon (implicitly
    /// closed vertex list), order and attributes preserved.
    fn crop(&self, polygon_vertices: Vec<(f64, f64)>) -> PyResult<Self> {
        let poly = parse_polygon(polygon_vertices)?;
        Ok(Self {
            inner: Arc::new(polygon::crop(&self.inner, &poly)),
        })
    }

    /// Write as LAS 1.2 with the given point format and quantization grid.
    #[pyo3(signature = (path, format_id=1, scale=(0.001, 0.001, 0.001), offset=(0.0, 0.0, 0.0)))]
    fn write_las(
        &self,
        path: &str,
        format_id: u8,
        scale: (f64, f64, f64),
        offset: (f64, f64, f64),
    ) -> PyResult<()> {
        let bytes = las::write_las(
            &self.inner,
            format_id,
            [scale.0, scale.1, scale.2],
            [offset.0, offset.1, offset.2],
        )
        .map_err(value_err)?;
        std::fs::write(path, bytes).map_err(io_err)
    }

    /// Write as ASCII xyz.
    fn write_xyz(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut sink = std::io::BufWriter::new(file);
        xyz::write_xyz(&self.inner, &mut sink).map_err(io_err)
    }
}

/// Bucketed 3-d tree over a PointCloud.
#[pyclass(name = "KdTree")]
struct PyKdTree {
    cloud: Arc<lidarkd::PointCloud>,
    tree: lidarkd::KdTree,
}

#[pymethods]
impl PyKdTree {
    /// Build a tree; `workers > 1` uses fork-join parallel construction and
    /// produces a structurally identical tree.
    #[new]
    #[pyo3(signature = (cloud, leaf_size, workers=1))]
    fn new(cloud: &PyPointCloud, leaf_size: usize, workers: usize) -> PyResult<Self> {
        let cfg = BuildConfig {
            leaf_size: nonzero(leaf_size, "leaf_size")?,
        };
        let tree = if workers > 1 {
            let plan = ParallelPlan::for_worker_count(workers).map_err(value_err)?;
            par_build(&cloud.inner, cfg, &plan).map_err(value_err)?
        } else {
            kdtree::build(&cloud.inner, cfg).map_err(value_err)?
        };
        Ok(Self {
            cloud: Arc::clone(&cloud.inner),
            tree,
        })
    }

    fn __len__(&self) -> usize {
        self.tree.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "KdTree({} points, leaf_size {})",
            self.tree.len(),
            self.tree.leaf_size()
        )
    }

    fn leaf_size(&self) -> usize {
        self.tree.leaf_size()
    }

    /// k nearest neighbours of a point as [(index, sqdist), ...] sorted by
    /// (sqdist, index).
    fn knn(&self, point: (f64, f64, f64), k: usize) -> PyResult<Vec<(u32, f64)>> {
        let result = knn_mod::knn(
            &self.tree,
            &self.cloud,
            [point.0, point.1, point.2],
            nonzero(k, "k")?,
        )
        .map_err(value_err)?;
        Ok(result.into_iter().map(|n| (n.index, n.sqdist)).collect())
    }

    /// Structural summary (depth, node counts, occupancy, memory estimate).
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = kdtree::stats(&self.tree);
        let dict = PyDict::new(py);
        dict.set_item("depth", s.depth)?;
        dict.set_item("internal_nodes", s.internal_nodes)?;
        dict.set_item("leaf_nodes", s.leaf_nodes)?;
        dict.set_item("min_occupancy", s.min_occupancy)?;
        dict.set_item("max_occupancy", s.max_occupancy)?;
        dict.set_item("mean_occupancy", s.mean_occupancy)?;
        dict.set_item("memory_bytes", s.memory_bytes)?;
        Ok(dict)
    }

    /// Structural-invariant violations as human-readable strings (empty for
    /// a healthy tree).
    fn validate(&self) -> Vec<String> {
        kdtree::validate(&self.tree, &self.cloud)
            .violations
            .iter()
            .map(|v| v.to_string())
            .collect()
    }

    /// 64-bit digest of the tree's canonical structure.
    fn structural_hash(&self) -> u64 {
        structural_hash(&self.tree)
    }
}

/// Exhaustive kNN over the whole cloud; the oracle the tree must agree with.
#[pyfunction]
#[pyo3(name = "brute_force_knn")]
fn brute_force_knn_py(
    cloud: &PyPointCloud,
    point: (f64, f64, f64),
    k: usize,
) -> PyResult<Vec<(u32, f64)>> {
    let result = knn_mod::brute_force_knn(
        &cloud.inner,
        [point.0, point.1, point.2],
        nonzero(k, "k")?,
        None,
    );
    Ok(result.into_iter().map(|n| (n.index, n.sqdist)).collect())
}

/// Even-odd membership test; boundary points count as inside.
#[pyfunction]
#[pyo3(name = "point_in_polygon")]
fn point_in_polygon_py(point: (f64, f64), polygon_vertices: Vec<(f64, f64)>) -> PyResult<bool> {
    let poly = parse_polygon(polygon_vertices)?;
    Ok(polygon::point_in_polygon(point, &poly))
}

/// Run the leaf-size sweep over a cloud and return the CSV text
/// (`n_points,leaf_size,build_ms,avg_query_us,k,n_queries,seed,workers`).
#[pyfunction]
#[pyo3(signature = (cloud, leaf_sizes, k=50, n_queries=10, query_seed=0, workers=1))]
fn sweep_csv(
    cloud: &PyPointCloud,
    leaf_sizes: Vec<usize>,
    k: usize,
    n_queries: usize,
    query_seed: u64,
    workers: usize,
) -> PyResult<String> {
    let sizes: Vec<NonZeroUsize> = leaf_sizes
        .into_iter()
        .map(|v| nonzero(v, "leaf size"))
        .collect::<PyResult<_>>()?;
    let records = bench::sweep(
        &cloud.inner,
        &sizes,
        nonzero(k, "k")?,
        n_queries,
        query_seed,
        workers,
    )
    .map_err(value_err)?;
    let mut out = Vec::new();
    bench::write_csv(&records, &mut out).map_err(value_err)?;
    String::from_utf8(out).map_err(value_err)
}

#[pymodule]
fn lidarkd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyKdTree>()?;
    m.add_function(wrap_pyfunction!(brute_force_knn_py, m)?)?;
    m.add_function(wrap_pyfunction!(point_in_polygon_py, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_csv, m)?)?;
    Ok(())
}
