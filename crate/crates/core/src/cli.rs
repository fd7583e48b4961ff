//! Command-line surface: inspect files, run sweeps, issue queries, crop by
//! polygon, validate trees.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/IO error. Apart from the
//! timing columns of `bench`, identical arguments and input files always
//! produce identical output bytes.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::bench::{self, GenMode, GenSpec};
use crate::cloud::{Aabb, PointCloud};
use crate::ingest::{timed_ingest, InputFormat};
use crate::kdtree::{self, BuildConfig};
use crate::knn::{brute_force_knn, knn};
use crate::las;
use crate::parallel::{build_topology, ParallelPlan, TopologyError, WorkerDescriptor};
use crate::polygon::{crop, Polygon2D, PolygonError};
use crate::rng::SplitMix64;
use crate::xyz;

/// Fixed seed for the deterministic spot-check queries of `validate`.
const VALIDATE_QUERY_SEED: u64 = 0x11da5;
const VALIDATE_QUERY_COUNT: usize = 10;
const VALIDATE_QUERY_K: usize = 50;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Las(#[from] las::LasError),
    #[error(transparent)]
    Xyz(#[from] xyz::XyzError),
    #[error(transparent)]
    Build(#[from] kdtree::BuildError),
    #[error(transparent)]
    Knn(#[from] crate::knn::KnnError),
    #[error(transparent)]
    Bench(#[from] bench::BenchError),
    #[error(transparent)]
    Gen(#[from] bench::GenError),
    #[error(transparent)]
    Polygon(#[from] PolygonError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

#[derive(Parser)]
#[command(
    name = "lidarkd",
    version,
    about = "Bucketed kd-tree indexing and kNN search for LiDAR point clouds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Uniform,
    Clustered,
}

/// "x,y,z" triple.
#[derive(Clone, Copy, Debug)]
struct PointArg([f64; 3]);

impl FromStr for PointArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = s.split(',').collect();
        if fields.len() != 3 {
            return Err(format!("expected x,y,z, got {} fields", fields.len()));
        }
        let mut out = [0.0; 3];
        for (slot, text) in out.iter_mut().zip(&fields) {
            *slot = text
                .trim()
                .parse::<f64>()
                .map_err(|e| format!("bad coordinate {text:?}: {e}"))?;
            if !slot.is_finite() {
                return Err(format!("non-finite coordinate {text:?}"));
            }
        }
        Ok(PointArg(out))
    }
}

/// "minx,miny,minz,maxx,maxy,maxz".
#[derive(Clone, Copy, Debug)]
struct BboxArg(Aabb);

impl FromStr for BboxArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = s.split(',').collect();
        if fields.len() != 6 {
            return Err(format!(
                "expected minx,miny,minz,maxx,maxy,maxz, got {} fields",
                fields.len()
            ));
        }
        let mut vals = [0.0f64; 6];
        for (slot, text) in vals.iter_mut().zip(&fields) {
            *slot = text
                .trim()
                .parse()
                .map_err(|e| format!("bad bound {text:?}: {e}"))?;
        }
        let (min, max) = ([vals[0], vals[1], vals[2]], [vals[3], vals[4], vals[5]]);
        for d in 0..3 {
            if !(min[d].is_finite() && max[d].is_finite() && min[d] <= max[d]) {
                return Err("box must be finite with min <= max per axis".to_string());
            }
        }
        Ok(BboxArg(Aabb { min, max }))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the header fields of a LAS file or the line/point counts of an
    /// xyz file
    Info { file: PathBuf },
    /// Generate a synthetic cloud, sweep leaf sizes, and write build/query
    /// timings as CSV
    Bench {
        /// Number of points to generate
        #[arg(long)]
        n: usize,
        /// Point distribution
        #[arg(long, value_enum, default_value_t = ModeArg::Uniform)]
        mode: ModeArg,
        /// Comma-separated bucket capacities to sweep
        #[arg(
            long = "leaf-sizes",
            value_delimiter = ',',
            default_value = "1000,5000,10000,50000,100000,200000,500000,1000000"
        )]
        leaf_sizes: Vec<NonZeroUsize>,
        /// Neighbours per query
        #[arg(long, default_value_t = NonZeroUsize::new(50).unwrap())]
        k: NonZeroUsize,
        /// Queries per leaf size (the same points across the whole sweep)
        #[arg(long = "queries", default_value_t = 10)]
        queries: usize,
        /// Generation seed; the query seed is derived from it
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Construction workers (1 = sequential)
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Optional per-worker capacity scores for virtual-node election,
        /// comma-separated, one per worker
        #[arg(long = "worker-capacities", value_delimiter = ',')]
        worker_capacities: Option<Vec<f64>>,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
        /// Generation box as minx,miny,minz,maxx,maxy,maxz
        #[arg(long, default_value = "0,0,0,1000,1000,1000")]
        bbox: BboxArg,
        /// Cluster count (clustered mode)
        #[arg(long, default_value_t = NonZeroUsize::new(5).unwrap())]
        clusters: NonZeroUsize,
        /// Cluster standard deviation in metres (clustered mode)
        #[arg(long, default_value_t = 10.0)]
        sigma: f64,
    },
    /// Build a tree over a point file and print the k nearest neighbours of
    /// a point as "index sqdist" lines
    Query {
        file: PathBuf,
        /// Query point as x,y,z
        #[arg(long)]
        point: PointArg,
        #[arg(long)]
        k: NonZeroUsize,
        #[arg(long = "leaf-size")]
        leaf_size: NonZeroUsize,
    },
    /// Keep only the points whose (x, y) fall inside a polygon
    Crop {
        file: PathBuf,
        /// Polygon file: one "x y" vertex per line, '#' comments
        #[arg(long)]
        polygon: PathBuf,
        /// Output path; format inferred from the extension (.las | .xyz)
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a tree and check its structural invariants plus a brute-force
    /// spot-check of query results
    Validate {
        file: PathBuf,
        #[arg(long = "leaf-size")]
        leaf_size: NonZeroUsize,
    },
}

/// Run the CLI against the given argv (element 0 is the program name).
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    run_with_output(argv, &mut stdout.lock())
}

/// Same as [`run`] but writing to a caller-supplied stream.
pub fn run_with_output<I, T>(argv: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", err.render());
                    0
                }
                _ => {
                    eprintln!("{}", err.render());
                    1
                }
            };
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            2
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Info { file } => cmd_info(&file, out),
        Command::Bench {
            n,
            mode,
            leaf_sizes,
            k,
            queries,
            seed,
            workers,
            worker_capacities,
            out: out_path,
            bbox,
            clusters,
            sigma,
        } => {
            let mode = match mode {
                ModeArg::Uniform => GenMode::Uniform { bbox: bbox.0 },
                ModeArg::Clustered => GenMode::Clustered {
                    bbox: bbox.0,
                    clusters,
                    sigma,
                },
            };
            cmd_bench(
                GenSpec { n, mode, seed },
                &leaf_sizes,
                k,
                queries,
                workers,
                worker_capacities,
                &out_path,
                out,
            )
        }
        Command::Query {
            file,
            point,
            k,
            leaf_size,
        } => cmd_query(&file, point.0, k, leaf_size, out),
        Command::Crop { file, polygon, out: out_path } => cmd_crop(&file, &polygon, &out_path, out),
        Command::Validate { file, leaf_size } => cmd_validate(&file, leaf_size, out),
    }
}

fn detect_format(path: &Path) -> Result<InputFormat, CliError> {
    InputFormat::from_path(path).ok_or_else(|| {
        CliError::Other(format!(
            "cannot infer format of {} (expected a .las or .xyz extension)",
            path.display()
        ))
    })
}

fn load_cloud(path: &Path) -> Result<(PointCloud, InputFormat), CliError> {
    let format = detect_format(path)?;
    let (cloud, _) = timed_ingest(path, format)?;
    Ok((cloud, format))
}

fn fmt_triple(v: [f64; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

fn cmd_info(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    match detect_format(path)? {
        InputFormat::Las => {
            let h = crate::ingest::read_las_header_file(path)?;
            writeln!(out, "format: LAS {}.{}", h.version_major, h.version_minor)?;
            writeln!(out, "point_format: {}", h.point_format_id)?;
            writeln!(out, "record_length: {}", h.point_record_length)?;
            writeln!(out, "point_count: {}", h.point_count)?;
            writeln!(out, "header_size: {}", h.header_size)?;
            writeln!(out, "point_data_offset: {}", h.point_data_offset)?;
            writeln!(out, "scale: {}", fmt_triple(h.scale))?;
            writeln!(out, "offset: {}", fmt_triple(h.offset))?;
            writeln!(out, "min: {}", fmt_triple(h.min))?;
            writeln!(out, "max: {}", fmt_triple(h.max))?;
        }
        InputFormat::Xyz => {
            let reader = BufReader::new(File::open(path)?);
            let (lines, points) = xyz::count_xyz_lines(reader)?;
            writeln!(out, "format: XYZ")?;
            writeln!(out, "lines: {lines}")?;
            writeln!(out, "points: {points}")?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    spec: GenSpec,
    leaf_sizes: &[NonZeroUsize],
    k: NonZeroUsize,
    queries: usize,
    workers: usize,
    worker_capacities: Option<Vec<f64>>,
    csv_path: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let cloud = bench::generate(&spec)?;
    let query_seed = derive_query_seed(spec.seed);
    let plan = match worker_capacities {
        Some(capacities) => {
            if capacities.len() != workers {
                return Err(CliError::Other(format!(
                    "--worker-capacities lists {} scores for {workers} workers",
                    capacities.len()
                )));
            }
            let descriptors: Vec<WorkerDescriptor> = capacities
                .iter()
                .enumerate()
                .map(|(id, &c)| WorkerDescriptor::new(id as u32, c))
                .collect();
            let height = workers.next_power_of_two().trailing_zeros();
            Some(ParallelPlan::new(build_topology(&descriptors, height)?))
        }
        None if workers > 1 => Some(ParallelPlan::for_worker_count(workers)?),
        None => None,
    };
    let records =
        bench::sweep_planned(&cloud, leaf_sizes, k, queries, query_seed, plan.as_ref(), workers)?;
    let file = File::create(csv_path)?;
    let mut writer = BufWriter::new(file);
    let bytes = bench::write_csv(&records, &mut writer)?;
    writer.flush()?;
    writeln!(
        out,
        "wrote {} records ({} bytes) to {}",
        records.len(),
        bytes,
        csv_path.display()
    )?;
    Ok(())
}

/// Query points must not replay the generation stream, or every query would
/// coincide with a cloud point; one splitmix64 step of the complemented seed
/// decorrelates them.
fn derive_query_seed(seed: u64) -> u64 {
    SplitMix64::new(!seed).next_u64()
}

fn cmd_query(
    path: &Path,
    point: [f64; 3],
    k: NonZeroUsize,
    leaf_size: NonZeroUsize,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let (cloud, _) = load_cloud(path)?;
    let tree = kdtree::build(&cloud, BuildConfig { leaf_size })?;
    for n in knn(&tree, &cloud, point, k)? {
        writeln!(out, "{} {}", n.index, n.sqdist)?;
    }
    Ok(())
}

fn read_polygon_file(path: &Path) -> Result<Polygon2D, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut vertices = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let mut pair = [0.0f64; 2];
        for (f, slot) in pair.iter_mut().enumerate() {
            let text = fields.next().ok_or_else(|| {
                CliError::Other(format!(
                    "{}:{line_no}: expected \"x y\", found {f} fields",
                    path.display()
                ))
            })?;
            *slot = text.parse().map_err(|_| {
                CliError::Other(format!(
                    "{}:{line_no}: {text:?} is not a number",
                    path.display()
                ))
            })?;
        }
        vertices.push((pair[0], pair[1]));
    }
    Ok(Polygon2D::new(vertices)?)
}

fn cmd_crop(
    input: &Path,
    polygon_path: &Path,
    out_path: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let poly = read_polygon_file(polygon_path)?;
    let (cloud, in_format) = load_cloud(input)?;
    let cropped = crop(&cloud, &poly);
    match detect_format(out_path)? {
        InputFormat::Xyz => {
            let mut sink = BufWriter::new(File::create(out_path)?);
            xyz::write_xyz(&cropped, &mut sink)?;
            sink.flush()?;
        }
        InputFormat::Las => {
            // keep the source quantization grid when there is one
            let (format_id, scale, offset) = if in_format == InputFormat::Las {
                let h = crate::ingest::read_las_header_file(input)?;
                (h.point_format_id, h.scale, h.offset)
            } else {
                let base = cropped
                    .bbox()
                    .map(|b| [b.min[0].floor(), b.min[1].floor(), b.min[2].floor()])
                    .unwrap_or([0.0; 3]);
                (0, [0.001; 3], base)
            };
            let bytes = las::write_las(&cropped, format_id, scale, offset)?;
            std::fs::write(out_path, bytes)?;
        }
    }
    writeln!(
        out,
        "kept {} of {} points -> {}",
        cropped.len(),
        cloud.len(),
        out_path.display()
    )?;
    Ok(())
}

fn cmd_validate(
    path: &Path,
    leaf_size: NonZeroUsize,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let (cloud, _) = load_cloud(path)?;
    let tree = kdtree::build(&cloud, BuildConfig { leaf_size })?;
    let s = kdtree::stats(&tree);
    writeln!(
        out,
        "tree: {} points, depth {}, {} internal nodes, {} leaves, occupancy {}..{} (mean {:.1})",
        tree.len(),
        s.depth,
        s.internal_nodes,
        s.leaf_nodes,
        s.min_occupancy,
        s.max_occupancy,
        s.mean_occupancy
    )?;

    let report = kdtree::validate(&tree, &cloud);
    if report.is_ok() {
        writeln!(out, "structure: OK (0 violations)")?;
    } else {
        writeln!(out, "structure: {} violations", report.violations.len())?;
        for v in &report.violations {
            writeln!(out, "  {v}")?;
        }
    }

    let k = NonZeroUsize::new(VALIDATE_QUERY_K.min(cloud.len().max(1))).unwrap();
    let queries = bench::sample_queries(&cloud, VALIDATE_QUERY_COUNT, VALIDATE_QUERY_SEED);
    let mut matches = 0usize;
    for &q in &queries {
        if knn(&tree, &cloud, q, k)? == brute_force_knn(&cloud, q, k, None) {
            matches += 1;
        }
    }
    writeln!(out, "oracle spot-check: {matches}/{} queries match", queries.len())?;

    if !report.is_ok() || matches != queries.len() {
        return Err(CliError::Other("validation failed".to_string()));
    }
    Ok(())
}
