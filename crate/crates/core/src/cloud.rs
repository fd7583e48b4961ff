//! Columnar point-cloud storage and axis-aligned bounding boxes.

use thiserror::Error;

/// Axis-aligned bounding box (closed on all faces).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        debug_assert!((0..3).all(|d| min[d] <= max[d]), "inverted box");
        Self { min, max }
    }

    /// Smallest box containing both inputs, or the other when one is `None`.
    pub fn union(a: Option<Aabb>, b: Aabb) -> Aabb {
        match a {
            None => b,
            Some(a) => {
                let mut min = a.min;
                let mut max = a.max;
                for d in 0..3 {
                    min[d] = min[d].min(b.min[d]);
                    max[d] = max[d].max(b.max[d]);
                }
                Aabb { min, max }
            }
        }
    }

    pub fn side(&self, dim: usize) -> f64 {
        self.max[dim] - self.min[dim]
    }

    pub fn midpoint(&self, dim: usize) -> f64 {
        self.min[dim] + 0.5 * self.side(dim)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|d| self.min[d] <= p[d] && p[d] <= self.max[d])
    }

    /// The part of the box on the low side of the plane `x[dim] = value`.
    pub fn clipped_below(&self, dim: usize, value: f64) -> Aabb {
        let mut max = self.max;
        max[dim] = value;
        Aabb { min: self.min, max }
    }

    /// The part of the box on the high side of the plane `x[dim] = value`.
    pub fn clipped_above(&self, dim: usize, value: f64) -> Aabb {
        let mut min = self.min;
        min[dim] = value;
        Aabb { min, max: self.max }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("coordinate arrays have mismatched lengths ({xs}, {ys}, {zs})")]
    CoordinateLengthMismatch { xs: usize, ys: usize, zs: usize },
    #[error("attribute array `{name}` has length {got}, expected {expected}")]
    AttributeLengthMismatch {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("non-finite coordinate at point {index}")]
    NonFiniteCoordinate { index: usize },
}

/// Columnar storage for a LiDAR point cloud: coordinates in metres plus the
/// optional per-point attributes carried by the supported LAS point formats.
///
/// A cloud is immutable once constructed; the bounding box is always the
/// tight componentwise min/max of the stored coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    xs: Vec<f64>,
    ys: Vec<f64>,
    zs: Vec<f64>,
    intensity: Option<Vec<u16>>,
    rgb: Option<[Vec<u16>; 3]>,
    classification: Option<Vec<u8>>,
    bbox: Option<Aabb>,
}

impl PointCloud {
    /// Build a cloud from bare coordinates. Rejects NaN/infinite values
    /// rather than silently corrupting every spatial structure downstream.
    pub fn from_coords(xs: Vec<f64>, ys: Vec<f64>, zs: Vec<f64>) -> Result<Self, CloudError> {
        Self::from_parts(xs, ys, zs, None, None, None)
    }

    /// Build a cloud with optional attribute columns; every present column
    /// must match the coordinate count.
    pub fn from_parts(
        xs: Vec<f64>,
        ys: Vec<f64>,
        zs: Vec<f64>,
        intensity: Option<Vec<u16>>,
        rgb: Option<[Vec<u16>; 3]>,
        classification: Option<Vec<u8>>,
    ) -> Result<Self, CloudError> {
        let n = xs.len();
        if ys.len() != n || zs.len() != n {
            return Err(CloudError::CoordinateLengthMismatch {
                xs: n,
                ys: ys.len(),
                zs: zs.len(),
            });
        }
        if let Some(v) = &intensity {
            if v.len() != n {
                return Err(CloudError::AttributeLengthMismatch {
                    name: "intensity",
                    got: v.len(),
                    expected: n,
                });
            }
        }
        if let Some(chans) = &rgb {
            for (name, chan) in [("red", &chans[0]), ("green", &chans[1]), ("blue", &chans[2])] {
                if chan.len() != n {
                    return Err(CloudError::AttributeLengthMismatch {
                        name,
                        got: chan.len(),
                        expected: n,
                    });
                }
            }
        }
        if let Some(v) = &classification {
            if v.len() != n {
                return Err(CloudError::AttributeLengthMismatch {
                    name: "classification",
                    got: v.len(),
                    expected: n,
                });
            }
        }
        let mut bbox = None;
        for i in 0..n {
            let p = [xs[i], ys[i], zs[i]];
            if p.iter().any(|c| !c.is_finite()) {
                return Err(CloudError::NonFiniteCoordinate { index: i });
            }
            bbox = Some(Aabb::union(bbox, Aabb { min: p, max: p }));
        }
        Ok(Self {
            xs,
            ys,
            zs,
            intensity,
            rgb,
            classification,
            bbox,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Tight bounding box; `None` for the empty cloud.
    pub fn bbox(&self) -> Option<Aabb> {
        self.bbox
    }

    #[inline]
    pub fn point(&self, i: usize) -> [f64; 3] {
        [self.xs[i], self.ys[i], self.zs[i]]
    }

    /// Coordinate of point `i` along one axis (0 = x, 1 = y, 2 = z).
    #[inline]
    pub fn coord(&self, i: usize, dim: usize) -> f64 {
        match dim {
            0 => self.xs[i],
            1 => self.ys[i],
            _ => self.zs[i],
        }
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn zs(&self) -> &[f64] {
        &self.zs
    }

    pub fn intensity(&self) -> Option<&[u16]> {
        self.intensity.as_deref()
    }

    pub fn rgb(&self) -> Option<&[Vec<u16>; 3]> {
        self.rgb.as_ref()
    }

    pub fn classification(&self) -> Option<&[u8]> {
        self.classification.as_deref()
    }

    /// New cloud containing the points at `keep` (in the given order), with
    /// all present attributes carried along.
    pub fn select(&self, keep: &[usize]) -> PointCloud {
        let pick_f64 = |src: &[f64]| keep.iter().map(|&i| src[i]).collect::<Vec<_>>();
        let pick_u16 = |src: &[u16]| keep.iter().map(|&i| src[i]).collect::<Vec<_>>();
        let pick_u8 = |src: &[u8]| keep.iter().map(|&i| src[i]).collect::<Vec<_>>();
        PointCloud::from_parts(
            pick_f64(&self.xs),
            pick_f64(&self.ys),
            pick_f64(&self.zs),
            self.intensity.as_deref().map(pick_u16),
            self.rgb
                .as_ref()
                .map(|c| [pick_u16(&c[0]), pick_u16(&c[1]), pick_u16(&c[2])]),
            self.classification.as_deref().map(pick_u8),
        )
        .expect("selection from a valid cloud is valid")
    }
}
