//! Point clouds and the geometric queries used by origin selection.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::lie::{Pose, Vec3};
use crate::scalar::Scalar;

/// Positions with optional RGB colors in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointCloud<T: Scalar> {
    positions: Vec<Vec3<T>>,
    colors: Option<Vec<[T; 3]>>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(positions: Vec<Vec3<T>>) -> Self {
        Self {
            positions,
            colors: None,
        }
    }

    pub fn with_colors(positions: Vec<Vec3<T>>, colors: Vec<[T; 3]>) -> Result<Self> {
        if colors.len() != positions.len() {
            return Err(Error::InvalidParameter(format!(
                "{} colors for {} points",
                colors.len(),
                positions.len()
            )));
        }
        Ok(Self {
            positions,
            colors: Some(colors),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3<T>] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[[T; 3]]> {
        self.colors.as_deref()
    }

    pub fn color(&self, i: usize) -> Option<[T; 3]> {
        self.colors.as_ref().map(|c| c[i])
    }

    /// Maps every position through `g`; colors are unchanged.
    pub fn transform(&self, g: &Pose<T>) -> Self {
        Self {
            positions: self.positions.iter().map(|p| g.apply(p)).collect(),
            colors: self.colors.clone(),
        }
    }

    /// Axis-aligned bounds `(min, max)`, `None` for an empty cloud.
    pub fn bounding_box(&self) -> Option<(Vec3<T>, Vec3<T>)> {
        let first = *self.positions.first()?;
        Some(self.positions.iter().fold((first, first), |(lo, hi), p| {
            (lo.zip_map(p, |a, b| a.min(b)), hi.zip_map(p, |a, b| a.max(b)))
        }))
    }

    /// One centroid per occupied voxel, ordered by ascending voxel index.
    pub fn voxel_downsample(&self, voxel: T) -> Result<Self> {
        if !(voxel > T::zero()) || !voxel.is_finite() {
            return Err(Error::InvalidParameter("voxel size must be positive".into()));
        }
        let mut cells: BTreeMap<[i64; 3], (Vec3<T>, [T; 3], usize)> = BTreeMap::new();
        for (i, p) in self.positions.iter().enumerate() {
            let key = cell_of(p, voxel);
            let entry = cells.entry(key).or_insert((Vec3::zeros(), [T::zero(); 3], 0));
            entry.0 += p;
            if let Some(c) = self.color(i) {
                for (acc, v) in entry.1.iter_mut().zip(c) {
                    *acc += v;
                }
            }
            entry.2 += 1;
        }
        let mut positions = Vec::with_capacity(cells.len());
        let mut colors = Vec::with_capacity(cells.len());
        for (sum, csum, n) in cells.into_values() {
            let inv = T::one() / T::from_usize_lossy(n);
            positions.push(sum * inv);
            colors.push([csum[0] * inv, csum[1] * inv, csum[2] * inv]);
        }
        Ok(Self {
            positions,
            colors: self.colors.as_ref().map(|_| colors),
        })
    }
}

fn cell_of<T: Scalar>(p: &Vec3<T>, cell: T) -> [i64; 3] {
    [
        (p.x / cell).floor().as_f64() as i64,
        (p.y / cell).floor().as_f64() as i64,
        (p.z / cell).floor().as_f64() as i64,
    ]
}

#[inline]
fn within<T: Scalar>(p: &Vec3<T>, x: &Vec3<T>, r2: T) -> bool {
    let d = p - x;
    d.dot(&d) <= r2
}

/// Number of points at distance `<= r` from `x` (brute force).
pub fn radius_count<T: Scalar>(x: &Vec3<T>, pc: &PointCloud<T>, r: T) -> usize {
    let r2 = r * r;
    pc.positions.iter().filter(|p| within(p, x, r2)).count()
}

/// Uniform-grid index answering the same query as [`radius_count`].
#[derive(Clone, Debug)]
pub struct RadiusIndex<T: Scalar> {
    cell: T,
    positions: Vec<Vec3<T>>,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<T: Scalar> RadiusIndex<T> {
    pub fn new(pc: &PointCloud<T>, cell: T) -> Result<Self> {
        if !(cell > T::zero()) || !cell.is_finite() {
            return Err(Error::InvalidParameter("grid cell size must be positive".into()));
        }
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in pc.positions.iter().enumerate() {
            cells.entry(cell_of(p, cell)).or_default().push(i);
        }
        Ok(Self {
            cell,
            positions: pc.positions.clone(),
            cells,
        })
    }

    pub fn count(&self, x: &Vec3<T>, r: T) -> usize {
        let r2 = r * r;
        // one extra ring of cells absorbs rounding in the cell assignment
        let reach = (r / self.cell).ceil().as_f64() as i64 + 1;
        let c = cell_of(x, self.cell);
        let mut n = 0;
        for i in -reach..=reach {
            for j in -reach..=reach {
                for k in -reach..=reach {
                    if let Some(idx) = self.cells.get(&[c[0] + i, c[1] + j, c[2] + k]) {
                        n += idx.iter().filter(|&&q| within(&self.positions[q], x, r2)).count();
                    }
                }
            }
        }
        n
    }
}
