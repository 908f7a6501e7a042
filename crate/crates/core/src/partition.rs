//! Unit search space, hyperrectangle bookkeeping and trisection.
//!
//! Every rectangle is stored as a vector of integer trisection depths plus,
//! per dimension, the index of the cell it occupies on the `3^d` grid of
//! that depth. Centres, sizes and volumes are therefore exact functions of
//! integers and the grouping key (minimum depth) never drifts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deepest trisection level representable with exact cell indices.
///
/// `3^32` still fits in the 53-bit mantissa of an `f64`, so centres stay exact.
pub const MAX_DEPTH: u32 = 32;

/// `3^-depth` as a float.
pub fn third_pow(depth: u32) -> f64 {
    1.0 / 3f64.powi(depth as i32)
}

/// Physical box of transformation factors, mapped affinely onto `[0, 1]^n`.
///
/// Stored as midpoint and half-width so the unit-cube centre maps onto the
/// midpoint without rounding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    mid: Vec<f64>,
    half: Vec<f64>,
}

impl ParamSpace {
    pub fn new(bounds: &[(f64, f64)]) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::EmptySpace);
        }
        let mut mid = Vec::with_capacity(bounds.len());
        let mut half = Vec::with_capacity(bounds.len());
        for (dim, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidBounds { dim, lo, hi });
            }
            mid.push(0.5 * (lo + hi));
            half.push(0.5 * (hi - lo));
        }
        Ok(Self { mid, half })
    }

    /// Box `[centre_i - half_i, centre_i + half_i]` in each dimension.
    pub fn symmetric(centres: &[f64], half_widths: &[f64]) -> Result<Self> {
        if centres.is_empty() {
            return Err(Error::EmptySpace);
        }
        if centres.len() != half_widths.len() {
            return Err(Error::DimensionMismatch {
                expected: centres.len(),
                got: half_widths.len(),
            });
        }
        for (dim, (&c, &h)) in centres.iter().zip(half_widths).enumerate() {
            if !(c.is_finite() && h.is_finite() && h > 0.0) {
                return Err(Error::InvalidBounds {
                    dim,
                    lo: c - h,
                    hi: c + h,
                });
            }
        }
        Ok(Self {
            mid: centres.to_vec(),
            half: half_widths.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mid.len()
    }

    pub fn lower(&self, i: usize) -> f64 {
        self.mid[i] - self.half[i]
    }

    pub fn upper(&self, i: usize) -> f64 {
        self.mid[i] + self.half[i]
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.mid[i]
    }

    /// `hi_i - lo_i`.
    pub fn width(&self, i: usize) -> f64 {
        2.0 * self.half[i]
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|i| (self.lower(i), self.upper(i)))
            .collect()
    }

    /// Maps a unit-cube point to physical units: `lo_i + u_i (hi_i - lo_i)`.
    pub fn to_physical(&self, u: &[f64]) -> Vec<f64> {
        debug_assert_eq!(u.len(), self.dim());
        u.iter()
            .zip(self.mid.iter().zip(&self.half))
            .map(|(&u, (&m, &h))| m + (2.0 * u - 1.0) * h)
            .collect()
    }
}

/// A live or retired subspace of the unit cube.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperRect {
    pub id: usize,
    /// Trisection count per dimension; side length is `3^-depth`.
    pub depths: Vec<u32>,
    /// Cell index per dimension on the grid of the matching depth.
    pub cells: Vec<u64>,
    /// Objective value at the centre.
    pub value: f64,
    /// Largest slope observed from this centre, in physical units.
    pub local_slope: f64,
    pub divided: bool,
}

impl HyperRect {
    pub fn dim(&self) -> usize {
        self.depths.len()
    }

    /// Grouping key: the depth of the longest sides.
    pub fn min_depth(&self) -> u32 {
        self.depths.iter().copied().min().unwrap_or(0)
    }

    /// `σ = ½ · 3^-min_depth`, half the longest side.
    pub fn size(&self) -> f64 {
        0.5 * third_pow(self.min_depth())
    }

    pub fn side(&self, i: usize) -> f64 {
        third_pow(self.depths[i])
    }

    pub fn center_coord(&self, i: usize) -> f64 {
        cell_center(self.depths[i], self.cells[i])
    }

    pub fn center(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.center_coord(i)).collect()
    }

    pub fn volume(&self) -> f64 {
        self.depths.iter().map(|&d| third_pow(d)).product()
    }

    /// Dimensions whose side is the longest.
    pub fn long_dims(&self) -> Vec<usize> {
        let d = self.min_depth();
        (0..self.dim()).filter(|&i| self.depths[i] == d).collect()
    }

    /// Canonical exact key of the centre point.
    pub fn center_key(&self) -> PointKey {
        PointKey::new(&self.depths, &self.cells)
    }

    /// Whether unit-cube point `u` lies in the closed rectangle.
    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter().enumerate().all(|(i, &x)| {
            let half = 0.5 * self.side(i);
            let c = self.center_coord(i);
            x >= c - half - 1e-15 && x <= c + half + 1e-15
        })
    }
}

fn cell_center(depth: u32, cell: u64) -> f64 {
    (2 * cell + 1) as f64 / (2.0 * 3f64.powi(depth as i32))
}

/// Exact, representation-independent identity of a cell centre.
///
/// The centre `(2k + 1) / (2 · 3^d)` of the middle child equals that of its
/// parent, so pairs `(d, 3k + 1)` are reduced to `(d - 1, k)` until unique.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointKey(Vec<(u32, u64)>);

impl PointKey {
    pub fn new(depths: &[u32], cells: &[u64]) -> Self {
        Self(
            depths
                .iter()
                .zip(cells)
                .map(|(&d, &k)| {
                    let (mut d, mut k) = (d, k);
                    while d > 0 && k % 3 == 1 {
                        k /= 3;
                        d -= 1;
                    }
                    (d, k)
                })
                .collect(),
        )
    }
}

/// Which side of the centre a sample lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

/// One trisection sample `c ± 3^{-d-1} e_i` of a rectangle.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePoint {
    pub dim: usize,
    pub side: Side,
    pub depths: Vec<u32>,
    pub cells: Vec<u64>,
    /// Unit-cube coordinates.
    pub point: Vec<f64>,
}

impl SamplePoint {
    pub fn key(&self) -> PointKey {
        PointKey::new(&self.depths, &self.cells)
    }
}

/// Result of a division: the child that keeps the parent's centre and the
/// `2m` children built around the sampled points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Division {
    pub center: usize,
    pub sides: Vec<usize>,
    /// Long dimensions in the order they were split.
    pub order: Vec<usize>,
}

impl Division {
    pub fn ids(&self) -> Vec<usize> {
        let mut ids = self.sides.clone();
        ids.push(self.center);
        ids
    }
}

/// All rectangles created so far; divided ones are retired but kept so ids
/// stay stable.
#[derive(Clone, Debug)]
pub struct Partition {
    dim: usize,
    rects: Vec<HyperRect>,
    groups: BTreeMap<u32, BTreeSet<usize>>,
    live: usize,
}

impl Partition {
    /// Unit cube as a single rectangle, id 0, centre value `value`.
    pub fn init(space: &ParamSpace, value: f64) -> Self {
        Self::unit(space.dim(), value)
    }

    pub fn unit(dim: usize, value: f64) -> Self {
        assert!(dim >= 1, "partition needs at least one dimension");
        let root = HyperRect {
            id: 0,
            depths: vec![0; dim],
            cells: vec![0; dim],
            value,
            local_slope: 0.0,
            divided: false,
        };
        let mut groups = BTreeMap::new();
        groups.insert(0, BTreeSet::from([0]));
        Self {
            dim,
            rects: vec![root],
            groups,
            live: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rect(&self, id: usize) -> &HyperRect {
        &self.rects[id]
    }

    pub fn rects(&self) -> &[HyperRect] {
        &self.rects
    }

    pub fn live_count(&self) -> usize {
        self.live
    }

    pub fn live(&self) -> impl Iterator<Item = &HyperRect> {
        self.rects.iter().filter(|r| !r.divided)
    }

    /// Live rect ids keyed by minimum depth, largest rects first.
    pub fn groups(&self) -> &BTreeMap<u32, BTreeSet<usize>> {
        &self.groups
    }

    pub fn set_value(&mut self, id: usize, value: f64) {
        self.rects[id].value = value;
    }

    pub fn set_local_slope(&mut self, id: usize, slope: f64) {
        self.rects[id].local_slope = slope;
    }

    /// Points `c ± 3^{-d-1} e_i` for each long dimension `i`, lower side
    /// first, dimensions ascending. Empty once the long sides reach
    /// `max_depth`.
    pub fn sample_points(&self, id: usize, max_depth: u32) -> Vec<SamplePoint> {
        let rect = &self.rects[id];
        let d = rect.min_depth();
        if rect.divided || d >= max_depth.min(MAX_DEPTH) {
            return Vec::new();
        }
        let center = rect.center();
        let delta = third_pow(d + 1);
        let mut out = Vec::new();
        for i in rect.long_dims() {
            let k = rect.cells[i];
            for (side, cell, shift) in [(Side::Lower, 3 * k, -delta), (Side::Upper, 3 * k + 2, delta)] {
                let mut depths = rect.depths.clone();
                let mut cells = rect.cells.clone();
                depths[i] = d + 1;
                cells[i] = cell;
                let mut point = center.clone();
                point[i] = cell_center(d + 1, cell);
                debug_assert!((point[i] - (center[i] + shift)).abs() < 1e-12);
                out.push(SamplePoint {
                    dim: i,
                    side,
                    depths,
                    cells,
                    point,
                });
            }
        }
        out
    }

    /// Trisects rect `id` along all its long dimensions.
    ///
    /// `values` are aligned with [`Partition::sample_points`]. Dimensions are
    /// split in ascending order of `w_i = min(ℓ(c - δe_i), ℓ(c + δe_i))`,
    /// ties going to the lower index, so the best sample ends up as the
    /// centre of one of the largest children.
    pub fn divide(&mut self, id: usize, values: &[f64]) -> Result<Division> {
        if id >= self.rects.len() || self.rects[id].divided {
            return Err(Error::DeadRect(id));
        }
        let parent = self.rects[id].clone();
        let long = parent.long_dims();
        if values.len() != 2 * long.len() {
            return Err(Error::MalformedQueryResults {
                expected: 2 * long.len(),
                got: values.len(),
            });
        }
        if parent.min_depth() >= MAX_DEPTH {
            return Err(Error::InvalidArgument(format!(
                "rect {id} is already at the maximum representable depth"
            )));
        }

        let mut order: Vec<(f64, usize, f64, f64)> = long
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                let (lo, hi) = (values[2 * j], values[2 * j + 1]);
                (lo.min(hi), i, lo, hi)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        self.retire(id);
        let mut depths = parent.depths.clone();
        let mut cells = parent.cells.clone();
        let mut sides = Vec::with_capacity(2 * long.len());
        for &(_, i, lo_val, hi_val) in &order {
            let k = parent.cells[i];
            depths[i] += 1;
            for (cell, value) in [(3 * k, lo_val), (3 * k + 2, hi_val)] {
                let mut c = cells.clone();
                c[i] = cell;
                sides.push(self.push(depths.clone(), c, value));
            }
            cells[i] = 3 * k + 1;
        }
        let center = self.push(depths, cells, parent.value);
        Ok(Division {
            center,
            sides,
            order: order.iter().map(|o| o.1).collect(),
        })
    }

    fn retire(&mut self, id: usize) {
        let key = self.rects[id].min_depth();
        if let Some(group) = self.groups.get_mut(&key) {
            group.remove(&id);
            if group.is_empty() {
                self.groups.remove(&key);
            }
        }
        self.rects[id].divided = true;
        self.live -= 1;
    }

    fn push(&mut self, depths: Vec<u32>, cells: Vec<u64>, value: f64) -> usize {
        let id = self.rects.len();
        let rect = HyperRect {
            id,
            depths,
            cells,
            value,
            local_slope: 0.0,
            divided: false,
        };
        self.groups.entry(rect.min_depth()).or_default().insert(id);
        self.rects.push(rect);
        self.live += 1;
        id
    }
}
