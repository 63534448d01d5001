//! Cartesian grids, stored value fields and multilinear interpolation.
//!
//! Nodes are stored row-major with the first axis outermost. A non-periodic
//! axis with `points` nodes includes both endpoints; a periodic axis spans
//! `[lower, upper)` and identifies `upper` with `lower`, so it has no
//! duplicate endpoint node.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math;
use crate::MAX_DIM;

/// Cell-unit distance under which a query snaps onto a node, so that
/// re-interpolating at a node coordinate returns the stored value exactly.
const SNAP: f64 = 64.0 * f64::EPSILON;

/// How to evaluate a field at a non-periodic coordinate outside the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutOfDomain {
    /// Return the largest value stored in the field.
    #[default]
    Saturate,
    /// Project onto the domain boundary, then interpolate.
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
    pub periodic: bool,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, points: usize) -> Self {
        Axis {
            lower,
            upper,
            points,
            periodic: false,
        }
    }

    pub fn periodic(lower: f64, upper: f64, points: usize) -> Self {
        Axis {
            lower,
            upper,
            points,
            periodic: true,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite()) {
            return Err(Error::InvalidGrid(alloc::format!(
                "axis {dim} has non-finite bounds"
            )));
        }
        if self.upper <= self.lower {
            return Err(Error::InvalidGrid(alloc::format!(
                "axis {dim}: upper {} must exceed lower {}",
                self.upper,
                self.lower
            )));
        }
        if self.points < 2 {
            return Err(Error::InvalidGrid(alloc::format!(
                "axis {dim} needs at least 2 points, got {}",
                self.points
            )));
        }
        Ok(())
    }

    /// Number of cell widths spanning `[lower, upper]`.
    #[inline]
    fn intervals(&self) -> usize {
        if self.periodic {
            self.points
        } else {
            self.points - 1
        }
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / self.intervals() as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.lower + i as f64 * (self.upper - self.lower) / self.intervals() as f64
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.periodic || (x >= self.lower && x <= self.upper)
    }

    /// Lower node, upper node and fractional offset of an in-domain coordinate.
    #[inline]
    fn locate(&self, x: f64) -> (usize, usize, f64) {
        let mut u = (x - self.lower) * self.intervals() as f64 / (self.upper - self.lower);
        let r = math::round(u);
        if math::abs(u - r) <= SNAP * r.abs().max(1.0) {
            u = r;
        }
        let cell = math::floor(u);
        let t = u - cell;
        let n = self.points as isize;
        if self.periodic {
            let i0 = (cell as isize).rem_euclid(n) as usize;
            (i0, (i0 + 1) % self.points, t)
        } else {
            let i0 = (cell as isize).clamp(0, n - 2);
            let t = (u - i0 as f64).clamp(0.0, 1.0);
            (i0 as usize, i0 as usize + 1, t)
        }
    }
}

/// Dense Cartesian grid description.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    axes: Vec<Axis>,
    strides: Vec<usize>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > MAX_DIM {
            return Err(Error::InvalidGrid(alloc::format!(
                "dimension count must be in 1..={MAX_DIM}, got {}",
                axes.len()
            )));
        }
        for (d, axis) in axes.iter().enumerate() {
            axis.validate(d)?;
        }
        let mut strides = vec![1usize; axes.len()];
        for d in (0..axes.len() - 1).rev() {
            strides[d] = strides[d + 1]
                .checked_mul(axes[d + 1].points)
                .ok_or_else(|| Error::InvalidGrid("node count overflows".into()))?;
        }
        strides[0]
            .checked_mul(axes[0].points)
            .ok_or_else(|| Error::InvalidGrid("node count overflows".into()))?;
        Ok(GridSpec { axes, strides })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, d: usize) -> &Axis {
        &self.axes[d]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points).collect()
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.strides[0] * self.axes[0].points
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        self.check_index(index)?;
        Ok(index
            .iter()
            .zip(&self.strides)
            .map(|(i, s)| i * s)
            .sum())
    }

    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for d in 0..self.dim() {
            out[d] = flat / self.strides[d];
            flat %= self.strides[d];
        }
    }

    fn check_index(&self, index: &[usize]) -> Result<()> {
        if index.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: index.len(),
            });
        }
        for (d, (&i, axis)) in index.iter().zip(&self.axes).enumerate() {
            if i >= axis.points {
                return Err(Error::IndexOutOfRange {
                    dim: d,
                    index: i,
                    points: axis.points,
                });
            }
        }
        Ok(())
    }

    /// Physical coordinates of the node at a multi-index.
    pub fn node_coordinates(&self, index: &[usize]) -> Result<Vec<f64>> {
        self.check_index(index)?;
        Ok(index
            .iter()
            .zip(&self.axes)
            .map(|(&i, axis)| axis.node(i))
            .collect())
    }

    /// Writes the coordinates of the node with row-major position `flat`.
    #[inline]
    pub fn node_at(&self, mut flat: usize, out: &mut [f64]) {
        for d in 0..self.dim() {
            let i = flat / self.strides[d];
            flat %= self.strides[d];
            out[d] = self.axes[d].node(i);
        }
    }

    /// True when no non-periodic coordinate leaves `[lower, upper]`.
    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim() && self.axes.iter().zip(point).all(|(a, &x)| a.contains(x))
    }
}

/// Enclosing cell of a query: corner indices and weights.
struct Stencil {
    base: [usize; MAX_DIM],
    next: [usize; MAX_DIM],
    frac: [f64; MAX_DIM],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FieldMeta {
    /// Number of recursion steps applied since the terminal condition.
    pub step_index: u32,
    pub dt: f64,
    pub horizon: f64,
    pub problem_digest: String,
}

/// Grid-sampled value function. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    grid: GridSpec,
    values: Vec<f64>,
    meta: FieldMeta,
    min: f64,
    max: f64,
}

impl ValueField {
    pub fn new(grid: GridSpec, values: Vec<f64>, meta: FieldMeta) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::DimensionMismatch {
                expected: grid.node_count(),
                found: values.len(),
            });
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for (node, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteTerminal { node });
            }
            min = min.min(v);
            max = max.max(v);
        }
        Ok(ValueField {
            grid,
            values,
            meta,
            min,
            max,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn meta(&self) -> &FieldMeta {
        &self.meta
    }

    pub fn with_meta(mut self, meta: FieldMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn into_parts(self) -> (GridSpec, Vec<f64>, FieldMeta) {
        (self.grid, self.values, self.meta)
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn value_at(&self, index: &[usize]) -> Result<f64> {
        Ok(self.values[self.grid.flat_index(index)?])
    }

    /// SHA-256 over the little-endian value buffer, lowercase hex.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.values {
            hasher.update(v.to_le_bytes());
        }
        let bytes = hasher.finalize();
        let mut out = String::with_capacity(64);
        for b in bytes.iter() {
            let _ = write!(out, "{b:02x}");
        }
        out
    }

    fn stencil(&self, point: &[f64], policy: OutOfDomain) -> Result<Option<Stencil>> {
        let n = self.grid.dim();
        if point.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: point.len(),
            });
        }
        let mut st = Stencil {
            base: [0; MAX_DIM],
            next: [0; MAX_DIM],
            frac: [0.0; MAX_DIM],
        };
        for d in 0..n {
            let axis = &self.grid.axes[d];
            let mut x = point[d];
            if !x.is_finite() {
                return Err(Error::NonFiniteInput);
            }
            if axis.periodic {
                x = math::wrap(x, axis.lower, axis.upper);
            } else if x < axis.lower || x > axis.upper {
                match policy {
                    OutOfDomain::Saturate => return Ok(None),
                    OutOfDomain::Clamp => x = x.clamp(axis.lower, axis.upper),
                }
            }
            let (i0, i1, t) = axis.locate(x);
            st.base[d] = i0;
            st.next[d] = i1;
            st.frac[d] = t;
        }
        Ok(Some(st))
    }

    /// Multilinear interpolation over the enclosing cell.
    ///
    /// Periodic coordinates wrap before the cell lookup; other coordinates
    /// outside the domain follow `policy`.
    pub fn interpolate(&self, point: &[f64], policy: OutOfDomain) -> Result<f64> {
        let Some(st) = self.stencil(point, policy)? else {
            return Ok(self.max);
        };
        let n = self.grid.dim();
        let strides = &self.grid.strides;
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut offset = 0;
            for d in 0..n {
                if corner >> d & 1 == 1 {
                    w *= st.frac[d];
                    offset += st.next[d] * strides[d];
                } else {
                    w *= 1.0 - st.frac[d];
                    offset += st.base[d] * strides[d];
                }
            }
            // zero weights are skipped so node queries stay exact
            if w != 0.0 {
                acc += w * self.values[offset];
            }
        }
        Ok(acc)
    }

    /// Minimum and maximum over the corners of the cell enclosing `point`,
    /// or `None` when the point saturates.
    pub fn enclosing_range(&self, point: &[f64], policy: OutOfDomain) -> Result<Option<(f64, f64)>> {
        let Some(st) = self.stencil(point, policy)? else {
            return Ok(None);
        };
        let n = self.grid.dim();
        let strides = &self.grid.strides;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for corner in 0..(1usize << n) {
            let offset: usize = (0..n)
                .map(|d| {
                    let i = if corner >> d & 1 == 1 { st.next[d] } else { st.base[d] };
                    i * strides[d]
                })
                .sum();
            let v = self.values[offset];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok(Some((lo, hi)))
    }
}
