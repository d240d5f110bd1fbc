//! Rectangular space grids, uniform time grids and grid functions.

use crate::error::{Error, Result};
use nalgebra::DVector;

/// One uniformly spaced axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Axis> {
        if !(lo.is_finite() && hi.is_finite()) || !(lo < hi) || count < 3 {
            return Err(Error::BadAxis { lo, hi, count });
        }
        Ok(Axis { lo, hi, count })
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }

    pub fn coordinate(&self, index: usize) -> f64 {
        self.lo + self.spacing() * index as f64
    }
}

/// Tensor-product rectangular grid, row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid {
    axes: Vec<Axis>,
}

impl SpaceGrid {
    pub fn new(axes: Vec<Axis>) -> Result<SpaceGrid> {
        if axes.is_empty() {
            return Err(Error::BadAxis {
                lo: 0.0,
                hi: 0.0,
                count: 0,
            });
        }
        Ok(SpaceGrid { axes })
    }

    /// Convenience constructor for a 1-d grid.
    pub fn line(lo: f64, hi: f64, count: usize) -> Result<SpaceGrid> {
        SpaceGrid::new(vec![Axis::new(lo, hi, count)?])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Multi-index of a flat index, row-major.
    pub fn unravel(&self, flat: usize) -> Vec<usize> {
        let mut rest = flat;
        let mut idx = vec![0usize; self.dim()];
        for (slot, axis) in idx.iter_mut().zip(self.axes.iter()).rev() {
            *slot = rest % axis.count;
            rest /= axis.count;
        }
        idx
    }

    /// Flat index of a multi-index.
    pub fn ravel(&self, idx: &[usize]) -> usize {
        let mut flat = 0usize;
        for (axis, &i) in self.axes.iter().zip(idx.iter()) {
            flat = flat * axis.count + i;
        }
        flat
    }

    /// Coordinates of a flat index.
    pub fn point(&self, flat: usize) -> DVector<f64> {
        let idx = self.unravel(flat);
        DVector::from_iterator(
            self.dim(),
            idx.iter()
                .enumerate()
                .map(|(axis, &i)| self.axes[axis].coordinate(i)),
        )
    }

    /// Flat indices of the middle third of the grid (per axis), the region
    /// on which boundary-clamp effects are treated as absent.
    pub fn interior_third(&self) -> Vec<usize> {
        let ranges: Vec<(usize, usize)> = self
            .axes
            .iter()
            .map(|a| {
                let skip = a.count / 3;
                (skip, a.count - skip)
            })
            .collect();
        (0..self.len())
            .filter(|&flat| {
                self.unravel(flat)
                    .iter()
                    .zip(ranges.iter())
                    .all(|(&i, &(lo, hi))| i >= lo && i < hi)
            })
            .collect()
    }
}

/// Uniform partition of a time interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, steps: usize) -> Result<TimeGrid> {
        if !(0.0 <= t0 && t0 < horizon) || steps < 1 || !horizon.is_finite() {
            return Err(Error::BadTimeGrid { t0, horizon, steps });
        }
        Ok(TimeGrid { t0, horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.horizon - self.t0) / self.steps as f64
    }

    pub fn time(&self, level: usize) -> f64 {
        self.t0 + self.dt() * level as f64
    }
}

/// Scalar samples over a [`SpaceGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: SpaceGrid,
    values: Vec<f64>,
}

const NODE_SNAP: f64 = 1e-12;

impl GridFunction {
    pub fn new(grid: SpaceGrid, values: Vec<f64>) -> Result<GridFunction> {
        if values.len() != grid.len() {
            return Err(Error::GridSizeMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "grid function values",
            });
        }
        Ok(GridFunction { grid, values })
    }

    /// Samples a closure at every grid point.
    pub fn from_fn<F>(grid: SpaceGrid, mut f: F) -> Result<GridFunction>
    where
        F: FnMut(&DVector<f64>) -> f64,
    {
        let values: Vec<f64> = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        GridFunction::new(grid, values)
    }

    /// Samples a fallible closure at every grid point.
    pub fn try_from_fn<F>(grid: SpaceGrid, mut f: F) -> Result<GridFunction>
    where
        F: FnMut(&DVector<f64>) -> Result<f64>,
    {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            values.push(f(&grid.point(i))?);
        }
        GridFunction::new(grid, values)
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    /// Multilinear interpolation with per-axis clamping to the grid box.
    ///
    /// Fractional positions within `1e-12` of a node are snapped onto it, so
    /// displacements that are whole numbers of cells (up to rounding) read
    /// node values exactly.
    pub fn interpolate(&self, x: &DVector<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.grid.dim());
        let dim = self.grid.dim();
        // per-axis lower index and fractional offset
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        debug_assert!(dim <= 8, "grids above 8 axes are not supported");
        for axis in 0..dim {
            let a = &self.grid.axes[axis];
            let pos = (x[axis] - a.lo) / a.spacing();
            let max_index = (a.count - 1) as f64;
            let pos = pos.clamp(0.0, max_index);
            let mut i = pos.floor() as usize;
            if i >= a.count - 1 {
                i = a.count - 2;
            }
            let mut theta = pos - i as f64;
            if theta < NODE_SNAP {
                theta = 0.0;
            } else if theta > 1.0 - NODE_SNAP {
                theta = 1.0;
            }
            base[axis] = i;
            frac[axis] = theta;
        }
        // accumulate over the 2^dim cell corners
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut idx = [0usize; 8];
            for axis in 0..dim {
                if corner >> axis & 1 == 1 {
                    w *= frac[axis];
                    idx[axis] = base[axis] + 1;
                } else {
                    w *= 1.0 - frac[axis];
                    idx[axis] = base[axis];
                }
            }
            if w != 0.0 {
                acc += w * self.values[self.grid.ravel(&idx[..dim])];
            }
        }
        acc
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}
