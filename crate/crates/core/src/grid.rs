//! Dense real-valued grids used for attention, gradient and saliency maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `height × width` grid of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::GridLength {
                expected: height * width,
                got: data.len(),
            });
        }
        Ok(Self { height, width, data })
    }

    /// Builds a grid from nested rows. Panics on ragged input; meant for fixtures.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(height * width);
        for r in rows {
            assert_eq!(r.as_ref().len(), width, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn ensure_same_shape(&self, other: &Grid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub fn zip_with(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn hadamard(&self, other: &Grid) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `(min, max)`; `None` for an empty grid.
    pub fn min_max(&self) -> Option<(f64, f64)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    pub fn max(&self) -> Option<f64> {
        self.min_max().map(|(_, hi)| hi)
    }

    /// Rescales to `[0, 1]`. A constant grid maps to all zeros.
    pub fn min_max_normalized(&self) -> Self {
        match self.min_max() {
            Some((lo, hi)) if hi > lo => {
                let range = hi - lo;
                self.map(|v| (v - lo) / range)
            }
            _ => Self::zeros(self.height, self.width),
        }
    }

    /// Elementwise mean of a non-empty set of equally shaped grids.
    pub fn mean_of<'a>(grids: impl IntoIterator<Item = &'a Grid>) -> Result<Option<Grid>> {
        let mut iter = grids.into_iter();
        let Some(first) = iter.next() else {
            return Ok(None);
        };
        let mut acc = first.clone();
        let mut count = 1usize;
        for g in iter {
            acc.ensure_same_shape(g)?;
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += *b;
            }
            count += 1;
        }
        let n = count as f64;
        acc.data.iter_mut().for_each(|v| *v /= n);
        Ok(Some(acc))
    }

    /// Bilinear resize with half-pixel centre alignment and edge clamping.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        if (height, width) == self.shape() {
            return self.clone();
        }
        let mut out = Self::zeros(height, width);
        if self.data.is_empty() {
            return out;
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        for r in 0..height {
            let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for c in 0..width {
                let fx = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let top = self.get(y0, x0) * (1.0 - wx) + self.get(y0, x1) * wx;
                let bottom = self.get(y1, x0) * (1.0 - wx) + self.get(y1, x1) * wx;
                out.set(r, c, top * (1.0 - wy) + bottom * wy);
            }
        }
        out
    }

    /// Box filter of side `2 * radius + 1`, window clipped at the borders.
    pub fn box_smooth(&self, radius: usize) -> Self {
        if radius == 0 || self.data.is_empty() {
            return self.clone();
        }
        // offsets from the minimum keep constant regions exactly constant
        let base = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        let mut out = Self::zeros(self.height, self.width);
        for r in 0..self.height {
            let r0 = r.saturating_sub(radius);
            let r1 = (r + radius).min(self.height - 1);
            for c in 0..self.width {
                let c0 = c.saturating_sub(radius);
                let c1 = (c + radius).min(self.width - 1);
                let mut sum = 0.0;
                for rr in r0..=r1 {
                    for cc in c0..=c1 {
                        sum += self.get(rr, cc) - base;
                    }
                }
                let n = ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
                out.set(r, c, base + sum / n);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_identity_and_constant() {
        let g = Grid::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(g.resize_bilinear(2, 2), g);
        let c = Grid::filled(3, 5, 2.5).resize_bilinear(7, 4);
        assert!(c.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn resize_upsample_keeps_range() {
        let g = Grid::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let up = g.resize_bilinear(8, 8);
        let (lo, hi) = up.min_max().unwrap();
        assert!(lo >= 0.0 && hi <= 1.0);
        assert_eq!(up.get(0, 0), 0.0);
        assert_eq!(up.get(0, 7), 1.0);
    }

    #[test]
    fn normalize_constant_is_zero() {
        let g = Grid::filled(2, 2, 7.0);
        assert_eq!(g.min_max_normalized(), Grid::zeros(2, 2));
        let h = Grid::from_rows(&[[1.0, 3.0], [2.0, 5.0]]).min_max_normalized();
        assert_eq!(h, Grid::from_rows(&[[0.0, 0.5], [0.25, 1.0]]));
    }

    #[test]
    fn box_smooth_clips_window() {
        let g = Grid::from_rows(&[[9.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        let s = g.box_smooth(1);
        assert_eq!(s.get(0, 0), 9.0 / 4.0);
        assert_eq!(s.get(1, 1), 1.0);
        assert_eq!(s.get(2, 2), 0.0);
    }

    #[test]
    fn mean_of_rejects_shape_mismatch() {
        let a = Grid::zeros(2, 2);
        let b = Grid::zeros(2, 3);
        assert!(Grid::mean_of([&a, &b]).is_err());
        assert!(Grid::mean_of(std::iter::empty()).unwrap().is_none());
    }
}
