//! Binary masks, mask sets and the geometry built on them.

mod crop;
mod mbr;
pub mod rle;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use crop::{crop_patch, CropConfig, CropVariant, DEFAULT_MIN_PATCH_SIDE};
pub use mbr::{compute_mbr, expand_box, hull_corner_points, AxisRect, BufferRatio, OrientedBox};

pub type MaskId = u32;

/// Row-major binary matrix. Pixel `(row, col)` occupies the unit square
/// `[col, col + 1) × [row, row + 1)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryGrid {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::GridLength {
                expected: height * width,
                got: bits.len(),
            });
        }
        Ok(Self { height, width, bits })
    }

    /// Builds a grid from the cells where `f(row, col)` holds.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self { height, width, bits }
    }

    /// Filled rectangle covering rows `row..row + h` and cols `col..col + w`, clipped.
    pub fn rect(height: usize, width: usize, row: usize, col: usize, h: usize, w: usize) -> Self {
        Self::from_fn(height, width, |r, c| r >= row && r < row + h && c >= col && c < col + w)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Iterates member cells as `(row, col)`.
    pub fn members(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    /// Tight axis-aligned bounds `(row0, col0, row1, col1)`, inclusive. `None` when empty.
    pub fn bounds(&self) -> Option<(usize, usize, usize, usize)> {
        self.members().fold(None, |acc, (r, c)| match acc {
            None => Some((r, c, r, c)),
            Some((r0, c0, r1, c1)) => Some((r0.min(r), c0.min(c), r1.max(r), c1.max(c))),
        })
    }

    fn ensure_same_size(&self, other: &Self) -> Result<()> {
        if self.size() != other.size() {
            return Err(Error::DimensionMismatch {
                left: self.size(),
                right: other.size(),
            });
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &Self) -> Result<usize> {
        self.ensure_same_size(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count())
    }

    pub fn union_with(&mut self, other: &Self) -> Result<()> {
        self.ensure_same_size(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// Intersection over union. Two empty grids compare as 0.
    pub fn iou(&self, other: &Self) -> Result<f64> {
        let inter = self.intersection_count(other)?;
        let union = self.count() + other.count() - inter;
        Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
    }
}

/// A class-agnostic proposal. Construction rejects empty grids and caches the area.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskProposal {
    id: MaskId,
    grid: BinaryGrid,
    area: usize,
}

impl MaskProposal {
    pub fn new(id: MaskId, grid: BinaryGrid) -> Result<Self> {
        let area = grid.count();
        if area == 0 {
            return Err(Error::EmptyMask { id });
        }
        Ok(Self { id, grid, area })
    }

    pub fn id(&self) -> MaskId {
        self.id
    }

    pub fn grid(&self) -> &BinaryGrid {
        &self.grid
    }

    pub fn area(&self) -> usize {
        self.area
    }

    pub fn size(&self) -> (usize, usize) {
        self.grid.size()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.grid.get(row, col)
    }
}

/// Ordered proposals of one image. Every member shares `image_size` and ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    image_id: String,
    image_size: (usize, usize),
    masks: Vec<MaskProposal>,
}

impl MaskSet {
    pub fn new(image_id: impl Into<String>, image_size: (usize, usize), masks: Vec<MaskProposal>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(masks.len());
        for m in &masks {
            if m.size() != image_size {
                return Err(Error::DimensionMismatch {
                    left: image_size,
                    right: m.size(),
                });
            }
            if !seen.insert(m.id()) {
                return Err(Error::DuplicateMaskId(m.id()));
            }
        }
        Ok(Self {
            image_id: image_id.into(),
            image_size,
            masks,
        })
    }

    pub fn empty(image_id: impl Into<String>, image_size: (usize, usize)) -> Self {
        Self {
            image_id: image_id.into(),
            image_size,
            masks: Vec::new(),
        }
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn masks(&self) -> &[MaskProposal] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn get(&self, id: MaskId) -> Option<&MaskProposal> {
        self.masks.iter().find(|m| m.id() == id)
    }
}

pub fn mask_iou(a: &MaskProposal, b: &MaskProposal) -> Result<f64> {
    a.grid().iou(b.grid())
}

/// Pixelwise union. An empty list yields an all-zero grid of `size`.
pub fn merge_masks<'a>(size: (usize, usize), masks: impl IntoIterator<Item = &'a BinaryGrid>) -> Result<BinaryGrid> {
    let mut out = BinaryGrid::new(size.0, size.1);
    for m in masks {
        out.union_with(m)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(id: MaskId, grid: BinaryGrid) -> MaskProposal {
        MaskProposal::new(id, grid).unwrap()
    }

    #[test]
    fn empty_mask_rejected() {
        assert!(matches!(
            MaskProposal::new(3, BinaryGrid::new(4, 4)),
            Err(Error::EmptyMask { id: 3 })
        ));
    }

    #[test]
    fn area_cache_matches_grid() {
        let m = mask(1, BinaryGrid::rect(8, 8, 1, 2, 3, 4));
        assert_eq!(m.area(), 12);
        assert_eq!(m.area(), m.grid().count());
    }

    #[test]
    fn mask_set_invariants() {
        let a = mask(1, BinaryGrid::rect(4, 4, 0, 0, 1, 1));
        let b = mask(1, BinaryGrid::rect(4, 4, 1, 1, 1, 1));
        assert!(matches!(
            MaskSet::new("img", (4, 4), vec![a.clone(), b]),
            Err(Error::DuplicateMaskId(1))
        ));
        let c = mask(2, BinaryGrid::rect(5, 4, 1, 1, 1, 1));
        assert!(MaskSet::new("img", (4, 4), vec![a, c]).is_err());
    }

    #[test]
    fn iou_fixtures() {
        let left = mask(1, BinaryGrid::rect(4, 4, 0, 0, 4, 2));
        let top = mask(2, BinaryGrid::rect(4, 4, 0, 0, 2, 4));
        assert_eq!(mask_iou(&left, &left).unwrap(), 1.0);
        assert_eq!(mask_iou(&left, &top).unwrap(), 4.0 / 12.0);
        let right = mask(3, BinaryGrid::rect(4, 4, 0, 2, 4, 2));
        assert_eq!(mask_iou(&left, &right).unwrap(), 0.0);
        let other = mask(4, BinaryGrid::rect(5, 4, 0, 0, 1, 1));
        assert!(matches!(mask_iou(&left, &other), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn merge_fixtures() {
        let a = BinaryGrid::rect(6, 6, 0, 0, 2, 4);
        let b = BinaryGrid::rect(6, 6, 0, 2, 2, 4);
        assert_eq!(merge_masks((6, 6), [&a]).unwrap(), a);
        assert_eq!(merge_masks((6, 6), []).unwrap().count(), 0);
        // areas 8 and 8 overlapping on 4 cells
        assert_eq!(merge_masks((6, 6), [&a, &b]).unwrap().count(), 12);
        let bad = BinaryGrid::new(5, 6);
        assert!(merge_masks((6, 6), [&a, &bad]).is_err());
    }

    fn arb_grid(h: usize, w: usize) -> impl Strategy<Value = BinaryGrid> {
        proptest::collection::vec(any::<bool>(), h * w).prop_map(move |bits| BinaryGrid::from_bits(h, w, bits).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_grid(6, 7), b in arb_grid(6, 7)) {
            let ab = a.iou(&b).unwrap();
            prop_assert_eq!(ab, b.iou(&a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            if a.count() > 0 {
                prop_assert_eq!(a.iou(&a).unwrap(), 1.0);
            }
        }

        #[test]
        fn merge_idempotent_and_order_free(grids in proptest::collection::vec(arb_grid(5, 5), 0..5)) {
            let fwd = merge_masks((5, 5), grids.iter()).unwrap();
            let rev = merge_masks((5, 5), grids.iter().rev()).unwrap();
            prop_assert_eq!(&fwd, &rev);
            let twice = merge_masks((5, 5), grids.iter().chain(grids.iter())).unwrap();
            prop_assert_eq!(&fwd, &twice);
        }
    }
}
