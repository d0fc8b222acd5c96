//! Minimum-area oriented bounding rectangles.
//!
//! Member pixels are treated as unit cells, so the hull is built from pixel
//! corner points on the integer lattice. All caliper bookkeeping and area
//! comparisons run in exact integer arithmetic; floats only appear when the
//! winning box is converted to centre/size/angle form.

use serde::{Deserialize, Serialize};

use super::{BinaryGrid, MaskProposal};
use crate::error::{Error, Result};

/// Oriented rectangle in pixel coordinates (x right, y down).
///
/// `width` runs along the direction `angle` (degrees, measured from +x
/// towards +y), `height` along its perpendicular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: (f64, f64),
    pub width: f64,
    pub height: f64,
    pub angle: f64,
}

impl OrientedBox {
    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Unit vectors along the width and height axes.
    pub fn axes(&self) -> ((f64, f64), (f64, f64)) {
        let (s, c) = self.angle.to_radians().sin_cos();
        ((c, s), (-s, c))
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let ((ux, uy), (vx, vy)) = self.axes();
        let (hw, hh) = (self.width / 2.0, self.height / 2.0);
        let (cx, cy) = self.center;
        [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
            .map(|(a, b)| (cx + a * hw * ux + b * hh * vx, cy + a * hw * uy + b * hh * vy))
    }

    /// True when `(x, y)` lies inside or within `tol` of the boundary.
    pub fn contains(&self, x: f64, y: f64, tol: f64) -> bool {
        let ((ux, uy), (vx, vy)) = self.axes();
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let a = dx * ux + dy * uy;
        let b = dx * vx + dy * vy;
        a.abs() <= self.width / 2.0 + tol && b.abs() <= self.height / 2.0 + tol
    }
}

/// Proportional buffer: each side grows by `ratio` of the box dimension.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct BufferRatio(f64);

impl BufferRatio {
    pub const ZERO: BufferRatio = BufferRatio(0.0);

    pub fn new(ratio: f64) -> Result<Self> {
        if ratio.is_finite() && ratio >= 0.0 {
            Ok(Self(ratio))
        } else {
            Err(Error::InvalidRatio(ratio))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for BufferRatio {
    fn default() -> Self {
        Self(0.1)
    }
}

impl TryFrom<f64> for BufferRatio {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BufferRatio> for f64 {
    fn from(r: BufferRatio) -> f64 {
        r.0
    }
}

/// Scales both dimensions by `1 + 2 * ratio` about the same centre and angle.
pub fn expand_box(b: &OrientedBox, ratio: BufferRatio) -> OrientedBox {
    let k = 1.0 + 2.0 * ratio.get();
    OrientedBox {
        width: b.width * k,
        height: b.height * k,
        ..*b
    }
}

/// Integer pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisRect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl AxisRect {
    pub fn of_mask(mask: &MaskProposal) -> Self {
        let (r0, c0, r1, c1) = mask.grid().bounds().expect("mask proposals are non-empty");
        Self {
            x0: c0 as i64,
            y0: r0 as i64,
            x1: c1 as i64 + 1,
            y1: r1 as i64 + 1,
        }
    }

    pub fn width(&self) -> i64 {
        (self.x1 - self.x0).max(0)
    }

    pub fn height(&self) -> i64 {
        (self.y1 - self.y0).max(0)
    }

    /// Same centre, dimensions scaled by `1 + 2 * ratio`, rounded to whole pixels.
    pub fn expand(&self, ratio: BufferRatio) -> Self {
        let cx = (self.x0 + self.x1) as f64 / 2.0;
        let cy = (self.y0 + self.y1) as f64 / 2.0;
        let k = 1.0 + 2.0 * ratio.get();
        let hw = self.width() as f64 * k / 2.0;
        let hh = self.height() as f64 * k / 2.0;
        Self {
            x0: (cx - hw).round() as i64,
            y0: (cy - hh).round() as i64,
            x1: (cx + hw).round() as i64,
            y1: (cy + hh).round() as i64,
        }
    }

    /// Intersection with `[0, width) × [0, height)`.
    pub fn clip(&self, height: usize, width: usize) -> Self {
        Self {
            x0: self.x0.clamp(0, width as i64),
            y0: self.y0.clamp(0, height as i64),
            x1: self.x1.clamp(0, width as i64),
            y1: self.y1.clamp(0, height as i64),
        }
    }
}

type Pt = (i64, i64);

fn cross(o: Pt, a: Pt, b: Pt) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull (counter-clockwise in x-right/y-up terms, collinear points
/// dropped) of the member cells' corner points.
pub fn hull_corner_points(grid: &BinaryGrid) -> Vec<Pt> {
    // Only the extreme cells of each row can contribute hull corners.
    let mut pts = Vec::new();
    for r in 0..grid.height() {
        let mut lo = None;
        let mut hi = None;
        for c in 0..grid.width() {
            if grid.get(r, c) {
                lo.get_or_insert(c);
                hi = Some(c);
            }
        }
        if let (Some(lo), Some(hi)) = (lo, hi) {
            let (r, lo, hi) = (r as i64, lo as i64, hi as i64 + 1);
            pts.extend([(lo, r), (lo, r + 1), (hi, r), (hi, r + 1)]);
        }
    }
    convex_hull(pts)
}

fn convex_hull(mut pts: Vec<Pt>) -> Vec<Pt> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Pt> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Pt> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn dot(a: Pt, b: Pt) -> i64 {
    a.0 * b.0 + a.1 * b.1
}

/// Exact candidate produced for one hull edge. The box spans `du × dv` in
/// units of the (unnormalised) edge vector `e`, so its area is
/// `du * dv / |e|²`.
struct Candidate {
    e: Pt,
    u_min: i64,
    u_max: i64,
    v_min: i64,
    v_max: i64,
    angle: f64,
}

impl Candidate {
    fn area_num(&self) -> i128 {
        i128::from(self.u_max - self.u_min) * i128::from(self.v_max - self.v_min)
    }

    fn area_den(&self) -> i128 {
        i128::from(dot(self.e, self.e))
    }

    /// Orders by exact area, then by normalised angle.
    fn better_than(&self, other: &Candidate) -> bool {
        let lhs = self.area_num() * other.area_den();
        let rhs = other.area_num() * self.area_den();
        lhs < rhs || (lhs == rhs && self.angle < other.angle)
    }
}

/// Normalised angle in `[0, 90)` and whether width/height must be swapped.
fn normalise_angle(e: Pt) -> (f64, bool) {
    let mut deg = (e.1 as f64).atan2(e.0 as f64).to_degrees();
    if (deg - deg.round()).abs() < 1e-9 {
        deg = deg.round();
    }
    deg = deg.rem_euclid(180.0);
    if deg >= 90.0 {
        (deg - 90.0, true)
    } else {
        (deg, false)
    }
}

/// Minimum-area enclosing rectangle of the mask's cells via rotating calipers.
///
/// Area ties resolve toward the smaller angle; the reported angle lies in `[0, 90)`.
pub fn compute_mbr(mask: &MaskProposal) -> OrientedBox {
    let hull = hull_corner_points(mask.grid());
    let n = hull.len();
    debug_assert!(n >= 4, "a unit cell alone has four corners");
    let next = |i: usize| (i + 1) % n;

    let edge = |i: usize| -> Pt {
        let (a, b) = (hull[i], hull[next(i)]);
        (b.0 - a.0, b.1 - a.1)
    };
    let e0 = edge(0);
    let n0 = (-e0.1, e0.0);
    let argmax = |f: &dyn Fn(Pt) -> i64| (0..n).max_by_key(|&i| f(hull[i])).unwrap();
    let mut j = argmax(&|p| dot(p, e0));
    let mut k = argmax(&|p| dot(p, n0));
    let mut l = argmax(&|p| -dot(p, e0));

    let mut best: Option<Candidate> = None;
    for i in 0..n {
        let e = edge(i);
        let nv = (-e.1, e.0);
        while dot(hull[next(j)], e) > dot(hull[j], e) {
            j = next(j);
        }
        while dot(hull[next(k)], nv) > dot(hull[k], nv) {
            k = next(k);
        }
        while dot(hull[next(l)], e) < dot(hull[l], e) {
            l = next(l);
        }
        let (angle, _) = normalise_angle(e);
        let cand = Candidate {
            e,
            u_min: dot(hull[l], e),
            u_max: dot(hull[j], e),
            v_min: dot(hull[i], nv),
            v_max: dot(hull[k], nv),
            angle,
        };
        if best.as_ref().is_none_or(|b| cand.better_than(b)) {
            best = Some(cand);
        }
    }
    let best = best.expect("hull has at least one edge");

    let len = (dot(best.e, best.e) as f64).sqrt();
    let u = (best.e.0 as f64 / len, best.e.1 as f64 / len);
    let v = (-u.1, u.0);
    let mid_u = (best.u_min + best.u_max) as f64 / 2.0 / len;
    let mid_v = (best.v_min + best.v_max) as f64 / 2.0 / len;
    let along = (best.u_max - best.u_min) as f64 / len;
    let across = (best.v_max - best.v_min) as f64 / len;
    let (angle, swap) = normalise_angle(best.e);
    let (width, height) = if swap { (across, along) } else { (along, across) };
    OrientedBox {
        center: (mid_u * u.0 + mid_v * v.0, mid_u * u.1 + mid_v * v.1),
        width,
        height,
        angle,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryGrid;

    fn mask(grid: BinaryGrid) -> MaskProposal {
        MaskProposal::new(1, grid).unwrap()
    }

    fn diamond(radius: i64) -> MaskProposal {
        let side = (2 * radius + 1) as usize;
        mask(BinaryGrid::from_fn(side + 4, side + 4, |r, c| {
            (r as i64 - radius - 2).abs() + (c as i64 - radius - 2).abs() <= radius
        }))
    }

    #[test]
    fn axis_aligned_rectangle_is_its_own_mbr() {
        let b = compute_mbr(&mask(BinaryGrid::rect(40, 40, 5, 3, 20, 10)));
        assert_eq!(b.angle, 0.0);
        assert!((b.width - 10.0).abs() < 1e-9);
        assert!((b.height - 20.0).abs() < 1e-9);
        assert!((b.center.0 - 8.0).abs() < 1e-9);
        assert!((b.center.1 - 15.0).abs() < 1e-9);
    }

    #[test]
    fn single_pixel_is_unit_box() {
        let b = compute_mbr(&mask(BinaryGrid::rect(10, 10, 5, 5, 1, 1)));
        assert_eq!((b.width, b.height, b.angle), (1.0, 1.0, 0.0));
        assert_eq!(b.center, (5.5, 5.5));
    }

    #[test]
    fn diamond_rotates_to_45_degrees() {
        let m = diamond(10);
        let b = compute_mbr(&m);
        assert!((b.angle - 45.0).abs() <= 1.0, "angle {}", b.angle);
        let (r0, c0, r1, c1) = m.grid().bounds().unwrap();
        let aabb = ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
        assert!(b.area() < aabb);
        // corner hull spans 22 / sqrt(2) in both diagonal directions
        assert!((b.area() - 242.0).abs() < 1e-9);
    }

    #[test]
    fn members_inside_box() {
        let m = diamond(6);
        let b = compute_mbr(&m);
        for (r, c) in m.grid().members() {
            assert!(b.contains(c as f64 + 0.5, r as f64 + 0.5, 1e-9));
        }
    }

    #[test]
    fn expand_box_formula() {
        let b = OrientedBox {
            center: (3.0, 4.0),
            width: 100.0,
            height: 50.0,
            angle: 30.0,
        };
        assert_eq!(expand_box(&b, BufferRatio::ZERO), b);
        let e = expand_box(&b, BufferRatio::new(0.1).unwrap());
        assert!((e.width - 120.0).abs() < 1e-9 && (e.height - 60.0).abs() < 1e-9);
        assert_eq!((e.center, e.angle), (b.center, b.angle));
    }

    #[test]
    fn negative_ratio_rejected() {
        assert!(BufferRatio::new(-0.1).is_err());
        assert!(BufferRatio::new(f64::NAN).is_err());
    }

    #[test]
    fn expansion_is_monotone() {
        let b = compute_mbr(&diamond(5));
        for (r1, r2) in [(0.0, 0.05), (0.1, 0.3), (0.2, 1.0)] {
            let small = expand_box(&b, BufferRatio::new(r1).unwrap());
            let big = expand_box(&b, BufferRatio::new(r2).unwrap());
            for (x, y) in small.corners() {
                assert!(big.contains(x, y, 1e-9));
            }
        }
    }

    #[test]
    fn axis_rect_expand_and_clip() {
        let r = AxisRect {
            x0: 0,
            y0: 0,
            x1: 10,
            y1: 20,
        };
        let e = r.expand(BufferRatio::new(0.1).unwrap());
        assert_eq!((e.x0, e.y0, e.x1, e.y1), (-1, -2, 11, 22));
        let c = e.clip(21, 30);
        assert_eq!((c.x0, c.y0, c.x1, c.y1), (0, 0, 11, 21));
        assert_eq!(r.expand(BufferRatio::ZERO), r);
    }
}
