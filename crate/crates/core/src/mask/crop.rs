use std::fmt;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::mbr::{compute_mbr, expand_box, AxisRect, BufferRatio, OrientedBox};
use super::MaskProposal;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_PATCH_SIDE: u32 = 16;

/// How a proposal is cut out of its image before encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropVariant {
    /// Full frame, pixels outside the mask zeroed.
    MaskOnly,
    /// Axis-aligned bounding box.
    Bb,
    /// Axis-aligned bounding box, pixels outside the mask zeroed.
    BbMask,
    /// Axis-aligned bounding box grown by the buffer ratio.
    BbBuffer,
    /// Minimum bounding rectangle, resampled upright.
    Mbr,
    /// Minimum bounding rectangle grown by the buffer ratio, resampled upright.
    MbrBuffer,
}

impl CropVariant {
    pub const ALL: [CropVariant; 6] = [
        CropVariant::MaskOnly,
        CropVariant::BbMask,
        CropVariant::Bb,
        CropVariant::BbBuffer,
        CropVariant::Mbr,
        CropVariant::MbrBuffer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CropVariant::MaskOnly => "mask_only",
            CropVariant::Bb => "bb",
            CropVariant::BbMask => "bb_mask",
            CropVariant::BbBuffer => "bb_buffer",
            CropVariant::Mbr => "mbr",
            CropVariant::MbrBuffer => "mbr_buffer",
        }
    }
}

impl fmt::Display for CropVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CropVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CropVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::UnknownCropVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropConfig {
    #[serde(default = "default_variant")]
    pub variant: CropVariant,
    #[serde(default)]
    pub ratio: BufferRatio,
    #[serde(default = "default_min_side")]
    pub min_side: u32,
}

fn default_variant() -> CropVariant {
    CropVariant::MbrBuffer
}

fn default_min_side() -> u32 {
    DEFAULT_MIN_PATCH_SIDE
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            variant: CropVariant::MbrBuffer,
            ratio: BufferRatio::default(),
            min_side: DEFAULT_MIN_PATCH_SIDE,
        }
    }
}

/// Cuts the patch for one proposal. `image` must match the mask's size.
pub fn crop_patch(image: &RgbImage, mask: &MaskProposal, cfg: &CropConfig) -> Result<RgbImage> {
    let (h, w) = mask.size();
    if (image.height() as usize, image.width() as usize) != (h, w) {
        return Err(Error::DimensionMismatch {
            left: (image.height() as usize, image.width() as usize),
            right: (h, w),
        });
    }
    let patch = match cfg.variant {
        CropVariant::MaskOnly => {
            let mut out = image.clone();
            for (x, y, px) in out.enumerate_pixels_mut() {
                if !mask.contains(y as usize, x as usize) {
                    *px = Rgb([0, 0, 0]);
                }
            }
            out
        }
        CropVariant::Bb => crop_rect(image, AxisRect::of_mask(mask), None),
        CropVariant::BbMask => crop_rect(image, AxisRect::of_mask(mask), Some(mask)),
        CropVariant::BbBuffer => crop_rect(image, AxisRect::of_mask(mask).expand(cfg.ratio), None),
        CropVariant::Mbr => sample_box(image, &compute_mbr(mask)),
        CropVariant::MbrBuffer => sample_box(image, &expand_box(&compute_mbr(mask), cfg.ratio)),
    };
    Ok(pad_to_min(patch, cfg.min_side))
}

fn crop_rect(image: &RgbImage, rect: AxisRect, mask: Option<&MaskProposal>) -> RgbImage {
    let r = rect.clip(image.height() as usize, image.width() as usize);
    let mut out = RgbImage::new(r.width() as u32, r.height() as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let (sx, sy) = (r.x0 as u32 + x, r.y0 as u32 + y);
        let keep = mask.is_none_or(|m| m.contains(sy as usize, sx as usize));
        if keep {
            *px = *image.get_pixel(sx, sy);
        }
    }
    out
}

/// Resamples the oriented box upright with bilinear interpolation. Samples
/// falling outside the image stay zero.
fn sample_box(image: &RgbImage, b: &OrientedBox) -> RgbImage {
    let out_w = (b.width.round() as u32).max(1);
    let out_h = (b.height.round() as u32).max(1);
    let ((ux, uy), (vx, vy)) = b.axes();
    let (iw, ih) = (image.width() as f64, image.height() as f64);
    let mut out = RgbImage::new(out_w, out_h);
    for (i, j, px) in out.enumerate_pixels_mut() {
        let a = ((i as f64 + 0.5) / out_w as f64 - 0.5) * b.width;
        let c = ((j as f64 + 0.5) / out_h as f64 - 0.5) * b.height;
        let x = b.center.0 + a * ux + c * vx;
        let y = b.center.1 + a * uy + c * vy;
        if x < 0.0 || y < 0.0 || x >= iw || y >= ih {
            continue;
        }
        *px = bilinear(image, x - 0.5, y - 0.5);
    }
    out
}

/// Samples at continuous pixel-index coordinates, clamping to the border.
fn bilinear(image: &RgbImage, fx: f64, fy: f64) -> Rgb<u8> {
    let max_x = (image.width() - 1) as f64;
    let max_y = (image.height() - 1) as f64;
    let fx = fx.clamp(0.0, max_x);
    let fy = fy.clamp(0.0, max_y);
    let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
    let x1 = (x0 + 1).min(image.width() - 1);
    let y1 = (y0 + 1).min(image.height() - 1);
    let (wx, wy) = (fx - x0 as f64, fy - y0 as f64);
    let p = |x, y| image.get_pixel(x, y).0;
    let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
    let mut outpx = [0u8; 3];
    for ch in 0..3 {
        let top = a[ch] as f64 * (1.0 - wx) + b[ch] as f64 * wx;
        let bot = c[ch] as f64 * (1.0 - wx) + d[ch] as f64 * wx;
        outpx[ch] = (top * (1.0 - wy) + bot * wy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(outpx)
}

/// Zero-pads (centred) so neither side is shorter than `min_side`.
fn pad_to_min(patch: RgbImage, min_side: u32) -> RgbImage {
    let (w, h) = patch.dimensions();
    if w >= min_side && h >= min_side {
        return patch;
    }
    let (nw, nh) = (w.max(min_side), h.max(min_side));
    let (ox, oy) = ((nw - w) / 2, (nh - h) / 2);
    let mut out = RgbImage::new(nw, nh);
    for (x, y, px) in patch.enumerate_pixels() {
        out.put_pixel(x + ox, y + oy, *px);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryGrid;

    fn gradient_image(h: u32, w: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 250) as u8 + 1, (y * 5 % 250) as u8 + 1, 9]))
    }

    fn cfg(variant: CropVariant, ratio: f64, min_side: u32) -> CropConfig {
        CropConfig {
            variant,
            ratio: BufferRatio::new(ratio).unwrap(),
            min_side,
        }
    }

    #[test]
    fn mask_only_zeroes_outside() {
        let img = gradient_image(20, 30);
        let m = MaskProposal::new(1, BinaryGrid::rect(20, 30, 3, 4, 5, 6)).unwrap();
        let p = crop_patch(&img, &m, &cfg(CropVariant::MaskOnly, 0.0, 1)).unwrap();
        assert_eq!(p.dimensions(), (30, 20));
        for (x, y, px) in p.enumerate_pixels() {
            if m.contains(y as usize, x as usize) {
                assert_eq!(px, img.get_pixel(x, y));
            } else {
                assert_eq!(px.0, [0, 0, 0]);
            }
        }
    }

    #[test]
    fn bb_matches_bounding_box_and_ignores_ratio() {
        let img = gradient_image(40, 40);
        let grid = BinaryGrid::from_fn(40, 40, |r, c| (5..25).contains(&r) && (c == 3 || c == 20));
        let m = MaskProposal::new(1, grid).unwrap();
        let p = crop_patch(&img, &m, &cfg(CropVariant::Bb, 0.4, 1)).unwrap();
        assert_eq!(p.dimensions(), (18, 20));
        // context pixels between the two strokes survive
        assert_eq!(p.get_pixel(5, 5), img.get_pixel(8, 10));
        let pm = crop_patch(&img, &m, &cfg(CropVariant::BbMask, 0.0, 1)).unwrap();
        assert_eq!(pm.get_pixel(5, 5).0, [0, 0, 0]);
        assert_eq!(pm.get_pixel(0, 0), img.get_pixel(3, 5));
    }

    #[test]
    fn bb_buffer_clipped_at_edges() {
        let img = gradient_image(20, 20);
        let m = MaskProposal::new(1, BinaryGrid::rect(20, 20, 0, 0, 10, 10)).unwrap();
        let p = crop_patch(&img, &m, &cfg(CropVariant::BbBuffer, 0.1, 1)).unwrap();
        // [-1, 11) clipped to [0, 11)
        assert_eq!(p.dimensions(), (11, 11));
    }

    #[test]
    fn mbr_of_axis_rect_is_exact_copy() {
        let img = gradient_image(30, 30);
        let m = MaskProposal::new(1, BinaryGrid::rect(30, 30, 4, 6, 12, 8)).unwrap();
        let a = crop_patch(&img, &m, &cfg(CropVariant::Mbr, 0.0, 1)).unwrap();
        let b = crop_patch(&img, &m, &cfg(CropVariant::Bb, 0.0, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_box_padded() {
        let img = gradient_image(10, 10);
        let m = MaskProposal::new(1, BinaryGrid::rect(10, 10, 4, 4, 1, 1)).unwrap();
        for v in CropVariant::ALL {
            let p = crop_patch(&img, &m, &cfg(v, 0.1, 16)).unwrap();
            assert!(p.width() >= 16 && p.height() >= 16, "{v}");
        }
        let p = crop_patch(&img, &m, &cfg(CropVariant::Bb, 0.0, 16)).unwrap();
        assert_eq!(p.get_pixel(7, 7), img.get_pixel(4, 4));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in CropVariant::ALL {
            assert_eq!(v.as_str().parse::<CropVariant>().unwrap(), v);
        }
        assert!("circle".parse::<CropVariant>().is_err());
    }
}
