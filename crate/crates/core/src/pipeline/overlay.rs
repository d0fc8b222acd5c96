//! Side-by-side panels: input, proposals, predictions, with a swatch legend.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::records::{json_files, read_json, write_json, OvssRecord, ResRecord};
use crate::error::{Error, Result};
use crate::ingest::load_container;
use crate::ingest::RejectionLog;
use crate::mask::{rle, BinaryGrid};

const SWATCH: u32 = 12;
const GAP: u32 = 4;
const ALPHA: f64 = 0.55;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub class: String,
    pub color: [u8; 3],
}

/// Stable colour derived from the name alone.
pub fn class_color(name: &str) -> [u8; 3] {
    let d = Sha256::digest(name.as_bytes());
    [64 + d[0] % 192, 64 + d[1] % 192, 64 + d[2] % 192]
}

fn tint(img: &mut RgbImage, x0: u32, mask: &BinaryGrid, color: [u8; 3]) {
    for (r, c) in mask.members() {
        let px = img.get_pixel_mut(x0 + c as u32, r as u32);
        for k in 0..3 {
            px[k] = (f64::from(px[k]) * (1.0 - ALPHA) + f64::from(color[k]) * ALPHA).round() as u8;
        }
    }
}

/// Renders the composite. With no predictions the result is the input unchanged.
pub fn render_overlay(
    image: &RgbImage,
    proposals: &[(u32, BinaryGrid)],
    predictions: &[(String, BinaryGrid)],
) -> (RgbImage, Vec<LegendEntry>) {
    if predictions.is_empty() {
        return (image.clone(), Vec::new());
    }
    let (w, h) = image.dimensions();
    let classes: BTreeMap<&str, [u8; 3]> = predictions.iter().map(|(c, _)| (c.as_str(), class_color(c))).collect();
    let legend_h = SWATCH + 2 * GAP;
    let mut out = RgbImage::from_pixel(3 * w, h + legend_h, Rgb([255, 255, 255]));
    for panel in 0..3 {
        image::imageops::replace(&mut out, image, i64::from(panel * w), 0);
    }
    for (id, m) in proposals {
        tint(&mut out, w, m, class_color(&format!("proposal:{id}")));
    }
    for (class, m) in predictions {
        tint(&mut out, 2 * w, m, classes[class.as_str()]);
    }
    for (i, color) in classes.values().enumerate() {
        let x0 = GAP + i as u32 * (SWATCH + GAP);
        for dy in 0..SWATCH {
            for dx in 0..SWATCH {
                if x0 + dx < out.width() {
                    out.put_pixel(x0 + dx, h + GAP + dy, Rgb(*color));
                }
            }
        }
    }
    let legend = classes
        .into_iter()
        .map(|(class, color)| LegendEntry {
            class: class.to_string(),
            color,
        })
        .collect();
    (out, legend)
}

fn decode(rle_runs: &[u32], h: usize, w: usize) -> Result<BinaryGrid> {
    rle::decode(rle_runs, h, w)
}

/// Renders every OVSS and RES record under `results` into `out`, each with a
/// `<name>.legend.json` sidecar. Returns the written image paths.
pub fn write_overlays(results: &Path, images: &Path, proposals: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let load_image = |id: &str| -> Result<RgbImage> {
        let path = images.join(format!("{id}.png"));
        if !path.is_file() {
            return Err(Error::Image {
                image_id: id.to_string(),
                reason: format!("missing image file {}", path.display()),
            });
        }
        Ok(image::open(&path)
            .map_err(|source| Error::Png { path, source })?
            .to_rgb8())
    };
    let log = RejectionLog::default();
    let load_props = |id: &str, fallback: Vec<(u32, BinaryGrid)>| -> Result<Vec<(u32, BinaryGrid)>> {
        match proposals {
            Some(dir) => {
                let set = load_container(&dir.join(format!("{id}.json")), &log)?;
                Ok(set.masks().iter().map(|m| (m.id(), m.grid().clone())).collect())
            }
            None => Ok(fallback),
        }
    };
    let mut written = Vec::new();
    let mut emit = |name: String,
                    image: RgbImage,
                    props: Vec<(u32, BinaryGrid)>,
                    preds: Vec<(String, BinaryGrid)>|
     -> Result<()> {
        let (img, legend) = render_overlay(&image, &props, &preds);
        let path = out.join(format!("{name}.png"));
        img.save(&path).map_err(|source| Error::Png {
            path: path.clone(),
            source,
        })?;
        write_json(&out.join(format!("{name}.legend.json")), &legend)?;
        written.push(path);
        Ok(())
    };

    let ovss_dir = results.join("ovss");
    if ovss_dir.is_dir() {
        for p in json_files(&ovss_dir)? {
            let rec: OvssRecord = read_json(&p)?;
            let preds = rec
                .segments
                .iter()
                .map(|s| Ok((s.class.clone(), decode(&s.rle, rec.height, rec.width)?)))
                .collect::<Result<Vec<_>>>()?;
            let own = rec
                .segments
                .iter()
                .zip(&preds)
                .map(|(s, (_, g))| (s.mask_id, g.clone()))
                .collect();
            let props = load_props(&rec.image_id, own)?;
            emit(
                format!("ovss_{}", rec.image_id),
                load_image(&rec.image_id)?,
                props,
                preds,
            )?;
        }
    }
    let res_dir = results.join("res");
    if res_dir.is_dir() {
        for p in json_files(&res_dir)? {
            let rec: ResRecord = read_json(&p)?;
            let mask = decode(&rec.rle, rec.height, rec.width)?;
            let preds = if mask.count() > 0 {
                vec![(rec.target_class.clone(), mask)]
            } else {
                Vec::new()
            };
            let own = preds
                .iter()
                .map(|(_, g)| (rec.selected.unwrap_or(0), g.clone()))
                .collect();
            let props = load_props(&rec.image_id, own)?;
            emit(format!("res_{}", rec.id), load_image(&rec.image_id)?, props, preds)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_result_is_plain_copy() {
        let img = RgbImage::from_pixel(5, 4, Rgb([1, 2, 3]));
        let (out, legend) = render_overlay(&img, &[], &[]);
        assert_eq!(out, img);
        assert!(legend.is_empty());
    }

    #[test]
    fn one_mask_one_region() {
        let img = RgbImage::from_pixel(6, 6, Rgb([0, 0, 0]));
        let m = BinaryGrid::rect(6, 6, 1, 1, 2, 3);
        let (out, legend) = render_overlay(&img, &[(0, m.clone())], &[("ship".into(), m)]);
        assert_eq!(legend.len(), 1);
        assert_eq!(out.dimensions(), (18, 6 + SWATCH + 2 * GAP));
        let tinted = (0..6u32)
            .flat_map(|y| (12..18u32).map(move |x| (x, y)))
            .filter(|&(x, y)| out.get_pixel(x, y) != &Rgb([0, 0, 0]))
            .count();
        assert_eq!(tinted, 6);
        assert_eq!(out.get_pixel(0, 0), &Rgb([0, 0, 0]));
    }

    #[test]
    fn palette_is_stable() {
        assert_eq!(class_color("harbor"), class_color("harbor"));
        assert_ne!(class_color("harbor"), class_color("ship"));
        assert!(class_color("bridge").iter().all(|&v| v >= 64));
    }
}
