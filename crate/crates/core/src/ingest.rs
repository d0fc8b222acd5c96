//! Mask proposal sources: container files, a deterministic generator and
//! pluggable backends, plus the synthetic scene factory used by tests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{AdapterGate, Capabilities};
use crate::error::{Error, Result};
use crate::eval::GtInstance;
use crate::mask::{rle, BinaryGrid, MaskId, MaskProposal, MaskSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub id: MaskId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rle: Option<Vec<u32>>,
    /// PNG path, relative to the container file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub png: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalContainer {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub masks: Vec<MaskRecord>,
}

impl ProposalContainer {
    pub fn from_mask_set(set: &MaskSet) -> Self {
        let (height, width) = set.image_size();
        Self {
            image_id: set.image_id().to_string(),
            height,
            width,
            masks: set
                .masks()
                .iter()
                .map(|m| MaskRecord {
                    id: m.id(),
                    rle: Some(rle::encode(m.grid())),
                    png: None,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub source: String,
    pub image_id: String,
    pub mask_id: MaskId,
    pub reason: String,
}

/// Append-only record of dropped proposals, safe to share across workers.
#[derive(Debug, Default)]
pub struct RejectionLog(Mutex<Vec<Rejection>>);

impl RejectionLog {
    pub fn push(&self, r: Rejection) {
        log::warn!(
            "rejected mask {} of {} ({}): {}",
            r.mask_id,
            r.image_id,
            r.source,
            r.reason
        );
        self.0.lock().unwrap_or_else(|p| p.into_inner()).push(r);
    }

    pub fn entries(&self) -> Vec<Rejection> {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

fn read_mask_png(path: &Path) -> Result<BinaryGrid> {
    let img = image::open(path)
        .map_err(|source| Error::Png {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(BinaryGrid::from_fn(h as usize, w as usize, |r, c| {
        img.get_pixel(c as u32, r as u32)[0] > 0
    }))
}

/// Decodes a container. Empty or wrongly sized masks are logged and dropped;
/// RLE length mismatches and duplicate ids fail the whole container.
pub fn decode_container(c: &ProposalContainer, base_dir: &Path, source: &str, log: &RejectionLog) -> Result<MaskSet> {
    let size = (c.height, c.width);
    let mut masks = Vec::with_capacity(c.masks.len());
    let mut seen = std::collections::HashSet::new();
    for rec in &c.masks {
        if !seen.insert(rec.id) {
            return Err(Error::DuplicateMaskId(rec.id));
        }
        let reject = |reason: String| {
            log.push(Rejection {
                source: source.to_string(),
                image_id: c.image_id.clone(),
                mask_id: rec.id,
                reason,
            })
        };
        let grid = match (&rec.rle, &rec.png) {
            (Some(runs), _) => rle::decode(runs, c.height, c.width)?,
            (None, Some(png)) => {
                let g = read_mask_png(&base_dir.join(png))?;
                if g.size() != size {
                    reject(format!("mask is {:?}, image is {size:?}", g.size()));
                    continue;
                }
                g
            }
            (None, None) => {
                reject("record has neither rle nor png".into());
                continue;
            }
        };
        match MaskProposal::new(rec.id, grid) {
            Ok(m) => masks.push(m),
            Err(e) => reject(e.to_string()),
        }
    }
    MaskSet::new(c.image_id.clone(), size, masks)
}

pub fn read_container(path: &Path) -> Result<ProposalContainer> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn load_container(path: &Path, log: &RejectionLog) -> Result<MaskSet> {
    let c = read_container(path)?;
    decode_container(
        &c,
        path.parent().unwrap_or(Path::new(".")),
        &path.display().to_string(),
        log,
    )
}

pub fn save_container(path: &Path, set: &MaskSet) -> Result<()> {
    let text = serde_json::to_string_pretty(&ProposalContainer::from_mask_set(set)).expect("container serialises");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Builds a container from `<image_id>_<mask_id>.png` files in `dir`.
pub fn container_from_pngs(dir: &Path, image_id: &str) -> Result<ProposalContainer> {
    let prefix = format!("{image_id}_");
    let mut recs: BTreeMap<MaskId, String> = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(stem) = name.strip_suffix(".png") else {
            continue;
        };
        let Some(id) = stem.strip_prefix(&prefix).and_then(|s| s.parse::<MaskId>().ok()) else {
            continue;
        };
        recs.insert(id, name);
    }
    let (height, width) = match recs.values().next() {
        Some(first) => read_mask_png(&dir.join(first))?.size(),
        None => (0, 0),
    };
    Ok(ProposalContainer {
        image_id: image_id.to_string(),
        height,
        width,
        masks: recs
            .into_iter()
            .map(|(id, png)| MaskRecord {
                id,
                rle: None,
                png: Some(png),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SynthLayout {
    /// Four equal disjoint tiles.
    Grid2x2,
    /// `count` random rectangles.
    Random { count: usize },
}

/// Live proposal network behind the adapter slot.
pub trait ProposalBackend: Send + Sync {
    fn capabilities(&self) -> Capabilities;
    fn propose(&self, image_id: &str, image: &RgbImage) -> std::result::Result<Vec<BinaryGrid>, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProposalSource {
    /// A container file, or a directory of `<image_id>.json` containers.
    File {
        path: PathBuf,
    },
    Synthetic {
        seed: u64,
        layout: SynthLayout,
        height: usize,
        width: usize,
    },
    Adapter {
        name: String,
    },
}

/// Deterministic proposals for tests.
pub fn synthetic_proposals(
    image_id: &str,
    seed: u64,
    layout: SynthLayout,
    height: usize,
    width: usize,
) -> Result<MaskSet> {
    let grids: Vec<BinaryGrid> = match layout {
        SynthLayout::Grid2x2 => {
            let (h2, w2) = (height / 2, width / 2);
            if h2 == 0 || w2 == 0 {
                return Err(Error::Scene(format!("{height}x{width} is too small for a 2x2 grid")));
            }
            [(0, 0), (0, w2), (h2, 0), (h2, w2)]
                .into_iter()
                .map(|(r, c)| BinaryGrid::rect(height, width, r, c, h2, w2))
                .collect()
        }
        SynthLayout::Random { count } => {
            if height == 0 || width == 0 {
                return Err(Error::Scene("empty canvas".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    let h = rng.gen_range(1..=height);
                    let w = rng.gen_range(1..=width);
                    let r = rng.gen_range(0..=height - h);
                    let c = rng.gen_range(0..=width - w);
                    BinaryGrid::rect(height, width, r, c, h, w)
                })
                .collect()
        }
    };
    let masks = grids
        .into_iter()
        .enumerate()
        .map(|(i, g)| MaskProposal::new(i as MaskId, g))
        .collect::<Result<Vec<_>>>()?;
    MaskSet::new(image_id, (height, width), masks)
}

/// Resolves proposal sources, recording rejected masks.
#[derive(Default)]
pub struct ProposalLoader {
    backends: BTreeMap<String, Box<dyn ProposalBackend>>,
    pub log: RejectionLog,
}

impl ProposalLoader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_backend(mut self, name: &str, backend: Box<dyn ProposalBackend>) -> Self {
        self.backends.insert(name.to_string(), backend);
        self
    }

    /// Checks that the source can be resolved before any image is processed.
    pub fn validate(&self, source: &ProposalSource) -> Result<()> {
        match source {
            ProposalSource::File { path } if !path.exists() => Err(Error::Config(format!(
                "proposal path {} does not exist",
                path.display()
            ))),
            ProposalSource::Adapter { name } if !self.backends.contains_key(name) => {
                Err(Error::Config(format!("no proposal backend named `{name}`")))
            }
            _ => Ok(()),
        }
    }

    pub fn load(&self, source: &ProposalSource, image_id: &str, image: Option<&RgbImage>) -> Result<MaskSet> {
        match source {
            ProposalSource::File { path } => {
                let file = if path.is_dir() {
                    path.join(format!("{image_id}.json"))
                } else {
                    path.clone()
                };
                let set = load_container(&file, &self.log)?;
                if set.image_id() != image_id {
                    return Err(Error::Image {
                        image_id: image_id.to_string(),
                        reason: format!("{} holds proposals for {}", file.display(), set.image_id()),
                    });
                }
                Ok(set)
            }
            ProposalSource::Synthetic {
                seed,
                layout,
                height,
                width,
            } => synthetic_proposals(image_id, *seed, *layout, *height, *width),
            ProposalSource::Adapter { name } => {
                let backend = self
                    .backends
                    .get(name)
                    .ok_or_else(|| Error::Config(format!("no proposal backend named `{name}`")))?;
                let image = image.ok_or_else(|| Error::Image {
                    image_id: image_id.to_string(),
                    reason: "proposal backend needs the image".into(),
                })?;
                let size = (image.height() as usize, image.width() as usize);
                let grids = AdapterGate::for_capabilities(backend.capabilities())
                    .run(|| backend.propose(image_id, image))
                    .map_err(|message| Error::Backend { index: 0, message })?;
                let mut masks = Vec::with_capacity(grids.len());
                for (i, g) in grids.into_iter().enumerate() {
                    let id = i as MaskId;
                    let reason = if g.size() != size {
                        format!("mask is {:?}, image is {size:?}", g.size())
                    } else {
                        match MaskProposal::new(id, g) {
                            Ok(m) => {
                                masks.push(m);
                                continue;
                            }
                            Err(e) => e.to_string(),
                        }
                    };
                    self.log.push(Rejection {
                        source: format!("adapter:{name}"),
                        image_id: image_id.to_string(),
                        mask_id: id,
                        reason,
                    });
                }
                MaskSet::new(image_id, size, masks)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub category: String,
    #[serde(default = "default_shape_kind")]
    pub kind: ShapeKind,
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub color: [u8; 3],
}

fn default_shape_kind() -> ShapeKind {
    ShapeKind::Rect
}

impl ShapeSpec {
    pub fn rasterize(&self, height: usize, width: usize) -> BinaryGrid {
        match self.kind {
            ShapeKind::Rect => BinaryGrid::rect(height, width, self.row, self.col, self.height, self.width),
            ShapeKind::Ellipse => {
                let (cy, cx) = (
                    self.row as f64 + self.height as f64 / 2.0,
                    self.col as f64 + self.width as f64 / 2.0,
                );
                let (ry, rx) = (self.height as f64 / 2.0, self.width as f64 / 2.0);
                BinaryGrid::from_fn(height, width, |r, c| {
                    let dy = (r as f64 + 0.5 - cy) / ry;
                    let dx = (c as f64 + 0.5 - cx) / rx;
                    dy * dy + dx * dx <= 1.0
                })
            }
        }
    }
}

/// Rectangle proposed alongside the shapes but matching no ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorSpec {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_background")]
    pub background: [u8; 3],
    /// Amplitude of the seeded per-pixel texture added to the background.
    #[serde(default)]
    pub noise: u8,
    pub shapes: Vec<ShapeSpec>,
    #[serde(default)]
    pub distractors: Vec<DistractorSpec>,
    #[serde(default)]
    pub allow_overlap: bool,
}

fn default_background() -> [u8; 3] {
    [40, 40, 40]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: RgbImage,
    pub proposals: MaskSet,
    pub gt: Vec<GtInstance>,
}

/// Paints the shapes over a seeded background. Proposals are the shapes
/// (ids `0..`) followed by the distractors.
pub fn synth_scene(spec: &SceneSpec) -> Result<Scene> {
    let (h, w) = (spec.height, spec.width);
    if h == 0 || w == 0 {
        return Err(Error::Scene("empty canvas".into()));
    }
    let fits = |row: usize, col: usize, hh: usize, ww: usize| hh > 0 && ww > 0 && row + hh <= h && col + ww <= w;
    let mut grids = Vec::with_capacity(spec.shapes.len());
    let mut painted = BinaryGrid::new(h, w);
    for (i, s) in spec.shapes.iter().enumerate() {
        if !fits(s.row, s.col, s.height, s.width) {
            return Err(Error::Scene(format!("shape {i} does not fit the {h}x{w} canvas")));
        }
        let g = s.rasterize(h, w);
        if g.count() == 0 {
            return Err(Error::Scene(format!("shape {i} covers no pixel")));
        }
        if !spec.allow_overlap && painted.intersection_count(&g)? > 0 {
            return Err(Error::Scene(format!("shape {i} overlaps an earlier shape")));
        }
        painted.union_with(&g)?;
        grids.push(g);
    }
    for (i, d) in spec.distractors.iter().enumerate() {
        if !fits(d.row, d.col, d.height, d.width) {
            return Err(Error::Scene(format!("distractor {i} does not fit the {h}x{w} canvas")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut image = RgbImage::new(w as u32, h as u32);
    for (x, y, px) in image.enumerate_pixels_mut() {
        let jitter = if spec.noise > 0 {
            rng.gen_range(0..=spec.noise)
        } else {
            0
        };
        let bg = spec.background.map(|v| v.saturating_add(jitter));
        *px = Rgb(bg);
        for (s, g) in spec.shapes.iter().zip(&grids) {
            if g.get(y as usize, x as usize) {
                *px = Rgb(s.color);
            }
        }
    }

    let mut masks = Vec::with_capacity(grids.len() + spec.distractors.len());
    for (i, g) in grids.iter().enumerate() {
        masks.push(MaskProposal::new(i as MaskId, g.clone())?);
    }
    for (i, d) in spec.distractors.iter().enumerate() {
        let id = (grids.len() + i) as MaskId;
        masks.push(MaskProposal::new(
            id,
            BinaryGrid::rect(h, w, d.row, d.col, d.height, d.width),
        )?);
    }
    let gt = spec
        .shapes
        .iter()
        .zip(grids)
        .map(|(s, mask)| GtInstance {
            image_id: spec.image_id.clone(),
            category: s.category.clone(),
            mask,
        })
        .collect();
    Ok(Scene {
        image,
        proposals: MaskSet::new(spec.image_id.clone(), (h, w), masks)?,
        gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::proposal_miou;

    fn shape(category: &str, row: usize, col: usize, h: usize, w: usize) -> ShapeSpec {
        ShapeSpec {
            category: category.into(),
            kind: ShapeKind::Rect,
            row,
            col,
            height: h,
            width: w,
            color: [200, 30, 30],
        }
    }

    fn spec(shapes: Vec<ShapeSpec>) -> SceneSpec {
        SceneSpec {
            image_id: "s".into(),
            height: 32,
            width: 32,
            seed: 1,
            background: default_background(),
            noise: 20,
            shapes,
            distractors: vec![],
            allow_overlap: false,
        }
    }

    #[test]
    fn rle_record_decodes_row_major() {
        let c = ProposalContainer {
            image_id: "x".into(),
            height: 4,
            width: 4,
            masks: vec![MaskRecord {
                id: 3,
                rle: Some(vec![6, 4, 6]),
                png: None,
            }],
        };
        let set = decode_container(&c, Path::new("."), "mem", &RejectionLog::default()).unwrap();
        let members: Vec<_> = set.masks()[0].grid().members().map(|(r, c)| r * 4 + c).collect();
        assert_eq!(members, vec![6, 7, 8, 9]);
    }

    #[test]
    fn container_errors_and_rejections() {
        let log = RejectionLog::default();
        let mut c = ProposalContainer {
            image_id: "x".into(),
            height: 2,
            width: 2,
            masks: vec![
                MaskRecord {
                    id: 0,
                    rle: Some(vec![4]),
                    png: None,
                },
                MaskRecord {
                    id: 1,
                    rle: Some(vec![0, 4]),
                    png: None,
                },
            ],
        };
        let set = decode_container(&c, Path::new("."), "mem", &log).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(log.entries().len(), 1);
        assert_eq!(log.entries()[0].mask_id, 0);

        c.masks[1].rle = Some(vec![1, 2]);
        assert!(matches!(
            decode_container(&c, Path::new("."), "mem", &log),
            Err(Error::RleLength { .. })
        ));
        c.masks[1] = MaskRecord {
            id: 0,
            rle: Some(vec![0, 4]),
            png: None,
        };
        assert!(matches!(
            decode_container(&c, Path::new("."), "mem", &log),
            Err(Error::DuplicateMaskId(0))
        ));
    }

    #[test]
    fn grid2x2_tiles() {
        let set = synthetic_proposals("x", 1, SynthLayout::Grid2x2, 32, 32).unwrap();
        assert_eq!(set.len(), 4);
        assert!(set.masks().iter().all(|m| m.area() == 256));
        for a in set.masks() {
            for b in set.masks() {
                if a.id() != b.id() {
                    assert_eq!(a.grid().intersection_count(b.grid()).unwrap(), 0);
                }
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = synthetic_proposals("img", 9, SynthLayout::Random { count: 6 }, 13, 17).unwrap();
        let path = dir.path().join("img.json");
        save_container(&path, &set).unwrap();
        let loader = ProposalLoader::new();
        let src = ProposalSource::File {
            path: dir.path().to_path_buf(),
        };
        loader.validate(&src).unwrap();
        assert_eq!(loader.load(&src, "img", None).unwrap(), set);
        assert!(loader.load(&src, "other", None).is_err());
    }

    #[test]
    fn png_masks_import() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = image::GrayImage::new(5, 4);
        a.put_pixel(1, 2, image::Luma([255]));
        a.save(dir.path().join("img_4.png")).unwrap();
        image::GrayImage::new(5, 4).save(dir.path().join("img_7.png")).unwrap();
        image::GrayImage::new(3, 3)
            .save(dir.path().join("other_1.png"))
            .unwrap();
        let c = container_from_pngs(dir.path(), "img").unwrap();
        assert_eq!((c.height, c.width, c.masks.len()), (4, 5, 2));
        let log = RejectionLog::default();
        let set = decode_container(&c, dir.path(), "dir", &log).unwrap();
        assert_eq!(set.len(), 1);
        assert!(set.masks()[0].contains(2, 1));
        assert_eq!(log.entries()[0].mask_id, 7);
    }

    struct Fixed;
    impl ProposalBackend for Fixed {
        fn capabilities(&self) -> Capabilities {
            Capabilities { concurrent: false }
        }
        fn propose(&self, _: &str, _: &RgbImage) -> std::result::Result<Vec<BinaryGrid>, String> {
            Ok(vec![
                BinaryGrid::rect(4, 4, 0, 0, 2, 2),
                BinaryGrid::new(4, 4),
                BinaryGrid::new(3, 3),
            ])
        }
    }

    #[test]
    fn adapter_source() {
        let loader = ProposalLoader::new().with_backend("fixed", Box::new(Fixed));
        let src = ProposalSource::Adapter { name: "fixed".into() };
        let set = loader.load(&src, "x", Some(&RgbImage::new(4, 4))).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(loader.log.entries().len(), 2);
        assert!(loader
            .validate(&ProposalSource::Adapter { name: "nope".into() })
            .is_err());
    }

    #[test]
    fn single_square_scene_self_evaluates() {
        let scene = synth_scene(&spec(vec![shape("ship", 4, 4, 8, 8)])).unwrap();
        assert_eq!(scene.proposals.len(), 1);
        assert_eq!(scene.gt.len(), 1);
        let props = BTreeMap::from([("s".to_string(), scene.proposals.clone())]);
        assert_eq!(proposal_miou(&scene.gt, &props).unwrap().overall_miou, 1.0);
    }

    #[test]
    fn distractor_best_match_table() {
        let mut s = spec(vec![shape("ship", 0, 0, 8, 8), shape("harbor", 16, 16, 8, 8)]);
        s.distractors.push(DistractorSpec {
            row: 0,
            col: 4,
            height: 8,
            width: 8,
        });
        let scene = synth_scene(&s).unwrap();
        assert_eq!(scene.proposals.len(), 3);
        let d = scene.proposals.get(2).unwrap();
        // 32 shared pixels out of 96
        assert_eq!(scene.gt[0].mask.iou(d.grid()).unwrap(), 1.0 / 3.0);
        assert_eq!(scene.gt[1].mask.iou(d.grid()).unwrap(), 0.0);
        let props = BTreeMap::from([("s".to_string(), scene.proposals.clone())]);
        assert_eq!(proposal_miou(&scene.gt, &props).unwrap().overall_miou, 1.0);
    }

    #[test]
    fn scenes_are_deterministic() {
        let s = spec(vec![shape("ship", 2, 2, 6, 9)]);
        assert_eq!(
            synth_scene(&s).unwrap().image.as_raw(),
            synth_scene(&s).unwrap().image.as_raw()
        );
        let mut other = s.clone();
        other.seed = 2;
        assert_ne!(
            synth_scene(&s).unwrap().image.as_raw(),
            synth_scene(&other).unwrap().image.as_raw()
        );
    }

    #[test]
    fn overlap_and_fit_checked() {
        let s = spec(vec![shape("a", 0, 0, 8, 8), shape("b", 4, 4, 8, 8)]);
        assert!(matches!(synth_scene(&s), Err(Error::Scene(_))));
        let mut ok = s.clone();
        ok.allow_overlap = true;
        assert!(synth_scene(&ok).is_ok());
        assert!(synth_scene(&spec(vec![shape("a", 30, 0, 8, 8)])).is_err());
    }
}
