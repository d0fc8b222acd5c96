//! On-disk record formats: results, annotations and expressions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::GtInstance;
use crate::mask::{rle, BinaryGrid, CropConfig, MaskId};
use crate::saliency::{FusionParams, PeakSet};
use crate::select::{CandidatePool, SelectionPath};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("records serialise");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// `*.json` files of a directory in name order.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub mask_id: MaskId,
    pub class: String,
    pub probability: f64,
    pub rle: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvssRecord {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub crop: CropConfig,
    pub template: String,
    pub tau: f64,
    pub proposals: usize,
    pub segments: Vec<SegmentRecord>,
}

impl OvssRecord {
    /// Predicted masks grouped by class name.
    pub fn class_masks(&self) -> Result<BTreeMap<String, Vec<BinaryGrid>>> {
        let mut out: BTreeMap<String, Vec<BinaryGrid>> = BTreeMap::new();
        for s in &self.segments {
            out.entry(s.class.clone())
                .or_default()
                .push(rle::decode(&s.rle, self.height, self.width)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoupledRecord {
    #[serde(rename = "ref")]
    pub ref_words: Vec<String>,
    pub cls: Vec<String>,
    #[serde(rename = "mod")]
    pub mod_words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResRecord {
    pub id: String,
    pub image_id: String,
    pub text: String,
    pub height: usize,
    pub width: usize,
    pub decoupled: DecoupledRecord,
    pub target_class: String,
    pub fusion: FusionParams,
    pub peaks: PeakSet,
    /// `proposal` or `heatmap`.
    pub mode: String,
    pub selected: Option<MaskId>,
    pub score: Option<f64>,
    pub label: Option<String>,
    pub pool: Option<CandidatePool>,
    pub path: Option<SelectionPath>,
    pub rle: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub category: String,
    pub rle: Vec<u32>,
}

/// Ground truth of one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtContainer {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub instances: Vec<InstanceRecord>,
}

impl GtContainer {
    pub fn from_instances(image_id: &str, size: (usize, usize), gt: &[GtInstance]) -> Self {
        Self {
            image_id: image_id.to_string(),
            height: size.0,
            width: size.1,
            instances: gt
                .iter()
                .map(|g| InstanceRecord {
                    category: g.category.clone(),
                    rle: rle::encode(&g.mask),
                })
                .collect(),
        }
    }

    pub fn instances(&self) -> Result<Vec<GtInstance>> {
        self.instances
            .iter()
            .map(|i| {
                Ok(GtInstance {
                    image_id: self.image_id.clone(),
                    category: i.category.clone(),
                    mask: rle::decode(&i.rle, self.height, self.width)?,
                })
            })
            .collect()
    }
}

/// A directory of per-image containers, or one file holding a list.
pub fn load_gt(path: &Path) -> Result<Vec<GtContainer>> {
    if path.is_dir() {
        json_files(path)?.iter().map(|p| read_json(p)).collect()
    } else {
        read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpressionRecord {
    pub id: String,
    pub image_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_rle: Option<Vec<u32>>,
}

pub fn load_expressions(path: &Path) -> Result<Vec<ExpressionRecord>> {
    let v: Vec<ExpressionRecord> = read_json(path)?;
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = v.iter().find(|e| !seen.insert(e.id.as_str())) {
        return Err(Error::Config(format!("duplicate expression id `{}`", dup.id)));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub item: String,
    pub error: String,
}
