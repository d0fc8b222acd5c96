//! Local alignment: crop each proposal, embed it and match it against the
//! class text bank.

use std::collections::{BTreeMap, HashSet};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::encoder::{check_tau, embed_images, softmax, unit_rows, EmbeddingEncoder, EmbeddingVector, PatchRef};
use crate::error::{Error, Result};
use crate::mask::{crop_patch, BinaryGrid, CropConfig, MaskId, MaskProposal, MaskSet};
use crate::prompt::{ClassId, ClassRef, PromptEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMask {
    pub mask_id: MaskId,
    pub class: ClassRef,
    pub probability: f64,
    /// Softmax over per-class maxima, ordered as [`class_order`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_scores: Option<Vec<f64>>,
}

/// Crops every proposal and embeds the patches, in mask-set order.
pub fn extract_local_features(
    image: &RgbImage,
    mask_set: &MaskSet,
    crop: &CropConfig,
    encoder: &dyn EmbeddingEncoder,
) -> Result<Vec<EmbeddingVector>> {
    let (h, w) = mask_set.image_size();
    if (image.height() as usize, image.width() as usize) != (h, w) {
        return Err(Error::Image {
            image_id: mask_set.image_id().to_string(),
            reason: format!("image is {}x{}, proposals are {h}x{w}", image.height(), image.width()),
        });
    }
    let patches = mask_set
        .masks()
        .iter()
        .map(|m| crop_patch(image, m, crop).map_err(|e| e.for_mask(m.id())))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<PatchRef<'_>> = mask_set
        .masks()
        .iter()
        .zip(&patches)
        .enumerate()
        .map(|(index, (m, patch))| PatchRef {
            image_id: mask_set.image_id(),
            index,
            mask_id: m.id(),
            patch,
        })
        .collect();
    embed_images(&refs, encoder).map_err(|e| match e {
        Error::Backend { index, message } => Error::Backend { index, message }.for_mask(mask_set.masks()[index].id()),
        other => other,
    })
}

/// Distinct classes referenced by `entries`: foreground ids ascending, background last.
pub fn class_order(entries: &[PromptEntry]) -> Vec<ClassRef> {
    let mut v: Vec<ClassRef> = entries.iter().map(|e| e.class).collect();
    v.sort();
    v.dedup();
    v
}

/// Per-class maximum cosine over each class's prompt entries, softmaxed with `tau`.
pub fn classify_masks(
    mask_ids: &[MaskId],
    local_feats: &[EmbeddingVector],
    entries: &[PromptEntry],
    text_feats: &[EmbeddingVector],
    tau: f64,
) -> Result<Vec<LabeledMask>> {
    check_tau(tau)?;
    if mask_ids.len() != local_feats.len() {
        return Err(Error::DimensionMismatch {
            left: (mask_ids.len(), 1),
            right: (local_feats.len(), 1),
        });
    }
    if entries.len() != text_feats.len() {
        return Err(Error::DimensionMismatch {
            left: (entries.len(), 1),
            right: (text_feats.len(), 1),
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyInput("prompt entries"));
    }
    let classes = class_order(entries);
    let slot: BTreeMap<ClassRef, usize> = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let text = unit_rows(text_feats, "text feature")?;
    let dim = text[0].len();

    mask_ids
        .iter()
        .zip(local_feats)
        .map(|(&mask_id, f)| {
            if f.dim() != dim {
                return Err(Error::VectorDim {
                    expected: dim,
                    got: f.dim(),
                }
                .for_mask(mask_id));
            }
            let u = f
                .unit()
                .ok_or(Error::ZeroNorm {
                    what: "image feature",
                    row: mask_id as usize,
                })
                .map_err(|e| e.for_mask(mask_id))?;
            let mut best = vec![f64::NEG_INFINITY; classes.len()];
            for (e, t) in entries.iter().zip(&text) {
                let cos: f64 = u.iter().zip(t).map(|(a, b)| a * b).sum();
                let s = &mut best[slot[&e.class]];
                *s = s.max(cos);
            }
            let probs = softmax(&best, tau);
            let k = crate::encoder::argmax(&probs);
            Ok(LabeledMask {
                mask_id,
                class: classes[k],
                probability: probs[k],
                per_class_scores: Some(probs),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub mask: MaskProposal,
    pub class: ClassId,
    pub probability: f64,
}

/// Foreground-labelled proposals of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub image_id: String,
    pub image_size: (usize, usize),
    pub segments: Vec<Segment>,
}

impl SegmentationResult {
    pub fn empty(image_id: impl Into<String>, image_size: (usize, usize)) -> Self {
        Self {
            image_id: image_id.into(),
            image_size,
            segments: Vec::new(),
        }
    }

    pub fn label_of(&self, mask_id: MaskId) -> ClassRef {
        self.segments
            .iter()
            .find(|s| s.mask.id() == mask_id)
            .map_or(ClassRef::Background, |s| ClassRef::Class(s.class))
    }

    pub fn classes(&self) -> Vec<ClassId> {
        let mut v: Vec<ClassId> = self.segments.iter().map(|s| s.class).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Union of all segments labelled `class`.
    pub fn class_mask(&self, class: ClassId) -> BinaryGrid {
        let (h, w) = self.image_size;
        let mut out = BinaryGrid::new(h, w);
        for s in self.segments.iter().filter(|s| s.class == class) {
            out.union_with(s.mask.grid()).expect("segments share the image size");
        }
        out
    }

    /// Pixel labels; a contested pixel goes to the more probable segment, then the lower mask id.
    pub fn label_map(&self) -> Vec<Option<ClassId>> {
        let (h, w) = self.image_size;
        let mut best: Vec<Option<(f64, MaskId, ClassId)>> = vec![None; h * w];
        for s in &self.segments {
            for (r, c) in s.mask.grid().members() {
                let cell = &mut best[r * w + c];
                let wins = match cell {
                    None => true,
                    Some((p, id, _)) => s.probability > *p || (s.probability == *p && s.mask.id() < *id),
                };
                if wins {
                    *cell = Some((s.probability, s.mask.id(), s.class));
                }
            }
        }
        best.into_iter().map(|b| b.map(|(_, _, c)| c)).collect()
    }
}

/// Drops background-labelled proposals and attaches classes to the rest.
pub fn assemble_ovss(mask_set: &MaskSet, labels: &[LabeledMask]) -> Result<SegmentationResult> {
    let mut by_id = BTreeMap::new();
    for l in labels {
        if by_id.insert(l.mask_id, l).is_some() {
            return Err(Error::LabelCoverage(format!("mask {} labelled twice", l.mask_id)));
        }
    }
    let ids: HashSet<MaskId> = mask_set.masks().iter().map(MaskProposal::id).collect();
    if let Some(extra) = by_id.keys().find(|id| !ids.contains(id)) {
        return Err(Error::LabelCoverage(format!("label for unknown mask {extra}")));
    }
    let mut segments = Vec::new();
    for m in mask_set.masks() {
        let l = by_id
            .get(&m.id())
            .ok_or_else(|| Error::LabelCoverage(format!("mask {} has no label", m.id())))?;
        if let ClassRef::Class(class) = l.class {
            segments.push(Segment {
                mask: m.clone(),
                class,
                probability: l.probability,
            });
        }
    }
    Ok(SegmentationResult {
        image_id: mask_set.image_id().to_string(),
        image_size: mask_set.image_size(),
        segments,
    })
}
