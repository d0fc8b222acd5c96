//! End-to-end OVSS and RES runs over a dataset directory.

mod ablate;
mod config;
mod evaluate;
mod overlay;
pub mod records;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    embed_texts, token_saliency, EmbeddingEncoder, EmbeddingVector, SaliencyEncoder, TensorDirAdapter,
};
use crate::error::{Error, Result};
use crate::eval::{image_level_miou, split_report, EvalReport, ImageCategoryMasks};
use crate::grid::Grid;
use crate::ingest::{ProposalLoader, Rejection};
use crate::local::{assemble_ovss, classify_masks, extract_local_features, SegmentationResult};
use crate::mask::{rle, BinaryGrid, MaskProposal, MaskSet};
use crate::prompt::{render_prompts, ClassId, ClassTextBank, PromptEntry};
use crate::saliency::{cross_scale_map, find_local_maxima, Refinement};
use crate::select::select_referred;
use crate::text::{decouple_text, ClassVocab, RuleTagger};

pub use ablate::{run_ablation, AblationPreset, AblationRow};
pub use config::{EncoderSpec, PipelineConfig, ADAPTER_PATH_ENV};
pub use evaluate::{evaluate, EvalInputs, SplitSpec};
pub use overlay::{class_color, render_overlay, write_overlays, LegendEntry};
pub use records::{
    DecoupledRecord, ExpressionRecord, Failure, GtContainer, InstanceRecord, OvssRecord, ResRecord, SegmentRecord,
};
pub use synth::{write_forced_alignment, SynthExpression, SynthScene, SynthSpec};

use records::{load_expressions, load_gt, write_json};

pub const MANIFEST_VERSION: u32 = 1;

/// Backends shared by every worker.
#[derive(Clone)]
pub struct Encoders {
    pub embed: Arc<dyn EmbeddingEncoder>,
    pub saliency: Arc<dyn SaliencyEncoder>,
}

impl Encoders {
    pub fn new(embed: Arc<dyn EmbeddingEncoder>, saliency: Arc<dyn SaliencyEncoder>) -> Self {
        Self { embed, saliency }
    }

    pub fn from_spec(spec: &EncoderSpec) -> Result<Self> {
        let adapter = Arc::new(TensorDirAdapter::open(&spec.resolve()?)?);
        Ok(Self {
            embed: adapter.clone(),
            saliency: adapter,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: PipelineConfig,
    pub items: usize,
    pub failures: Vec<Failure>,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub items: usize,
    pub failures: Vec<Failure>,
    pub eval: Option<EvalReport>,
}

impl RunSummary {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Loaded, immutable run state.
pub struct Pipeline {
    cfg: PipelineConfig,
    bank: ClassTextBank,
    entries: Vec<PromptEntry>,
    text_feats: Vec<EmbeddingVector>,
    vocab: ClassVocab,
    tagger: RuleTagger,
    encoders: Encoders,
    loader: ProposalLoader,
    refine: Option<Refinement>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, encoders: Encoders) -> Result<Self> {
        Self::with_loader(cfg, encoders, ProposalLoader::new())
    }

    pub fn with_loader(cfg: PipelineConfig, encoders: Encoders, loader: ProposalLoader) -> Result<Self> {
        let mut bank = ClassTextBank::load(&cfg.bank)?;
        if let Some(t) = &cfg.template {
            bank = bank.with_template(t)?;
        }
        let bank = bank.with_augmentations(cfg.augmentations);
        let entries = render_prompts(&bank);
        let text_feats = embed_texts(&entries, encoders.embed.as_ref())?;
        loader.validate(&cfg.proposals)?;
        Ok(Self {
            vocab: bank.vocab(),
            cfg,
            bank,
            entries,
            text_feats,
            tagger: RuleTagger::new(),
            encoders,
            loader,
            refine: None,
        })
    }

    pub fn with_refinement(mut self, refine: Refinement) -> Self {
        self.refine = Some(refine);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &ClassTextBank {
        &self.bank
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }

    pub fn image_ids(&self) -> Result<Vec<String>> {
        if let Some(ids) = &self.cfg.image_ids {
            return Ok(ids.clone());
        }
        let dir = &self.cfg.images;
        let mut ids: Vec<String> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn load_image(&self, image_id: &str) -> Result<RgbImage> {
        let path = self.cfg.images.join(format!("{image_id}.png"));
        Ok(image::open(&path)
            .map_err(|source| Error::Png { path, source })?
            .to_rgb8())
    }

    /// Labels every proposal of one image.
    pub fn ovss_image(&self, image: &RgbImage, proposals: &MaskSet) -> Result<SegmentationResult> {
        if proposals.is_empty() {
            return Ok(SegmentationResult::empty(proposals.image_id(), proposals.image_size()));
        }
        let feats = extract_local_features(image, proposals, &self.cfg.crop, self.encoders.embed.as_ref())?;
        let ids: Vec<_> = proposals.masks().iter().map(MaskProposal::id).collect();
        let labels = classify_masks(&ids, &feats, &self.entries, &self.text_feats, self.cfg.tau)?;
        assemble_ovss(proposals, &labels)
    }

    fn load_and_label(&self, image_id: &str) -> Result<(RgbImage, MaskSet, SegmentationResult)> {
        let image = self.load_image(image_id)?;
        let proposals = self.loader.load(&self.cfg.proposals, image_id, Some(&image))?;
        let ovss = self.ovss_image(&image, &proposals)?;
        Ok((image, proposals, ovss))
    }

    pub fn ovss_record(&self, ovss: &SegmentationResult, proposals: usize) -> OvssRecord {
        OvssRecord {
            image_id: ovss.image_id.clone(),
            height: ovss.image_size.0,
            width: ovss.image_size.1,
            crop: self.cfg.crop,
            template: self.bank.template().to_string(),
            tau: self.cfg.tau,
            proposals,
            segments: ovss
                .segments
                .iter()
                .map(|s| SegmentRecord {
                    mask_id: s.mask.id(),
                    class: self
                        .bank
                        .class_name(crate::prompt::ClassRef::Class(s.class))
                        .to_string(),
                    probability: s.probability,
                    rle: rle::encode(s.mask.grid()),
                })
                .collect(),
        }
    }

    fn known_classes(&self) -> Vec<ClassId> {
        self.bank.classes().iter().map(|c| c.id).collect()
    }

    /// Resolves one expression against an already labelled image.
    pub fn res_expression(
        &self,
        expr: &ExpressionRecord,
        image: &RgbImage,
        proposals: &MaskSet,
        ovss: &SegmentationResult,
    ) -> Result<ResRecord> {
        let d = decouple_text(&expr.text, &self.tagger, &self.vocab)?;
        let class = d.class_id.ok_or_else(|| Error::NoClassMatch {
            tokens: d.cls_words().iter().map(|s| s.to_string()).collect(),
        })?;
        let tokens: Vec<String> = d.ref_words().iter().map(|s| s.to_string()).collect();
        let sal = token_saliency(&expr.image_id, image, &tokens, self.encoders.saliency.as_ref())?;
        let fused = cross_scale_map(&sal, &d, self.cfg.fusion, self.refine.as_ref())?;
        let peaks = find_local_maxima(&fused.l_cs, self.cfg.peaks);
        let (h, w) = proposals.image_size();
        let mut rec = ResRecord {
            id: expr.id.clone(),
            image_id: expr.image_id.clone(),
            text: expr.text.clone(),
            height: h,
            width: w,
            decoupled: DecoupledRecord {
                ref_words: tokens.clone(),
                cls: d.cls_words().iter().map(|s| s.to_string()).collect(),
                mod_words: d.mod_words().iter().map(|s| s.to_string()).collect(),
            },
            target_class: self.bank.class_name(crate::prompt::ClassRef::Class(class)).to_string(),
            fusion: self.cfg.fusion,
            peaks: peaks.clone(),
            mode: String::new(),
            selected: None,
            score: None,
            label: None,
            pool: None,
            path: None,
            rle: Vec::new(),
        };
        if self.cfg.selection {
            let (sel, _) = select_referred(
                proposals,
                &peaks,
                &fused.l_cs,
                ovss,
                &[class],
                &self.known_classes(),
                &self.cfg.fallback,
            )?;
            let mask = match sel.mask_id.and_then(|id| proposals.get(id)) {
                Some(m) => m.grid().clone(),
                None => BinaryGrid::new(h, w),
            };
            rec.mode = "proposal".into();
            rec.selected = sel.mask_id;
            rec.score = sel.score;
            rec.label = sel.label.map(|l| self.bank.class_name(l).to_string());
            rec.pool = Some(sel.pool);
            rec.path = Some(sel.path);
            rec.rle = rle::encode(&mask);
        } else {
            rec.mode = "heatmap".into();
            rec.rle = rle::encode(&heatmap_mask(&fused.l_cs, self.cfg.peaks.theta));
        }
        Ok(rec)
    }

    fn write_manifest(&self, command: &str, items: usize, failures: &[Failure]) -> Result<()> {
        let m = Manifest {
            manifest_version: MANIFEST_VERSION,
            tool: "segalign".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: self.cfg.clone(),
            items,
            failures: failures.to_vec(),
            rejections: self.loader.log.entries(),
        };
        write_json(&manifest_path(&self.cfg.out, command), &m)
    }

    fn gt_by_image(&self) -> Result<Option<BTreeMap<String, GtContainer>>> {
        let Some(p) = &self.cfg.gt else { return Ok(None) };
        Ok(Some(load_gt(p)?.into_iter().map(|g| (g.image_id.clone(), g)).collect()))
    }

    fn split(&self, report: EvalReport) -> Result<EvalReport> {
        split_report(report, self.bank.unseen(), &self.bank.class_names())
    }

    /// Labels every image, writes `ovss/<image_id>.json` and, with ground
    /// truth configured, the image-level report.
    pub fn run_ovss(&self) -> Result<RunSummary> {
        let ids = self.image_ids()?;
        let results: Vec<Result<OvssRecord>> = self.pool()?.install(|| {
            ids.par_iter()
                .map(|id| {
                    let (_, proposals, ovss) = self.load_and_label(id)?;
                    Ok(self.ovss_record(&ovss, proposals.len()))
                })
                .collect()
        });
        let dir = self.cfg.out.join("ovss");
        let mut failures = Vec::new();
        let mut records = Vec::new();
        for (id, r) in ids.iter().zip(results) {
            match r.and_then(|rec| write_json(&dir.join(format!("{id}.json")), &rec).map(|_| rec)) {
                Ok(rec) => records.push(rec),
                Err(e) => {
                    log::error!("{id}: {e}");
                    failures.push(Failure {
                        item: id.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        let eval = match self.gt_by_image()? {
            Some(gt) => {
                let r = self.split(ovss_report(&records, &gt)?)?;
                write_report(&self.cfg.out, "ovss", &r)?;
                Some(r)
            }
            None => None,
        };
        self.write_manifest("ovss", ids.len(), &failures)?;
        Ok(RunSummary {
            items: ids.len(),
            failures,
            eval,
        })
    }

    /// Resolves every expression, writes `res/<id>.json` and, when
    /// expressions carry ground truth, the image-level report.
    pub fn run_res(&self) -> Result<RunSummary> {
        let path = self
            .cfg
            .expressions
            .as_ref()
            .ok_or_else(|| Error::Config("res run needs an expressions file".into()))?;
        let exprs = load_expressions(path)?;
        let image_ids: Vec<String> = exprs
            .iter()
            .map(|e| e.image_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pool = self.pool()?;
        let labelled: BTreeMap<String, std::result::Result<(RgbImage, MaskSet, SegmentationResult), String>> = pool
            .install(|| {
                image_ids
                    .par_iter()
                    .map(|id| (id.clone(), self.load_and_label(id).map_err(|e| e.to_string())))
                    .collect::<Vec<_>>()
            })
            .into_iter()
            .collect();
        let results: Vec<Result<ResRecord>> = pool.install(|| {
            exprs
                .par_iter()
                .map(|e| match &labelled[&e.image_id] {
                    Ok((image, proposals, ovss)) => self.res_expression(e, image, proposals, ovss),
                    Err(msg) => Err(Error::Image {
                        image_id: e.image_id.clone(),
                        reason: msg.clone(),
                    }),
                })
                .collect()
        });
        let dir = self.cfg.out.join("res");
        let mut failures = Vec::new();
        let mut preds = ImageCategoryMasks::new();
        let mut gts = ImageCategoryMasks::new();
        for (e, r) in exprs.iter().zip(results) {
            let written = r.and_then(|rec| write_json(&dir.join(format!("{}.json", e.id)), &rec).map(|_| rec));
            match written {
                Ok(rec) => {
                    if let Some(g) = &e.gt_rle {
                        let key = (rec.id.clone(), rec.target_class.clone());
                        gts.insert(key.clone(), vec![rle::decode(g, rec.height, rec.width)?]);
                        preds.insert(key, vec![rle::decode(&rec.rle, rec.height, rec.width)?]);
                    }
                }
                Err(err) => {
                    log::error!("{}: {err}", e.id);
                    failures.push(Failure {
                        item: e.id.clone(),
                        error: err.to_string(),
                    });
                }
            }
        }
        let eval = if gts.is_empty() {
            None
        } else {
            let r = self.split(image_level_miou(&preds, &gts)?)?;
            write_report(&self.cfg.out, "res", &r)?;
            Some(r)
        };
        self.write_manifest("res", exprs.len(), &failures)?;
        Ok(RunSummary {
            items: exprs.len(),
            failures,
            eval,
        })
    }
}

pub fn manifest_path(out: &Path, command: &str) -> PathBuf {
    out.join(format!("manifest_{command}.json"))
}

/// Pixels at or above `theta` of the map's maximum; empty for a non-positive map.
pub fn heatmap_mask(map: &Grid, theta: f64) -> BinaryGrid {
    let (h, w) = map.shape();
    match map.max() {
        Some(max) if max > 0.0 => BinaryGrid::from_fn(h, w, |r, c| map.get(r, c) >= theta * max),
        _ => BinaryGrid::new(h, w),
    }
}

/// Image-level report of OVSS records against per-image ground truth.
pub fn ovss_report(records: &[OvssRecord], gt: &BTreeMap<String, GtContainer>) -> Result<EvalReport> {
    let mut preds = ImageCategoryMasks::new();
    let mut gts = ImageCategoryMasks::new();
    for rec in records {
        for (class, masks) in rec.class_masks()? {
            preds.insert((rec.image_id.clone(), class), masks);
        }
        if let Some(g) = gt.get(&rec.image_id) {
            for inst in g.instances()? {
                gts.entry((rec.image_id.clone(), inst.category))
                    .or_default()
                    .push(inst.mask);
            }
        }
    }
    image_level_miou(&preds, &gts)
}

pub fn write_report(out: &Path, name: &str, report: &EvalReport) -> Result<()> {
    write_json(&out.join(format!("{name}_eval.json")), report)?;
    let path = out.join(format!("{name}_eval.txt"));
    std::fs::write(&path, report.to_table()).map_err(|e| Error::io(&path, e))
}

/// Writes a map as a 16-bit grayscale PNG plus a JSON sidecar holding the
/// range needed to undo the quantisation.
pub fn export_saliency_map(path: &Path, grid: &Grid) -> Result<()> {
    let (lo, hi) = grid.min_max().unwrap_or((0.0, 0.0));
    let span = hi - lo;
    let img =
        image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_fn(grid.width() as u32, grid.height() as u32, |x, y| {
            let v = grid.get(y as usize, x as usize);
            let q = if span > 0.0 {
                ((v - lo) / span * 65535.0).round()
            } else {
                0.0
            };
            image::Luma([q as u16])
        });
    img.save(path).map_err(|source| Error::Png {
        path: path.to_path_buf(),
        source,
    })?;
    write_json(
        &path.with_extension("json"),
        &serde_json::json!({ "min": lo, "max": hi }),
    )
}
