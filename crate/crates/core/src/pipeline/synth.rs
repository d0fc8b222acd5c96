//! Writes a self-contained dataset whose precomputed tensors force a known
//! answer: every proposal embeds onto the axis of its ground-truth class,
//! every prompt onto the axis of its class, and each expression's tokens
//! attend to the target shape.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{EncoderSpec, PipelineConfig};
use super::records::{write_json, ExpressionRecord, GtContainer};
use crate::encoder::{write_container, ContainerArray, TEXT_CONTAINER};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ingest::{save_container, synth_scene, ProposalSource, SceneSpec};
use crate::mask::{rle, BinaryGrid};
use crate::prompt::{render_prompts, Augmentations, ClassRef, ClassTextBank, TemplatePreset};
use crate::text::{decouple_text, RuleTagger};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthExpression {
    pub id: String,
    pub text: String,
    /// Index into the scene's shapes.
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthScene {
    #[serde(flatten)]
    pub scene: SceneSpec,
    #[serde(default)]
    pub expressions: Vec<SynthExpression>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub scenes: Vec<SynthScene>,
}

/// Gaussian bump over the grid centred on the mask centroid.
fn bump(mask: &BinaryGrid, spread: f64) -> Grid {
    let (h, w) = mask.size();
    let n = mask.count() as f64;
    let (sr, sc) = mask
        .members()
        .fold((0.0, 0.0), |(a, b), (r, c)| (a + r as f64 + 0.5, b + c as f64 + 0.5));
    let (cr, cc) = (sr / n, sc / n);
    let (r0, c0, r1, c1) = mask.bounds().expect("shape masks are non-empty");
    let sigma = ((r1 - r0 + 1).max(c1 - c0 + 1) as f64 / 4.0).max(1.0) * spread;
    let mut g = Grid::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let d2 = (r as f64 + 0.5 - cr).powi(2) + (c as f64 + 0.5 - cc).powi(2);
            g.set(r, c, (-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    g
}

/// Writes `images/`, `proposals/`, `gt/`, `tensors/`, `expressions.json`,
/// a copy of the bank and a ready-to-run `config.json` under `out`.
pub fn write_forced_alignment(spec: &SynthSpec, bank: &ClassTextBank, out: &Path) -> Result<PathBuf> {
    let axis_of = |class: ClassRef| match class {
        ClassRef::Class(id) => bank.classes().iter().position(|c| c.id == id).expect("bank class"),
        ClassRef::Background => bank.classes().len(),
    };
    let dim = bank.classes().len() + 1;
    let one_hot = |axis: usize| {
        let mut v = vec![0.0f32; dim];
        v[axis] = 1.0;
        v
    };
    let class_by_name: BTreeMap<&str, ClassRef> = bank
        .classes()
        .iter()
        .map(|c| (c.name.as_str(), ClassRef::Class(c.id)))
        .collect();

    for sub in ["images", "proposals", "gt", "tensors"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    // prompt features under every template so template sweeps stay aligned
    let mut texts: BTreeMap<String, usize> = BTreeMap::new();
    let templates = std::iter::once(bank.template().to_string())
        .chain(TemplatePreset::ALL.iter().map(|t| t.template().to_string()));
    for t in templates {
        for e in render_prompts(&bank.with_template(&t)?.with_augmentations(Augmentations::ALL)) {
            let axis = axis_of(e.class);
            if let Some(prev) = texts.insert(e.text.clone(), axis) {
                if prev != axis {
                    return Err(Error::Scene(format!("prompt {:?} is shared by two classes", e.text)));
                }
            }
        }
    }
    let prompts: Vec<String> = texts.keys().cloned().collect();
    let text_data: Vec<f32> = texts.values().flat_map(|&a| one_hot(a)).collect();
    write_container(
        &out.join("tensors").join(TEXT_CONTAINER),
        &[ContainerArray::new(
            "text_features",
            vec![prompts.len(), dim],
            text_data,
        )],
        Some(&prompts),
    )?;

    let tagger = RuleTagger::new();
    let vocab = bank.vocab();
    let mut expressions = Vec::new();
    let mut ids = Vec::new();
    for s in &spec.scenes {
        let sc = &s.scene;
        let scene = synth_scene(sc)?;
        let id = &sc.image_id;
        ids.push(id.clone());
        let png = out.join("images").join(format!("{id}.png"));
        scene
            .image
            .save(&png)
            .map_err(|source| Error::Png { path: png, source })?;
        save_container(&out.join("proposals").join(format!("{id}.json")), &scene.proposals)?;
        write_json(
            &out.join("gt").join(format!("{id}.json")),
            &GtContainer::from_instances(id, (sc.height, sc.width), &scene.gt),
        )?;

        let mut patch = Vec::with_capacity(scene.proposals.len() * dim);
        for (i, _) in scene.proposals.masks().iter().enumerate() {
            let class = match sc.shapes.get(i) {
                Some(shape) => *class_by_name
                    .get(shape.category.as_str())
                    .ok_or_else(|| Error::Scene(format!("category `{}` is not in the bank", shape.category)))?,
                None => ClassRef::Background,
            };
            patch.extend(one_hot(axis_of(class)));
        }
        let mut arrays = vec![ContainerArray::new(
            "patch_features",
            vec![scene.proposals.len(), dim],
            patch,
        )];

        let mut tokens: BTreeMap<String, (Grid, Grid)> = BTreeMap::new();
        for e in &s.expressions {
            let target = scene
                .gt
                .get(e.target)
                .ok_or_else(|| Error::Scene(format!("expression {} targets missing shape {}", e.id, e.target)))?;
            let d = decouple_text(&e.text, &tagger, &vocab)?;
            let ones = Grid::filled(sc.height, sc.width, 1.0);
            for t in &d.cls_tokens {
                tokens
                    .entry(t.text.to_lowercase())
                    .or_insert_with(|| (bump(&target.mask, 1.0), ones.clone()));
            }
            for t in &d.mod_tokens {
                tokens
                    .entry(t.text.to_lowercase())
                    .or_insert_with(|| (bump(&target.mask, 1.5), ones.clone()));
            }
            expressions.push(ExpressionRecord {
                id: e.id.clone(),
                image_id: id.clone(),
                text: e.text.clone(),
                gt_rle: Some(rle::encode(&target.mask)),
            });
        }
        for (t, (a, g)) in &tokens {
            arrays.push(ContainerArray::from_grid(format!("attn/{t}"), a));
            arrays.push(ContainerArray::from_grid(format!("grad/{t}"), g));
        }
        arrays.push(ContainerArray::new("itm_score", vec![1], vec![1.0]));
        write_container(&out.join("tensors").join(format!("{id}.safetensors")), &arrays, None)?;
    }
    write_json(&out.join("expressions.json"), &expressions)?;
    write_json(&out.join("bank.json"), bank)?;

    let cfg = PipelineConfig {
        bank: "bank.json".into(),
        template: None,
        augmentations: Augmentations::ALL,
        crop: Default::default(),
        tau: 0.01,
        peaks: Default::default(),
        fusion: Default::default(),
        selection: true,
        fallback: Default::default(),
        encoder: EncoderSpec::TensorDir { path: "tensors".into() },
        proposals: ProposalSource::File {
            path: "proposals".into(),
        },
        images: "images".into(),
        image_ids: Some(ids),
        gt: Some("gt".into()),
        expressions: if expressions.is_empty() {
            None
        } else {
            Some("expressions.json".into())
        },
        out: "out".into(),
        workers: 1,
        seed: 0,
    };
    let path = out.join("config.json");
    write_json(&path, &cfg)?;
    Ok(path)
}
