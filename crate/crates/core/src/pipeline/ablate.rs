//! Named run grids: crop variants, templates, bank expansions and
//! saliency/selection modes.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::records::write_json;
use super::{Encoders, Pipeline, PipelineConfig};
use crate::error::{Error, Result};
use crate::mask::CropVariant;
use crate::prompt::{Augmentations, TemplatePreset};
use crate::saliency::GradcamMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationPreset {
    /// Crop variants.
    Table2,
    /// Prompt templates.
    Table3,
    /// Bank expansions.
    Table4,
    /// Grad-CAM mode and proposal selection.
    Table5,
}

impl FromStr for AblationPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table2" => Ok(Self::Table2),
            "table3" => Ok(Self::Table3),
            "table4" => Ok(Self::Table4),
            "table5" => Ok(Self::Table5),
            other => Err(Error::Config(format!("unknown ablation preset `{other}`"))),
        }
    }
}

impl AblationPreset {
    pub fn name(self) -> &'static str {
        match self {
            Self::Table2 => "table2",
            Self::Table3 => "table3",
            Self::Table4 => "table4",
            Self::Table5 => "table5",
        }
    }

    /// Row name and config for every run in the grid.
    pub fn expand(self, base: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
        let root = base.out.join(self.name());
        let with = |name: String, f: &dyn Fn(&mut PipelineConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c.out = root.join(&name);
            (name, c)
        };
        match self {
            Self::Table2 => CropVariant::ALL
                .iter()
                .map(|&v| with(v.as_str().to_string(), &|c| c.crop.variant = v))
                .collect(),
            Self::Table3 => TemplatePreset::ALL
                .iter()
                .map(|&t| with(t.name().to_string(), &|c| c.template = Some(t.name().to_string())))
                .collect(),
            Self::Table4 => (0..8u8)
                .map(|bits| {
                    let aug = Augmentations {
                        synonyms: bits & 1 != 0,
                        backgrounds: bits & 2 != 0,
                        descriptions: bits & 4 != 0,
                    };
                    let mut parts = Vec::new();
                    if aug.synonyms {
                        parts.push("synonyms");
                    }
                    if aug.backgrounds {
                        parts.push("backgrounds");
                    }
                    if aug.descriptions {
                        parts.push("descriptions");
                    }
                    let name = if parts.is_empty() {
                        "base".to_string()
                    } else {
                        parts.join("+")
                    };
                    with(name, &|c| c.augmentations = aug)
                })
                .collect(),
            Self::Table5 => [GradcamMode::Single, GradcamMode::Cross]
                .into_iter()
                .flat_map(|mode| [false, true].into_iter().map(move |selection| (mode, selection)))
                .map(|(mode, selection)| {
                    let name = format!(
                        "{}_{}",
                        match mode {
                            GradcamMode::Single => "single",
                            GradcamMode::Cross => "cross",
                        },
                        if selection { "selection" } else { "heatmap" }
                    );
                    with(name, &|c| {
                        c.fusion.mode = mode;
                        c.selection = selection;
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub items: usize,
    pub failures: usize,
    pub miou: Option<f64>,
    pub seen: Option<f64>,
    pub unseen: Option<f64>,
}

/// Runs every grid cell, writing `<out>/<preset>/summary.{json,txt}`.
pub fn run_ablation(preset: AblationPreset, base: &PipelineConfig, encoders: &Encoders) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, cfg) in preset.expand(base) {
        let p = Pipeline::new(cfg, encoders.clone())?;
        let summary = match preset {
            AblationPreset::Table5 => p.run_res()?,
            _ => p.run_ovss()?,
        };
        let split = summary.eval.as_ref().and_then(|e| e.split);
        rows.push(AblationRow {
            name,
            items: summary.items,
            failures: summary.failures.len(),
            miou: summary.eval.as_ref().map(|e| e.overall_miou),
            seen: split.and_then(|s| s.seen),
            unseen: split.and_then(|s| s.unseen),
        });
    }
    let dir = base.out.join(preset.name());
    write_json(&dir.join("summary.json"), &rows)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0));
    let mut t = format!(
        "{:<32} {:>8} {:>8} {:>8} {:>6}\n",
        "run", "mIoU", "seen", "unseen", "fail"
    );
    for r in &rows {
        let _ = writeln!(
            t,
            "{:<32} {:>8} {:>8} {:>8} {:>6}",
            r.name,
            fmt(r.miou),
            fmt(r.seen),
            fmt(r.unseen),
            r.failures
        );
    }
    let path = dir.join("summary.txt");
    std::fs::write(&path, t).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
