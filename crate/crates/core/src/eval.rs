//! Category-averaged mIoU under the proposal-matching and image-level protocols.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryGrid, MaskSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtInstance {
    pub image_id: String,
    pub category: String,
    pub mask: BinaryGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    ProposalMatching,
    ImageLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryStat {
    /// Instances (proposal protocol) or images (image-level protocol).
    pub n: usize,
    pub mean_iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitAggregates {
    pub seen: Option<f64>,
    pub unseen: Option<f64>,
    pub all: f64,
    pub n_seen: usize,
    pub n_unseen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub per_category: BTreeMap<String, CategoryStat>,
    pub overall_miou: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitAggregates>,
}

impl EvalReport {
    fn from_samples(protocol: Protocol, samples: BTreeMap<String, Vec<f64>>) -> Self {
        let per_category: BTreeMap<String, CategoryStat> = samples
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| {
                let n = v.len();
                (
                    k,
                    CategoryStat {
                        n,
                        mean_iou: v.iter().sum::<f64>() / n as f64,
                    },
                )
            })
            .collect();
        let overall_miou = mean(per_category.values().map(|s| s.mean_iou)).unwrap_or(0.0);
        Self {
            protocol,
            per_category,
            overall_miou,
            split: None,
        }
    }

    /// Plain-text table: category, n, mean IoU, then the split summary.
    pub fn to_table(&self) -> String {
        let width = self.per_category.keys().map(String::len).max().unwrap_or(8).max(8);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>6}  {:>8}", "category", "n", "mIoU");
        for (k, s) in &self.per_category {
            let _ = writeln!(out, "{k:<width$}  {:>6}  {:>8.4}", s.n, s.mean_iou);
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>8.4}",
            "overall",
            self.per_category.len(),
            self.overall_miou
        );
        if let Some(sp) = &self.split {
            let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "seen {} ({}), unseen {} ({}), all {:.4}",
                fmt(sp.seen),
                sp.n_seen,
                fmt(sp.unseen),
                sp.n_unseen,
                sp.all
            );
        }
        out
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Best-proposal IoU per ground-truth instance, averaged per category.
pub fn proposal_miou(gt: &[GtInstance], proposals: &BTreeMap<String, MaskSet>) -> Result<EvalReport> {
    let ious = gt
        .par_iter()
        .map(|g| {
            let set = proposals.get(&g.image_id).ok_or_else(|| Error::Image {
                image_id: g.image_id.clone(),
                reason: "no proposal set".into(),
            })?;
            if set.image_size() != g.mask.size() {
                return Err(Error::Image {
                    image_id: g.image_id.clone(),
                    reason: format!(
                        "ground truth is {:?}, proposals are {:?}",
                        g.mask.size(),
                        set.image_size()
                    ),
                });
            }
            let mut best = 0.0f64;
            for m in set.masks() {
                best = best.max(g.mask.iou(m.grid())?);
            }
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (g, iou) in gt.iter().zip(ious) {
        samples.entry(g.category.clone()).or_default().push(iou);
    }
    Ok(EvalReport::from_samples(Protocol::ProposalMatching, samples))
}

/// Masks of one category in one image.
pub type ImageCategoryMasks = BTreeMap<(String, String), Vec<BinaryGrid>>;

fn merged(masks: &[BinaryGrid]) -> Result<Option<BinaryGrid>> {
    let Some(first) = masks.first() else {
        return Ok(None);
    };
    let mut out = first.clone();
    for m in &masks[1..] {
        out.union_with(m)?;
    }
    Ok((out.count() > 0).then_some(out))
}

/// IoU of merged prediction against merged ground truth per (image, category).
pub fn image_level_miou(preds: &ImageCategoryMasks, gt: &ImageCategoryMasks) -> Result<EvalReport> {
    let keys: BTreeSet<&(String, String)> = preds.keys().chain(gt.keys()).collect();
    let keys: Vec<_> = keys.into_iter().collect();
    let empty = Vec::new();
    let rows = keys
        .par_iter()
        .map(|key| {
            let p = merged(preds.get(*key).unwrap_or(&empty))?;
            let g = merged(gt.get(*key).unwrap_or(&empty))?;
            let iou = match (p, g) {
                (None, None) => None,
                (Some(_), None) | (None, Some(_)) => Some(0.0),
                (Some(p), Some(g)) => Some(p.iou(&g).map_err(|_| Error::Image {
                    image_id: key.0.clone(),
                    reason: format!("prediction {:?} vs ground truth {:?}", p.size(), g.size()),
                })?),
            };
            Ok(iou)
        })
        .collect::<Result<Vec<Option<f64>>>>()?;
    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (key, iou) in keys.iter().zip(rows) {
        if let Some(v) = iou {
            samples.entry(key.1.clone()).or_default().push(v);
        }
    }
    Ok(EvalReport::from_samples(Protocol::ImageLevel, samples))
}

/// Adds seen/unseen aggregates. `unseen` must be drawn from `taxonomy`.
pub fn split_report(mut report: EvalReport, unseen: &[String], taxonomy: &[String]) -> Result<EvalReport> {
    let tax: BTreeSet<&str> = taxonomy.iter().map(String::as_str).collect();
    if let Some(bad) = unseen.iter().find(|u| !tax.contains(u.as_str())) {
        return Err(Error::UnknownCategory(bad.clone()));
    }
    let unseen: BTreeSet<&str> = unseen.iter().map(String::as_str).collect();
    let (u, s): (Vec<(&String, &CategoryStat)>, Vec<_>) = report
        .per_category
        .iter()
        .partition(|(k, _)| unseen.contains(k.as_str()));
    report.split = Some(SplitAggregates {
        seen: mean(s.iter().map(|(_, c)| c.mean_iou)),
        unseen: mean(u.iter().map(|(_, c)| c.mean_iou)),
        all: report.overall_miou,
        n_seen: s.len(),
        n_unseen: u.len(),
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::MaskProposal;

    fn inst(image: &str, cat: &str, mask: BinaryGrid) -> GtInstance {
        GtInstance {
            image_id: image.into(),
            category: cat.into(),
            mask,
        }
    }

    fn set(image: &str, masks: Vec<BinaryGrid>) -> MaskSet {
        let size = masks.first().map_or((4, 4), BinaryGrid::size);
        MaskSet::new(
            image,
            size,
            masks
                .into_iter()
                .enumerate()
                .map(|(i, g)| MaskProposal::new(i as u32, g).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn report(pairs: &[(&str, f64)]) -> EvalReport {
        EvalReport::from_samples(
            Protocol::ImageLevel,
            pairs.iter().map(|(k, v)| (k.to_string(), vec![*v])).collect(),
        )
    }

    #[test]
    fn perfect_and_vacuous_proposals() {
        let a = BinaryGrid::rect(8, 8, 0, 0, 4, 4);
        let b = BinaryGrid::rect(8, 8, 4, 4, 3, 2);
        let gt = vec![inst("x", "ship", a.clone()), inst("x", "harbor", b.clone())];
        let props = BTreeMap::from([("x".to_string(), set("x", vec![b, a]))]);
        assert_eq!(proposal_miou(&gt, &props).unwrap().overall_miou, 1.0);
        let none = BTreeMap::from([("x".to_string(), MaskSet::empty("x", (8, 8)))]);
        assert_eq!(proposal_miou(&gt, &none).unwrap().overall_miou, 0.0);
    }

    #[test]
    fn best_match_per_instance() {
        // 1x10 strips give hand-chosen IoUs
        let strip = |start: usize, len: usize| BinaryGrid::from_fn(1, 10, |_, c| c >= start && c < start + len);
        let g1 = strip(0, 5);
        let g2 = strip(5, 5);
        // IoU vs g1: p0 = 4/5 = 0.8, p1 = 0; p2 = 1/5... vs g2: p1 = 3/5
        let p0 = strip(0, 4);
        let p1 = strip(5, 3);
        let p2 = strip(4, 1);
        assert_eq!(g1.iou(&p0).unwrap(), 0.8);
        assert_eq!(g2.iou(&p1).unwrap(), 0.6);
        let gt = vec![inst("x", "c", g1), inst("x", "c", g2)];
        let props = BTreeMap::from([("x".to_string(), set("x", vec![p0, p1, p2]))]);
        let r = proposal_miou(&gt, &props).unwrap();
        assert_eq!(r.per_category["c"].n, 2);
        assert!((r.overall_miou - 0.7).abs() < 1e-12);
    }

    #[test]
    fn size_mismatch_names_image() {
        let gt = vec![inst("x", "c", BinaryGrid::rect(4, 4, 0, 0, 1, 1))];
        let props = BTreeMap::from([("x".to_string(), MaskSet::empty("x", (5, 5)))]);
        assert!(matches!(proposal_miou(&gt, &props), Err(Error::Image { image_id, .. }) if image_id == "x"));
    }

    #[test]
    fn image_level_cases() {
        let key = ("x".to_string(), "c".to_string());
        let a = BinaryGrid::rect(4, 4, 0, 0, 4, 2);
        let b = BinaryGrid::rect(4, 4, 0, 1, 4, 2);
        let gt = BTreeMap::from([(key.clone(), vec![a.clone()])]);
        assert_eq!(image_level_miou(&gt, &gt).unwrap().overall_miou, 1.0);
        let half = BTreeMap::from([(key.clone(), vec![b])]);
        assert_eq!(image_level_miou(&half, &gt).unwrap().overall_miou, 1.0 / 3.0);
        let far = BTreeMap::from([(key.clone(), vec![BinaryGrid::rect(4, 4, 0, 3, 4, 1)])]);
        assert_eq!(image_level_miou(&far, &gt).unwrap().overall_miou, 0.0);
    }

    #[test]
    fn only_the_union_matters() {
        let key = ("x".to_string(), "c".to_string());
        let gt = BTreeMap::from([(key.clone(), vec![BinaryGrid::rect(6, 6, 0, 0, 3, 6)])]);
        let whole = BTreeMap::from([(key.clone(), vec![BinaryGrid::rect(6, 6, 1, 0, 3, 6)])]);
        let parts = BTreeMap::from([(
            key.clone(),
            vec![
                BinaryGrid::rect(6, 6, 1, 0, 3, 2),
                BinaryGrid::rect(6, 6, 1, 2, 3, 4),
                BinaryGrid::rect(6, 6, 2, 0, 1, 6),
            ],
        )]);
        assert_eq!(
            image_level_miou(&whole, &gt).unwrap(),
            image_level_miou(&parts, &gt).unwrap()
        );
    }

    #[test]
    fn empty_gt_conventions() {
        let k1 = ("x".to_string(), "c".to_string());
        let k2 = ("y".to_string(), "c".to_string());
        let k3 = ("z".to_string(), "d".to_string());
        let m = BinaryGrid::rect(4, 4, 0, 0, 2, 2);
        let gt = BTreeMap::from([(k1.clone(), vec![m.clone()]), (k3.clone(), vec![])]);
        let preds = BTreeMap::from([(k1, vec![m.clone()]), (k2, vec![m])]);
        let r = image_level_miou(&preds, &gt).unwrap();
        assert_eq!(r.per_category["c"].n, 2);
        assert_eq!(r.per_category["c"].mean_iou, 0.5);
        assert!(!r.per_category.contains_key("d"));
    }

    #[test]
    fn split_arithmetic() {
        let tax: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let r = split_report(report(&[("a", 0.2), ("b", 0.4), ("c", 0.6)]), &["c".to_string()], &tax).unwrap();
        let s = r.split.unwrap();
        assert!((s.seen.unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(s.unseen, Some(0.6));
        assert!((s.all - 0.4).abs() < 1e-15);

        let r = split_report(report(&[("a", 0.2), ("b", 0.4)]), &[], &tax).unwrap();
        let s = r.split.unwrap();
        assert_eq!(s.seen, Some(s.all));
        assert_eq!(s.unseen, None);

        assert!(matches!(
            split_report(report(&[("a", 0.2)]), &["z".to_string()], &tax),
            Err(Error::UnknownCategory(_))
        ));
    }

    #[test]
    fn table_lists_categories() {
        let t = report(&[("ship", 0.5)]).to_table();
        assert!(t.contains("ship") && t.contains("0.5000"));
    }
}
