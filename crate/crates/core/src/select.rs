//! Referred-instance selection from saliency peaks and OVSS labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::local::SegmentationResult;
use crate::mask::{MaskId, MaskProposal, MaskSet};
use crate::prompt::{ClassId, ClassRef};
use crate::saliency::PeakSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredMask {
    pub mask_id: MaskId,
    pub raw_score: f64,
    pub normalized_score: f64,
}

/// Proposals covering at least one peak, in set order.
pub fn activated_masks<'a>(mask_set: &'a MaskSet, peaks: &PeakSet) -> Vec<&'a MaskProposal> {
    mask_set
        .masks()
        .iter()
        .filter(|m| peaks.coords.iter().any(|&(x, y)| m.contains(y, x)))
        .collect()
}

/// `s = sum(m + m * L)`, normalised by area.
pub fn score_masks<'a>(masks: impl IntoIterator<Item = &'a MaskProposal>, l_cs: &Grid) -> Result<Vec<ScoredMask>> {
    masks
        .into_iter()
        .map(|m| {
            if m.size() != l_cs.shape() {
                return Err(Error::ShapeMismatch {
                    left: m.size(),
                    right: l_cs.shape(),
                });
            }
            let raw: f64 = m.grid().members().map(|(r, c)| 1.0 + l_cs.get(r, c)).sum();
            Ok(ScoredMask {
                mask_id: m.id(),
                raw_score: raw,
                normalized_score: raw / m.area() as f64,
            })
        })
        .collect()
}

/// Highest normalised score, lowest id on ties.
pub fn select_global(scored: &[ScoredMask]) -> Option<MaskId> {
    scored
        .iter()
        .min_by(|a, b| {
            b.normalized_score
                .total_cmp(&a.normalized_score)
                .then(a.mask_id.cmp(&b.mask_id))
        })
        .map(|s| s.mask_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackStep {
    /// Best-scoring candidate whose label is a target class.
    ActivatedTarget,
    /// The global candidate whatever its label.
    GlobalCandidate,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FallbackPolicy(pub Vec<FallbackStep>);

impl Default for FallbackPolicy {
    fn default() -> Self {
        Self(vec![FallbackStep::ActivatedTarget, FallbackStep::GlobalCandidate])
    }
}

impl std::str::FromStr for FallbackPolicy {
    type Err = Error;
    /// Comma-separated steps: `a` / `activated_target`, `b` / `global_candidate`, `c` / `empty`.
    fn from_str(s: &str) -> Result<Self> {
        let steps = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| match t {
                "a" | "activated_target" => Ok(FallbackStep::ActivatedTarget),
                "b" | "global_candidate" => Ok(FallbackStep::GlobalCandidate),
                "c" | "empty" => Ok(FallbackStep::Empty),
                other => Err(Error::Config(format!("unknown fallback step `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self(steps))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePool {
    Activated,
    /// No proposal covered a peak; every proposal competed.
    AllMasks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPath {
    /// Global candidate already carried a target label.
    Consistent,
    ActivatedTarget,
    GlobalCandidate,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub mask_id: Option<MaskId>,
    pub score: Option<f64>,
    pub label: Option<ClassRef>,
    pub global_id: Option<MaskId>,
    pub pool: CandidatePool,
    pub path: SelectionPath,
}

/// Keeps the global candidate when its label is a target class, otherwise
/// walks the fallback policy.
pub fn intersect_candidates(
    global_id: Option<MaskId>,
    ovss: &SegmentationResult,
    target_classes: &[ClassId],
    known_classes: &[ClassId],
    scored: &[ScoredMask],
    pool: CandidatePool,
    policy: &FallbackPolicy,
) -> Result<Selection> {
    if let Some(&bad) = target_classes.iter().find(|c| !known_classes.contains(c)) {
        return Err(Error::UnknownClass(bad));
    }
    let is_target = |id: MaskId| matches!(ovss.label_of(id), ClassRef::Class(c) if target_classes.contains(&c));
    let score_of = |id: MaskId| scored.iter().find(|s| s.mask_id == id).map(|s| s.normalized_score);
    let pick = |id: MaskId, path| Selection {
        mask_id: Some(id),
        score: score_of(id),
        label: Some(ovss.label_of(id)),
        global_id,
        pool,
        path,
    };
    let Some(g) = global_id else {
        return Ok(Selection {
            mask_id: None,
            score: None,
            label: None,
            global_id,
            pool,
            path: SelectionPath::Empty,
        });
    };
    if is_target(g) {
        return Ok(pick(g, SelectionPath::Consistent));
    }
    for step in &policy.0 {
        match step {
            FallbackStep::ActivatedTarget => {
                let on_target: Vec<ScoredMask> = scored.iter().copied().filter(|s| is_target(s.mask_id)).collect();
                if let Some(id) = select_global(&on_target) {
                    return Ok(pick(id, SelectionPath::ActivatedTarget));
                }
            }
            FallbackStep::GlobalCandidate => return Ok(pick(g, SelectionPath::GlobalCandidate)),
            FallbackStep::Empty => break,
        }
    }
    Ok(Selection {
        mask_id: None,
        score: None,
        label: None,
        global_id,
        pool,
        path: SelectionPath::Empty,
    })
}

/// Activation, scoring, global argmax and label intersection in one call.
pub fn select_referred(
    mask_set: &MaskSet,
    peaks: &PeakSet,
    l_cs: &Grid,
    ovss: &SegmentationResult,
    target_classes: &[ClassId],
    known_classes: &[ClassId],
    policy: &FallbackPolicy,
) -> Result<(Selection, Vec<ScoredMask>)> {
    let act = activated_masks(mask_set, peaks);
    let (pool, scored) = if act.is_empty() {
        (CandidatePool::AllMasks, score_masks(mask_set.masks(), l_cs)?)
    } else {
        (CandidatePool::Activated, score_masks(act, l_cs)?)
    };
    let global = select_global(&scored);
    let sel = intersect_candidates(global, ovss, target_classes, known_classes, &scored, pool, policy)?;
    Ok((sel, scored))
}
