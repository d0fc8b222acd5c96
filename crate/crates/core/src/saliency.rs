//! Grouped Grad-CAM maps, activation difference, cross-scale fusion and peaks.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::encoder::ResolvedSaliency;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::text::DecoupledExpression;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapKind {
    #[serde(rename = "L_ref")]
    Ref,
    #[serde(rename = "L_cls")]
    Cls,
    #[serde(rename = "L_mod")]
    Mod,
    #[serde(rename = "A_dif")]
    Dif,
    #[serde(rename = "L_global")]
    Global,
    #[serde(rename = "L_cs")]
    CrossScale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub grid: Grid,
    pub kind: MapKind,
    pub normalized: bool,
}

/// Group maps of one expression.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMaps {
    pub l_ref: Grid,
    pub l_cls: Grid,
    pub l_mod: Grid,
    pub a_cls: Grid,
    pub a_mod: Grid,
    /// Mean of the clamped modifier gradients.
    pub g_mod: Grid,
}

struct Group {
    gradcam: Grid,
    attention: Grid,
    gradient: Grid,
}

fn group(sal: &ResolvedSaliency, words: &[&str], shape: (usize, usize)) -> Result<Group> {
    let mut idx = Vec::with_capacity(words.len());
    for w in words {
        idx.push(sal.position(w).ok_or_else(|| Error::MissingToken((*w).to_string()))?);
    }
    let mean = |maps: &[Grid]| -> Result<Grid> {
        Ok(Grid::mean_of(idx.iter().map(|&i| &maps[i]))?.unwrap_or_else(|| Grid::zeros(shape.0, shape.1)))
    };
    Ok(Group {
        gradcam: mean(&sal.gradcam)?,
        attention: mean(&sal.attention)?,
        gradient: mean(&sal.gradient)?,
    })
}

/// Averages per-token maps within the ref, cls and mod groups. An empty
/// group yields zero maps.
pub fn group_gradcam(sal: &ResolvedSaliency, expr: &DecoupledExpression) -> Result<GroupMaps> {
    let shape = sal
        .gradcam
        .first()
        .map(Grid::shape)
        .ok_or(Error::EmptyInput("saliency maps"))?;
    let r = group(sal, &expr.ref_words(), shape)?;
    let c = group(sal, &expr.cls_words(), shape)?;
    let m = group(sal, &expr.mod_words(), shape)?;
    Ok(GroupMaps {
        l_ref: r.gradcam,
        l_cls: c.gradcam,
        l_mod: m.gradcam,
        a_cls: c.attention,
        a_mod: m.attention,
        g_mod: m.gradient,
    })
}

const DIF_EPS: f64 = 1e-12;

/// `(A_mod - A_cls) / ||A_mod - A_cls||`, or the zero map for a vanishing difference.
pub fn activation_difference(a_mod: &Grid, a_cls: &Grid) -> Result<Grid> {
    let d = a_mod.zip_with(a_cls, |m, c| m - c)?;
    let n = d.l2_norm();
    Ok(if n < DIF_EPS {
        Grid::zeros(d.height(), d.width())
    } else {
        d.map(|v| v / n)
    })
}

pub fn enhance_global(a_dif: &Grid, g_mod: &Grid, l_mod: &Grid) -> Result<Grid> {
    a_dif.hadamard(g_mod)?.hadamard(l_mod)
}

/// Mean of the two min-max normalised maps.
pub fn fuse(l_global: &Grid, l_ref: &Grid) -> Result<Grid> {
    l_global
        .min_max_normalized()
        .zip_with(&l_ref.min_max_normalized(), |a, b| (a + b) / 2.0)
}

/// Post-fusion transform slot.
pub type Refinement = Arc<dyn Fn(&Grid) -> Grid + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradcamMode {
    /// Fuse the enhanced global map with the expression map.
    Cross,
    /// Normalised expression map only.
    Single,
}

impl std::str::FromStr for GradcamMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(Self::Cross),
            "single" => Ok(Self::Single),
            other => Err(Error::Config(format!("unknown gradcam mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakParams {
    pub theta: f64,
    pub smooth_radius: usize,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self {
            theta: 0.5,
            smooth_radius: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    /// `(x, y)` = `(col, row)`.
    pub coords: Vec<(usize, usize)>,
    pub theta: f64,
    pub smooth_radius: usize,
}

/// Strict-somewhere local maxima of the smoothed map above `theta * max`.
/// A map with no such peak falls back to every global-argmax cell.
pub fn find_local_maxima(map: &Grid, params: PeakParams) -> PeakSet {
    let theta = params.theta.clamp(0.0, 1.0);
    let s = if params.smooth_radius > 0 {
        map.box_smooth(params.smooth_radius)
    } else {
        map.clone()
    };
    let (h, w) = s.shape();
    let mut coords = Vec::new();
    if let Some(max) = s.max() {
        let floor = theta * max;
        for r in 0..h {
            for c in 0..w {
                let v = s.get(r, c);
                if v < floor {
                    continue;
                }
                let mut ge_all = true;
                let mut gt_any = false;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                            continue;
                        }
                        let n = s.get(rr as usize, cc as usize);
                        ge_all &= v >= n;
                        gt_any |= v > n;
                    }
                }
                if ge_all && gt_any {
                    coords.push((c, r));
                }
            }
        }
        if coords.is_empty() {
            for r in 0..h {
                for c in 0..w {
                    if s.get(r, c) == max {
                        coords.push((c, r));
                    }
                }
            }
        }
    }
    PeakSet {
        coords,
        theta,
        smooth_radius: params.smooth_radius,
    }
}

/// Every intermediate of the cross-scale construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub groups: GroupMaps,
    pub a_dif: Grid,
    pub l_global: Grid,
    pub l_cs: Grid,
}

impl FusionOutput {
    pub fn maps(&self) -> Vec<SaliencyMap> {
        let m = |grid: &Grid, kind, normalized| SaliencyMap {
            grid: grid.clone(),
            kind,
            normalized,
        };
        vec![
            m(&self.groups.l_ref, MapKind::Ref, false),
            m(&self.groups.l_cls, MapKind::Cls, false),
            m(&self.groups.l_mod, MapKind::Mod, false),
            m(&self.a_dif, MapKind::Dif, false),
            m(&self.l_global, MapKind::Global, false),
            m(&self.l_cs, MapKind::CrossScale, true),
        ]
    }
}

/// Plain elementwise mean, for comparison with [`fuse`].
pub fn fuse_unnormalized(l_global: &Grid, l_ref: &Grid) -> Result<Grid> {
    l_global.zip_with(l_ref, |a, b| (a + b) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionParams {
    pub mode: GradcamMode,
    /// Min-max normalise operands before averaging.
    pub normalize: bool,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            mode: GradcamMode::Cross,
            normalize: true,
        }
    }
}

pub fn cross_scale_map(
    sal: &ResolvedSaliency,
    expr: &DecoupledExpression,
    params: FusionParams,
    refine: Option<&Refinement>,
) -> Result<FusionOutput> {
    let groups = group_gradcam(sal, expr)?;
    let a_dif = activation_difference(&groups.a_mod, &groups.a_cls)?;
    let l_global = enhance_global(&a_dif, &groups.g_mod, &groups.l_mod)?;
    let fused = match (params.mode, params.normalize) {
        (GradcamMode::Cross, true) => fuse(&l_global, &groups.l_ref)?,
        (GradcamMode::Cross, false) => fuse_unnormalized(&l_global, &groups.l_ref)?,
        (GradcamMode::Single, true) => groups.l_ref.min_max_normalized(),
        (GradcamMode::Single, false) => groups.l_ref.clone(),
    };
    let l_cs = match refine {
        Some(f) => f(&fused),
        None => fused,
    };
    Ok(FusionOutput {
        groups,
        a_dif,
        l_global,
        l_cs,
    })
}
