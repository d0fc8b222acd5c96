//! Offline scoring of a results directory against ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::records::{json_files, load_expressions, load_gt, read_json, GtContainer, OvssRecord, ResRecord};
use super::{ovss_report, write_report};
use crate::error::{Error, Result};
use crate::eval::{image_level_miou, proposal_miou, split_report, EvalReport, GtInstance, ImageCategoryMasks};
use crate::ingest::{load_container, RejectionLog};
use crate::mask::rle;

/// Unseen names and the taxonomy they are drawn from.
#[derive(Debug, Clone, Default)]
pub struct SplitSpec {
    pub unseen: Vec<String>,
    pub taxonomy: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EvalInputs<'a> {
    pub results: &'a Path,
    pub gt: Option<&'a Path>,
    pub proposals: Option<&'a Path>,
    pub expressions: Option<&'a Path>,
    pub split: Option<SplitSpec>,
}

fn check_ids<'a>(results: impl Iterator<Item = &'a str>, gt: impl Iterator<Item = &'a str>) -> Result<()> {
    let r: BTreeSet<&str> = results.collect();
    let g: BTreeSet<&str> = gt.collect();
    if r == g {
        return Ok(());
    }
    Err(Error::IdMismatch {
        missing_results: g.difference(&r).map(|s| s.to_string()).collect(),
        missing_gt: r.difference(&g).map(|s| s.to_string()).collect(),
    })
}

fn load_ovss(dir: &Path) -> Result<Vec<OvssRecord>> {
    json_files(dir)?.iter().map(|p| read_json(p)).collect()
}

/// Scores whatever `results` holds: `ovss/` under the image-level protocol,
/// proposal containers under proposal matching, `res/` against expression
/// ground truth. Each report is written as `<name>_eval.{json,txt}` into
/// `results` and returned keyed by name.
pub fn evaluate(inputs: &EvalInputs) -> Result<BTreeMap<String, EvalReport>> {
    let split = |r: EvalReport| match &inputs.split {
        Some(s) => split_report(r, &s.unseen, &s.taxonomy),
        None => Ok(r),
    };
    let gt: Option<BTreeMap<String, GtContainer>> = inputs
        .gt
        .map(|p| load_gt(p).map(|v| v.into_iter().map(|g| (g.image_id.clone(), g)).collect()))
        .transpose()?;
    let mut out = BTreeMap::new();

    let ovss_dir = inputs.results.join("ovss");
    if ovss_dir.is_dir() {
        let gt = gt
            .as_ref()
            .ok_or_else(|| Error::Config("ovss results need ground truth".into()))?;
        let records = load_ovss(&ovss_dir)?;
        check_ids(
            records.iter().map(|r| r.image_id.as_str()),
            gt.keys().map(String::as_str),
        )?;
        out.insert("ovss".to_string(), split(ovss_report(&records, gt)?)?);
    }

    if let Some(dir) = inputs.proposals {
        let gt = gt
            .as_ref()
            .ok_or_else(|| Error::Config("proposal scoring needs ground truth".into()))?;
        let log = RejectionLog::default();
        let mut sets = BTreeMap::new();
        for id in gt.keys() {
            sets.insert(id.clone(), load_container(&dir.join(format!("{id}.json")), &log)?);
        }
        let instances: Vec<GtInstance> = gt
            .values()
            .map(GtContainer::instances)
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        out.insert("proposals".to_string(), split(proposal_miou(&instances, &sets)?)?);
    }

    let res_dir = inputs.results.join("res");
    if let (true, Some(path)) = (res_dir.is_dir(), inputs.expressions) {
        let exprs: BTreeMap<String, Vec<u32>> = load_expressions(path)?
            .into_iter()
            .filter_map(|e| e.gt_rle.map(|g| (e.id, g)))
            .collect();
        let records: Vec<ResRecord> = json_files(&res_dir)?
            .iter()
            .map(|p| read_json(p))
            .collect::<Result<_>>()?;
        check_ids(records.iter().map(|r| r.id.as_str()), exprs.keys().map(String::as_str))?;
        let mut preds = ImageCategoryMasks::new();
        let mut gts = ImageCategoryMasks::new();
        for r in &records {
            let key = (r.id.clone(), r.target_class.clone());
            gts.insert(key.clone(), vec![rle::decode(&exprs[&r.id], r.height, r.width)?]);
            preds.insert(key, vec![rle::decode(&r.rle, r.height, r.width)?]);
        }
        out.insert("res".to_string(), split(image_level_miou(&preds, &gts)?)?);
    }

    if out.is_empty() {
        return Err(Error::Config(format!(
            "nothing to evaluate under {}",
            inputs.results.display()
        )));
    }
    for (name, r) in &out {
        write_report(inputs.results, name, r)?;
    }
    Ok(out)
}
