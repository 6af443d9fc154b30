use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{select_heads, DenoiserRegistry, DopeConfig, HeadAction, HeadRef, PlanContext};
use crate::error::{Error, Result};
use crate::qkdp::QKDump;
use crate::rope::{HeadTensor, Indicator, Stage};
use crate::spectral::{score_heads_with, EntropyReport, ScorerRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub layer: usize,
    pub head: usize,
    pub score: f64,
    pub selected: bool,
}

/// Everything needed to reproduce or audit one denoising run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DopePlan {
    pub config: DopeConfig,
    pub selected: Vec<HeadRef>,
    pub actions: Vec<HeadAction>,
    pub scores: Vec<ScoreRow>,
    pub report_digest: String,
    pub source_digest: String,
}

impl DopePlan {
    pub fn is_selected(&self, layer: usize, head: usize) -> bool {
        self.selected.contains(&HeadRef { layer, head })
    }
}

pub fn run_pipeline(dump: &QKDump, config: &DopeConfig) -> Result<(DopePlan, QKDump)> {
    run_pipeline_with(&ScorerRegistry::builtin(), &DenoiserRegistry::builtin(), dump, config)
        .map(|(plan, _, out)| (plan, out))
}

/// Scores the criterion stage, selects heads, and denoises the post-rope
/// query and key tensors of the selected heads. The returned dump holds the
/// two post-rope grids; unselected heads are copied through untouched.
pub fn run_pipeline_with(
    scorers: &ScorerRegistry,
    denoisers: &DenoiserRegistry,
    dump: &QKDump,
    config: &DopeConfig,
) -> Result<(DopePlan, EntropyReport, QKDump)> {
    config.validate(denoisers)?;
    let criterion = dump.require_stage(config.criterion_stage, config.indicator)?;
    let queries = dump.require_stage(Stage::PostRope, Indicator::Query)?;
    let keys = dump.require_stage(Stage::PostRope, Indicator::Key)?;
    if config.num_heads > dump.layers * dump.heads {
        return Err(Error::Config(format!(
            "num_heads {} exceeds the {} heads in the dump",
            config.num_heads,
            dump.layers * dump.heads
        )));
    }

    let report = score_heads_with(scorers, criterion, config.entropy_type)?;
    let selected = select_heads(&report, config.num_heads, config.sort_order)?;
    let schedule = dump.schedule()?;
    let denoiser = denoisers.create(config)?;
    let ctx = PlanContext { dump, config, schedule: &schedule, selected: &selected };
    let actions = denoiser.plan(&ctx)?;
    if actions.len() != selected.len() {
        return Err(Error::Config(format!(
            "{} planned {} actions for {} selected heads",
            denoiser.name(),
            actions.len(),
            selected.len()
        )));
    }

    let by_head: BTreeMap<HeadRef, &HeadAction> = actions
        .iter()
        .map(|a| (HeadRef { layer: a.layer, head: a.head }, a))
        .collect();
    let denoise_grid = |grid: &[HeadTensor]| -> Result<Vec<HeadTensor>> {
        grid.par_iter()
            .map(|t| match by_head.get(&HeadRef { layer: t.layer, head: t.head }) {
                Some(action) => denoiser.apply(t, action),
                None => Ok(t.clone()),
            })
            .collect()
    };

    let mut out = dump.empty_like();
    out.insert_stage(Stage::PostRope, Indicator::Query, denoise_grid(queries)?)?;
    out.insert_stage(Stage::PostRope, Indicator::Key, denoise_grid(keys)?)?;

    let report_digest = report.digest();
    let source_digest = dump.digest()?;
    out.meta.provenance = Some(serde_json::json!({
        "variant": config.variant,
        "selected": selected,
        "report_digest": report_digest,
        "source_digest": source_digest,
    }));

    let scores = report
        .heads
        .iter()
        .map(|h| ScoreRow {
            layer: h.layer,
            head: h.head,
            score: h.score,
            selected: by_head.contains_key(&HeadRef { layer: h.layer, head: h.head }),
        })
        .collect();
    let plan = DopePlan {
        config: config.clone(),
        selected,
        actions,
        scores,
        report_digest,
        source_digest,
    };
    Ok((plan, report, out))
}
