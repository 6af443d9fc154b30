use std::fmt::Write as _;
use std::path::Path;

use dope_core::dope::{
    run_pipeline_with, select_heads, BandPolarity, DenoiserRegistry, DopeConfig, HeadRef, NoiseSigma, SortOrder,
};
use dope_core::lab::{
    attention_entropy, causal_attention, run_sweep, scaling_study, sink_score, synth_dump, ConeEnsembleSpec,
    SweepSpec, SynthSpec,
};
use dope_core::qkdp::{DType, QKDump};
use dope_core::rope::{HeadTensor, Indicator, Stage};
use dope_core::spectral::{score_heads, EntropyReport, EntropyType, ScorerRegistry};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::output::{sha256_hex, write_atomic, write_json, Run, SCHEMA_VERSION};
use crate::CliError;

pub fn parse_head_ref(s: &str) -> Result<HeadRef, String> {
    let (l, h) = s.split_once(':').ok_or_else(|| format!("expected LAYER:HEAD, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok(HeadRef { layer: parse(l)?, head: parse(h)? })
}

fn parse_json<T: for<'de> Deserialize<'de>>(bytes: &[u8], path: &Path) -> Result<T, CliError> {
    serde_json::from_slice(bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn load_dump(run: &mut Run, path: &Path) -> Result<(QKDump, String), CliError> {
    let bytes = run.read(path)?;
    let digest = sha256_hex(&bytes);
    let dump = QKDump::from_bytes(&bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok((dump, digest))
}

fn load_config(run: &mut Run, file: Option<&Path>, preset: Option<&str>) -> Result<Option<DopeConfig>, CliError> {
    match (file, preset) {
        (Some(path), _) => {
            let bytes = run.read(path)?;
            let text = String::from_utf8(bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            DopeConfig::from_json(&text)
                .map(Some)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
        }
        (None, Some(name)) => DopeConfig::preset(name).map(Some).ok_or_else(|| {
            CliError::usage(format!("unknown preset `{name}` (known: {})", DopeConfig::PRESETS.join(", ")))
        }),
        (None, None) => Ok(None),
    }
}

#[derive(Serialize)]
struct RankedHead {
    layer: usize,
    head: usize,
    score: f64,
}

pub fn score(
    dump_path: &Path,
    indicator: Indicator,
    stage: Stage,
    entropy: EntropyType,
    out: &Path,
    manifest: Option<&Path>,
) -> Result<(), CliError> {
    let mut run = Run::start("score");
    run.config(&json!({ "indicator": indicator, "stage": stage, "entropy": entropy }));
    let (dump, digest) = load_dump(&mut run, dump_path)?;
    let grid = dump.stage(stage, indicator).ok_or_else(|| {
        CliError::data(format!("{}: dump has no {stage} {indicator} tensors", dump_path.display()))
    })?;
    let report = score_heads(grid, entropy)?;
    let mut ranking: Vec<RankedHead> =
        report.heads.iter().map(|h| RankedHead { layer: h.layer, head: h.head, score: h.score }).collect();
    ranking.sort_by(|a, b| a.score.total_cmp(&b.score).then((a.layer, a.head).cmp(&(b.layer, b.head))));
    let doc = json!({
        "schema": "dope.entropy-report",
        "version": SCHEMA_VERSION,
        "source": { "model_id": dump.meta.model_id, "sha256": digest },
        "report_digest": report.digest(),
        "report": report,
        "ranking": ranking,
    });
    write_json(out, &doc)?;
    run.wrote(out);
    run.finish(out, manifest)
}

pub fn select(report_path: &Path, k: usize, order: SortOrder, out: &Path, manifest: Option<&Path>) -> Result<(), CliError> {
    let mut run = Run::start("select");
    run.config(&json!({ "k": k, "order": order }));
    let bytes = run.read(report_path)?;
    let doc: Value = parse_json(&bytes, report_path)?;
    let report: EntropyReport = serde_json::from_value(doc.get("report").cloned().unwrap_or(doc))
        .map_err(|e| CliError::data(format!("{}: not an entropy report: {e}", report_path.display())))?;
    let selected = select_heads(&report, k, order)?;
    let doc = json!({
        "schema": "dope.selection",
        "version": SCHEMA_VERSION,
        "report_digest": report.digest(),
        "k": k,
        "order": order,
        "selected": selected,
    });
    write_json(out, &doc)?;
    run.wrote(out);
    run.finish(out, manifest)
}

pub fn apply(
    dump_path: &Path,
    config: Option<&Path>,
    preset: Option<&str>,
    out: &Path,
    plan_path: &Path,
    manifest: Option<&Path>,
) -> Result<(), CliError> {
    let mut run = Run::start("apply");
    let config = load_config(&mut run, config, preset)?.ok_or_else(|| CliError::usage("--config or --preset is required"))?;
    run.config(&config);
    let (dump, _) = load_dump(&mut run, dump_path)?;
    let (plan, _, denoised) =
        run_pipeline_with(&ScorerRegistry::builtin(), &DenoiserRegistry::builtin(), &dump, &config)?;
    write_atomic(out, &denoised.to_bytes()?)?;
    run.wrote(out);
    let doc = json!({ "schema": "dope.plan", "version": SCHEMA_VERSION, "plan": plan });
    write_json(plan_path, &doc)?;
    run.wrote(plan_path);
    run.finish(out, manifest)
}

pub struct SimOverrides {
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub n: Option<usize>,
    pub d_h: Option<usize>,
    pub seed: Option<u64>,
    pub sinks: Vec<HeadRef>,
    pub f32: bool,
}

pub fn simulate(spec_path: Option<&Path>, o: SimOverrides, out: &Path, manifest: Option<&Path>) -> Result<(), CliError> {
    let mut run = Run::start("simulate");
    let mut spec: SynthSpec = match spec_path {
        Some(p) => {
            let bytes = run.read(p)?;
            parse_json(&bytes, p)?
        }
        None => SynthSpec::default(),
    };
    spec.layers = o.layers.unwrap_or(spec.layers);
    spec.heads = o.heads.unwrap_or(spec.heads);
    spec.scenario.n = o.n.unwrap_or(spec.scenario.n);
    spec.scenario.d_h = o.d_h.unwrap_or(spec.scenario.d_h);
    spec.scenario.seed = o.seed.unwrap_or(spec.scenario.seed);
    if !o.sinks.is_empty() {
        spec.sink_heads = o.sinks;
    }
    if o.f32 {
        spec.dtype = DType::F32;
    }
    run.config(&spec);
    let dump = synth_dump(&spec).map_err(|e| CliError::usage(e.to_string()))?;
    write_atomic(out, &dump.to_bytes()?)?;
    run.wrote(out);
    run.finish(out, manifest)
}

pub fn verify_bounds(sweep_path: Option<&Path>, out: &Path, manifest: Option<&Path>) -> Result<(), CliError> {
    let mut run = Run::start("verify-bounds");
    let spec: SweepSpec = match sweep_path {
        Some(p) => {
            let bytes = run.read(p)?;
            parse_json(&bytes, p)?
        }
        None => SweepSpec::default(),
    };
    run.config(&spec);
    spec.points().map_err(|e| CliError::usage(e.to_string()))?;
    let results = run_sweep(&spec)?;

    let mut csv = String::from("bound_id,N,gamma,omega,lhs,rhs,satisfied,M,tight,ensemble\n");
    let mut violations = 0;
    for (point, witnesses) in &results {
        for w in witnesses {
            violations += usize::from(!w.satisfied);
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{}",
                w.bound_id,
                w.n,
                w.gamma,
                w.omega,
                w.lhs,
                w.rhs,
                w.satisfied,
                w.m,
                w.is_tight(),
                point.index
            );
        }
    }
    write_atomic(out, csv.as_bytes())?;
    run.wrote(out);
    run.finish(out, manifest)?;
    if violations > 0 {
        return Err(CliError::violation(format!("{violations} bound witnesses violated; see {}", out.display())));
    }
    Ok(())
}

fn default_template() -> ConeEnsembleSpec {
    ConeEnsembleSpec {
        n: 1,
        omega: 0.0,
        beta_min: 0.5,
        beta_max: 2.0,
        gamma: std::f64::consts::PI / 6.0,
        direction: [1.0, 0.0],
        seed: 42,
    }
}

pub fn scaling(
    template_path: Option<&Path>,
    ns: &[usize],
    out: &Path,
    csv_path: Option<&Path>,
    manifest: Option<&Path>,
) -> Result<(), CliError> {
    let mut run = Run::start("scaling");
    let template: ConeEnsembleSpec = match template_path {
        Some(p) => {
            let bytes = run.read(p)?;
            parse_json(&bytes, p)?
        }
        None => default_template(),
    };
    run.config(&json!({ "template": template, "ns": ns }));
    if ns.len() < 2 {
        return Err(CliError::usage("scaling needs at least two sequence lengths"));
    }
    let study = scaling_study(&template, ns).map_err(|e| CliError::usage(e.to_string()))?;
    write_json(out, &json!({ "schema": "dope.scaling", "version": SCHEMA_VERSION, "study": study }))?;
    run.wrote(out);
    if let Some(path) = csv_path {
        let mut csv = String::from("N,lambda_max,lambda_min,sigma1,coherence\n");
        for r in &study.rows {
            let _ = writeln!(csv, "{},{},{},{},{}", r.n, r.lambda_max, r.lambda_min, r.sigma1, r.coherence);
        }
        write_atomic(path, csv.as_bytes())?;
        run.wrote(path);
    }
    run.finish(out, manifest)
}

pub struct SinkInput {
    pub dump: Option<std::path::PathBuf>,
    pub synth: Option<String>,
}

/// Removes every band at or below `2π/n`, which covers any band slow enough
/// to stay coherent across the whole window.
fn default_sink_config(n: usize, k: usize) -> DopeConfig {
    DopeConfig {
        variant: "by-parts".into(),
        indicator: Indicator::Key,
        entropy_type: EntropyType::Trunc(8),
        num_heads: k.max(1),
        criterion_stage: Stage::PostNtk,
        sort_order: SortOrder::Asc,
        training_length: n as u64,
        noise_sigma: NoiseSigma::Fixed(1.0),
        seed: 42,
        band_polarity: BandPolarity::KeepAbove,
    }
}

#[derive(Serialize)]
struct AttentionMetrics {
    sink_score: f64,
    attention_entropy: f64,
}

fn metrics(q: &HeadTensor, k: &HeadTensor, target: &[usize]) -> Result<AttentionMetrics, CliError> {
    let a = causal_attention(q, k)?;
    Ok(AttentionMetrics { sink_score: sink_score(&a, target)?, attention_entropy: attention_entropy(&a)?.mean })
}

fn head_metrics(dump: &QKDump, target: &[usize]) -> Result<Vec<AttentionMetrics>, CliError> {
    let qs = dump.require_stage(Stage::PostRope, Indicator::Query)?;
    let ks = dump.require_stage(Stage::PostRope, Indicator::Key)?;
    qs.par_iter().zip(ks).map(|(q, k)| metrics(q, k, target)).collect()
}

pub fn sink_report(
    input: SinkInput,
    config: Option<&Path>,
    preset: Option<&str>,
    before_after: bool,
    target: &[usize],
    out: &Path,
    manifest: Option<&Path>,
) -> Result<(), CliError> {
    let mut run = Run::start("sink-report");
    let (dump, source, default_k) = match (&input.dump, &input.synth) {
        (Some(path), _) => {
            let (dump, digest) = load_dump(&mut run, path)?;
            let source = json!({ "kind": "dump", "model_id": dump.meta.model_id, "sha256": digest });
            (dump, source, 1)
        }
        (None, Some(spec_path)) => {
            let spec: SynthSpec = if spec_path.is_empty() {
                SynthSpec::default()
            } else {
                let p = Path::new(spec_path);
                let bytes = run.read(p)?;
                parse_json(&bytes, p)?
            };
            let dump = synth_dump(&spec).map_err(|e| CliError::usage(e.to_string()))?;
            let k = spec.sink_heads.len();
            (dump, json!({ "kind": "synth", "model_id": spec.model_id, "spec": spec }), k)
        }
        (None, None) => return Err(CliError::usage("--dump or --synth is required")),
    };
    let config = load_config(&mut run, config, preset)?.unwrap_or_else(|| default_sink_config(dump.n, default_k));
    run.config(&json!({ "dope": config, "target": target, "before_after": before_after }));

    let (plan, report, denoised) =
        run_pipeline_with(&ScorerRegistry::builtin(), &DenoiserRegistry::builtin(), &dump, &config)?;
    let before = head_metrics(&dump, target)?;
    let after = if before_after { Some(head_metrics(&denoised, target)?) } else { None };

    let heads: Vec<Value> = report
        .heads
        .iter()
        .enumerate()
        .map(|(idx, h)| {
            let mut row = json!({
                "layer": h.layer,
                "head": h.head,
                "score": h.score,
                "selected": plan.is_selected(h.layer, h.head),
                "before": before[idx],
            });
            if let Some(after) = &after {
                row["after"] = serde_json::to_value(&after[idx]).unwrap_or(Value::Null);
            }
            row
        })
        .collect();
    let doc = json!({
        "schema": "dope.sink-report",
        "version": SCHEMA_VERSION,
        "source": source,
        "config": config,
        "entropy_type": report.entropy_type,
        "target_cols": target,
        "selected": plan.selected,
        "heads": heads,
    });
    write_json(out, &doc)?;
    run.wrote(out);
    run.finish(out, manifest)
}
