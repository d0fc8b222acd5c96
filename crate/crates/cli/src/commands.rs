use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use segalign_core::ingest::{container_from_pngs, save_container, synthetic_proposals, SynthLayout};
use segalign_core::pipeline::records::{load_gt, read_json, write_json};
use segalign_core::pipeline::{
    evaluate, run_ablation, write_forced_alignment, write_overlays, AblationPreset, Encoders, EvalInputs, Pipeline,
    PipelineConfig, RunSummary, SplitSpec, SynthSpec,
};
use segalign_core::prompt::{render_prompts, Augmentations, ClassTextBank};

use crate::cli::{BankCmd, EvalArgs, Global, OverlayArgs, ProposalsCmd, RunArgs};

/// Per-item failure count; zero means a clean run.
pub type Failures = usize;

fn parse_augment(s: &str) -> Result<Augmentations> {
    match s {
        "all" => return Ok(Augmentations::ALL),
        "none" | "" => return Ok(Augmentations::NONE),
        _ => {}
    }
    let mut a = Augmentations::NONE;
    for part in s.split(',').map(str::trim) {
        match part {
            "synonyms" => a.synonyms = true,
            "backgrounds" => a.backgrounds = true,
            "descriptions" => a.descriptions = true,
            other => bail!("unknown augmentation `{other}`"),
        }
    }
    Ok(a)
}

fn emit_json<T: serde::Serialize>(output: Option<&Path>, value: &T) -> Result<()> {
    match output {
        Some(p) => write_json(p, value)?,
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

pub fn bank(cmd: BankCmd) -> Result<Failures> {
    match cmd {
        BankCmd::Build {
            bank,
            template,
            augment,
            output,
        } => {
            let mut b = ClassTextBank::load(&bank)?;
            if let Some(t) = template {
                b = b.with_template(&t)?;
            }
            let prompts = render_prompts(&b.with_augmentations(parse_augment(&augment)?));
            emit_json(output.as_deref(), &prompts)?;
        }
        BankCmd::Validate { bank } => {
            let b = ClassTextBank::load(&bank)?;
            let prompts = render_prompts(&b);
            println!(
                "ok: {} classes, {} backgrounds, {} unseen, {} prompts, template {:?}",
                b.classes().len(),
                b.backgrounds().len(),
                b.unseen().len(),
                prompts.len(),
                b.template()
            );
        }
    }
    Ok(0)
}

pub fn proposals(cmd: ProposalsCmd, global: &Global) -> Result<Failures> {
    match cmd {
        ProposalsCmd::Import {
            masks,
            image_id,
            output,
        } => {
            let c = container_from_pngs(&masks, &image_id)?;
            println!("{}: {} masks", image_id, c.masks.len());
            write_json(&output, &c)?;
        }
        ProposalsCmd::Synth {
            scenes: Some(scenes),
            bank,
            output,
            ..
        } => {
            let spec: SynthSpec = read_json(&scenes)?;
            let bank = ClassTextBank::load(bank.as_deref().context("--bank is required with --scenes")?)?;
            let cfg = write_forced_alignment(&spec, &bank, &output)?;
            println!("{}", cfg.display());
        }
        ProposalsCmd::Synth {
            image_id,
            height,
            width,
            layout,
            output,
            ..
        } => {
            let id = image_id.context("either --scenes or --image-id is required")?;
            let layout = match layout.as_str() {
                "grid" => SynthLayout::Grid2x2,
                n => SynthLayout::Random {
                    count: n
                        .parse()
                        .with_context(|| format!("layout `{n}` is neither `grid` nor a count"))?,
                },
            };
            let set = synthetic_proposals(&id, global.seed.unwrap_or(0), layout, height, width)?;
            save_container(&output, &set)?;
            println!("{id}: {} masks", set.len());
        }
    }
    Ok(0)
}

fn load_config(global: &Global) -> Result<PipelineConfig> {
    let path = global.config.as_deref().context("--config is required")?;
    let mut cfg = PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(w) = global.workers {
        cfg.workers = w;
    }
    if let Some(o) = &global.out {
        cfg.out = o.clone();
    }
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_run_args(cfg: &mut PipelineConfig, args: &RunArgs) {
    if let Some(v) = args.crop {
        cfg.crop.variant = v;
    }
    if let Some(t) = &args.template {
        cfg.template = Some(t.clone());
    }
    if let Some(t) = args.tau {
        cfg.tau = t;
    }
    if let Some(m) = args.gradcam {
        cfg.fusion.mode = m;
    }
    if args.no_selection {
        cfg.selection = false;
    }
    if let Some(e) = &args.expressions {
        cfg.expressions = Some(e.clone());
    }
}

fn report(name: &str, s: &RunSummary) -> Failures {
    for f in &s.failures {
        eprintln!("failed {}: {}", f.item, f.error);
    }
    if let Some(e) = &s.eval {
        print!("{}", e.to_table());
    }
    println!("{name}: {} items, {} failures", s.items, s.failures.len());
    s.failures.len()
}

pub enum Task {
    Ovss,
    Res,
}

pub fn run(task: Task, args: RunArgs, global: &Global) -> Result<Failures> {
    let mut cfg = load_config(global)?;
    apply_run_args(&mut cfg, &args);
    cfg.validate()?;
    let enc = Encoders::from_spec(&cfg.encoder)?;
    let p = Pipeline::new(cfg, enc)?;
    Ok(match task {
        Task::Ovss => report("ovss", &p.run_ovss()?),
        Task::Res => report("res", &p.run_res()?),
    })
}

pub fn eval(args: EvalArgs) -> Result<Failures> {
    let split = match (&args.bank, args.unseen.is_empty()) {
        (Some(b), _) => {
            let bank = ClassTextBank::load(b)?;
            Some(SplitSpec {
                unseen: bank.unseen().to_vec(),
                taxonomy: bank.class_names(),
            })
        }
        (None, false) => {
            let mut taxonomy = args.unseen.clone();
            if let Some(g) = &args.gt {
                for c in load_gt(g)? {
                    taxonomy.extend(c.instances.into_iter().map(|i| i.category));
                }
            }
            Some(SplitSpec {
                unseen: args.unseen.clone(),
                taxonomy,
            })
        }
        (None, true) => None,
    };
    let reports = evaluate(&EvalInputs {
        results: &args.results,
        gt: args.gt.as_deref(),
        proposals: args.proposals.as_deref(),
        expressions: args.expressions.as_deref(),
        split,
    })?;
    for (name, r) in &reports {
        println!("[{name}]");
        print!("{}", r.to_table());
    }
    Ok(0)
}

pub fn overlay(args: OverlayArgs, global: &Global) -> Result<Failures> {
    let out = global.out.clone().unwrap_or_else(|| args.results.join("overlay"));
    let written = write_overlays(&args.results, &args.images, args.proposals.as_deref(), &out)?;
    println!("{} overlays in {}", written.len(), out.display());
    Ok(0)
}

pub fn ablate(preset: AblationPreset, global: &Global) -> Result<Failures> {
    let cfg = load_config(global)?;
    cfg.validate()?;
    let enc = Encoders::from_spec(&cfg.encoder)?;
    let rows = run_ablation(preset, &cfg, &enc)?;
    let summary: PathBuf = cfg.out.join(preset.name()).join("summary.txt");
    print!("{}", std::fs::read_to_string(&summary)?);
    Ok(rows.iter().map(|r| r.failures).sum())
}
