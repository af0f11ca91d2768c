use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use memoir_core::backbone::{
    checkpoint_digest, load_checkpoint, pretrain_with, save_checkpoint, BackboneConfig,
    BackboneModel, FfnKind, PretrainOptions,
};
use memoir_core::datagen::{
    describe, generate_benchmark, load_records, save_records, BenchmarkSet,
};
use memoir_core::editor::{
    restore, resume_session, snapshot, EditorState, EditorStrategy, SessionOptions, StrategyKind,
};
use memoir_core::eval::{
    ablate, evaluate, evaluate_unedited, AblationAxis, EvalOptions, MetricsReport,
};
use memoir_core::tophash::SelectionStrategy;

use crate::args::{AblateArgs, EditArgs, EvalArgs, GenDataArgs, InspectArgs, PretrainArgs};
use crate::config::{out_root, DEFAULT_BACKBONE, DEFAULT_BENCHMARK};
use crate::error::CliError;
use crate::manifest::{beside, Manifest};

pub struct Ctx {
    pub seed: u64,
    pub verbose: u8,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create_parent(file: &Path) -> Result<(), CliError> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn or_root(path: Option<PathBuf>, name: &str) -> PathBuf {
    path.unwrap_or_else(|| out_root().join(name))
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> Result<T, CliError> {
    s.parse()
        .map_err(|_| CliError::Usage(format!("invalid {what} '{s}'")))
}

fn load_inputs(
    backbone: &Path,
    benchmark: &Path,
    manifest: &mut Manifest,
) -> Result<(BackboneModel, BenchmarkSet), CliError> {
    let model = load_checkpoint(backbone)?;
    let bench = load_records(benchmark, model.config().max_seq_len)?;
    manifest.input("backbone", backbone)?;
    manifest.input("benchmark", benchmark)?;
    Ok((model, bench))
}

pub fn gen_data(a: GenDataArgs, ctx: &Ctx) -> Result<(), CliError> {
    let facts = a.facts.unwrap_or(1000);
    let rephrases = a.rephrases.unwrap_or(3);
    let irrelevant = a.irrelevant.unwrap_or(100);
    let out = or_root(a.out, DEFAULT_BENCHMARK);
    let set = generate_benchmark(facts, rephrases, irrelevant, ctx.seed)?;
    create_parent(&out)?;
    save_records(&set, &out)?;

    let mut m = Manifest::new(
        "gen-data",
        ctx.seed,
        json!({ "facts": facts, "rephrases": rephrases, "irrelevant": irrelevant, "out": out }),
    );
    m.output(&out);
    m.results = json!({ "summary": describe(&set) });
    m.write(&beside(&out))?;
    println!("{}: {}", out.display(), describe(&set));
    Ok(())
}

pub fn pretrain(a: PretrainArgs, ctx: &Ctx) -> Result<(), CliError> {
    let d = BackboneConfig::default();
    let layers = a.layers.unwrap_or(d.n_layers);
    let ffn = match a.ffn.as_deref().unwrap_or("gelu") {
        "gelu" => FfnKind::Gelu,
        "swiglu" => FfnKind::SwiGlu,
        other => return Err(CliError::Usage(format!("invalid ffn '{other}'"))),
    };
    let config = BackboneConfig {
        d_model: a.d_model.unwrap_or(d.d_model),
        n_layers: layers,
        n_heads: a.heads.unwrap_or(d.n_heads),
        d_ffn: a.d_ffn.unwrap_or(d.d_ffn),
        max_seq_len: a.max_seq_len.unwrap_or(d.max_seq_len),
        edit_layer_index: a
            .edit_layer
            .unwrap_or_else(|| BackboneConfig::default_edit_layer(layers)),
        ffn,
        rng_seed: ctx.seed,
        ..d
    };
    config.validate()?;
    let dp = PretrainOptions::default();
    let opts = PretrainOptions {
        steps: a.steps.unwrap_or(dp.steps),
        batch_size: a.batch_size.unwrap_or(dp.batch_size),
        learning_rate: a.lr.unwrap_or(dp.learning_rate),
        warmup_steps: a.warmup.unwrap_or(dp.warmup_steps),
        ..dp
    };
    let bench_path = or_root(a.benchmark, DEFAULT_BENCHMARK);
    let out = or_root(a.out, DEFAULT_BACKBONE);

    let mut m = Manifest::new(
        "pretrain",
        ctx.seed,
        json!({ "backbone": config, "pretrain": opts, "benchmark": bench_path, "out": out }),
    );
    let bench = load_records(&bench_path, config.max_seq_len)?;
    m.input("benchmark", &bench_path)?;
    ctx.log(format!(
        "pre-training on {} pairs for {} steps",
        bench.pretrain_corpus.len(),
        opts.steps
    ));
    let started = Instant::now();
    let (model, report) = pretrain_with(config, &bench.pretrain_corpus, &opts)?;
    create_parent(&out)?;
    save_checkpoint(&model, &out)?;
    m.output(&out);
    m.results = json!({
        "digest": checkpoint_digest(&model),
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
        "curve": report.curve,
        "wall_s": started.elapsed().as_secs_f64(),
    });
    m.write(&beside(&out))?;
    println!(
        "{}: loss {:.4} -> {:.4}",
        out.display(),
        report.initial_loss,
        report.final_loss
    );
    Ok(())
}

fn edit_strategy(a: &EditArgs, seed: u64) -> Result<EditorStrategy, CliError> {
    let kind: StrategyKind = parse("strategy", a.strategy.as_deref().unwrap_or("memoir"))?;
    let mut s = EditorStrategy::new(kind);
    if let Some(sel) = &a.selection {
        s.routing.strategy = parse::<SelectionStrategy>("selection", sel)?;
    }
    s.routing.k = a.k.unwrap_or(s.routing.k);
    s.routing.tau = a.tau.unwrap_or(s.routing.tau);
    s.routing.conditional_activation = !a.no_conditional_activation;
    s.train.steps_per_edit = a.steps.unwrap_or(s.train.steps_per_edit);
    s.train.learning_rate = a.lr.unwrap_or(s.train.learning_rate);
    s.train.grad_clip_norm = a.grad_clip.unwrap_or(s.train.grad_clip_norm);
    s.train.rng_seed = seed;
    s.permutation_seed = seed;
    s.train.validate()?;
    Ok(s)
}

pub fn edit(a: EditArgs, ctx: &Ctx) -> Result<(), CliError> {
    let strategy = edit_strategy(&a, ctx.seed)?;
    let backbone = or_root(a.backbone.clone(), DEFAULT_BACKBONE);
    let bench_path = or_root(a.benchmark.clone(), DEFAULT_BENCHMARK);
    let out = or_root(a.out.clone(), "edit");
    let opts = SessionOptions {
        snapshot_every: a.snapshot_every.unwrap_or(100),
        stop_after: a.stop_after,
    };

    let mut m = Manifest::new(
        "edit",
        ctx.seed,
        json!({
            "strategy": strategy,
            "centering_n": a.centering_n,
            "snapshot_every": opts.snapshot_every,
            "stop_after": opts.stop_after,
            "backbone": backbone,
            "benchmark": bench_path,
            "resume": a.resume,
            "out": out,
        }),
    );
    let (model, mut bench) = load_inputs(&backbone, &bench_path, &mut m)?;
    if let Some(n) = a.centering_n {
        bench = bench.with_centering(n);
    }
    let mut state = match &a.resume {
        Some(path) => {
            m.input("resume", path)?;
            let s = restore(path)?;
            if s.strategy() != &strategy {
                ctx.log("resuming with the stored strategy; editing flags are ignored");
            }
            s
        }
        None => EditorState::new(&model, strategy, &bench.centering_corpus)?,
    };

    create_dir(&out)?;
    let snap_dir = out.join("snapshots");
    let mut snaps = Vec::new();
    let mut hook = |s: &EditorState| -> memoir_core::Result<()> {
        std::fs::create_dir_all(&snap_dir).map_err(|e| memoir_core::Error::Io {
            path: snap_dir.clone(),
            source: e,
        })?;
        let p = snap_dir.join(format!("state-{:06}.bin", s.edits_applied()));
        snapshot(s, &p)?;
        if ctx.verbose > 0 {
            eprintln!("{} edits, snapshot {}", s.edits_applied(), p.display());
        }
        snaps.push(p);
        Ok(())
    };
    let started = Instant::now();
    let mut log = resume_session(&mut state, &model, &bench, opts, Some(&mut hook))?;
    let wall_s = started.elapsed().as_secs_f64();

    let state_path = out.join("state.bin");
    snapshot(&state, &state_path)?;
    log.final_state = Some(state_path.display().to_string());
    let log_path = out.join("session.jsonl");
    let file = File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let mut w = BufWriter::new(file);
    log.write_jsonl(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&log_path, e))?;

    for p in &snaps {
        m.output(p);
    }
    m.output(&state_path);
    m.output(&log_path);
    m.results = json!({
        "edits_applied": state.edits_applied(),
        "edits_this_run": log.records.len(),
        "collisions": state.database().collisions(),
        "dirty_fraction": state.memory().dirty_fraction(),
        "wall_s": wall_s,
    });
    m.write(&out.join("manifest.json"))?;
    println!(
        "{}: {} edits ({} this run) in {:.1}s",
        state_path.display(),
        state.edits_applied(),
        log.records.len(),
        wall_s
    );
    Ok(())
}

fn write_report(out: &Path, report: &MetricsReport, m: &mut Manifest) -> Result<(), CliError> {
    let csv = format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.csv_row());
    let csv_path = out.join("metrics.csv");
    write_text(&csv_path, &csv)?;
    let jsonl_path = out.join("report.jsonl");
    let line = serde_json::to_string(report).expect("report serializes");
    write_text(&jsonl_path, &(line + "\n"))?;
    m.output(&csv_path);
    m.output(&jsonl_path);
    print!("{csv}");
    Ok(())
}

pub fn eval(a: EvalArgs, ctx: &Ctx) -> Result<(), CliError> {
    let backbone = or_root(a.backbone, DEFAULT_BACKBONE);
    let bench_path = or_root(a.benchmark, DEFAULT_BENCHMARK);
    let out = or_root(a.out, "eval");
    let opts = EvalOptions {
        window: a.window.unwrap_or(100),
        seed: ctx.seed,
    };
    if opts.window == 0 {
        return Err(CliError::Usage("window must be >= 1".into()));
    }
    let mut m = Manifest::new(
        "eval",
        ctx.seed,
        json!({
            "backbone": backbone,
            "benchmark": bench_path,
            "state": a.state,
            "up_to": a.up_to,
            "window": opts.window,
            "tau": a.tau,
            "conditional_activation": !a.no_conditional_activation,
            "out": out,
        }),
    );
    let (model, bench) = load_inputs(&backbone, &bench_path, &mut m)?;
    let report = match &a.state {
        Some(path) => {
            m.input("state", path)?;
            let mut state = restore(path)?;
            if a.tau.is_some() || a.no_conditional_activation {
                let tau = a.tau.unwrap_or(state.strategy().routing.tau);
                state = state.with_inference_routing(tau, !a.no_conditional_activation)?;
            }
            let up_to = a.up_to.unwrap_or(state.edits_applied());
            ctx.log(format!("evaluating {up_to} edits"));
            evaluate(&state, &model, &bench, up_to, &opts)?
        }
        None => {
            let up_to = a.up_to.unwrap_or(bench.edits.len());
            ctx.log(format!("evaluating the unedited backbone on {up_to} edits"));
            evaluate_unedited(&model, &bench, up_to, &opts)?
        }
    };
    create_dir(&out)?;
    write_report(&out, &report, &mut m)?;
    m.results = serde_json::to_value(&report).expect("report serializes");
    m.write(&out.join("manifest.json"))
}

pub fn ablate_cmd(a: AblateArgs, ctx: &Ctx) -> Result<(), CliError> {
    let axis_name = a
        .axis
        .clone()
        .ok_or_else(|| CliError::Usage("ablate needs --axis".into()))?;
    let values = a
        .values
        .clone()
        .ok_or_else(|| CliError::Usage("ablate needs --values".into()))?;
    let axis = AblationAxis::parse(&axis_name, &values)?;
    let backbone = or_root(a.backbone, DEFAULT_BACKBONE);
    let bench_path = or_root(a.benchmark, DEFAULT_BENCHMARK);
    let out = or_root(a.out, &format!("ablate-{}", axis.name()));
    let edits = a.edits.unwrap_or(200);
    let mut base = EditorStrategy::memoir();
    base.routing.k = a.k.unwrap_or(base.routing.k);
    base.routing.tau = a.tau.unwrap_or(base.routing.tau);
    base.train.steps_per_edit = a.steps.unwrap_or(base.train.steps_per_edit);
    base.train.learning_rate = a.lr.unwrap_or(base.train.learning_rate);
    base.train.rng_seed = ctx.seed;
    base.permutation_seed = ctx.seed;
    base.train.validate()?;
    let opts = EvalOptions {
        window: a.window.unwrap_or(100),
        seed: ctx.seed,
    };

    let mut m = Manifest::new(
        "ablate",
        ctx.seed,
        json!({
            "axis": axis.name(),
            "values": values,
            "edits": edits,
            "base": base,
            "window": opts.window,
            "backbone": backbone,
            "benchmark": bench_path,
            "out": out,
        }),
    );
    let (model, bench) = load_inputs(&backbone, &bench_path, &mut m)?;
    ctx.log(format!("ablating {} over {edits} edits", axis.name()));
    let table = ablate(&axis, &model, &bench, &base, edits, &opts)?;

    create_dir(&out)?;
    let csv_path = out.join("ablation.csv");
    let csv = table.to_csv();
    write_text(&csv_path, &csv)?;
    let jsonl_path = out.join("ablation.jsonl");
    let mut lines = String::new();
    for row in &table.rows {
        lines += &serde_json::to_string(row).expect("row serializes");
        lines.push('\n');
    }
    write_text(&jsonl_path, &lines)?;
    m.output(&csv_path);
    m.output(&jsonl_path);
    m.write(&out.join("manifest.json"))?;
    print!("{csv}");
    Ok(())
}

pub fn inspect(a: InspectArgs) -> Result<(), CliError> {
    let state = restore(&a.state)?;
    let s = state.strategy();
    let db = state.database();
    let (overlap_mean, overlap_max) = db.pairwise_overlap_summary(10_000);
    let summary = json!({
        "strategy": s.kind.name(),
        "D": state.memory().dim(),
        "d_model": state.memory().d_model(),
        "k": s.routing.k,
        "tau": s.routing.tau,
        "selection": s.routing.strategy.name(),
        "conditional_activation": s.routing.conditional_activation,
        "edits": state.edits_applied(),
        "mask_db_size": db.len(),
        "collisions": db.collisions(),
        "pairwise_overlap_mean": overlap_mean,
        "pairwise_overlap_max": overlap_max,
        "dirty_column_fraction": state.memory().dirty_fraction(),
        "zero_column_fraction": state.memory().zero_column_fraction(),
        "centering_samples": state.centering().n_samples(),
        "permutation_seed": s.permutation_seed,
        "train": s.train,
        "backbone_digest": state.backbone_digest(),
    });
    if a.json {
        println!("{summary}");
    } else {
        for (k, v) in summary.as_object().expect("object") {
            println!("{k}: {v}");
        }
    }
    Ok(())
}
