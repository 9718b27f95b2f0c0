use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ktbench::bench::{
    api_cost, emit_report, measure_latency, read_results_csv, self_hosted_cost, BenchReport,
    CostMode, LatencyReport, TokenUsage,
};
use ktbench::data::{
    dataset_stats, load_dataset, load_questions, make_eval_view, write_interactions_jsonl,
    write_questions_jsonl, Dataset, EvalView, Format, SplitTag,
};
use ktbench::embedding::{load_embedding_cache, save_embedding_cache};
use ktbench::llm::{
    estimate_tokens, predict_batch, score_verdicts, specs_for_sequence, HttpTransport, LlmVerdict,
};
use ktbench::metrics::score;
use ktbench::models::{
    evaluate, load_model, save_model, sidecar_path, train, write_predictions_csv, BiasTable,
    ContentTable, EvalReport, ModelKind, ModelMeta, SequenceModel, TrainedModel,
};
use ktbench::synth::{generate_calibrated, synth_embeddings};
use serde::Serialize;

use crate::config::{self, RunConfig};
use crate::{Cli, Command, DataArgs};

/// Marks errors that should exit with the usage status.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth { .. } => "synth",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Bench { .. } => "bench",
        Command::LlmEval { .. } => "llm-eval",
        Command::Baseline { .. } => "baseline",
        Command::Report { .. } => "report",
        Command::Demo => "demo",
    }
}

/// Settings the demo starts from, before the config file and `--set`.
fn demo_base() -> toml::Table {
    r#"
[synth]
students = 360
questions = 60
constructs = 10

[data]
train_fraction = 0.8
embed_dim = 16

[train]
max_epochs = 4
batch_size = 32
lr = 0.003

[models.llmkt]
hidden = 32
layers = 1

[latency]
warmup = 10
reps = 1
"#
    .parse()
    .expect("valid demo table")
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    args: Vec<String>,
    seed: u64,
    config: &'a RunConfig,
    versions: BTreeMap<&'static str, &'static str>,
    outputs: Vec<String>,
}

pub fn run(cli: &Cli) -> Result<()> {
    let base = match cli.command {
        Command::Demo => demo_base(),
        _ => toml::Table::new(),
    };
    let mut cfg = config::load_over(base, cli.config.as_deref(), &cli.overrides)
        .map_err(|e| usage(format!("{e:#}")))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.synth.seed = s;
    }
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let out = cli.out.as_path();
    let outputs = match &cli.command {
        Command::Synth {
            students,
            questions,
            target_bias,
        } => {
            if let Some(n) = students {
                cfg.synth.students = *n;
            }
            if let Some(n) = questions {
                cfg.synth.questions = *n;
            }
            if let Some(b) = target_bias {
                cfg.synth.target_bias = *b;
            }
            cmd_synth(&cfg, out)?
        }
        Command::Train { model, data } => {
            let kind: ModelKind = model.parse().map_err(|e| usage(format!("{e}")))?;
            if kind == ModelKind::Bias {
                return Err(usage("use `baseline` for the bias model"));
            }
            cmd_train(&cfg, kind, data, out)?
        }
        Command::Eval { checkpoint, data } => cmd_eval(&cfg, checkpoint, data, out)?,
        Command::Bench { checkpoint, data } => cmd_bench(&cfg, checkpoint, data, out)?,
        Command::LlmEval {
            endpoint_config,
            students,
            data,
        } => {
            let ep = config::load(Some(endpoint_config), &cli.overrides)
                .map_err(|e| usage(format!("{e:#}")))?;
            cfg.endpoint = ep.endpoint;
            cfg.cost = ep.cost;
            cmd_llm_eval(&cfg, *students, data, out)?
        }
        Command::Baseline { data } => cmd_baseline(&cfg, data, out)?,
        Command::Report { inputs } => cmd_report(inputs, out)?,
        Command::Demo => cmd_demo(&cfg, out)?,
    };
    let manifest = Manifest {
        command: command_name(&cli.command),
        args: std::env::args().skip(1).collect(),
        seed: cfg.seed,
        config: &cfg,
        versions: BTreeMap::from([("kt-bench", env!("CARGO_PKG_VERSION"))]),
        outputs,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn name_of(p: &Path) -> String {
    p.file_name().map_or_else(
        || p.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

fn write_dataset(d: &Dataset, out: &Path) -> Result<Vec<PathBuf>> {
    let ip = out.join("interactions.jsonl");
    write_interactions_jsonl(d, BufWriter::new(fs::File::create(&ip)?))?;
    let qp = out.join("questions.jsonl");
    write_questions_jsonl(&d.questions, BufWriter::new(fs::File::create(&qp)?))?;
    Ok(vec![ip, qp])
}

#[derive(Serialize)]
struct SynthSummary {
    offset: f64,
    target_bias: f64,
    stats: ktbench::data::Stats,
}

fn synthesize(cfg: &RunConfig, out: &Path) -> Result<(Dataset, Vec<PathBuf>)> {
    let (d, offset) = generate_calibrated(&cfg.synth)?;
    let stats = dataset_stats(&d)?;
    log::info!(
        "{} students, {} responses, bias {:.4} at offset {offset:.4}",
        stats.students,
        stats.responses,
        stats.bias
    );
    let mut files = write_dataset(&d, out)?;
    let cache = synth_embeddings(&d.questions, cfg.data.embed_dim, cfg.synth.seed)?;
    let ep = out.join("embeddings.kteb");
    save_embedding_cache(&cache, &ep)?;
    files.push(ep);
    let sp = out.join("stats.json");
    write_json(
        &sp,
        &SynthSummary {
            offset,
            target_bias: cfg.synth.target_bias,
            stats,
        },
    )?;
    files.push(sp);
    Ok((d, files))
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let (_, files) = synthesize(cfg, out)?;
    Ok(files.iter().map(|p| name_of(p)).collect())
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    let d = load_dataset(&args.data, Format::from_path(&args.data), SplitTag::Train)
        .with_context(|| format!("loading {}", args.data.display()))?;
    match &args.questions {
        Some(q) => Ok(d.with_questions(
            load_questions(q).with_context(|| format!("loading {}", q.display()))?,
        )?),
        None => Ok(d),
    }
}

fn split(cfg: &RunConfig, d: &Dataset) -> Result<(Dataset, Dataset)> {
    let f = cfg.data.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(usage(format!("data.train_fraction {f} must be in (0, 1)")));
    }
    let n = (d.sequences.len() as f64 * f).round() as usize;
    Ok(d.split_students(n))
}

fn content_for(args: &DataArgs, d: &Dataset, vocab: usize) -> Result<ContentTable> {
    let path = args
        .embeddings
        .as_ref()
        .ok_or_else(|| usage("the llmkt model needs --embeddings"))?;
    let cache =
        load_embedding_cache(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(ContentTable::from_cache(
        &cache,
        &d.question_constructs(),
        vocab,
    ))
}

fn cmd_train(cfg: &RunConfig, kind: ModelKind, args: &DataArgs, out: &Path) -> Result<Vec<String>> {
    let d = load_data(args)?;
    let (tr, va) = split(cfg, &d)?;
    let view = make_eval_view(&va);
    let vocab = d.vocab_size();
    let mut mc = cfg.model_config(kind, vocab);
    let content = if kind == ModelKind::Llmkt {
        let c = content_for(args, &d, vocab)?;
        mc.content_dim = c.dim();
        Some(c)
    } else {
        None
    };
    let m = train(&mc, &cfg.train, &tr, &view, content)?;
    log::info!(
        "{kind}: {} parameters, best epoch {:?}, val accuracy {:.4}",
        m.param_count,
        m.best_epoch,
        m.history
            .iter()
            .map(|h| h.val_accuracy)
            .fold(f64::NAN, f64::max)
    );
    let path = out.join(format!("{kind}.ktpm"));
    save_model(&m, &path)?;
    Ok(vec![name_of(&path), name_of(&sidecar_path(&path))])
}

fn open_checkpoint(path: &Path, args: &DataArgs, d: &Dataset) -> Result<TrainedModel> {
    let side = sidecar_path(path);
    if !path.exists() || !side.exists() {
        bail!(
            "checkpoint {} not found (expected {} and its .json sidecar)",
            path.display(),
            path.display()
        );
    }
    let meta: ModelMeta = serde_json::from_slice(&fs::read(&side)?)
        .with_context(|| format!("reading {}", side.display()))?;
    let content = match meta.config.kind {
        ModelKind::Llmkt => Some(content_for(args, d, meta.config.vocab)?),
        _ => None,
    };
    load_model(path, content).with_context(|| format!("loading checkpoint {}", path.display()))
}

#[derive(Serialize)]
struct Metrics<'a> {
    model: &'a str,
    accuracy: f64,
    macro_f1: f64,
    counts: ktbench::metrics::ConfusionCounts,
    targets: usize,
    students: usize,
}

fn write_eval(name: &str, r: &EvalReport, view: &EvalView, out: &Path) -> Result<Vec<String>> {
    let pp = out.join(format!("{name}_predictions.csv"));
    write_predictions_csv(&r.predictions, BufWriter::new(fs::File::create(&pp)?))?;
    let mp = out.join(format!("{name}_metrics.json"));
    write_json(
        &mp,
        &Metrics {
            model: name,
            accuracy: r.accuracy,
            macro_f1: r.macro_f1,
            counts: r.counts,
            targets: r.predictions.len(),
            students: view.sequences.len(),
        },
    )?;
    log::info!(
        "{name}: accuracy {:.4}, macro-F1 {:.4}",
        r.accuracy,
        r.macro_f1
    );
    Ok(vec![name_of(&pp), name_of(&mp)])
}

fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    args: &DataArgs,
    out: &Path,
) -> Result<Vec<String>> {
    let d = load_data(args)?;
    let m = open_checkpoint(checkpoint, args, &d)?;
    let (_, va) = split(cfg, &d)?;
    let view = make_eval_view(&va);
    let r = evaluate(&m.net, &view)?;
    write_eval(m.config.kind.name(), &r, &view, out)
}

fn latency(cfg: &RunConfig, model: &dyn SequenceModel, view: &EvalView) -> LatencyReport {
    measure_latency(
        |h, t| {
            model
                .predict_next(h, t.question_id, t.construct_id)
                .expect("validated history")
        },
        view,
        cfg.latency,
    )
}

fn bench_row(
    cfg: &RunConfig,
    name: &str,
    r: &EvalReport,
    lat: &LatencyReport,
    params: Option<u64>,
) -> Result<BenchReport> {
    let s = lat.latency_per_student();
    Ok(BenchReport {
        model: name.to_string(),
        accuracy: r.accuracy,
        macro_f1: r.macro_f1,
        latency_per_student_s: s,
        params,
        annual_cost_usd: self_hosted_cost(s, &cfg.cost)?,
        cost_mode: CostMode::SelfHosted,
    })
}

#[derive(Serialize)]
struct LatencySummary<'a> {
    model: &'a str,
    latency_per_student_s: f64,
    mean_s: f64,
    p95_s: f64,
    students: usize,
    calls: usize,
    warmup_calls: usize,
    excluded_students: usize,
    wall_s: f64,
}

fn write_latency(name: &str, lat: &LatencyReport, out: &Path) -> Result<String> {
    let p = out.join(format!("{name}_latency.json"));
    write_json(
        &p,
        &LatencySummary {
            model: name,
            latency_per_student_s: lat.latency_per_student(),
            mean_s: lat.mean_s,
            p95_s: lat.p95_s,
            students: lat.per_student_s.len(),
            calls: lat.per_call_s.len(),
            warmup_calls: lat.warmup_calls,
            excluded_students: lat.excluded_students,
            wall_s: lat.wall_s,
        },
    )?;
    Ok(name_of(&p))
}

fn report_files(rows: &[BenchReport], out: &Path) -> Result<Vec<String>> {
    Ok(emit_report(rows, out)?.iter().map(|p| name_of(p)).collect())
}

fn cmd_bench(
    cfg: &RunConfig,
    checkpoint: &Path,
    args: &DataArgs,
    out: &Path,
) -> Result<Vec<String>> {
    let d = load_data(args)?;
    let m = open_checkpoint(checkpoint, args, &d)?;
    let (_, va) = split(cfg, &d)?;
    let view = make_eval_view(&va);
    let name = m.config.kind.name();
    let r = evaluate(&m.net, &view)?;
    let lat = latency(cfg, &m.net, &view);
    log::info!("{name}: {:.4} s per student", lat.latency_per_student());
    let mut files = vec![write_latency(name, &lat, out)?];
    let row = bench_row(cfg, name, &r, &lat, Some(m.param_count as u64))?;
    files.extend(report_files(&[row], out)?);
    Ok(files)
}

fn cmd_baseline(cfg: &RunConfig, args: &DataArgs, out: &Path) -> Result<Vec<String>> {
    let d = load_data(args)?;
    let (tr, va) = split(cfg, &d)?;
    let view = make_eval_view(&va);
    let bias = BiasTable::fit(&tr)?;
    let r = evaluate(&bias, &view)?;
    let mut files = write_eval("bias", &r, &view, out)?;
    let lat = latency(cfg, &bias, &view);
    files.push(write_latency("bias", &lat, out)?);
    files.extend(report_files(
        &[bench_row(cfg, "bias", &r, &lat, None)?],
        out,
    )?);
    Ok(files)
}

#[derive(Serialize)]
struct VerdictLine<'a> {
    student_id: u64,
    position: usize,
    label: bool,
    #[serde(flatten)]
    verdict: &'a LlmVerdict,
}

fn cmd_llm_eval(
    cfg: &RunConfig,
    students: Option<usize>,
    args: &DataArgs,
    out: &Path,
) -> Result<Vec<String>> {
    if args.questions.is_none() {
        return Err(usage("llm-eval needs --questions"));
    }
    let d = load_data(args)?;
    let (_, va) = split(cfg, &d)?;
    let mut view = make_eval_view(&va);
    if let Some(n) = students {
        view.sequences.truncate(n);
    }
    let mut specs = Vec::new();
    let mut labels = Vec::new();
    let mut owner = Vec::new();
    for s in &view.sequences {
        for ((spec, label), k) in specs_for_sequence(s, &d.questions)?
            .into_iter()
            .zip(s.target_range())
        {
            specs.push(spec);
            labels.push(label);
            owner.push((s.student_id, k));
        }
    }
    let mut endpoint = cfg.endpoint.clone();
    if endpoint.transcript.is_none() {
        endpoint.transcript = Some(out.join("transcript.jsonl"));
    }
    let transport = HttpTransport::from_config(&endpoint)?;
    log::info!("sending {} prompts to {}", specs.len(), endpoint.model);
    let verdicts = predict_batch(&endpoint, &transport, &specs)?;
    let v: Vec<_> = verdicts.iter().map(|v| v.verdict).collect();
    let preds = score_verdicts(&v, &labels)?;
    let scores = score(&preds, &labels)?;
    let malformed = v
        .iter()
        .filter(|v| **v == ktbench::llm::Verdict::Malformed)
        .count();

    let mut usage_total = TokenUsage {
        requests: verdicts.len() as u64,
        ..Default::default()
    };
    for (spec, r) in specs.iter().zip(&verdicts) {
        let prompt_len =
            || estimate_tokens(&ktbench::llm::build_prompt(spec).expect("built once already"));
        usage_total.input_tokens += r.input_tokens.unwrap_or_else(|| {
            usage_total.approximate = true;
            prompt_len()
        });
        usage_total.output_tokens += r.output_tokens.unwrap_or_else(|| {
            usage_total.approximate = true;
            estimate_tokens(&r.raw)
        });
    }
    let mut per_student: BTreeMap<u64, f64> = BTreeMap::new();
    for ((sid, _), r) in owner.iter().zip(&verdicts) {
        *per_student.entry(*sid).or_default() += r.latency_s;
    }
    let mut lat: Vec<f64> = per_student.into_values().collect();
    lat.sort_by(f64::total_cmp);
    let median = ktbench::bench::quantile(&lat, 0.5);
    let cost = match cfg.cost.mode {
        CostMode::Api => api_cost(&usage_total, &cfg.cost)?,
        CostMode::SelfHosted => self_hosted_cost(median, &cfg.cost)?,
    };
    log::info!(
        "{}: accuracy {:.4}, macro-F1 {:.4}, {malformed} malformed, ${cost:.2} per year",
        endpoint.model,
        scores.accuracy,
        scores.macro_f1
    );

    let vp = out.join("llm_verdicts.jsonl");
    let mut text = String::new();
    for (((sid, k), label), r) in owner.iter().zip(&labels).zip(&verdicts) {
        text.push_str(&serde_json::to_string(&VerdictLine {
            student_id: *sid,
            position: *k,
            label: *label,
            verdict: r,
        })?);
        text.push('\n');
    }
    fs::write(&vp, text)?;
    let mp = out.join("llm_metrics.json");
    write_json(
        &mp,
        &serde_json::json!({
            "model": endpoint.model,
            "accuracy": scores.accuracy,
            "macro_f1": scores.macro_f1,
            "counts": scores.counts,
            "malformed": malformed,
            "token_usage": usage_total,
            "latency_per_student_s": median,
            "annual_cost_usd": cost,
            "cost_mode": cfg.cost.mode,
        }),
    )?;
    let row = BenchReport {
        model: endpoint.model.clone(),
        accuracy: scores.accuracy,
        macro_f1: scores.macro_f1,
        latency_per_student_s: median,
        params: None,
        annual_cost_usd: cost,
        cost_mode: cfg.cost.mode,
    };
    let mut files = vec![name_of(&vp), name_of(&mp)];
    if let Some(t) = &endpoint.transcript {
        files.push(name_of(t));
    }
    files.extend(report_files(&[row], out)?);
    Ok(files)
}

fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<Vec<String>> {
    let mut rows = Vec::new();
    for p in inputs {
        let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        rows.extend(read_results_csv(f).with_context(|| format!("reading {}", p.display()))?);
    }
    if rows.is_empty() {
        return Err(anyhow!("no result rows in the given inputs"));
    }
    report_files(&rows, out)
}

fn cmd_demo(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let (d, files) = synthesize(cfg, out)?;
    let mut outputs: Vec<String> = files.iter().map(|p| name_of(p)).collect();
    let (tr, va) = split(cfg, &d)?;
    let view = make_eval_view(&va);
    let mut rows = Vec::new();

    let bias = BiasTable::fit(&tr)?;
    let r = evaluate(&bias, &view)?;
    outputs.extend(write_eval("bias", &r, &view, out)?);
    rows.push(bench_row(
        cfg,
        "bias",
        &r,
        &latency(cfg, &bias, &view),
        None,
    )?);

    let cache = synth_embeddings(&d.questions, cfg.data.embed_dim, cfg.synth.seed)?;
    let vocab = d.vocab_size();
    for kind in [ModelKind::Dkt, ModelKind::Sakt, ModelKind::Llmkt] {
        let mut mc = cfg.model_config(kind, vocab);
        let content = (kind == ModelKind::Llmkt).then(|| {
            mc.content_dim = cache.dim();
            ContentTable::from_cache(&cache, &d.question_constructs(), vocab)
        });
        let m = train(&mc, &cfg.train, &tr, &view, content)?;
        let path = out.join(format!("{kind}.ktpm"));
        save_model(&m, &path)?;
        outputs.extend([name_of(&path), name_of(&sidecar_path(&path))]);
        let r = evaluate(&m.net, &view)?;
        outputs.extend(write_eval(kind.name(), &r, &view, out)?);
        let lat = latency(cfg, &m.net, &view);
        outputs.push(write_latency(kind.name(), &lat, out)?);
        rows.push(bench_row(
            cfg,
            kind.name(),
            &r,
            &lat,
            Some(m.param_count as u64),
        )?);
    }
    outputs.extend(report_files(&rows, out)?);
    Ok(outputs)
}
