//! Runs every acceptance criterion and prints one PASS/FAIL line each.
//!
//! `KTBENCH_ACCEPT_EPOCHS` caps training epochs for the learning-signal run
//! (default 15). That run uses a learning rate of 3e-3; at 1e-3 the recurrent
//! model sits on a plateau near the baseline for about ten epochs.

mod common;

use std::cell::OnceCell;
use std::time::Instant;

use common::*;
use ktbench::bench::{cost_ratio, measure_latency, self_hosted_cost, CostModel, LatencyConfig};
use ktbench::data::{dataset_stats, make_eval_view, EvalView};
use ktbench::llm::{build_prompt, parse_response, score_verdicts, PromptSpec, Verdict};
use ktbench::metrics::{accuracy, macro_f1, ConfusionCounts};
use ktbench::models::{
    evaluate, param_count, train, BiasTable, ContentTable, ModelConfig, ModelKind, Net,
    SequenceModel, TrainConfig, TrainedModel, DEFAULT_VOCAB,
};
use ktbench::synth::{generate_calibrated, synth_embeddings, SynthConfig};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_cost_arithmetic() -> Outcome {
    let m = CostModel::default();
    let llama = self_hosted_cost(1598.8, &m).map_err(|e| e.to_string())?;
    let qwen = self_hosted_cost(3299.0, &m).map_err(|e| e.to_string())?;
    let kt = self_hosted_cost(0.25, &m).map_err(|e| e.to_string())?;
    check(
        (llama - 11_991.0).abs() <= 1.0 && (qwen - 24_741.0).abs() <= 2.0 && kt <= 2.0,
        format!("1598.8 s -> ${llama:.2}, 3299 s -> ${qwen:.2}, 0.25 s -> ${kt:.3}"),
    )
}

fn c2_ratio_band() -> Outcome {
    let kt = 2.0;
    let ratios = [2322.0, 1230.0, 11_991.0, 24_741.0]
        .iter()
        .map(|&c| cost_ratio(kt, c))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    check(
        min >= 615.0 && max <= 12_400.0,
        format!("KT ${kt}: ratios {min:.1} .. {max:.1}"),
    )
}

struct Trained {
    view: EvalView,
    bias: f64,
    corpus_bias: f64,
    offset: f64,
    baseline: f64,
    models: Vec<(ModelKind, TrainedModel, f64, f64)>,
    secs: f64,
}

const SYNTH_CONTENT_DIM: usize = 64;

fn train_all() -> Result<Trained, String> {
    let start = Instant::now();
    let epochs = std::env::var("KTBENCH_ACCEPT_EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(15);
    let scfg = SynthConfig {
        students: 2400,
        seed: 2024,
        ..Default::default()
    };
    let (d, offset) = generate_calibrated(&scfg).map_err(|e| e.to_string())?;
    let corpus_bias = dataset_stats(&d).map_err(|e| e.to_string())?.bias;
    let (tr, va) = d.split_students(2000);
    let view = make_eval_view(&va);
    let bias_model = BiasTable::fit(&tr).map_err(|e| e.to_string())?;
    let baseline = evaluate(&bias_model, &view)
        .map_err(|e| e.to_string())?
        .accuracy;
    let cache =
        synth_embeddings(&d.questions, SYNTH_CONTENT_DIM, scfg.seed).map_err(|e| e.to_string())?;
    let vocab = d.vocab_size();
    let tc = TrainConfig {
        max_epochs: epochs,
        lr: 3e-3,
        ..Default::default()
    };
    let mut models = Vec::new();
    for kind in KINDS {
        let t0 = Instant::now();
        let cfg = ModelConfig {
            seed: 7,
            content_dim: SYNTH_CONTENT_DIM,
            ..ModelConfig::default_for(kind, vocab)
        };
        let content = (kind == ModelKind::Llmkt)
            .then(|| ContentTable::from_cache(&cache, &d.question_constructs(), vocab));
        let m = train(&cfg, &tc, &tr, &view, content).map_err(|e| format!("{kind}: {e}"))?;
        let acc = evaluate(&m.net, &view).map_err(|e| e.to_string())?.accuracy;
        eprintln!(
            "  trained {kind}: {} epochs, best {:?}, val accuracy {acc:.4} ({:.0} s)",
            m.history.len(),
            m.best_epoch,
            t0.elapsed().as_secs_f64()
        );
        models.push((kind, m, acc, t0.elapsed().as_secs_f64()));
    }
    let bias = dataset_stats(&va).map_err(|e| e.to_string())?.bias;
    Ok(Trained {
        view,
        bias,
        corpus_bias,
        offset,
        baseline,
        models,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn latency_of(model: &dyn SequenceModel, view: &EvalView) -> f64 {
    measure_latency(
        |h, t| {
            model
                .predict_next(h, t.question_id, t.construct_id)
                .expect("prediction")
        },
        view,
        LatencyConfig::default(),
    )
    .latency_per_student()
}

fn c3_latency(t: &Trained) -> Outcome {
    // Latency on a slice of validation students keeps the run short; the
    // headline is the per-student median either way.
    let view = EvalView {
        sequences: t.view.sequences.iter().take(40).cloned().collect(),
        excluded: 0,
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for (kind, m, _, _) in &t.models {
        let s = latency_of(&m.net, &view);
        ok &= s < 0.25;
        parts.push(format!("{kind} {:.4} s", s));
    }
    // Full-size configurations cost the same per call whatever the weights.
    let vocab = DEFAULT_VOCAB;
    for kind in KINDS {
        let cfg = ModelConfig::default_for(kind, vocab);
        let content = (kind == ModelKind::Llmkt).then(|| {
            ContentTable::from_cache(
                &random_cache(vocab, cfg.content_dim, 1),
                &constructs(vocab),
                vocab,
            )
        });
        let net = Net::init(&cfg, content).map_err(|e| e.to_string())?;
        let s = latency_of(&net, &view);
        ok &= s < 0.25;
        parts.push(format!("{kind}@default {:.4} s", s));
    }
    check(ok, format!("median per student: {}", parts.join(", ")))
}

fn c4_param_budgets() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in KINDS {
        let cfg = ModelConfig::default_for(kind, DEFAULT_VOCAB);
        let content =
            (kind == ModelKind::Llmkt).then(|| ContentTable::empty(DEFAULT_VOCAB, cfg.content_dim));
        let net = Net::init(&cfg, content).map_err(|e| e.to_string())?;
        let n = param_count(net.as_dyn().params());
        ok &= (580_000..=850_000).contains(&n);
        if kind == ModelKind::Llmkt {
            ok &= (n as f64 - 730_000.0).abs() <= 0.05 * 730_000.0;
        }
        parts.push(format!("{kind} {n}"));
    }
    check(ok, parts.join(", "))
}

fn c5_metric_oracle() -> Outcome {
    let mut r = rng(5);
    let worst = (0..2000)
        .map(|_| metric_oracle_trial(&mut r))
        .fold(0.0, f64::max);
    let c = ConfusionCounts {
        tp: 3,
        tn: 2,
        fp: 1,
        fn_: 2,
    };
    let (a, f) = (
        accuracy(&c).map_err(|e| e.to_string())?,
        macro_f1(&c).map_err(|e| e.to_string())?,
    );
    check(
        worst < 1e-12 && a == 0.625 && (f - 0.6190).abs() <= 1e-4,
        format!("2000 random sets, max error {worst:e}; hand case {a} / {f:.4}"),
    )
}

fn c6_gradients() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in KINDS {
        let worst = (0..20)
            .map(|s| grad_check_seed(kind, s))
            .fold(0.0, f64::max);
        ok &= worst < 1e-4;
        parts.push(format!("{kind} {worst:.1e}"));
    }
    check(
        ok,
        format!("20 seeds each, max relative error: {}", parts.join(", ")),
    )
}

fn c7_causality() -> Outcome {
    let vocab = 12;
    let mut parts = Vec::new();
    for kind in KINDS {
        let net = causal_net(kind, vocab, 3);
        let mut r = rng(77);
        let mut compared = 0;
        for _ in 0..100 {
            compared += causality_trial(&net, vocab, &mut r).map_err(|e| format!("{kind}: {e}"))?;
        }
        parts.push(format!("{kind} {compared} outputs"));
    }
    Ok(format!(
        "100 trials each, bit-identical: {}",
        parts.join(", ")
    ))
}

fn c8_learning_signal(t: &Trained) -> Outcome {
    let mut ok = (t.corpus_bias - 0.658).abs() <= 0.005;
    let mut parts = vec![format!(
        "corpus bias {:.4} (offset {:.3}), val bias {:.4}, baseline {:.4}",
        t.corpus_bias, t.offset, t.bias, t.baseline
    )];
    for (kind, _, acc, secs) in &t.models {
        let gain = acc - t.baseline;
        ok &= gain >= 0.02;
        parts.push(format!(
            "{kind} {acc:.4} ({:+.2} pts, {secs:.0} s)",
            gain * 100.0
        ));
    }
    parts.push(format!("{:.0} s total", t.secs));
    check(ok, parts.join("; "))
}

const GOLDEN: &str = include_str!("golden/order_of_operations_prompt.txt");

fn order_of_ops_spec() -> PromptSpec {
    use ktbench::data::{Choice, QuestionMeta};
    let q = |id: u32, text: String, answers: [String; 4], correct: &str, construct: (u32, &str)| {
        QuestionMeta {
            question_id: id,
            question_text: text,
            choices: ["A", "B", "C", "D"]
                .iter()
                .zip(answers)
                .map(|(&l, t)| Choice {
                    label: l.into(),
                    text: t,
                    correct: l == correct,
                })
                .collect(),
            construct_id: construct.0,
            construct_text: construct.1.into(),
            misconceptions: Default::default(),
            explanations: Default::default(),
        }
    };
    let history = (0..10)
        .map(|i| {
            let a = ["1".into(), "2".into(), "3".into(), (2 * i).to_string()];
            (
                q(
                    200 + i,
                    format!("What is {i} + {i}?"),
                    a,
                    "D",
                    (11, "Addition"),
                ),
                i % 3 != 0,
            )
        })
        .collect();
    let t = q(
        100,
        "What is 2 + 3 × 4?".into(),
        ["20".into(), "14".into(), "11".into(), "26".into()],
        "B",
        (10, "Order of Operations"),
    );
    PromptSpec::new(history, t).expect("ten history items")
}

fn c9_prompt_conformance() -> Outcome {
    let p = build_prompt(&order_of_ops_spec()).map_err(|e| e.to_string())?;
    if p != GOLDEN {
        return Err("prompt differs from golden file".into());
    }
    if !p.contains("Answer ONLY with the word 'Yes' or the word 'No'") {
        return Err("instruction missing".into());
    }
    let mut r = rng(9);
    let alphabet: Vec<char> = "yesnoYESNO .,!'\"\n\tabcxyz01".chars().collect();
    let mut checked = 0;
    for _ in 0..20_000 {
        let len = r.random_range(0..12);
        let s: String = (0..len)
            .map(|_| alphabet[r.random_range(0..alphabet.len())])
            .collect();
        let lead = s.split_whitespace().next().unwrap_or("");
        let lead = lead
            .trim_matches(|c: char| c.is_ascii_punctuation())
            .to_lowercase();
        if lead != "yes" && lead != "no" {
            checked += 1;
            if parse_response(&s) != Verdict::Malformed {
                return Err(format!("{s:?} parsed as a verdict"));
            }
        }
    }
    let labels: Vec<bool> = (0..100).map(|i| i % 3 != 0).collect();
    let preds = score_verdicts(&[Verdict::Malformed; 100], &labels).map_err(|e| e.to_string())?;
    let acc = ktbench::metrics::score(&preds, &labels)
        .map_err(|e| e.to_string())?
        .accuracy;
    check(acc == 0.0, format!("golden prompt exact ({} bytes); {checked} non-verdict strings Malformed; all-Malformed accuracy {acc}", p.len()))
}

fn c10_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(10);
    for i in 0..100 {
        let c = random_embedding_cache(&mut r);
        embedding_file_round_trip(&c, dir.path()).map_err(|e| format!("embedding {i}: {e}"))?;
        checkpoint_file_round_trip(i, dir.path())?;
    }
    Ok("100 embedding caches and 100 checkpoints byte-identical after save -> load -> save".into())
}

fn main() {
    let trained: OnceCell<Result<Trained, String>> = OnceCell::new();
    let with_trained = |f: fn(&Trained) -> Outcome| -> Outcome {
        match trained.get_or_init(train_all) {
            Ok(t) => f(t),
            Err(e) => Err(format!("training failed: {e}")),
        }
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("cost arithmetic", Box::new(c1_cost_arithmetic)),
        ("cost-ratio band", Box::new(c2_ratio_band)),
        ("latency budget", Box::new(|| with_trained(c3_latency))),
        ("parameter budgets", Box::new(c4_param_budgets)),
        ("metric oracle", Box::new(c5_metric_oracle)),
        ("gradient correctness", Box::new(c6_gradients)),
        ("causality", Box::new(c7_causality)),
        (
            "learning signal",
            Box::new(|| with_trained(c8_learning_signal)),
        ),
        ("prompt/parse conformance", Box::new(c9_prompt_conformance)),
        ("format round-trips", Box::new(c10_round_trips)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = run();
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS [{}] {name}: {d} ({secs:.1} s)", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL [{}] {name}: {d} ({secs:.1} s)", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
