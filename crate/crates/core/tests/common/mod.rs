#![allow(dead_code)]

use std::collections::BTreeMap;

use ktbench::data::Interaction;
use ktbench::embedding::{ContentKind, EmbeddingCache};
use ktbench::models::{Batch, ContentTable, ModelConfig, ModelKind, Net, NeuralNet, SequenceModel};
use numkit::gradcheck::relative_error;
use numkit::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KINDS: [ModelKind; 3] = [ModelKind::Dkt, ModelKind::Sakt, ModelKind::Llmkt];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn construct_of(q: u32) -> u32 {
    q % 3
}

pub fn random_sequence(rng: &mut impl Rng, len: usize, vocab: usize) -> Vec<Interaction> {
    (0..len as u32)
        .map(|t| {
            let q = rng.random_range(0..vocab as u32);
            Interaction {
                question_id: q,
                construct_id: construct_of(q),
                correct: rng.random_bool(0.6),
                position: t,
            }
        })
        .collect()
}

pub fn random_cache(vocab: usize, dim: usize, seed: u64) -> EmbeddingCache {
    let mut r = rng(seed ^ 0x5eed);
    let mut c = EmbeddingCache::new(dim).unwrap();
    let constructs: std::collections::BTreeSet<u32> = (0..vocab as u32).map(construct_of).collect();
    for k in constructs {
        let v = (0..dim).map(|_| r.random_range(-1.0f32..1.0)).collect();
        c.insert(k as u64, ContentKind::Construct, v).unwrap();
    }
    for q in 0..vocab as u64 {
        for kind in [
            ContentKind::Question,
            ContentKind::Explanation,
            ContentKind::Misconception,
        ] {
            let v = (0..dim).map(|_| r.random_range(-1.0f32..1.0)).collect();
            c.insert(q, kind, v).unwrap();
        }
    }
    c
}

pub fn constructs(vocab: usize) -> BTreeMap<u32, u32> {
    (0..vocab as u32).map(|q| (q, construct_of(q))).collect()
}

/// Small configs that keep exhaustive finite differences cheap.
pub fn toy_config(kind: ModelKind, vocab: usize, seed: u64) -> ModelConfig {
    let base = ModelConfig {
        seed,
        dropout: 0.0,
        ..ModelConfig::default_for(kind, vocab)
    };
    match kind {
        ModelKind::Dkt => ModelConfig {
            hidden: 4,
            embed: 3,
            ..base
        },
        ModelKind::Sakt => ModelConfig {
            hidden: 4,
            heads: 2,
            ..base
        },
        ModelKind::Llmkt => ModelConfig {
            hidden: 4,
            heads: 2,
            layers: 1,
            content_dim: 2,
            ..base
        },
        ModelKind::Bias => base,
    }
}

pub fn toy_net(kind: ModelKind, vocab: usize, seed: u64) -> Net {
    let cfg = toy_config(kind, vocab, seed);
    let content = (kind == ModelKind::Llmkt).then(|| {
        ContentTable::from_cache(
            &random_cache(vocab, cfg.content_dim, seed),
            &constructs(vocab),
            vocab,
        )
    });
    Net::init(&cfg, content).unwrap()
}

fn batch_loss<'p>(net: &'p dyn NeuralNet, tape: &mut Tape<'p>, batch: &Batch) -> numkit::Var {
    let z = net.logits(tape, batch, None).unwrap();
    let (y, w) = batch.targets(1);
    tape.bce_with_logits(z, &y, &w).unwrap()
}

/// Max relative error between the tape gradient of the full training loss
/// and central differences, over every parameter scalar. The numeric side
/// perturbs the live parameters and re-evaluates through the inference path.
pub fn full_loss_grad_error(net: &mut Net, seqs: &[&[Interaction]], eps: f64) -> f64 {
    let batch = Batch::new(seqs, net.as_dyn().config().vocab).unwrap();
    let analytic: Vec<(numkit::ParamId, Vec<f64>)> = {
        let n = net.as_dyn();
        let mut tape = Tape::with_params(n.params());
        let loss = batch_loss(n, &mut tape, &batch);
        let g = tape.backward(loss).unwrap();
        n.params()
            .ids()
            .map(|id| {
                let len = n.params().get(id).len();
                let v = g
                    .param_grads()
                    .find(|(p, _)| *p == id)
                    .map(|(_, g)| g.to_vec());
                (id, v.unwrap_or_else(|| vec![0.0; len]))
            })
            .collect()
    };
    let eval = |net: &Net| {
        let n = net.as_dyn();
        let mut tape = Tape::inference(n.params());
        let loss = batch_loss(n, &mut tape, &batch);
        tape.value(loss).item()
    };
    let mut worst = 0.0f64;
    for (id, grad) in analytic {
        for (i, &a) in grad.iter().enumerate() {
            let orig = net.as_dyn().params().get(id).data()[i];
            let mut at = |x: f64| {
                net.as_dyn_mut().params_mut().get_mut(id).data_mut()[i] = x;
                net.as_dyn_mut().params_changed();
                eval(net)
            };
            let up = at(orig + eps);
            let down = at(orig - eps);
            at(orig);
            worst = worst.max(relative_error(a, (up - down) / (2.0 * eps)));
        }
    }
    worst
}

/// One grad-check instance: a fresh toy model and two random sequences.
pub fn grad_check_seed(kind: ModelKind, seed: u64) -> f64 {
    let vocab = 6;
    let mut net = toy_net(kind, vocab, seed);
    let mut r = rng(seed.wrapping_mul(31).wrapping_add(7));
    let a = random_sequence(&mut r, 7, vocab);
    let b = random_sequence(&mut r, 5, vocab);
    full_loss_grad_error(&mut net, &[&a, &b], 1e-5)
}

/// Perturbs everything from a random cut onward and checks every earlier
/// output is bit-identical. Returns the number of outputs compared.
pub fn causality_trial(
    model: &dyn SequenceModel,
    vocab: usize,
    r: &mut impl Rng,
) -> Result<usize, String> {
    let len = r.random_range(3..=50);
    let seq = random_sequence(r, len, vocab);
    let cut = r.random_range(1..len);
    let mut other = seq.clone();
    let fresh = random_sequence(r, len, vocab);
    other[cut..].copy_from_slice(&fresh[cut..]);
    // The question at the cut is visible to the output predicting it, its
    // correctness is not.
    let keep_question = r.random_bool(0.5);
    if keep_question {
        other[cut].question_id = seq[cut].question_id;
        other[cut].construct_id = seq[cut].construct_id;
        other[cut].correct = !seq[cut].correct;
    }
    let p = model.predict_sequence(&seq).map_err(|e| e.to_string())?;
    let q = model.predict_sequence(&other).map_err(|e| e.to_string())?;
    // Output j predicts interaction j + 1.
    let unaffected = if keep_question { cut } else { cut - 1 };
    for j in 0..unaffected {
        if p[j].to_bits() != q[j].to_bits() {
            return Err(format!(
                "len {len} cut {cut}: output {j} changed {} -> {}",
                p[j], q[j]
            ));
        }
    }
    Ok(unaffected)
}

/// A larger random model for causality trials.
pub fn causal_net(kind: ModelKind, vocab: usize, seed: u64) -> Net {
    let cfg = ModelConfig {
        seed,
        dropout: 0.0,
        content_dim: 8,
        ..match kind {
            ModelKind::Dkt => ModelConfig {
                hidden: 16,
                embed: 8,
                ..ModelConfig::default_for(kind, vocab)
            },
            _ => ModelConfig {
                hidden: 16,
                heads: 4,
                ..ModelConfig::default_for(kind, vocab)
            },
        }
    };
    let content = (kind == ModelKind::Llmkt).then(|| {
        ContentTable::from_cache(&random_cache(vocab, 8, seed), &constructs(vocab), vocab)
    });
    Net::init(&cfg, content).unwrap()
}

/// Accuracy and macro-F1 recounted straight from the lists.
pub fn brute_force_scores(pred: &[bool], label: &[bool]) -> (f64, f64) {
    let n = pred.len() as f64;
    let acc = pred.iter().zip(label).filter(|(p, l)| p == l).count() as f64 / n;
    let f1_for = |class: bool| {
        let hit = pred
            .iter()
            .zip(label)
            .filter(|&(&p, &l)| p == class && l == class)
            .count() as f64;
        let predicted = pred.iter().filter(|&&p| p == class).count() as f64;
        let actual = label.iter().filter(|&&l| l == class).count() as f64;
        if predicted + actual == 0.0 {
            0.0
        } else {
            2.0 * hit / (predicted + actual)
        }
    };
    (acc, (f1_for(true) + f1_for(false)) / 2.0)
}

/// Largest disagreement between the confusion-based scores and the
/// brute-force recount over one random instance.
pub fn metric_oracle_trial(r: &mut impl Rng) -> f64 {
    let n = r.random_range(1..400);
    let skew = r.random_range(0.0..1.0);
    let pred: Vec<bool> = (0..n).map(|_| r.random_bool(skew)).collect();
    let label: Vec<bool> = (0..n).map(|_| r.random_bool(0.66)).collect();
    let s = ktbench::metrics::score(&pred, &label).unwrap();
    let (a, f) = brute_force_scores(&pred, &label);
    (s.accuracy - a).abs().max((s.macro_f1 - f).abs())
}

pub fn random_embedding_cache(r: &mut impl Rng) -> EmbeddingCache {
    let dim = r.random_range(1..24);
    let mut c = EmbeddingCache::new(dim).unwrap();
    for _ in 0..r.random_range(0..30) {
        let id = r.random_range(0..u64::MAX);
        let kind = ContentKind::ALL[r.random_range(0..4)];
        let v = (0..dim)
            .map(|_| f32::from_bits(r.random::<u32>() & 0xbf7f_ffff))
            .collect();
        let _ = c.insert(id, kind, v);
    }
    c
}

/// save -> load -> save must reproduce the file byte for byte.
pub fn embedding_file_round_trip(c: &EmbeddingCache, dir: &std::path::Path) -> Result<(), String> {
    let a = dir.join("a.kteb");
    let b = dir.join("b.kteb");
    ktbench::embedding::save_embedding_cache(c, &a).map_err(|e| e.to_string())?;
    let back = ktbench::embedding::load_embedding_cache(&a).map_err(|e| e.to_string())?;
    if &back != c {
        return Err("decoded cache differs".into());
    }
    ktbench::embedding::save_embedding_cache(&back, &b).map_err(|e| e.to_string())?;
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    if x != y {
        return Err(format!("files differ ({} vs {} bytes)", x.len(), y.len()));
    }
    if x.len() != c.encoded_len() {
        return Err("size does not match record layout".into());
    }
    Ok(())
}

/// A randomly initialised model of random kind and shape, saved, loaded
/// and saved again.
pub fn checkpoint_file_round_trip(seed: u64, dir: &std::path::Path) -> Result<(), String> {
    use ktbench::models::{load_model, save_model, TrainedModel};
    let mut r = rng(seed);
    let kind = KINDS[r.random_range(0..3)];
    let vocab = r.random_range(2..20);
    let heads = r.random_range(1..3);
    let cfg = ModelConfig {
        hidden: heads * r.random_range(1..5),
        embed: r.random_range(1..6),
        heads,
        layers: r.random_range(1..3),
        content_dim: r.random_range(1..5),
        seed,
        ..ModelConfig::default_for(kind, vocab)
    };
    let content = || {
        (kind == ModelKind::Llmkt).then(|| {
            ContentTable::from_cache(
                &random_cache(vocab, cfg.content_dim, seed),
                &constructs(vocab),
                vocab,
            )
        })
    };
    let net = Net::init(&cfg, content()).map_err(|e| e.to_string())?;
    let m = TrainedModel {
        config: cfg.clone(),
        param_count: ktbench::models::param_count(net.as_dyn().params()),
        net,
        history: vec![],
        best_epoch: None,
    };
    let a = dir.join(format!("{seed}a.ktpm"));
    let b = dir.join(format!("{seed}b.ktpm"));
    save_model(&m, &a).map_err(|e| e.to_string())?;
    let back = load_model(&a, content()).map_err(|e| e.to_string())?;
    save_model(&back, &b).map_err(|e| e.to_string())?;
    let same = |p: &std::path::Path, q: &std::path::Path| {
        std::fs::read(p).unwrap() == std::fs::read(q).unwrap()
    };
    if !same(&a, &b) {
        return Err(format!("{kind} seed {seed}: parameter files differ"));
    }
    let (sa, sb) = (
        ktbench::models::sidecar_path(&a),
        ktbench::models::sidecar_path(&b),
    );
    if !same(&sa, &sb) {
        return Err(format!("{kind} seed {seed}: sidecars differ"));
    }
    Ok(())
}

/// Published latency, cost and accuracy figures. KT rows use the stated
/// upper bounds (0.25 s per student, $2 per year).
pub fn published_results() -> Vec<ktbench::bench::BenchReport> {
    use ktbench::bench::{BenchReport, CostMode};
    let row = |model: &str, acc: f64, f1: f64, lat: f64, params: Option<u64>, cost: f64, mode| {
        BenchReport {
            model: model.into(),
            accuracy: acc,
            macro_f1: f1,
            latency_per_student_s: lat,
            params,
            annual_cost_usd: cost,
            cost_mode: mode,
        }
    };
    vec![
        row(
            "LLM KT",
            0.728,
            0.674,
            0.25,
            Some(730_000),
            2.0,
            CostMode::SelfHosted,
        ),
        row(
            "SAKT",
            0.727,
            0.669,
            0.25,
            Some(790_000),
            2.0,
            CostMode::SelfHosted,
        ),
        row(
            "DKT",
            0.718,
            0.650,
            0.25,
            Some(610_000),
            2.0,
            CostMode::SelfHosted,
        ),
        row(
            "GPT-4o-mini",
            0.586,
            0.579,
            3.1,
            Some(8_000_000_000),
            2322.0,
            CostMode::Api,
        ),
        row(
            "Gemini-2.5-flash-lite",
            0.665,
            0.527,
            128.0,
            Some(4_000_000_000),
            1230.0,
            CostMode::Api,
        ),
        row(
            "Qwen2.5-7B",
            0.646,
            0.533,
            3299.0,
            Some(7_000_000_000),
            24_741.0,
            CostMode::SelfHosted,
        ),
        row(
            "Llama-1B LoRA",
            0.710,
            0.592,
            1598.8,
            Some(1_000_000_000),
            11_991.0,
            CostMode::SelfHosted,
        ),
        row(
            "Llama-1B zero-shot",
            0.335,
            0.251,
            1598.8,
            Some(1_000_000_000),
            11_991.0,
            CostMode::SelfHosted,
        ),
    ]
}

pub fn is_kt(model: &str) -> bool {
    matches!(model, "LLM KT" | "SAKT" | "DKT")
}
