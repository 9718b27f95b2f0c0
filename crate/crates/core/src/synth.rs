//! Synthetic student populations with a logistic response model and a
//! practice effect.
//!
//! A student with ability `θ` answering question `q` (difficulty `b_q`)
//! after `n` earlier attempts at the same construct is correct with
//! probability `logistic(θ − b_q + λ·n + c)`.
//!
//! Every student draws from their own ChaCha stream indexed by student id,
//! and outcomes are drawn as `u < p` with `u` fixed per (student, step). The
//! empirical bias is therefore a non-decreasing function of `c` for a fixed
//! seed, which is what calibration bisects on.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    Choice, Dataset, Interaction, QuestionMeta, SplitTag, StudentSequence, CHOICE_LABELS,
};
use crate::embedding::{mean_vector, ContentKind, EmbeddingCache, EmbeddingError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("bias calibration did not converge: target {target}, last bias {last_bias}")]
    NoConvergence { target: f64, last_bias: f64 },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub students: usize,
    pub questions: usize,
    pub constructs: usize,
    pub interactions_per_student: usize,
    pub sigma_theta: f64,
    pub sigma_b: f64,
    /// Logit gain per earlier exposure to the same construct.
    pub lambda: f64,
    /// Global logit offset.
    pub offset: f64,
    pub target_bias: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            students: 2400,
            questions: 500,
            constructs: 50,
            interactions_per_student: 50,
            sigma_theta: 1.0,
            sigma_b: 1.0,
            lambda: 0.05,
            offset: 0.0,
            target_bias: 0.658,
            tolerance: 0.005,
            seed: 1234,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.students == 0 || self.questions == 0 || self.constructs == 0 {
            return bad("students, questions and constructs must be positive");
        }
        if self.interactions_per_student == 0 {
            return bad("interactions_per_student must be positive");
        }
        if self.questions > u32::MAX as usize || self.constructs > u32::MAX as usize {
            return bad("too many questions");
        }
        if !(self.sigma_theta >= 0.0 && self.sigma_b >= 0.0) {
            return bad("spreads must be non-negative");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if !(self.target_bias > 0.0 && self.target_bias < 1.0) {
            return bad("target_bias must lie in (0, 1)");
        }
        if !self.offset.is_finite() || !(self.tolerance > 0.0) {
            return bad("offset must be finite and tolerance positive");
        }
        Ok(())
    }
}

/// Question bank drawn from stream 0.
struct Bank {
    difficulty: Vec<f64>,
    construct: Vec<u32>,
    correct_choice: Vec<usize>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

fn bank(cfg: &SynthConfig) -> Bank {
    let mut rng = stream(cfg.seed, 0);
    let mut b = Bank {
        difficulty: Vec::with_capacity(cfg.questions),
        construct: Vec::with_capacity(cfg.questions),
        correct_choice: Vec::with_capacity(cfg.questions),
    };
    for _ in 0..cfg.questions {
        b.difficulty.push(normal(&mut rng, cfg.sigma_b));
        b.construct.push(rng.random_range(0..cfg.constructs) as u32);
        b.correct_choice.push(rng.random_range(0..4));
    }
    b
}

/// Everything except the outcome threshold.
struct Latent {
    bank: Bank,
    /// Per student: (question, base logit without offset, uniform draw).
    steps: Vec<Vec<(u32, f64, f64)>>,
}

fn latent(cfg: &SynthConfig) -> Latent {
    let bank = bank(cfg);
    let n = cfg.interactions_per_student;
    let steps = (0..cfg.students)
        .map(|s| {
            let mut rng = stream(cfg.seed, s as u64 + 1);
            let theta = normal(&mut rng, cfg.sigma_theta);
            let qs: Vec<usize> = if cfg.questions >= n {
                index::sample(&mut rng, cfg.questions, n).into_vec()
            } else {
                (0..n).map(|_| rng.random_range(0..cfg.questions)).collect()
            };
            let mut exposure: BTreeMap<u32, u32> = BTreeMap::new();
            qs.into_iter()
                .map(|q| {
                    let k = bank.construct[q];
                    let seen = exposure.entry(k).or_insert(0);
                    let z = theta - bank.difficulty[q] + cfg.lambda * *seen as f64;
                    *seen += 1;
                    (q as u32, z, rng.random::<f64>())
                })
                .collect()
        })
        .collect();
    Latent { bank, steps }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Latent {
    fn bias(&self, c: f64) -> f64 {
        let (mut hits, mut n) = (0usize, 0usize);
        for s in &self.steps {
            for &(_, z, u) in s {
                hits += (u < logistic(z + c)) as usize;
                n += 1;
            }
        }
        hits as f64 / n as f64
    }

    fn dataset(&self, cfg: &SynthConfig, c: f64) -> Dataset {
        let sequences = self
            .steps
            .iter()
            .enumerate()
            .map(|(s, steps)| StudentSequence {
                student_id: s as u64,
                interactions: steps
                    .iter()
                    .enumerate()
                    .map(|(t, &(q, z, u))| Interaction {
                        question_id: q,
                        construct_id: self.bank.construct[q as usize],
                        correct: u < logistic(z + c),
                        position: t as u32,
                    })
                    .collect(),
            })
            .collect();
        Dataset {
            sequences,
            questions: question_table(cfg, &self.bank),
            split: SplitTag::Train,
        }
    }
}

fn question_table(cfg: &SynthConfig, bank: &Bank) -> BTreeMap<u32, QuestionMeta> {
    (0..cfg.questions)
        .map(|q| {
            let k = bank.construct[q];
            let right = bank.correct_choice[q];
            let choices: Vec<Choice> = CHOICE_LABELS
                .iter()
                .enumerate()
                .map(|(i, l)| Choice {
                    label: l.to_string(),
                    text: format!("{}", q * 4 + i),
                    correct: i == right,
                })
                .collect();
            let mut misconceptions = BTreeMap::new();
            let mut explanations = BTreeMap::new();
            for (i, l) in CHOICE_LABELS.iter().enumerate() {
                if i == right {
                    explanations.insert(
                        l.to_string(),
                        format!("Choice {l} is the correct result for item {q}."),
                    );
                    misconceptions.insert(l.to_string(), String::new());
                } else {
                    explanations.insert(
                        l.to_string(),
                        format!("Choice {l} follows from a slip on item {q}."),
                    );
                    misconceptions.insert(
                        l.to_string(),
                        format!("Misapplies construct {k} (pattern {i})."),
                    );
                }
            }
            let meta = QuestionMeta {
                question_id: q as u32,
                question_text: format!("Synthetic item {q} on construct {k}"),
                choices,
                construct_id: k,
                construct_text: format!("Construct {k}"),
                misconceptions,
                explanations,
            };
            (q as u32, meta)
        })
        .collect()
}

/// Draws a corpus at the configured offset. Student ids are `0..students`.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    Ok(latent(cfg).dataset(cfg, cfg.offset))
}

/// Empirical bias of the corpus `cfg` would produce at offset `c`.
pub fn empirical_bias(cfg: &SynthConfig, c: f64) -> Result<f64, SynthError> {
    cfg.validate()?;
    Ok(latent(cfg).bias(c))
}

const MAX_BISECTIONS: usize = 60;

fn bisect(l: &Latent, target: f64, tol: f64) -> Result<f64, SynthError> {
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    let mut last = f64::NAN;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        last = l.bias(mid);
        if (last - target).abs() <= tol {
            return Ok(mid);
        }
        if last < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(SynthError::NoConvergence {
        target,
        last_bias: last,
    })
}

/// Offset `c` in `[−10, 10]` at which the corpus drawn from `cfg` (same
/// seed, same students) has bias within `tol` of `target`.
pub fn calibrate_bias(cfg: &SynthConfig, target: f64, tol: f64) -> Result<f64, SynthError> {
    cfg.validate()?;
    if !(target > 0.01 && target < 0.99) {
        return Err(SynthError::Config(format!(
            "target {target} outside (0.01, 0.99)"
        )));
    }
    bisect(&latent(cfg), target, tol)
}

/// Calibrates to `cfg.target_bias` and draws the corpus at that offset.
pub fn generate_calibrated(cfg: &SynthConfig) -> Result<(Dataset, f64), SynthError> {
    cfg.validate()?;
    let l = latent(cfg);
    let c = bisect(&l, cfg.target_bias, cfg.tolerance)?;
    Ok((l.dataset(cfg, c), c))
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    v.into_iter().map(|x| (x / norm) as f32).collect()
}

/// Random unit vectors standing in for text embeddings: one per question
/// and per construct, and per-choice explanation and misconception vectors
/// mean-aggregated to one per question.
pub fn synth_embeddings(
    questions: &BTreeMap<u32, QuestionMeta>,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingCache, SynthError> {
    let mut cache = EmbeddingCache::new(dim)?;
    let mut rng = stream(seed, u64::MAX);
    let constructs: std::collections::BTreeSet<u32> =
        questions.values().map(|q| q.construct_id).collect();
    for k in constructs {
        cache.insert(k as u64, ContentKind::Construct, unit_vector(&mut rng, dim))?;
    }
    for q in questions.values() {
        let id = q.question_id as u64;
        cache.insert(id, ContentKind::Question, unit_vector(&mut rng, dim))?;
        let expl: Vec<Vec<f32>> = q
            .choices
            .iter()
            .map(|_| unit_vector(&mut rng, dim))
            .collect();
        let misc: Vec<Vec<f32>> = q
            .choices
            .iter()
            .filter(|c| !c.correct)
            .map(|_| unit_vector(&mut rng, dim))
            .collect();
        let mean = |vs: &[Vec<f32>]| {
            let refs: Vec<&[f32]> = vs.iter().map(Vec::as_slice).collect();
            mean_vector(&refs).unwrap_or_else(|| vec![0.0; dim])
        };
        cache.insert(id, ContentKind::Explanation, mean(&expl))?;
        cache.insert(id, ContentKind::Misconception, mean(&misc))?;
    }
    Ok(cache)
}
