//! Single-sample latency measurement.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{EvalView, Interaction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConfig {
    /// Untimed calls before measuring.
    pub warmup: usize,
    /// Timed passes over the view.
    pub reps: usize,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            warmup: 10,
            reps: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Every timed call, in seconds.
    pub per_call_s: Vec<f64>,
    /// Per student, the time for all of their targets averaged over reps.
    pub per_student_s: Vec<f64>,
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    pub warmup_calls: usize,
    /// Students with no target, left out of the per-student figures.
    pub excluded_students: usize,
    /// Wall time of the timed section.
    pub wall_s: f64,
}

impl LatencyReport {
    /// The headline figure: median seconds per student.
    pub fn latency_per_student(&self) -> f64 {
        self.median_s
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

fn summarise(
    per_call_s: Vec<f64>,
    per_student_s: Vec<f64>,
    warmup: usize,
    excluded: usize,
    wall_s: f64,
) -> LatencyReport {
    let mut sorted = per_student_s.clone();
    sorted.sort_by(f64::total_cmp);
    let mean_s = if sorted.is_empty() {
        0.0
    } else {
        sorted.iter().sum::<f64>() / sorted.len() as f64
    };
    LatencyReport {
        per_call_s,
        mean_s,
        median_s: quantile(&sorted, 0.5),
        p95_s: quantile(&sorted, 0.95),
        per_student_s,
        warmup_calls: warmup,
        excluded_students: excluded,
        wall_s,
    }
}

/// Times `predict(history, target)` once per target, strictly sequentially,
/// where `history` is every interaction before the target.
pub fn measure_latency<R>(
    mut predict: impl FnMut(&[Interaction], &Interaction) -> R,
    view: &EvalView,
    cfg: LatencyConfig,
) -> LatencyReport {
    let warmup = cfg.warmup.max(1);
    let reps = cfg.reps.max(1);
    let students: Vec<_> = view
        .sequences
        .iter()
        .filter(|s| !s.targets().is_empty())
        .collect();
    let excluded = view.sequences.len() - students.len();
    let calls: Vec<(&[Interaction], &Interaction)> = students
        .iter()
        .flat_map(|s| {
            s.target_range()
                .map(move |k| (&s.interactions()[..k], &s.interactions()[k]))
        })
        .collect();
    let mut done = 0;
    if !calls.is_empty() {
        for &(h, t) in calls.iter().cycle().take(warmup) {
            black_box(predict(h, t));
            done += 1;
        }
    }
    let mut per_call = Vec::with_capacity(calls.len() * reps);
    let mut totals = vec![0.0; students.len()];
    let wall = Instant::now();
    for _ in 0..reps {
        for (si, s) in students.iter().enumerate() {
            for k in s.target_range() {
                let (h, t) = (&s.interactions()[..k], &s.interactions()[k]);
                let start = Instant::now();
                black_box(predict(black_box(h), black_box(t)));
                let dt = start.elapsed().as_secs_f64();
                per_call.push(dt);
                totals[si] += dt;
            }
        }
    }
    let wall_s = wall.elapsed().as_secs_f64();
    let per_student = totals.into_iter().map(|t| t / reps as f64).collect();
    summarise(per_call, per_student, done, excluded, wall_s)
}

/// Times one full pass per student that scores every position at once,
/// the incremental alternative to [`measure_latency`].
pub fn measure_full_pass<R>(
    mut predict: impl FnMut(&[Interaction]) -> R,
    view: &EvalView,
    cfg: LatencyConfig,
) -> LatencyReport {
    let warmup = cfg.warmup.max(1);
    let reps = cfg.reps.max(1);
    let students: Vec<_> = view
        .sequences
        .iter()
        .filter(|s| !s.targets().is_empty())
        .collect();
    let excluded = view.sequences.len() - students.len();
    let mut done = 0;
    if !students.is_empty() {
        for s in students.iter().cycle().take(warmup) {
            black_box(predict(s.interactions()));
            done += 1;
        }
    }
    let mut per_call = Vec::with_capacity(students.len() * reps);
    let mut totals = vec![0.0; students.len()];
    let wall = Instant::now();
    for _ in 0..reps {
        for (si, s) in students.iter().enumerate() {
            let start = Instant::now();
            black_box(predict(black_box(s.interactions())));
            let dt = start.elapsed().as_secs_f64();
            per_call.push(dt);
            totals[si] += dt;
        }
    }
    let wall_s = wall.elapsed().as_secs_f64();
    let per_student = totals.into_iter().map(|t| t / reps as f64).collect();
    summarise(per_call, per_student, done, excluded, wall_s)
}
