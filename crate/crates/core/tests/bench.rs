mod common;

use common::*;
use ktbench::bench::{
    api_cost, cost_ratio, emit_report, measure_latency, read_results_csv, render_scatter_svg,
    scatter_axes, self_hosted_cost, BenchError, CostModel, LatencyConfig, TokenUsage,
    RESULTS_HEADER,
};
use ktbench::data::make_eval_view;
use ktbench::models::{BiasTable, ModelKind, SequenceModel};
use ktbench::synth::{generate, SynthConfig};
use proptest::prelude::*;

#[test]
fn published_latencies_reproduce_published_costs() {
    let m = CostModel::default();
    assert!(self_hosted_cost(0.25, &m).unwrap() <= 2.0);
    assert!((self_hosted_cost(1598.8, &m).unwrap() - 11_991.0).abs() <= 1.0);
    assert!((self_hosted_cost(3299.0, &m).unwrap() - 24_741.0).abs() <= 2.0);
}

#[test]
fn ratio_band_from_published_costs() {
    let ratios: Vec<f64> = [2322.0, 1230.0, 11_991.0, 24_741.0]
        .iter()
        .map(|&c| cost_ratio(2.0, c).unwrap())
        .collect();
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    assert_eq!(min, 615.0);
    assert!(max <= 12_400.0, "{max}");
}

proptest! {
    #[test]
    fn self_hosted_cost_is_homogeneous(lat in 0.0f64..5000.0, rate in 0.0f64..10.0, students in 1u64..1_000_000, k in 1u64..20) {
        let base = CostModel { hourly_rate: rate, students, ..Default::default() };
        let c = self_hosted_cost(lat, &base).unwrap();
        let tol = 1e-9 * c.max(1.0) * k as f64;
        let kf = k as f64;
        prop_assert!((self_hosted_cost(lat * kf, &base).unwrap() - kf * c).abs() <= tol);
        let pricier = CostModel { hourly_rate: rate * kf, ..base.clone() };
        let bigger = CostModel { students: students * k, ..base.clone() };
        prop_assert!((self_hosted_cost(lat, &pricier).unwrap() - kf * c).abs() <= tol);
        prop_assert!((self_hosted_cost(lat, &bigger).unwrap() - kf * c).abs() <= tol);
    }

    #[test]
    fn api_extrapolation_is_invariant(requests in 1u64..5000, tin in 0u64..2000, tout in 0u64..10, k in 1u64..50) {
        let m = CostModel::api(0.15, 0.60);
        let sample = TokenUsage { requests, input_tokens: requests * tin, output_tokens: requests * tout, approximate: false };
        let full = TokenUsage { requests: requests * k, input_tokens: requests * k * tin, output_tokens: requests * k * tout, approximate: false };
        let (a, b) = (api_cost(&sample, &m).unwrap(), api_cost(&full, &m).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }
}

#[test]
fn api_sample_of_1000_requests() {
    let m = CostModel::api(0.15, 0.60);
    assert_eq!(m.annual_requests(), 4_000_000);
    let u = TokenUsage {
        requests: 1000,
        input_tokens: 800_000,
        output_tokens: 2000,
        approximate: false,
    };
    assert!((api_cost(&u, &m).unwrap() - 484.80).abs() < 1e-9);
}

#[test]
fn published_fixture_puts_kt_models_in_bottom_left_decade() {
    let rows = published_results();
    let (x, y) = scatter_axes(&rows);
    let (x1, y10) = (x.map(1.0), y.map(10.0));
    for r in &rows {
        let (px, py) = (x.map(r.latency_per_student_s), y.map(r.annual_cost_usd));
        let bottom_left = px < x1 && py > y10;
        assert_eq!(bottom_left, is_kt(&r.model), "{}", r.model);
    }
    let svg = render_scatter_svg(&rows);
    assert_eq!(svg.matches("<circle").count(), rows.len());
    assert!(svg.contains("log scale"));
}

#[test]
fn report_files_are_written_and_deterministic() {
    let rows = published_results()[..3].to_vec();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let files = emit_report(&rows, a.path()).unwrap();
    emit_report(&rows, b.path()).unwrap();
    assert_eq!(files.len(), 3);
    for f in &files {
        let name = f.file_name().unwrap();
        assert_eq!(
            std::fs::read(f).unwrap(),
            std::fs::read(b.path().join(name)).unwrap()
        );
    }
    let csv = std::fs::read_to_string(a.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(RESULTS_HEADER));
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(read_results_csv(csv.as_bytes()).unwrap(), rows);
    let md = std::fs::read_to_string(a.path().join("report.md")).unwrap();
    assert!(md.contains("| SAKT | 72.7% |"));
    assert!(matches!(
        emit_report(&[], a.path()),
        Err(BenchError::EmptyResults)
    ));
}

#[test]
fn latency_of_real_models_on_synthetic_view() {
    let d = generate(&SynthConfig {
        students: 6,
        questions: 40,
        constructs: 5,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let view = make_eval_view(&d);
    let bias = BiasTable::fit(&d).unwrap();
    let r = measure_latency(
        |h, t| bias.predict_next(h, t.question_id, t.construct_id).unwrap(),
        &view,
        LatencyConfig { warmup: 5, reps: 2 },
    );
    assert_eq!(r.per_student_s.len(), 6);
    assert_eq!(r.per_call_s.len(), 2 * view.num_targets());
    assert!(r.per_call_s.iter().all(|&x| x >= 0.0));
    assert!(r.wall_s >= r.per_call_s.iter().sum::<f64>());
    let net = causal_net(ModelKind::Sakt, d.vocab_size(), 0);
    let r = measure_latency(
        |h, t| net.predict_next(h, t.question_id, t.construct_id).unwrap(),
        &view,
        LatencyConfig::default(),
    );
    assert!(r.median_s > 0.0 && r.p95_s >= r.median_s);
}
