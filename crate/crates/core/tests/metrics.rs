use proptest::prelude::*;
use secsched::metrics::{compare, merge_reports, percentile, summarize, Aggregate, MetricSummary};
use secsched::simenv::{EpisodeReport, RequestRecord};

fn report(lat: &[f64], slo: f64) -> EpisodeReport {
    EpisodeReport {
        records: lat
            .iter()
            .enumerate()
            .map(|(i, &t)| RequestRecord {
                request_id: i as u64,
                node_id: 0,
                new_container: false,
                wait_ms: 0.0,
                cold_ms: 0.0,
                comp_ms: t,
                comm_ms: 0.0,
                total_ms: t,
                slo_ms: slo,
                slo_met: t <= slo,
                reward: -t / 1000.0,
                decision_time_us: 2.0,
            })
            .collect(),
        ..EpisodeReport::default()
    }
}

/// Nearest rank with q = m / 1000 in exact integer arithmetic.
fn naive_percentile(samples: &[f64], m: u64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as u64;
    let k = (1..=n).find(|k| k * 1000 >= m * n).unwrap();
    v[(k - 1) as usize]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn percentile_matches_integer_rank(samples in prop::collection::vec(0.0..1e4f64, 1..400), m in 1u64..=1000) {
        let q = m as f64 / 1000.0;
        prop_assert_eq!(percentile(&samples, q).unwrap(), naive_percentile(&samples, m));
    }

    #[test]
    fn aggregates_merge_like_concatenation(
        a in prop::collection::vec(1.0..1000.0f64, 1..100),
        b in prop::collection::vec(1.0..1000.0f64, 1..100),
    ) {
        let (ra, rb) = (report(&a, 300.0), report(&b, 300.0));
        let merged = Aggregate::of(&ra).merge(Aggregate::of(&rb));
        let whole = Aggregate::of(&merge_reports(&[ra, rb]));
        prop_assert_eq!(merged.count, whole.count);
        prop_assert_eq!(merged.violations, whole.violations);
        prop_assert!((merged.total_latency_ms - whole.total_latency_ms).abs() <= 1e-9 * whole.total_latency_ms);
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one(lat in prop::collection::vec(0.0..500.0f64, 1..300)) {
        let s = summarize(&report(&lat, 250.0)).unwrap();
        prop_assert_eq!(s.cdf.last().unwrap().1, 1.0);
        for w in s.cdf.windows(2) {
            prop_assert!(w[0].0 < w[1].0 && w[0].1 < w[1].1);
        }
        prop_assert!(s.p50_ms <= s.p95_ms && s.p95_ms <= s.p99_ms);
        let viol = lat.iter().filter(|t| **t > 250.0).count();
        prop_assert_eq!(s.violations, viol);
    }
}

#[test]
fn percentile_edge_cases() {
    let s: Vec<f64> = (1..=100).map(f64::from).collect();
    assert_eq!(percentile(&s, 0.99).unwrap(), 99.0);
    assert_eq!(percentile(&s, 0.95).unwrap(), 95.0);
    assert_eq!(percentile(&s, 0.001).unwrap(), 1.0);
    assert!(percentile(&s, 0.0).is_err());
    assert!(percentile(&s, 1.5).is_err());
}

#[test]
fn summary_of_known_sample() {
    let s = summarize(&report(&[100.0, 200.0, 300.0, 400.0], 250.0)).unwrap();
    assert_eq!(s.count, 4);
    assert_eq!(s.mean_ms, 250.0);
    assert_eq!(s.p50_ms, 200.0);
    assert_eq!(s.p99_ms, 400.0);
    assert_eq!(s.slo_violation_rate, 0.5);
    assert_eq!(s.mean_decision_time_us, 2.0);
    assert_eq!(s.cdf, vec![(100.0, 0.25), (200.0, 0.5), (300.0, 0.75), (400.0, 1.0)]);
}

fn summary(mean: f64, viol: f64, dt: f64) -> MetricSummary {
    MetricSummary {
        count: 10,
        mean_ms: mean,
        p50_ms: mean,
        p95_ms: mean,
        p99_ms: 2.0 * mean,
        slo_violation_rate: viol,
        mean_decision_time_us: dt,
        violations: (viol * 10.0) as usize,
        cdf: vec![],
    }
}

#[test]
fn comparison_ratios() {
    let rows = compare(&[
        ("ppo".into(), summary(100.0, 0.1, 50.0)),
        ("solver".into(), summary(80.0, 0.0, 5000.0)),
    ])
    .unwrap();
    assert_eq!(rows[0].mean_ratio, 1.25);
    assert_eq!(rows[1].mean_ratio, 1.0);
    assert_eq!(rows[0].slo_violation_ratio, f64::INFINITY);
    assert_eq!(rows[1].slo_violation_ratio, 1.0);
    assert_eq!(rows[0].speedup_vs_slowest, 100.0);
    assert_eq!(rows[1].speedup_vs_slowest, 1.0);
    assert_eq!(rows[1].decision_time_ratio, 100.0);
    assert!(compare(&[("a".into(), summary(1.0, 0.0, 1.0))]).is_err());
}
