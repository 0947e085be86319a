//! Evaluation metrics over episode reports: nearest-rank percentiles, latency
//! CDFs, SLO-violation rates, decision times, and cross-run comparison tables.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simenv::EpisodeReport;

/// Nearest-rank percentile: the sorted sample at 1-based rank `ceil(q * n)`.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("percentile of an empty sample".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

pub fn percentile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InvalidParameter("percentile of an empty sample".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidParameter(format!("quantile {q} outside (0, 1]")));
    }
    Ok(sorted[nearest_rank(q, sorted.len()) - 1])
}

/// 1-based nearest rank. `q * n` is rounded to 12 significant digits first so
/// that e.g. `0.99 * 100` lands on rank 99 rather than 100.
fn nearest_rank(q: f64, n: usize) -> usize {
    let x = q * n as f64;
    let snapped = (x * 1e9).round() / 1e9;
    let x = if (snapped - x).abs() <= 1e-12 * x.max(1.0) { snapped } else { x };
    (x.ceil() as usize).clamp(1, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub slo_violation_rate: f64,
    pub mean_decision_time_us: f64,
    pub violations: usize,
    pub cdf: Vec<(f64, f64)>,
}

/// Mergeable aggregate of a report: counts and sums only.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub violations: usize,
    pub total_latency_ms: f64,
    pub total_decision_time_us: f64,
}

impl Aggregate {
    pub fn of(report: &EpisodeReport) -> Aggregate {
        Aggregate {
            count: report.records.len(),
            violations: report.records.iter().filter(|r| !r.slo_met).count(),
            total_latency_ms: report.records.iter().map(|r| r.total_ms).sum(),
            total_decision_time_us: report.records.iter().map(|r| r.decision_time_us).sum(),
        }
    }

    pub fn merge(self, other: Aggregate) -> Aggregate {
        Aggregate {
            count: self.count + other.count,
            violations: self.violations + other.violations,
            total_latency_ms: self.total_latency_ms + other.total_latency_ms,
            total_decision_time_us: self.total_decision_time_us + other.total_decision_time_us,
        }
    }
}

/// Concatenates reports (e.g. several seeds) into one.
pub fn merge_reports(reports: &[EpisodeReport]) -> EpisodeReport {
    let mut out = EpisodeReport::default();
    for r in reports {
        out.records.extend(r.records.iter().cloned());
        out.total_reward += r.total_reward;
        out.deferred += r.deferred;
        out.remapped += r.remapped;
    }
    out
}

pub fn summarize(report: &EpisodeReport) -> Result<MetricSummary> {
    let n = report.records.len();
    if n == 0 {
        return Err(Error::InvalidParameter("cannot summarize an empty report".into()));
    }
    let mut lat: Vec<f64> = report.records.iter().map(|r| r.total_ms).collect();
    let mean_ms = lat.iter().sum::<f64>() / n as f64;
    lat.sort_by(f64::total_cmp);
    let violations = report.records.iter().filter(|r| !r.slo_met).count();
    let mut cdf: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in lat.iter().enumerate() {
        let frac = (i + 1) as f64 / n as f64;
        match cdf.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => cdf.push((x, frac)),
        }
    }
    Ok(MetricSummary {
        count: n,
        mean_ms,
        p50_ms: percentile_sorted(&lat, 0.50)?,
        p95_ms: percentile_sorted(&lat, 0.95)?,
        p99_ms: percentile_sorted(&lat, 0.99)?,
        slo_violation_rate: violations as f64 / n as f64,
        mean_decision_time_us: report.records.iter().map(|r| r.decision_time_us).sum::<f64>() / n as f64,
        violations,
        cdf,
    })
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "name",
    "count",
    "mean_ms",
    "p50_ms",
    "p95_ms",
    "p99_ms",
    "slo_violation_rate",
    "mean_decision_time_us",
];

impl MetricSummary {
    pub fn summary_row(&self, name: &str) -> Vec<String> {
        vec![
            name.to_string(),
            self.count.to_string(),
            self.mean_ms.to_string(),
            self.p50_ms.to_string(),
            self.p95_ms.to_string(),
            self.p99_ms.to_string(),
            self.slo_violation_rate.to_string(),
            self.mean_decision_time_us.to_string(),
        ]
    }

    pub fn write_summary_csv<W: Write>(&self, name: &str, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(SUMMARY_HEADER)?;
        wtr.write_record(self.summary_row(name))?;
        wtr.flush()?;
        Ok(())
    }

    pub fn write_cdf_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["latency_ms", "cum_fraction"])?;
        for (x, f) in &self.cdf {
            wtr.write_record([x.to_string(), f.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn load_summary_csv(path: &Path) -> Result<(String, MetricSummary)> {
        let mut rdr = csv::Reader::from_path(path)?;
        let rec = rdr
            .records()
            .next()
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 2,
                msg: "summary has no data row".into(),
            })??;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: 2,
                    msg: format!("column {} is not numeric", SUMMARY_HEADER[i]),
                })
        };
        let count = num(1)? as usize;
        let rate = num(6)?;
        Ok((
            rec.get(0).unwrap_or("").to_string(),
            MetricSummary {
                count,
                mean_ms: num(2)?,
                p50_ms: num(3)?,
                p95_ms: num(4)?,
                p99_ms: num(5)?,
                slo_violation_rate: rate,
                mean_decision_time_us: num(7)?,
                violations: (rate * count as f64).round() as usize,
                cdf: Vec::new(),
            },
        ))
    }
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub slo_violation_rate: f64,
    pub mean_decision_time_us: f64,
    pub mean_ratio: f64,
    pub p50_ratio: f64,
    pub p99_ratio: f64,
    pub slo_violation_ratio: f64,
    pub decision_time_ratio: f64,
    /// How many times faster this entry decides than the slowest entry.
    pub speedup_vs_slowest: f64,
}

fn ratio(value: f64, best: f64) -> f64 {
    if value == best {
        1.0
    } else if best == 0.0 {
        f64::INFINITY
    } else {
        value / best
    }
}

/// Ratio-to-best table (candidate / best, lower is better for every metric).
pub fn compare(summaries: &[(String, MetricSummary)]) -> Result<Vec<ComparisonRow>> {
    if summaries.len() < 2 {
        return Err(Error::InvalidParameter("compare needs at least two summaries".into()));
    }
    let best = |f: fn(&MetricSummary) -> f64| {
        summaries.iter().map(|(_, s)| f(s)).fold(f64::INFINITY, f64::min)
    };
    let b_mean = best(|s| s.mean_ms);
    let b_p50 = best(|s| s.p50_ms);
    let b_p99 = best(|s| s.p99_ms);
    let b_slo = best(|s| s.slo_violation_rate);
    let b_dt = best(|s| s.mean_decision_time_us);
    let slowest = summaries
        .iter()
        .map(|(_, s)| s.mean_decision_time_us)
        .fold(0.0, f64::max);
    Ok(summaries
        .iter()
        .map(|(name, s)| ComparisonRow {
            name: name.clone(),
            mean_ms: s.mean_ms,
            p50_ms: s.p50_ms,
            p99_ms: s.p99_ms,
            slo_violation_rate: s.slo_violation_rate,
            mean_decision_time_us: s.mean_decision_time_us,
            mean_ratio: ratio(s.mean_ms, b_mean),
            p50_ratio: ratio(s.p50_ms, b_p50),
            p99_ratio: ratio(s.p99_ms, b_p99),
            slo_violation_ratio: ratio(s.slo_violation_rate, b_slo),
            decision_time_ratio: ratio(s.mean_decision_time_us, b_dt),
            speedup_vs_slowest: ratio(slowest, s.mean_decision_time_us),
        })
        .collect())
}

pub fn write_compare_csv<W: Write>(rows: &[ComparisonRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simenv::RequestRecord;

    fn report(lat: &[f64], slo: &[f64]) -> EpisodeReport {
        EpisodeReport {
            records: lat
                .iter()
                .zip(slo)
                .enumerate()
                .map(|(i, (&t, &o))| RequestRecord {
                    request_id: i as u64,
                    node_id: 0,
                    new_container: false,
                    wait_ms: 0.0,
                    cold_ms: 0.0,
                    comp_ms: t,
                    comm_ms: 0.0,
                    total_ms: t,
                    slo_ms: o,
                    slo_met: t <= o,
                    reward: -t / 1000.0,
                    decision_time_us: 1.0,
                })
                .collect(),
            ..EpisodeReport::default()
        }
    }

    fn summary(mean: f64, dt: f64) -> MetricSummary {
        MetricSummary {
            count: 1,
            mean_ms: mean,
            p50_ms: mean,
            p95_ms: mean,
            p99_ms: mean,
            slo_violation_rate: 0.0,
            mean_decision_time_us: dt,
            violations: 0,
            cdf: vec![],
        }
    }

    #[test]
    fn nearest_rank_examples() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&s, 0.99).unwrap(), 99.0);
        assert_eq!(percentile(&s, 0.50).unwrap(), 50.0);
        assert_eq!(percentile(&[7.0], 0.3).unwrap(), 7.0);
        assert_eq!(percentile(&[7.0], 1.0).unwrap(), 7.0);
        assert!(percentile(&[], 0.5).is_err());
        assert!(percentile(&s, 0.0).is_err());
    }

    #[test]
    fn summarize_counts_violations() {
        let s = summarize(&report(&[100.0, 200.0, 300.0], &[150.0, 150.0, 350.0])).unwrap();
        assert_eq!(s.violations, 1);
        assert_eq!(s.slo_violation_rate, 1.0 / 3.0);
        assert_eq!(s.mean_ms, 200.0);
        assert_eq!(s.cdf.last().unwrap().1, 1.0);
        let ok = summarize(&report(&[1.0, 2.0], &[5.0, 5.0])).unwrap();
        assert_eq!(ok.slo_violation_rate, 0.0);
        assert!(summarize(&EpisodeReport::default()).is_err());
    }

    #[test]
    fn cdf_has_one_point_per_distinct_latency() {
        let s = summarize(&report(&[5.0, 1.0, 5.0, 3.0], &[9.0; 4])).unwrap();
        assert_eq!(s.cdf, vec![(1.0, 0.25), (3.0, 0.5), (5.0, 1.0)]);
        assert!(s.p50_ms <= s.p95_ms && s.p95_ms <= s.p99_ms);
    }

    #[test]
    fn compare_ratios() {
        let same = compare(&[("a".into(), summary(10.0, 5.0)), ("b".into(), summary(10.0, 5.0))]).unwrap();
        for r in &same {
            assert_eq!((r.mean_ratio, r.p99_ratio, r.decision_time_ratio), (1.0, 1.0, 1.0));
        }
        let rows = compare(&[
            ("best".into(), summary(188.42, 0.02e6)),
            ("other".into(), summary(210.5, 2.98e6)),
        ])
        .unwrap();
        assert_eq!(rows[0].mean_ratio, 1.0);
        assert!((rows[1].mean_ratio - 1.117).abs() < 5e-4);
        assert!((rows[0].speedup_vs_slowest - 149.0).abs() < 1e-9);
        assert!(compare(&[("x".into(), summary(1.0, 1.0))]).is_err());
    }

    #[test]
    fn aggregates_merge() {
        let a = report(&[100.0, 300.0], &[200.0, 200.0]);
        let b = report(&[50.0], &[10.0]);
        let merged = summarize(&merge_reports(&[a.clone(), b.clone()])).unwrap();
        let agg = Aggregate::of(&a).merge(Aggregate::of(&b));
        assert_eq!(agg.count, merged.count);
        assert_eq!(agg.violations, merged.violations);
    }
}
