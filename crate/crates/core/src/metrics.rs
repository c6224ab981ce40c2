//! Aggregation of per-slot observations into a [`MetricsReport`], and the
//! monitors that check the theory-facing properties empirically.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::policies::RoutingDecision;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcdfPoint {
    pub threshold: u64,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: u64,
    pub p99: u64,
    pub p999: u64,
}

/// Counts of completed jobs by sojourn time (slots).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SojournHistogram {
    counts: Vec<u64>,
    total: u64,
    weighted: u128,
}

impl SojournHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: impl IntoIterator<Item = u64>) -> Self {
        let mut h = Self::new();
        for s in samples {
            h.add(s, 1);
        }
        h
    }

    #[inline]
    pub fn add(&mut self, sojourn: u64, count: u64) {
        let idx = sojourn as usize;
        if idx >= self.counts.len() {
            self.counts.resize(idx + 1, 0);
        }
        self.counts[idx] += count;
        self.total += count;
        self.weighted += sojourn as u128 * count as u128;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn max(&self) -> Option<u64> {
        self.counts.iter().rposition(|&c| c > 0).map(|i| i as u64)
    }

    pub fn mean(&self) -> Option<f64> {
        (self.total > 0).then(|| self.weighted as f64 / self.total as f64)
    }

    /// Smallest `tau` with `P(sojourn <= tau) >= q`.
    pub fn quantile(&self, q: f64) -> Option<u64> {
        if self.total == 0 {
            return None;
        }
        let target = (q * self.total as f64).ceil().max(1.0) as u64;
        let mut acc = 0u64;
        for (tau, &c) in self.counts.iter().enumerate() {
            acc += c;
            if acc >= target {
                return Some(tau as u64);
            }
        }
        self.max()
    }

    pub fn percentiles(&self) -> Option<Percentiles> {
        Some(Percentiles {
            p50: self.quantile(0.5)?,
            p99: self.quantile(0.99)?,
            p999: self.quantile(0.999)?,
        })
    }

    /// `P(sojourn > tau)`.
    pub fn ccdf_at(&self, tau: u64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let upto = (tau as usize + 1).min(self.counts.len());
        let at_most: u64 = self.counts[..upto].iter().sum();
        (self.total - at_most) as f64 / self.total as f64
    }

    /// Default threshold grid: every integer up to 1000, then 5% geometric
    /// steps, always ending at the maximum observed sojourn.
    pub fn default_thresholds(&self) -> Vec<u64> {
        let Some(max) = self.max() else {
            return Vec::new();
        };
        let mut out: Vec<u64> = (0..=max.min(1000)).collect();
        let mut t = 1000.0f64;
        while (t as u64) < max {
            t = (t * 1.05).ceil();
            out.push((t as u64).min(max));
        }
        out.dedup();
        out
    }
}

/// Empirical `P(sojourn > tau)` for each threshold, ascending.
pub fn sojourn_ccdf(histogram: &SojournHistogram, thresholds: &[u64]) -> Result<Vec<CcdfPoint>> {
    if histogram.total() == 0 {
        return Err(Error::Usage("no completed jobs in the measurement window".into()));
    }
    let mut sorted = thresholds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    // Single pass over the sorted grid.
    let mut out = Vec::with_capacity(sorted.len());
    let mut at_most = 0u64;
    let mut next = 0usize;
    for tau in sorted {
        let upto = (tau as usize + 1).min(histogram.counts.len());
        if upto > next {
            at_most += histogram.counts[next..upto].iter().sum::<u64>();
            next = upto;
        }
        out.push(CcdfPoint {
            threshold: tau,
            probability: (histogram.total - at_most) as f64 / histogram.total as f64,
        });
    }
    Ok(out)
}

/// Time average of the total queue over the measurement window.
pub fn mean_total_queue(series: &[u64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Usage("empty measurement window".into()));
    }
    Ok(series.iter().map(|&q| q as f64).sum::<f64>() / series.len() as f64)
}

/// Largest number of distinct dispatchers sending to one server.
pub fn incast_max(decisions: &[RoutingDecision]) -> u32 {
    let mut per_server: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for d in decisions {
        let entry = per_server.entry(d.server).or_default();
        if !entry.contains(&d.dispatcher) {
            entry.push(d.dispatcher);
        }
    }
    per_server.values().map(|v| v.len() as u32).max().unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessageRates {
    pub total: u64,
    pub per_slot: f64,
    /// Absent when no jobs arrived.
    pub per_job: Option<f64>,
    /// Messages per (dispatcher, slot) pair with arrivals.
    pub per_arrival_event: Option<f64>,
}

pub fn message_rates(total: u64, slots: u64, jobs: u64, arrival_events: u64) -> MessageRates {
    let ratio = |den: u64| (den > 0).then(|| total as f64 / den as f64);
    MessageRates {
        total,
        per_slot: ratio(slots).unwrap_or(0.0),
        per_job: ratio(jobs),
        per_arrival_event: ratio(arrival_events),
    }
}

/// Ordinary least-squares slope with a Student-t confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearTrend {
    pub slope: f64,
    pub lower: f64,
    pub upper: f64,
}

impl LinearTrend {
    pub fn contains_zero(&self) -> bool {
        self.lower <= 0.0 && 0.0 <= self.upper
    }
}

/// Fits `y = a + b x` with `x = 0, 1, ...` and returns `b` with its
/// two-sided `confidence` interval. `None` for fewer than three points.
pub fn linear_trend(ys: &[f64], confidence: f64) -> Option<LinearTrend> {
    let n = ys.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let x_mean = (nf - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxx += dx * dx;
        sxy += dx * (y - y_mean);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, &y)| (y - intercept - slope * i as f64).powi(2))
        .sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0)
        .expect("df > 0")
        .inverse_cdf(0.5 + confidence / 2.0);
    Some(LinearTrend {
        slope,
        lower: slope - t * se,
        upper: slope + t * se,
    })
}

/// Means of `batches` equal consecutive chunks (the remainder is dropped
/// from the front so the most recent data is always kept).
pub fn batch_means(series: &[f64], batches: usize) -> Vec<f64> {
    if batches == 0 || series.len() < batches {
        return Vec::new();
    }
    let size = series.len() / batches;
    let skip = series.len() - size * batches;
    series[skip..]
        .chunks_exact(size)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityVerdict {
    Stable,
    Unstable,
    Inconclusive,
}

impl std::fmt::Display for StabilityVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StabilityVerdict::Stable => "stable",
            StabilityVerdict::Unstable => "unstable",
            StabilityVerdict::Inconclusive => "inconclusive",
        })
    }
}

/// Thresholds for the heuristic stability verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityParams {
    /// Unstable needs `second_half_mean > growth_factor * first_half_mean`.
    pub growth_factor: f64,
    /// Stable needs the half means within this relative distance...
    pub mean_tolerance: f64,
    /// ...or within this many jobs.
    pub absolute_tolerance: f64,
    pub confidence: f64,
    /// The trend is fitted on this many batch means to absorb
    /// autocorrelation.
    pub batches: usize,
    pub min_len: usize,
}

impl Default for StabilityParams {
    fn default() -> Self {
        StabilityParams {
            growth_factor: 1.5,
            mean_tolerance: 0.10,
            absolute_tolerance: 1.0,
            confidence: 0.95,
            batches: 50,
            min_len: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub verdict: StabilityVerdict,
    pub first_half_mean: Option<f64>,
    pub second_half_mean: Option<f64>,
    pub trend: Option<LinearTrend>,
}

impl StabilityReport {
    fn inconclusive() -> Self {
        StabilityReport {
            verdict: StabilityVerdict::Inconclusive,
            first_half_mean: None,
            second_half_mean: None,
            trend: None,
        }
    }
}

/// Heuristic strong-stability proxy on the post-warm-up total-queue series.
///
/// Unstable: the second-half mean exceeds `growth_factor` times the first
/// and the second-half trend is significantly positive. Stable: the
/// second-half trend is not significantly positive and the half means
/// agree. A significantly negative trend is a draining excursion, not
/// growth, so it does not block a stable verdict.
pub fn stability_estimate(series: &[f64], params: &StabilityParams) -> StabilityReport {
    if series.len() < params.min_len.max(4 * params.batches).max(8) {
        return StabilityReport::inconclusive();
    }
    let half = series.len() / 2;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = mean(&series[..half]);
    let second = mean(&series[half..]);
    // The trend is fitted on the second half only so a slowly decaying
    // start-up transient does not masquerade as a trend.
    let Some(trend) = linear_trend(&batch_means(&series[half..], params.batches), params.confidence) else {
        return StabilityReport::inconclusive();
    };
    let diff = (second - first).abs();
    let means_agree =
        diff <= params.mean_tolerance * first.max(second) || diff <= params.absolute_tolerance;
    let verdict = if second > params.growth_factor * first && trend.lower > 0.0 {
        StabilityVerdict::Unstable
    } else if trend.lower <= 0.0 && means_agree {
        StabilityVerdict::Stable
    } else {
        StabilityVerdict::Inconclusive
    };
    StabilityReport {
        verdict,
        first_half_mean: Some(first),
        second_half_mean: Some(second),
        trend: Some(trend),
    }
}

/// `|Q_i - view_j[i]|` for every server of one dispatcher.
pub fn gap_snapshot(true_queues: &[u64], view: &[u64]) -> Vec<u64> {
    true_queues.iter().zip(view).map(|(&q, &v)| q.abs_diff(v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    /// Time and pair average of `|Q_i - view_j[i]|` at slot start.
    pub mean: f64,
    pub max: u64,
    /// Time average per pair, row-major by dispatcher (`j * n + i`).
    pub per_pair: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefreshStats {
    /// Largest number of slots since an entry was last overwritten with
    /// the truth, observed at any slot start.
    pub max_age: u64,
    pub mean_age: f64,
    /// Deterministic refresh period the policy promises, if any.
    pub bound: Option<u64>,
    pub violations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    /// Mean of `s_i(t) - a_i(t)`.
    pub mean: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub checked: bool,
    /// Slots where `Q(t+1) != max(Q(t) + a(t) - s(t), 0)`.
    pub queue_dynamics_violations: u64,
    pub fifo_violations: u64,
    pub consistency_violations: u64,
    /// Arrivals equal completions plus final backlog over the whole run.
    pub conservation_holds: bool,
}

/// Everything a run reports. Time averages cover the measurement window
/// (slots at or after warm-up); sojourn statistics cover jobs that arrived
/// in the window and completed before the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub seed: u64,
    pub slots: u64,
    pub warmup: u64,
    pub measured_slots: u64,
    pub mean_total_queue: Option<f64>,
    pub jobs_arrived: u64,
    pub jobs_completed: u64,
    /// Completions per measured slot.
    pub throughput: Option<f64>,
    pub mean_sojourn: Option<f64>,
    pub sojourn_percentiles: Option<Percentiles>,
    pub sojourn_ccdf: Vec<CcdfPoint>,
    /// Incast level -> number of measured slots at that level.
    pub incast_histogram: BTreeMap<u32, u64>,
    pub incast_max: u32,
    pub slots_with_arrivals: u64,
    pub messages: MessageRates,
    pub gap: Option<GapStats>,
    pub refresh: Option<RefreshStats>,
    pub drift: Option<Vec<DriftEstimate>>,
    pub stability: StabilityReport,
    pub invariants: InvariantReport,
}

impl MetricsReport {
    /// Fraction of slots with arrivals whose incast is at most `level`.
    pub fn incast_fraction_at_most(&self, level: u32) -> Option<f64> {
        let busy: u64 = self.incast_histogram.range(1..).map(|(_, &c)| c).sum();
        let ok: u64 = self.incast_histogram.range(1..=level.max(1)).map(|(_, &c)| c).sum();
        (busy > 0).then(|| ok as f64 / busy as f64)
    }

    /// Fraction of measured slots with incast at least `level`.
    pub fn incast_fraction_at_least(&self, level: u32) -> f64 {
        if self.measured_slots == 0 {
            return 0.0;
        }
        let hits: u64 = self.incast_histogram.range(level..).map(|(_, &c)| c).sum();
        hits as f64 / self.measured_slots as f64
    }

    /// CCDF value at `tau` read off the stored grid (step function).
    pub fn ccdf_at(&self, tau: u64) -> f64 {
        match self.sojourn_ccdf.binary_search_by_key(&tau, |p| p.threshold) {
            Ok(i) => self.sojourn_ccdf[i].probability,
            Err(0) => 1.0,
            Err(i) => self.sojourn_ccdf[i - 1].probability,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mean_total_queue_cases() {
        assert_eq!(mean_total_queue(&[0, 0, 0]).unwrap(), 0.0);
        assert_eq!(mean_total_queue(&[5, 5, 5, 5]).unwrap(), 5.0);
        assert!(mean_total_queue(&[]).is_err());
    }

    #[test]
    fn ccdf_counting() {
        let h = SojournHistogram::from_samples([1, 1, 3]);
        let ccdf = sojourn_ccdf(&h, &[3, 0, 1]).unwrap();
        let probs: Vec<f64> = ccdf.iter().map(|p| p.probability).collect();
        assert_eq!(ccdf.iter().map(|p| p.threshold).collect::<Vec<_>>(), vec![0, 1, 3]);
        assert_eq!(probs[0], 1.0);
        assert!((probs[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(probs[2], 0.0);

        let zeros = SojournHistogram::from_samples([0, 0]);
        assert_eq!(sojourn_ccdf(&zeros, &[0]).unwrap()[0].probability, 0.0);
        assert!(sojourn_ccdf(&SojournHistogram::new(), &[0]).is_err());
    }

    #[test]
    fn quantiles_and_mean() {
        let h = SojournHistogram::from_samples((0..100).map(|x| x as u64));
        assert_eq!(h.quantile(0.5), Some(49));
        assert_eq!(h.quantile(0.99), Some(98));
        assert_eq!(h.quantile(1.0), Some(99));
        assert_eq!(h.mean(), Some(49.5));
        assert_eq!(SojournHistogram::new().quantile(0.5), None);
    }

    #[test]
    fn incast_counts_distinct_dispatchers() {
        let d = |dispatcher, server| RoutingDecision { dispatcher, server, jobs: 1 };
        assert_eq!(incast_max(&[d(1, 3), d(2, 3), d(3, 7)]), 2);
        assert_eq!(incast_max(&[]), 0);
        let herd: Vec<_> = (0..10).map(|j| d(j, 4)).collect();
        assert_eq!(incast_max(&herd), 10);
    }

    #[test]
    fn message_rates_without_arrivals() {
        let r = message_rates(10, 5, 0, 0);
        assert_eq!(r.per_slot, 2.0);
        assert_eq!(r.per_job, None);
        assert_eq!(message_rates(6, 3, 3, 3).per_job, Some(2.0));
    }

    #[test]
    fn verdicts_on_synthetic_series() {
        let params = StabilityParams::default();
        let constant = vec![7.0; 100_000];
        assert_eq!(stability_estimate(&constant, &params).verdict, StabilityVerdict::Stable);
        let growing: Vec<f64> = (0..100_000).map(|t| t as f64).collect();
        assert_eq!(stability_estimate(&growing, &params).verdict, StabilityVerdict::Unstable);
        assert_eq!(
            stability_estimate(&constant[..1000], &params).verdict,
            StabilityVerdict::Inconclusive
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut noisy = |drift: f64| -> Vec<f64> {
            (0..100_000).map(|t| 1000.0 + drift * t as f64 + rng.random_range(-50.0..50.0)).collect()
        };
        let draining = noisy(-1e-3);
        assert_eq!(stability_estimate(&draining, &params).verdict, StabilityVerdict::Stable);
        let creeping = noisy(1e-3);
        assert_eq!(
            stability_estimate(&creeping, &params).verdict,
            StabilityVerdict::Inconclusive
        );
    }

    #[test]
    fn trend_of_line_is_exact() {
        let ys: Vec<f64> = (0..10).map(|x| 3.0 + 2.0 * x as f64).collect();
        let t = linear_trend(&ys, 0.95).unwrap();
        assert!((t.slope - 2.0).abs() < 1e-12);
        assert!(!t.contains_zero());
        assert!(linear_trend(&[1.0, 2.0], 0.95).is_none());
    }

    #[test]
    fn batch_means_keeps_tail() {
        let xs: Vec<f64> = (0..7).map(|x| x as f64).collect();
        assert_eq!(batch_means(&xs, 3), vec![1.5, 3.5, 5.5]);
    }

    proptest! {
        #[test]
        fn ccdf_is_monotone_and_ends_at_zero(samples in prop::collection::vec(0u64..500, 1..300)) {
            let h = SojournHistogram::from_samples(samples.iter().copied());
            let ccdf = sojourn_ccdf(&h, &h.default_thresholds()).unwrap();
            for w in ccdf.windows(2) {
                prop_assert!(w[0].threshold < w[1].threshold);
                prop_assert!(w[0].probability >= w[1].probability);
            }
            for p in &ccdf {
                prop_assert!((0.0..=1.0).contains(&p.probability));
            }
            prop_assert_eq!(ccdf.last().unwrap().probability, 0.0);
            prop_assert_eq!(ccdf.last().unwrap().threshold, *samples.iter().max().unwrap());
        }

        #[test]
        fn incast_never_exceeds_dispatchers(routes in prop::collection::vec(0usize..5, 0..10)) {
            let decisions: Vec<_> = routes.iter().enumerate()
                .map(|(j, &s)| RoutingDecision { dispatcher: j, server: s, jobs: 1 })
                .collect();
            prop_assert!(incast_max(&decisions) as usize <= decisions.len());
        }
    }
}
