//! Statistical verdicts over replica batches: two-sample Kolmogorov-Smirnov
//! distances, moment confidence intervals, chi-square goodness of fit, and
//! convergence-in-`m` trends.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

/// Asymptotic two-sample KS coefficient `c(α)` at `α = 0.01`.
pub const KS_C_001: f64 = 1.628;
/// Censoring rate above which a verdict is reported as inconclusive.
pub const MAX_CENSORING_RATE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompareError {
    #[error("empty sample '{0}'")]
    Empty(String),
    #[error("sample '{0}' contains a non-finite value")]
    NonFinite(String),
    #[error("sample of size {0} too small for a moment interval (need >= 30)")]
    Undersized(usize),
    #[error("moment order {0} not in 1..=3")]
    BadOrder(u32),
    #[error("trend needs at least 3 reports, got {0}")]
    TooFewReports(usize),
    #[error("category probabilities and counts differ in length")]
    Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    /// Worst of two verdicts (`Fail` > `Inconclusive` > `Pass`).
    pub fn and(self, other: Verdict) -> Verdict {
        use Verdict::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Pass,
        }
    }

    /// Downgrades a verdict to `Inconclusive` when censoring exceeds 5%.
    pub fn censored(self, rate: f64) -> Verdict {
        if rate > MAX_CENSORING_RATE {
            Verdict::Inconclusive
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub module: String,
    pub m: Option<u32>,
    pub x: Option<f64>,
    pub master_seed: u64,
    pub censored: usize,
}

/// Finite replica values plus the count of excluded (censored) replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub label: String,
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl SampleSet {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self, CompareError> {
        let label = label.into();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CompareError::NonFinite(label));
        }
        Ok(Self { label, values, provenance: Provenance::default() })
    }

    /// Builds a set from replica outcomes, `None` marking a censored replica.
    pub fn from_outcomes(
        label: impl Into<String>,
        outcomes: impl IntoIterator<Item = Option<f64>>,
    ) -> Result<Self, CompareError> {
        let mut censored = 0;
        let mut values = Vec::new();
        for o in outcomes {
            match o {
                Some(v) => values.push(v),
                None => censored += 1,
            }
        }
        let mut set = Self::new(label, values)?;
        set.provenance.censored = censored;
        Ok(set)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        let censored = self.provenance.censored;
        self.provenance = provenance;
        self.provenance.censored += censored;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn censoring_rate(&self) -> f64 {
        let total = self.values.len() + self.provenance.censored;
        if total == 0 {
            0.0
        } else {
            self.provenance.censored as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub statistic: f64,
    pub n1: usize,
    pub n2: usize,
    pub critical: f64,
    pub verdict: Verdict,
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// `sup_x |F̂_a(x) - F̂_b(x)|` evaluated at every merged order statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    // past the end of one sample the other's CDF only moves toward 1
    d.max((i as f64 / n - j as f64 / m).abs())
}

/// Critical value `c(0.01) √((n+m)/(nm))`.
pub fn ks_critical(n1: usize, n2: usize) -> f64 {
    let (n, m) = (n1 as f64, n2 as f64);
    KS_C_001 * ((n + m) / (n * m)).sqrt()
}

pub fn ks_two_sample(a: &SampleSet, b: &SampleSet) -> Result<KsReport, CompareError> {
    for s in [a, b] {
        if s.is_empty() {
            return Err(CompareError::Empty(s.label.clone()));
        }
    }
    let statistic = ks_statistic(&a.values, &b.values);
    let critical = ks_critical(a.len(), b.len());
    Ok(KsReport {
        statistic,
        n1: a.len(),
        n2: b.len(),
        critical,
        verdict: Verdict::from_bool(statistic < critical),
    })
}

/// Sample raw moment of the given order with a half-width of three standard
/// errors of that moment.
pub fn moment_ci(values: &[f64], order: u32) -> Result<(f64, f64), CompareError> {
    if !(1..=3).contains(&order) {
        return Err(CompareError::BadOrder(order));
    }
    mean_ci(values.iter().map(|v| v.powi(order as i32)), values.len())
}

/// Mean with a 3-standard-error half-width for an arbitrary statistic.
pub fn mean_ci(values: impl Iterator<Item = f64>, n: usize) -> Result<(f64, f64), CompareError> {
    if n < 30 {
        return Err(CompareError::Undersized(n));
    }
    let (mut s, mut s2) = (0.0, 0.0);
    let mut count = 0usize;
    for v in values {
        s += v;
        s2 += v * v;
        count += 1;
    }
    let nf = count as f64;
    let mean = s / nf;
    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok((mean, 3.0 * (var / nf).sqrt()))
}

/// Sample variance and its standard error `√((μ̂₄ - s⁴)/n)`.
pub fn variance_with_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    (var, ((m4 - m2 * m2) / n).max(0.0).sqrt())
}

/// Three binomial standard deviations of an empirical CDF difference at the
/// worst case `p = 1/2`.
pub fn noise_band(n1: usize, n2: usize) -> f64 {
    3.0 * 0.5 * (1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub m: u32,
    pub statistic: f64,
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub rows: Vec<TrendRow>,
    pub threshold: f64,
    pub verdict: Verdict,
}

/// PASS when `D(m)` never rises by more than the noise band between
/// consecutive `m` and the last `D` is below `threshold`.
pub fn convergence_trend(reports: &[(u32, KsReport)], threshold: f64) -> Result<TrendReport, CompareError> {
    if reports.len() < 3 {
        return Err(CompareError::TooFewReports(reports.len()));
    }
    let rows: Vec<TrendRow> = reports
        .iter()
        .map(|(m, r)| TrendRow { m: *m, statistic: r.statistic, band: noise_band(r.n1, r.n2) })
        .collect();
    let monotone = rows.windows(2).all(|w| w[1].statistic <= w[0].statistic + w[0].band.max(w[1].band));
    let last = rows.last().unwrap().statistic < threshold;
    Ok(TrendReport { rows, threshold, verdict: Verdict::from_bool(monotone && last) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub critical: f64,
    pub p_value: f64,
    pub verdict: Verdict,
}

/// Pearson goodness of fit of `observed` category counts against
/// `probabilities`. Adjacent categories are merged from the right until every
/// expected count is at least 5.
pub fn chi_square_gof(observed: &[u64], probabilities: &[f64], level: f64) -> Result<ChiSquareReport, CompareError> {
    if observed.len() != probabilities.len() || observed.is_empty() {
        return Err(CompareError::Shape);
    }
    let n: u64 = observed.iter().sum();
    let nf = n as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probabilities) {
        o_acc += o as f64;
        e_acc += p * nf;
        if e_acc >= 5.0 {
            bins.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => bins.push((o_acc, e_acc)),
        }
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = bins.len().saturating_sub(1).max(1);
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    let critical = dist.inverse_cdf(1.0 - level);
    let p_value = 1.0 - dist.cdf(statistic);
    Ok(ChiSquareReport { statistic, dof, critical, p_value, verdict: Verdict::from_bool(statistic <= critical) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derived_stream;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn set(v: &[f64]) -> SampleSet {
        SampleSet::new("t", v.to_vec()).unwrap()
    }

    /// Brute force: evaluate both step functions at every point of the merged
    /// sample and just to the left of it.
    fn ks_brute(a: &[f64], b: &[f64]) -> f64 {
        let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .flat_map(|&x| [x, x - 1e-9])
            .map(|x| (cdf(a, x) - cdf(b, x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_statistic(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]), 1.0);
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[1.5, 2.5]), 0.5);
        assert_eq!(ks_brute(&[1.0, 2.0, 3.0, 4.0], &[1.5, 2.5]), 0.5);
    }

    #[test]
    fn ks_errors_and_critical() {
        assert_eq!(ks_two_sample(&set(&[]), &set(&[1.0])), Err(CompareError::Empty("t".into())));
        assert!(matches!(SampleSet::new("bad", vec![f64::NAN]), Err(CompareError::NonFinite(_))));
        let r = ks_two_sample(&set(&[1.0; 4]), &set(&[1.0; 4])).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.critical - 1.628 * (0.5f64).sqrt()).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn same_generator_passes_at_one_percent() {
        let mut rng = derived_stream(1, "ks-self", 0);
        let passes = (0..100)
            .filter(|_| {
                let a: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
                let b: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
                ks_two_sample(&set(&a), &set(&b)).unwrap().verdict == Verdict::Pass
            })
            .count();
        assert!(passes >= 98, "{passes}");
    }

    #[test]
    fn moment_ci_examples() {
        let (e, h) = moment_ci(&[3.5; 40], 2).unwrap();
        assert_eq!((e, h), (12.25, 0.0));
        let alternating: Vec<f64> = (0..10_000).map(|i| (i % 2) as f64).collect();
        let (e, h) = moment_ci(&alternating, 1).unwrap();
        assert_eq!(e, 0.5);
        assert!((h - 0.015).abs() < 1e-5, "{h}");
        assert_eq!(moment_ci(&[1.0; 10], 1), Err(CompareError::Undersized(10)));
        assert_eq!(moment_ci(&[1.0; 40], 4), Err(CompareError::BadOrder(4)));
    }

    #[test]
    fn moment_ci_coverage_for_geometric() {
        let mut rng = derived_stream(2, "coverage", 0);
        let covered = (0..100)
            .filter(|_| {
                let draws: Vec<f64> = (0..2000)
                    .map(|_| {
                        let u: f64 = 1.0 - rng.random::<f64>();
                        (u.ln() / 0.5f64.ln()).floor()
                    })
                    .collect();
                let (e, h) = moment_ci(&draws, 1).unwrap();
                (e - 1.0).abs() <= h
            })
            .count();
        assert!(covered >= 99, "{covered}");
    }

    fn report(d: f64, n: usize) -> KsReport {
        KsReport { statistic: d, n1: n, n2: n, critical: ks_critical(n, n), verdict: Verdict::Pass }
    }

    #[test]
    fn trend_examples() {
        let ms = [25, 50, 100];
        let mk = |ds: [f64; 3]| -> Vec<(u32, KsReport)> { ms.iter().zip(ds).map(|(&m, d)| (m, report(d, 10_000))).collect() };
        assert_eq!(convergence_trend(&mk([0.30, 0.12, 0.05]), 0.06).unwrap().verdict, Verdict::Pass);
        assert_eq!(convergence_trend(&mk([0.05, 0.12, 0.30]), 0.06).unwrap().verdict, Verdict::Fail);
        let t = convergence_trend(&mk([0.10, 0.11, 0.04]), 0.06).unwrap();
        assert!((t.rows[0].band - 0.0212).abs() < 1e-4);
        assert_eq!(t.verdict, Verdict::Pass);
        assert_eq!(convergence_trend(&mk([0.10, 0.11, 0.04])[..2], 0.06), Err(CompareError::TooFewReports(2)));
    }

    #[test]
    fn chi_square_accepts_true_law_and_rejects_wrong_one() {
        let probs: Vec<f64> = (0..30).map(|k| 0.5f64.powi(k + 1)).collect();
        let mut rng = derived_stream(3, "chi", 0);
        let mut counts = vec![0u64; 30];
        for _ in 0..10_000 {
            let u: f64 = 1.0 - rng.random::<f64>();
            let k = ((u.ln() / 0.5f64.ln()).floor() as usize).min(29);
            counts[k] += 1;
        }
        assert_eq!(chi_square_gof(&counts, &probs, 0.01).unwrap().verdict, Verdict::Pass);
        let wrong: Vec<f64> = (0..30).map(|k| 0.4 * 0.6f64.powi(k)).collect();
        assert_eq!(chi_square_gof(&counts, &wrong, 0.01).unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn verdict_combination() {
        assert_eq!(Verdict::Pass.and(Verdict::Inconclusive), Verdict::Inconclusive);
        assert_eq!(Verdict::Inconclusive.and(Verdict::Fail), Verdict::Fail);
        assert_eq!(Verdict::Pass.censored(0.06), Verdict::Inconclusive);
        assert_eq!(Verdict::Fail.censored(0.01), Verdict::Fail);
    }

    #[test]
    fn censored_outcomes_are_counted() {
        let s = SampleSet::from_outcomes("w", [Some(1.0), None, Some(2.0), None]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.censoring_rate(), 0.5);
    }

    proptest! {
        #[test]
        fn ks_matches_brute_force(a in prop::collection::vec(-5i32..5, 1..40), b in prop::collection::vec(-5i32..5, 1..40)) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            prop_assert!((ks_statistic(&a, &b) - ks_brute(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn ks_is_symmetric_and_transform_invariant(a in prop::collection::vec(-10.0f64..10.0, 1..60), b in prop::collection::vec(-10.0f64..10.0, 1..60)) {
            let d = ks_statistic(&a, &b);
            prop_assert_eq!(d, ks_statistic(&b, &a));
            let f = |v: &Vec<f64>| v.iter().map(|x| x.exp() * 3.0 + 1.0).collect::<Vec<_>>();
            prop_assert!((d - ks_statistic(&f(&a), &f(&b))).abs() < 1e-12);
        }
    }
}
