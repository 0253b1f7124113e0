//! Branching processes embedded in walk excursions and their direct
//! simulation as branching processes in random environment.
//!
//! Within the `r`-th excursion, `Z_r(j)` counts the moves `|S|: j → j+1`.
//! Every upcrossing into level `j` is an individual of generation `j-1`; its
//! children are the upcrossings out of `j` made before `|S|` next steps back
//! to `j - 1`. Summing over the first `N` excursions gives `U_N(j)`, and the
//! visit counts satisfy `L(j; τ_N) = U_N(j-1) + U_N(j)` for `j ≥ 1`.

use std::io::{self, Write};

use rand::RngCore;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::Environment;
use crate::seed::{unit_f64, StreamRng};
use crate::walk::{lattice_index, local_time, WalkError, WalkPath};

/// Above this population a generation is drawn as one negative binomial.
pub const NEGBIN_THRESHOLD: u64 = 1_000;

/// Poisson intensities above this are returned as their rounded mean; the
/// relative spread there is below `1e-7`.
const POISSON_SATURATION: f64 = 1e15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BranchingError {
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error("generation {requested} not simulated (profile stops at {available} without extinction)")]
    Truncated { requested: u64, available: u64 },
    #[error("alpha {0} outside (0, 1)")]
    BadAlpha(f64),
}

/// How the direct simulation reads the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    /// Every individual uses the positive half-line, `α_k^(m)` in generation `k`.
    HalfLine,
    /// Each of the `N` ancestors picks a side with probability `α_0^(m)`;
    /// the negative side uses `1 - α_{-k}^(m)`.
    SignSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Origin {
    Extracted { excursion: u64 },
    Aggregated { excursions: u64 },
    Simulated { construction: Construction },
}

/// Generation counts `Z(0), Z(1), …`, stored up to and including the first
/// zero, or up to the generation cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingProfile {
    pub counts: Vec<u64>,
    pub origin: Origin,
    pub initial: u64,
    pub extinct: bool,
}

impl BranchingProfile {
    fn from_counts(mut counts: Vec<u64>, origin: Origin, extinct_by_cap: bool) -> Self {
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            counts.truncate(k + 1);
        }
        let extinct = counts.last() == Some(&0) || extinct_by_cap;
        if extinct && counts.last() != Some(&0) {
            counts.push(0);
        }
        let initial = counts.first().copied().unwrap_or(0);
        Self { counts, origin, initial, extinct }
    }

    /// `Z(j)`; generations past extinction are 0.
    pub fn generation(&self, j: u64) -> Result<u64, BranchingError> {
        match self.counts.get(j as usize) {
            Some(&c) => Ok(c),
            None if self.extinct => Ok(0),
            None => Err(BranchingError::Truncated { requested: j, available: self.counts.len() as u64 - 1 }),
        }
    }

    /// Index of the last stored generation.
    pub fn last_generation(&self) -> u64 {
        self.counts.len() as u64 - 1
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "generation,count")?;
        for (j, c) in self.counts.iter().enumerate() {
            writeln!(w, "{j},{c}")?;
        }
        Ok(())
    }
}

fn recorded(path: &WalkPath) -> Result<&[i32], WalkError> {
    path.positions().ok_or(WalkError::PathNotRecorded)
}

fn check_excursion(path: &WalkPath, r: u64) -> Result<(), WalkError> {
    if r == 0 || r > path.excursions() {
        return Err(if path.censored() && r > path.excursions() {
            WalkError::Censored
        } else {
            WalkError::ExcursionOutOfRange { requested: r, available: path.excursions() }
        });
    }
    Ok(())
}

fn upcrossing_counts(segment: &[i32]) -> Vec<u64> {
    let mut z = Vec::new();
    for w in segment.windows(2) {
        let (a, b) = (w[0].unsigned_abs() as usize, w[1].unsigned_abs() as usize);
        if b > a {
            if a >= z.len() {
                z.resize(a + 1, 0);
            }
            z[a] += 1;
        }
    }
    z.push(0);
    z
}

/// `Z_r(j) = #{τ_{r-1} ≤ n < τ_r : |S_n| = j, |S_{n+1}| = j+1}`.
pub fn extract_upcrossings(path: &WalkPath, r: u64) -> Result<BranchingProfile, BranchingError> {
    check_excursion(path, r)?;
    let pos = recorded(path)?;
    let tau = path.tau();
    let segment = &pos[tau[r as usize - 1] as usize..=tau[r as usize] as usize];
    Ok(BranchingProfile::from_counts(upcrossing_counts(segment), Origin::Extracted { excursion: r }, false))
}

/// `U_N(j) = Σ_{r ≤ N} Z_r(j)`. Uses stored positions when present; otherwise
/// the running counters, which requires the path to end exactly at `τ_N`.
pub fn aggregate_upcrossings(path: &WalkPath, n: u64) -> Result<BranchingProfile, BranchingError> {
    if n == 0 {
        return Ok(BranchingProfile::from_counts(vec![0], Origin::Aggregated { excursions: 0 }, false));
    }
    check_excursion(path, n)?;
    let counts = match path.positions() {
        Some(pos) => upcrossing_counts(&pos[..=path.tau()[n as usize] as usize]),
        None if path.excursions() == n && path.end() == 0 => {
            let mut c = path.upcrossings().to_vec();
            c.push(0);
            c
        }
        None => return Err(WalkError::PathNotRecorded.into()),
    };
    Ok(BranchingProfile::from_counts(counts, Origin::Aggregated { excursions: n }, false))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityRow {
    pub level: u64,
    pub local_time: u64,
    pub below: u64,
    pub at: u64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub excursions: u64,
    pub rows: Vec<IdentityRow>,
}

impl IdentityReport {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }
}

/// Checks `L(j; τ_N) = U_N(j-1) + U_N(j)` for every level `j ≥ 1` reached,
/// up to the observation radius when the path has one.
pub fn verify_identity(path: &WalkPath, n: u64) -> Result<IdentityReport, BranchingError> {
    let u = aggregate_upcrossings(path, n)?;
    let horizon = path.tau()[n as usize];
    let lt = local_time(path, horizon)?;
    let mut top = lt.counts.len().max(u.counts.len()) as u64;
    if let Some(r) = path.radius() {
        top = top.min(u64::from(r) + 1);
    }
    let rows = (1..top)
        .map(|j| {
            let below = u.generation(j - 1).unwrap_or(0);
            let at = u.generation(j).unwrap_or(0);
            let local_time = lt.at(j as usize);
            IdentityRow { level: j, local_time, below, at, holds: local_time == below + at }
        })
        .collect();
    Ok(IdentityReport { excursions: n, rows })
}

/// Offspring counts of every individual born at signed site `site ≠ 0`: the
/// runs of outward moves from `site`, each closed by an inward move.
pub fn offspring_at_site(path: &WalkPath, site: i64) -> Result<Vec<u64>, BranchingError> {
    let pos = recorded(path)?;
    let outward = if site > 0 { 1 } else { -1 };
    let mut runs = Vec::new();
    let mut run = 0u64;
    for w in pos.windows(2) {
        if i64::from(w[0]) == site {
            if (w[1] - w[0]) as i64 == outward {
                run += 1;
            } else {
                runs.push(run);
                run = 0;
            }
        }
    }
    Ok(runs)
}

/// Geometric on `{0, 1, …}` with `P(k) = α^k (1 - α)` from one uniform.
#[inline]
pub fn geometric(alpha: f64, u: f64) -> u64 {
    let v = 1.0 - u;
    (v.ln() / alpha.ln()).floor() as u64
}

/// `count` i.i.d. draws of the offspring law by inversion.
pub fn sample_offspring(alpha: f64, count: usize, rng: &mut impl RngCore) -> Result<Vec<u64>, BranchingError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(BranchingError::BadAlpha(alpha));
    }
    Ok((0..count).map(|_| geometric(alpha, unit_f64(rng.next_u64()))).collect())
}

/// Sum of `n` i.i.d. offspring draws.
pub fn offspring_sum(alpha: f64, n: u64, rng: &mut StreamRng) -> u64 {
    if n == 0 {
        return 0;
    }
    if n <= NEGBIN_THRESHOLD {
        return (0..n).map(|_| geometric(alpha, unit_f64(rng.next_u64()))).sum();
    }
    let intensity = Gamma::new(n as f64, alpha / (1.0 - alpha)).expect("valid gamma").sample(rng);
    if intensity <= 0.0 {
        return 0;
    }
    if intensity > POISSON_SATURATION {
        return intensity.round() as u64;
    }
    Poisson::new(intensity).expect("valid poisson").sample(rng) as u64
}

fn run_half(n0: u64, g_max: u64, alpha_at: impl Fn(i64) -> f64, rng: &mut StreamRng) -> Vec<u64> {
    let mut counts = vec![n0];
    let mut u = n0;
    for k in 1..=g_max {
        if u == 0 {
            break;
        }
        u = offspring_sum(alpha_at(k as i64), u, rng);
        counts.push(u);
    }
    counts
}

/// Direct BPRE `U(k) = Σ_{i ≤ U(k-1)} ξ_{i,k}` from `U(0) = N` in `env`,
/// stopped at extinction or after `g_max` generations.
pub fn simulate_bpre(
    env: &Environment,
    n: u64,
    g_max: u64,
    construction: Construction,
    rng: &mut StreamRng,
) -> BranchingProfile {
    let counts = match construction {
        Construction::HalfLine => run_half(n, g_max, |k| env.alpha(k), rng),
        Construction::SignSplit => {
            let up = if n == 0 { 0 } else { Binomial::new(n, env.alpha(0)).expect("valid binomial").sample(rng) };
            let pos = run_half(up, g_max, |k| env.alpha(k), rng);
            let neg = run_half(n - up, g_max, |k| 1.0 - env.alpha(-k), rng);
            let len = pos.len().max(neg.len());
            (0..len).map(|k| pos.get(k).copied().unwrap_or(0) + neg.get(k).copied().unwrap_or(0)).collect()
        }
    };
    BranchingProfile::from_counts(counts, Origin::Simulated { construction }, false)
}

/// Default generation cap `50 m`.
pub fn default_g_max(m: u32) -> u64 {
    50 * u64::from(m)
}

/// `X_m(x) = U([m x]) / m`.
pub fn scaled_bpre_profile(profile: &BranchingProfile, m: u32, x_grid: &[f64]) -> Result<Vec<f64>, BranchingError> {
    x_grid
        .iter()
        .map(|&x| Ok(profile.generation(lattice_index(m, x))? as f64 / f64::from(m)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffspringMoments {
    pub lambda: f64,
    pub a: f64,
    pub third_exact: f64,
    pub y_bound: f64,
}

/// Moments of `ξ / λ` for the geometric offspring law with parameter `α`.
pub fn moments(alpha: f64) -> Result<OffspringMoments, BranchingError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(BranchingError::BadAlpha(alpha));
    }
    let lambda = alpha / (1.0 - alpha);
    let inv = 1.0 / lambda;
    Ok(OffspringMoments {
        lambda,
        a: 1.0 / alpha,
        third_exact: 6.0 + 6.0 * inv + inv * inv,
        y_bound: 4.0 * (7.0 + 6.0 * inv + inv * inv),
    })
}

/// `M_m`, `A_m` and the bound on `G_m`, evaluated on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KurtzTriple {
    pub m: u32,
    pub x: Vec<f64>,
    pub drift: Vec<f64>,
    pub variance: Vec<f64>,
    pub third_bound: Vec<f64>,
}

/// For each `x`, with base `ρ_k = α_k / (1 - α_k)` and `n = [m x]`:
/// `M_m = m^{-1/2} Σ log ρ_k`, `A_m = m^{-1} Σ (1 + ρ_k^{-1/√m})` and
/// `G_m ≤ 4 m^{-3/2} Σ (7 + 6 ρ_k^{-1/√m} + ρ_k^{-2/√m})`, sums over `k = 1..=n`.
pub fn kurtz_statistics(env: &Environment, m: u32, x_grid: &[f64]) -> KurtzTriple {
    kurtz_from_rho(|k| env.base_rho(k), m, x_grid)
}

/// [`kurtz_statistics`] over an arbitrary base sequence `k ↦ ρ_k`.
pub fn kurtz_from_rho(rho: impl Fn(i64) -> f64, m: u32, x_grid: &[f64]) -> KurtzTriple {
    let mf = f64::from(m);
    let sq = mf.sqrt();
    let mut order: Vec<usize> = (0..x_grid.len()).collect();
    order.sort_by(|&i, &j| x_grid[i].total_cmp(&x_grid[j]));
    let (mut drift, mut variance, mut third_bound) =
        (vec![0.0; x_grid.len()], vec![0.0; x_grid.len()], vec![0.0; x_grid.len()]);
    let (mut s_log, mut s_a, mut s_g) = (0.0, 0.0, 0.0);
    let mut k: u64 = 0;
    for i in order {
        let n = lattice_index(m, x_grid[i]);
        while k < n {
            k += 1;
            let log_rho = rho(k as i64).ln();
            let r = (-log_rho / sq).exp();
            s_log += log_rho;
            s_a += 1.0 + r;
            s_g += 7.0 + 6.0 * r + r * r;
        }
        drift[i] = s_log / sq;
        variance[i] = s_a / mf;
        third_bound[i] = 4.0 * s_g / (mf * sq);
    }
    KurtzTriple { m, x: x_grid.to_vec(), drift, variance, third_bound }
}

/// Deterministic ellipticity bound on `|A_m(x) - 2x|`, with `c = (1-ν)/ν`.
pub fn kurtz_variance_bound(nu: f64, m: u32, x: f64) -> f64 {
    let c = (1.0 - nu) / nu;
    let e = 1.0 / f64::from(m).sqrt();
    x * (c.powf(e) - 1.0).max(1.0 - c.powf(-e)) + 2.0 / f64::from(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compare::{ks_statistic, ks_critical, chi_square_gof, Verdict};
    use crate::environment::{sample_environment, EnvironmentSpec};
    use crate::seed::{derive_seed, derived_stream};
    use crate::walk::{scaled_local_time_profile, simulate_walk, Stop, WalkOptions};
    use proptest::prelude::*;

    fn path(p: &[i32]) -> WalkPath {
        WalkPath::from_positions(p.to_vec(), 1).unwrap()
    }

    fn env(seed: u64, m: u32) -> Environment {
        sample_environment(EnvironmentSpec::default_with_seed(seed), -64..=64).unwrap().rescale(m).unwrap()
    }

    fn simple(m: u32) -> Environment {
        sample_environment(EnvironmentSpec::two_point(0.5, 0.1, 0), -64..=64).unwrap().rescale(m).unwrap()
    }

    #[test]
    fn extraction_examples() {
        let z = extract_upcrossings(&path(&[0, 1, 0]), 1).unwrap();
        assert_eq!(z.counts, vec![1, 0]);
        assert!(z.extinct);
        let z = extract_upcrossings(&path(&[0, 1, 2, 1, 2, 1, 0]), 1).unwrap();
        assert_eq!(z.counts, vec![1, 2, 0]);
        let z = extract_upcrossings(&path(&[0, -1, -2, -1, 0]), 1).unwrap();
        assert_eq!(z.counts, vec![1, 1, 0]);
        assert_eq!(z.generation(7).unwrap(), 0);
        let two = path(&[0, 1, 0, -1, -2, -1, 0]);
        assert_eq!(extract_upcrossings(&two, 2).unwrap().counts, vec![1, 1, 0]);
        assert!(matches!(
            extract_upcrossings(&two, 3),
            Err(BranchingError::Walk(WalkError::ExcursionOutOfRange { requested: 3, available: 2 }))
        ));
    }

    #[test]
    fn identity_examples() {
        let r = verify_identity(&path(&[0, 1, 0]), 1).unwrap();
        assert_eq!(r.rows, vec![IdentityRow { level: 1, local_time: 1, below: 1, at: 0, holds: true }]);
        let r = verify_identity(&path(&[0, 1, 2, 1, 2, 1, 0]), 1).unwrap();
        assert_eq!((r.rows[0].local_time, r.rows[0].below, r.rows[0].at), (3, 1, 2));
        assert_eq!((r.rows[1].local_time, r.rows[1].below, r.rows[1].at), (2, 2, 0));
        assert!(r.holds());
    }

    #[test]
    fn identity_on_random_paths() {
        let mut checked = 0;
        for m in [1u32, 4, 25] {
            for i in 0..200u64 {
                let mut e = env(derive_seed(11, "id-env", i) ^ u64::from(m), m);
                let n = [1u64, 5, u64::from(m)][(i % 3) as usize];
                let p = simulate_walk(&mut e, WalkOptions::new(Stop::excursions_default_cap(n, m)).recording(), derive_seed(11, "id", i));
                if p.censored() {
                    continue;
                }
                assert!(verify_identity(&p, n).unwrap().holds());
                let counters = simulate_walk(&mut e, WalkOptions::new(Stop::excursions_default_cap(n, m)), derive_seed(11, "id", i));
                assert_eq!(aggregate_upcrossings(&counters, n).unwrap(), aggregate_upcrossings(&p, n).unwrap());
                checked += 1;
            }
        }
        assert!(checked > 550);
    }

    #[test]
    fn identity_within_radius() {
        let mut e = env(5, 25);
        let p = simulate_walk(&mut e, WalkOptions::new(Stop::excursions_default_cap(25, 25)).recording().with_radius(6), 3);
        let r = verify_identity(&p, 25).unwrap();
        assert_eq!(r.rows.len(), 6);
        assert!(r.holds());
    }

    #[test]
    fn offspring_runs_reconstruct_generations() {
        let p = path(&[0, 1, 2, 1, 2, 3, 2, 1, 0]);
        assert_eq!(offspring_at_site(&p, 1).unwrap(), vec![2]);
        assert_eq!(offspring_at_site(&p, 2).unwrap(), vec![0, 1]);
        assert_eq!(offspring_at_site(&p, 3).unwrap(), vec![0]);
        let q = path(&[0, -1, -2, -1, 0]);
        assert_eq!(offspring_at_site(&q, -1).unwrap(), vec![1]);
    }

    #[test]
    fn offspring_sampler_moments() {
        let mut rng = derived_stream(1, "geo", 0);
        let d = sample_offspring(0.5, 1_000_000, &mut rng).unwrap();
        let mean = d.iter().sum::<u64>() as f64 / 1e6;
        assert!((mean - 1.0).abs() < 3.0 * (2.0f64 / 1e6).sqrt(), "{mean}");
        let d = sample_offspring(2.0 / 3.0, 100_000, &mut rng).unwrap();
        let p0 = d.iter().filter(|&&k| k == 0).count() as f64 / 1e5;
        let se = (1.0 / 3.0 * 2.0 / 3.0 / 1e5f64).sqrt();
        assert!((p0 - 1.0 / 3.0).abs() < 3.0 * se, "{p0}");
        assert_eq!(sample_offspring(1.0, 1, &mut rng), Err(BranchingError::BadAlpha(1.0)));
    }

    #[test]
    fn negative_binomial_branch_matches_mean_and_variance() {
        let mut rng = derived_stream(2, "negbin", 0);
        let alpha = 0.55;
        let n = 5_000u64;
        let draws: Vec<f64> = (0..4000).map(|_| offspring_sum(alpha, n, &mut rng) as f64).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let lam = alpha / (1.0 - alpha);
        let (mu, v) = (n as f64 * lam, n as f64 * alpha / (1.0 - alpha).powi(2));
        assert!((mean - mu).abs() < 3.0 * (v / 4000.0).sqrt());
        assert!((var / v - 1.0).abs() < 0.08, "{var} {v}");
    }

    #[test]
    fn offspring_chi_square_per_site() {
        let m = 25;
        let mut e = env(77, m);
        let p = simulate_walk(&mut e, WalkOptions::new(Stop::excursions_default_cap(4000, m)).recording().with_radius(10), 9);
        assert!(!p.censored());
        let mut passes = 0;
        let sites: Vec<i64> = (1..=8).chain(-8..=-1).collect();
        for &s in &sites {
            let runs = offspring_at_site(&p, s).unwrap();
            let alpha = if s > 0 { e.alpha(s) } else { 1.0 - e.alpha(s) };
            let mut hist = vec![0u64; 40];
            for r in runs {
                hist[(r as usize).min(39)] += 1;
            }
            let mut probs: Vec<f64> = (0..40).map(|k| alpha.powi(k) * (1.0 - alpha)).collect();
            probs[39] = alpha.powi(39);
            if chi_square_gof(&hist, &probs, 0.01).unwrap().verdict == Verdict::Pass {
                passes += 1;
            }
        }
        assert!(passes >= 15, "{passes}");
    }

    #[test]
    fn exchangeable_excursion_contributions() {
        let m = 25;
        let mut e = env(31, m);
        let n = 4000u64;
        let p = simulate_walk(&mut e, WalkOptions::new(Stop::excursions_default_cap(n, m)).recording().with_radius(4), 5);
        let eta: Vec<f64> = (1..=n)
            .map(|r| {
                let z = extract_upcrossings(&p, r).unwrap();
                (z.generation(2).unwrap() + z.generation(3).unwrap()) as f64
            })
            .collect();
        let (a, b) = eta.split_at(n as usize / 2);
        assert!(ks_statistic(a, b) < ks_critical(a.len(), b.len()));
    }

    #[test]
    fn bpre_examples() {
        let e = simple(10);
        let mut rng = derived_stream(3, "bpre", 0);
        let z = simulate_bpre(&e, 0, 100, Construction::HalfLine, &mut rng);
        assert_eq!(z.generation(50).unwrap(), 0);
        assert!(z.extinct);
        let profile = BranchingProfile::from_counts(vec![4, 6, 2, 0], Origin::Simulated { construction: Construction::HalfLine }, false);
        assert_eq!(scaled_bpre_profile(&profile, 4, &[0.0, 0.3]).unwrap(), vec![1.0, 1.5]);
        let mut csv = Vec::new();
        profile.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "generation,count\n0,4\n1,6\n2,2\n3,0\n");
    }

    #[test]
    fn truncation_is_reported() {
        let profile = BranchingProfile::from_counts(vec![3, 4, 5], Origin::Simulated { construction: Construction::HalfLine }, false);
        assert!(!profile.extinct);
        assert_eq!(profile.generation(3), Err(BranchingError::Truncated { requested: 3, available: 2 }));
    }

    #[test]
    fn critical_martingale() {
        let m = 40u32;
        let e = simple(m);
        let mut rng = derived_stream(4, "mart", 0);
        let xs = [0.25, 0.5, 1.0];
        let mut sums = [0.0; 3];
        let mut sq = [0.0; 3];
        let reps = 10_000;
        for _ in 0..reps {
            let z = simulate_bpre(&e, u64::from(m), default_g_max(m), Construction::HalfLine, &mut rng);
            for (k, v) in scaled_bpre_profile(&z, m, &xs).unwrap().into_iter().enumerate() {
                sums[k] += v;
                sq[k] += v * v;
            }
        }
        for k in 0..3 {
            let mean = sums[k] / f64::from(reps);
            let se = ((sq[k] / f64::from(reps) - mean * mean) / f64::from(reps)).sqrt();
            assert!((mean - 1.0).abs() < 3.0 * se, "x={} mean={mean} se={se}", xs[k]);
        }
    }

    #[test]
    fn bpre_relation_to_walk_profile() {
        let m = 20u32;
        let mut e = env(8, m);
        let p = simulate_walk(&mut e, WalkOptions::new(Stop::excursions_default_cap(u64::from(m), m)), 4);
        assert!(!p.censored());
        let u = aggregate_upcrossings(&p, u64::from(m)).unwrap();
        let grid: Vec<f64> = (1..=30).map(|k| f64::from(k) / 20.0).collect();
        let l = scaled_local_time_profile(&p, m, &grid).unwrap();
        let x = scaled_bpre_profile(&u, m, &grid).unwrap();
        for (k, &xv) in grid.iter().enumerate() {
            let j = lattice_index(m, xv);
            let gap = (u.generation(j - 1).unwrap() as f64 - u.generation(j).unwrap() as f64) / f64::from(m);
            assert!((l[k] - 2.0 * x[k] - gap).abs() < 1e-12);
        }
    }

    fn pathwise_sample(m: u32, x: f64, reps: u64, tag: &str) -> Vec<f64> {
        let j = lattice_index(m, x);
        (0..reps)
            .map(|i| {
                let mut e = env(derive_seed(21, tag, i), m);
                let p = simulate_walk(
                    &mut e,
                    WalkOptions::new(Stop::Excursions { count: u64::from(m), cap: 1 << 40 }).with_radius(j as u32 + 1),
                    derive_seed(22, tag, i),
                );
                assert!(!p.censored());
                p.upcrossings_at(j as usize) as f64 / f64::from(m)
            })
            .collect()
    }

    fn direct_sample(m: u32, x: f64, reps: u64, construction: Construction, tag: &str) -> Vec<f64> {
        (0..reps)
            .map(|i| {
                let e = env(derive_seed(23, tag, i), m);
                let mut rng = derived_stream(24, tag, i);
                let z = simulate_bpre(&e, u64::from(m), default_g_max(m), construction, &mut rng);
                scaled_bpre_profile(&z, m, &[x]).unwrap()[0]
            })
            .collect()
    }

    #[test]
    fn sign_split_matches_pathwise_extraction() {
        let (m, x, reps) = (50, 0.5, 10_000);
        let walk = pathwise_sample(m, x, reps, "cross");
        let split = direct_sample(m, x, reps, Construction::SignSplit, "cross");
        let d = ks_statistic(&walk, &split);
        assert!(d < 0.02, "{d}");
        // m ancestors sharing one half-line environment overstate the spread
        let half = direct_sample(m, x, reps, Construction::HalfLine, "cross");
        let d = ks_statistic(&walk, &half);
        assert!(d > ks_critical(walk.len(), half.len()), "{d}");
    }

    #[test]
    fn half_line_matches_pathwise_for_single_ancestor() {
        let (m, x, reps) = (1, 3.0, 20_000);
        let walk = pathwise_sample(m, x, reps, "single");
        let half = direct_sample(m, x, reps, Construction::HalfLine, "single");
        assert!(ks_statistic(&walk, &half) < ks_critical(walk.len(), half.len()));
    }

    #[test]
    fn moments_examples() {
        let h = moments(0.5).unwrap();
        assert_eq!((h.lambda, h.a, h.third_exact, h.y_bound), (1.0, 2.0, 13.0, 56.0));
        let t = moments(2.0 / 3.0).unwrap();
        assert!((t.lambda - 2.0).abs() < 1e-12 && (t.a - 1.5).abs() < 1e-12 && (t.third_exact - 9.25).abs() < 1e-12);
    }

    #[test]
    fn moments_monte_carlo() {
        let mut rng = derived_stream(6, "moments", 0);
        for alpha in [0.4, 0.5, 2.0 / 3.0] {
            let mo = moments(alpha).unwrap();
            let d: Vec<f64> = sample_offspring(alpha, 1_000_000, &mut rng).unwrap().into_iter().map(|k| k as f64 / mo.lambda).collect();
            let stat = |f: &dyn Fn(f64) -> f64| {
                let v: Vec<f64> = d.iter().map(|&y| f(y)).collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let se = (v.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0) / v.len() as f64).sqrt();
                (mean, se)
            };
            let (e1, s1) = stat(&|y| y);
            assert!((e1 - 1.0).abs() < 3.0 * s1);
            let (e2, s2) = stat(&|y| (y - 1.0).powi(2));
            assert!((e2 - mo.a).abs() < 3.0 * s2, "{alpha}: {e2} vs {}", mo.a);
            let (e3, s3) = stat(&|y| y.powi(3));
            assert!((e3 - mo.third_exact).abs() < 3.0 * s3, "{alpha}: {e3} vs {}", mo.third_exact);
            let (abs3, _) = stat(&|y| (y - 1.0).abs().powi(3));
            assert!(abs3 <= mo.y_bound);
        }
    }

    #[test]
    fn kurtz_examples() {
        let e = sample_environment(EnvironmentSpec::default_with_seed(1), 0..=8).unwrap();
        let k = kurtz_statistics(&e, 100, &[0.0]);
        assert_eq!((k.drift[0], k.variance[0], k.third_bound[0]), (0.0, 0.0, 0.0));
        let k = kurtz_from_rho(|_| 2.0, 10_000, &[1.0]);
        assert!((k.variance[0] - 1.993093).abs() < 1e-6, "{}", k.variance[0]);
        assert!((k.drift[0] - 2f64.ln() * 100.0).abs() < 1e-9);
    }

    #[test]
    fn kurtz_drift_variance_matches_sigma2() {
        let m = 100u32;
        let spec = EnvironmentSpec::default_with_seed(0);
        let s2 = spec.sinai_sigma2().unwrap();
        let vals: Vec<f64> = (0..10_000u64)
            .map(|i| {
                let e = sample_environment(spec.with_seed(derive_seed(9, "kurtz", i)), 1..=i64::from(m)).unwrap();
                kurtz_statistics(&e, m, &[1.0]).drift[0]
            })
            .collect();
        let (var, se) = crate::compare::variance_with_se(&vals);
        assert!((var - s2).abs() < 3.0 * se, "{var} vs {s2} (se {se})");
    }

    proptest! {
        #[test]
        fn kurtz_bound_is_deterministic(seed in any::<u64>(), m in prop::sample::select(vec![4u32, 100, 2500])) {
            let spec = EnvironmentSpec::default_with_seed(seed);
            let e = sample_environment(spec, 1..=i64::from(m) * 2).unwrap();
            let grid = [0.0, 0.3, 1.0, 2.0];
            let k = kurtz_statistics(&e, m, &grid);
            prop_assert!(k.variance.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(k.third_bound.iter().all(|&g| g >= 0.0));
            for (i, &x) in grid.iter().enumerate() {
                prop_assert!((k.variance[i] - 2.0 * x).abs() <= kurtz_variance_bound(spec.nu, m, x) + 1e-12);
            }
        }

        #[test]
        fn extinction_is_absorbing(seed in any::<u64>(), n in 0u64..20) {
            let e = env(seed, 9);
            let mut rng = crate::seed::stream(seed);
            for c in [Construction::HalfLine, Construction::SignSplit] {
                let z = simulate_bpre(&e, n, 500, c, &mut rng);
                prop_assert_eq!(z.initial, n);
                if let Some(k) = z.counts.iter().position(|&v| v == 0) {
                    prop_assert_eq!(k, z.counts.len() - 1);
                    prop_assert!(z.extinct);
                }
            }
        }
    }
}
