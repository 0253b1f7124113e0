//! The nearest-neighbour walk in a (rescaled) random environment, its
//! excursion times, and the lattice local times of `|S|`.
//!
//! From site `i` the walk steps to `i + 1` with probability `α_i^(m)` and to
//! `i - 1` otherwise.
//!
//! By default a path keeps only running counters: visits of `|S|` to each
//! level, upcrossings `j → j+1` of `|S|`, and the return times to 0. Full
//! positions are stored on request.
//!
//! An optional observation radius `R` reflects the walk at `±(R+1)`. Deleting
//! the excursions beyond `±(R+1)` leaves the joint law of visits and
//! upcrossings at levels `0..=R` unchanged, and keeps excursion lengths finite
//! in expectation.

use rand::RngCore;
use thiserror::Error;

use crate::environment::Environment;
use crate::seed::{stream, unit_f64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error("horizon {horizon} beyond path length {steps}")]
    HorizonBeyondPath { horizon: u64, steps: u64 },
    #[error("path positions were not recorded")]
    PathNotRecorded,
    #[error("path was censored before the requested excursion count")]
    Censored,
    #[error("excursion {requested} requested, {available} completed")]
    ExcursionOutOfRange { requested: u64, available: u64 },
    #[error("level {level} outside observation radius {radius}")]
    OutsideObservationWindow { level: u64, radius: u32 },
    #[error("malformed path: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    /// Run exactly this many steps.
    Steps(u64),
    /// Run until the `count`-th return to 0, censoring at `cap` steps.
    Excursions { count: u64, cap: u64 },
}

impl Stop {
    /// Default cap `5000 m²` for walks run to `τ_count`.
    pub fn excursions_default_cap(count: u64, m: u32) -> Self {
        Stop::Excursions { count, cap: 5000 * u64::from(m) * u64::from(m) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkOptions {
    pub stop: Stop,
    pub record_path: bool,
    pub radius: Option<u32>,
}

impl WalkOptions {
    pub fn new(stop: Stop) -> Self {
        Self { stop, record_path: false, radius: None }
    }

    pub fn recording(mut self) -> Self {
        self.record_path = true;
        self
    }

    pub fn with_radius(mut self, radius: u32) -> Self {
        self.radius = Some(radius);
        self
    }
}

/// A realized trajectory with its excursion bookkeeping.
#[derive(Debug, Clone)]
pub struct WalkPath {
    positions: Option<Vec<i32>>,
    tau: Vec<u64>,
    censored: bool,
    level: u32,
    seed: u64,
    steps: u64,
    end: i64,
    visits: Vec<u64>,
    upcrossings: Vec<u64>,
    radius: Option<u32>,
}

/// Visits of `|S|` to each level `j ≥ 0` over time indices `0..=horizon`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeLocalTimeProfile {
    pub counts: Vec<u64>,
    pub horizon: u64,
}

impl LatticeLocalTimeProfile {
    pub fn at(&self, level: usize) -> u64 {
        self.counts.get(level).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[inline]
fn bump(v: &mut Vec<u64>, k: usize) {
    if k >= v.len() {
        v.resize(k + 1, 0);
    }
    v[k] += 1;
}

/// Simulates the walk `S` in `env` (at the environment's level) from `S_0 = 0`.
pub fn simulate_walk(env: &mut Environment, options: WalkOptions, seed: u64) -> WalkPath {
    let mut rng = stream(seed);
    let (limit, target) = match options.stop {
        Stop::Steps(n) => (n, None),
        Stop::Excursions { count, cap } => (cap, Some(count)),
    };
    let ceiling = options.radius.map(|r| i64::from(r) + 1);

    let mut positions = options.record_path.then(|| vec![0i32]);
    let mut tau = vec![0u64];
    let mut visits = vec![1u64];
    let mut upcrossings = Vec::new();
    let mut pos: i64 = 0;
    let mut steps: u64 = 0;
    let mut censored = false;

    let (mut lo, probs) = env.scaled_slice();
    let mut probs = probs.to_vec();

    if target != Some(0) {
        loop {
            if steps == limit {
                censored = target.is_some();
                break;
            }
            let mut k = pos - lo;
            if k < 0 || k as usize >= probs.len() {
                env.ensure(pos, pos);
                let (l, p) = env.scaled_slice();
                lo = l;
                probs = p.to_vec();
                k = pos - lo;
            }
            let p = probs[k as usize];
            let mut up = unit_f64(rng.next_u64()) < p;
            if let Some(c) = ceiling {
                if pos == c {
                    up = false;
                } else if pos == -c {
                    up = true;
                }
            }
            let next = if up { pos + 1 } else { pos - 1 };
            let (from, to) = (pos.unsigned_abs() as usize, next.unsigned_abs() as usize);
            if to > from {
                bump(&mut upcrossings, from);
            }
            bump(&mut visits, to);
            steps += 1;
            pos = next;
            if let Some(path) = positions.as_mut() {
                path.push(pos as i32);
            }
            if pos == 0 {
                tau.push(steps);
                if target == Some(tau.len() as u64 - 1) {
                    break;
                }
            }
        }
    }

    WalkPath {
        positions,
        tau,
        censored,
        level: env.level(),
        seed,
        steps,
        end: pos,
        visits,
        upcrossings,
        radius: options.radius,
    }
}

impl WalkPath {
    /// Wraps a stored trajectory, recomputing every counter from it.
    pub fn from_positions(positions: Vec<i32>, level: u32) -> Result<Self, WalkError> {
        if positions.first() != Some(&0) {
            return Err(WalkError::Malformed("path must start at 0".into()));
        }
        if let Some(w) = positions.windows(2).find(|w| (w[1] - w[0]).abs() != 1) {
            return Err(WalkError::Malformed(format!("non-unit increment {} -> {}", w[0], w[1])));
        }
        let tau = excursion_times(&positions);
        let mut visits = Vec::new();
        let mut upcrossings = Vec::new();
        for &s in &positions {
            bump(&mut visits, s.unsigned_abs() as usize);
        }
        for w in positions.windows(2) {
            let (a, b) = (w[0].unsigned_abs(), w[1].unsigned_abs());
            if b > a {
                bump(&mut upcrossings, a as usize);
            }
        }
        Ok(Self {
            steps: positions.len() as u64 - 1,
            end: i64::from(*positions.last().unwrap()),
            positions: Some(positions),
            tau,
            censored: false,
            level,
            seed: 0,
            visits,
            upcrossings,
            radius: None,
        })
    }

    pub fn positions(&self) -> Option<&[i32]> {
        self.positions.as_deref()
    }

    /// `τ_0 = 0 < τ_1 < …` as recorded during simulation.
    pub fn tau(&self) -> &[u64] {
        &self.tau
    }

    /// Number of completed excursions.
    pub fn excursions(&self) -> u64 {
        self.tau.len() as u64 - 1
    }

    pub fn censored(&self) -> bool {
        self.censored
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn end(&self) -> i64 {
        self.end
    }

    pub fn radius(&self) -> Option<u32> {
        self.radius
    }

    /// Running visit counts of `|S|` over the whole path.
    pub fn visits(&self) -> &[u64] {
        &self.visits
    }

    /// Running upcrossing counts `|S|: j → j+1` over the whole path; at the
    /// end of an excursion these are `U_N(j)`.
    pub fn upcrossings(&self) -> &[u64] {
        &self.upcrossings
    }

    pub fn upcrossings_at(&self, j: usize) -> u64 {
        self.upcrossings.get(j).copied().unwrap_or(0)
    }

    fn check_level(&self, level: u64) -> Result<(), WalkError> {
        match self.radius {
            Some(r) if level > u64::from(r) => Err(WalkError::OutsideObservationWindow { level, radius: r }),
            _ => Ok(()),
        }
    }
}

/// Recomputes `τ_0 = 0, τ_k = inf{n > τ_{k-1} : S_n = 0}` from positions.
pub fn excursion_times(positions: &[i32]) -> Vec<u64> {
    let mut tau = vec![0u64];
    tau.extend(
        positions.iter().enumerate().skip(1).filter(|(_, &s)| s == 0).map(|(n, _)| n as u64),
    );
    tau
}

/// `L(j; n) = #{0 ≤ r ≤ n : |S_r| = j}`.
///
/// Recounts from stored positions when available; without positions only the
/// full horizon is answerable.
pub fn local_time(path: &WalkPath, horizon: u64) -> Result<LatticeLocalTimeProfile, WalkError> {
    if horizon > path.steps {
        return Err(WalkError::HorizonBeyondPath { horizon, steps: path.steps });
    }
    match path.positions() {
        Some(pos) => {
            let mut counts = Vec::new();
            for &s in &pos[..=horizon as usize] {
                bump(&mut counts, s.unsigned_abs() as usize);
            }
            Ok(LatticeLocalTimeProfile { counts, horizon })
        }
        None if horizon == path.steps => {
            Ok(LatticeLocalTimeProfile { counts: path.visits.clone(), horizon })
        }
        None => Err(WalkError::PathNotRecorded),
    }
}

/// `[m x]` with a guard against representation error (`0.29 * 100` is
/// `28.999…` in binary floating point).
#[inline]
pub fn lattice_index(m: u32, x: f64) -> u64 {
    (f64::from(m) * x + 1e-9).floor().max(0.0) as u64
}

/// Scaled profile `L^(m)(x) = L([mx]; τ_m) / m` for `mx ≥ 1`, and `2` for
/// `0 ≤ mx < 1`.
pub fn scaled_local_time_profile(path: &WalkPath, m: u32, x_grid: &[f64]) -> Result<Vec<f64>, WalkError> {
    if path.excursions() < u64::from(m) {
        return Err(if path.censored {
            WalkError::Censored
        } else {
            WalkError::ExcursionOutOfRange { requested: u64::from(m), available: path.excursions() }
        });
    }
    let profile = local_time(path, path.tau[m as usize])?;
    x_grid
        .iter()
        .map(|&x| {
            let j = lattice_index(m, x);
            if j == 0 {
                Ok(2.0)
            } else {
                path.check_level(j)?;
                Ok(profile.at(j as usize) as f64 / f64::from(m))
            }
        })
        .collect()
}

/// `S^(m)_[m² t] / m` from a fresh walk at level `m` over `base`.
pub fn theorem_a_marginal(base: &Environment, m: u32, t: f64, seed: u64) -> f64 {
    let steps = (f64::from(m) * f64::from(m) * t + 1e-9).floor() as u64;
    if steps == 0 {
        return 0.0;
    }
    let mut env = base.rescale(m).expect("base environment at level 1");
    let path = simulate_walk(&mut env, WalkOptions::new(Stop::Steps(steps)), seed);
    path.end() as f64 / f64::from(m)
}

/// Default abscissae `{k/10 : k = 0..=50}`.
pub fn default_x_grid() -> Vec<f64> {
    (0..=50).map(|k| f64::from(k) / 10.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_environment, EnvironmentSpec};
    use crate::seed::derive_seed;

    fn env(a: f64, seed: u64, m: u32) -> Environment {
        sample_environment(EnvironmentSpec::two_point(a, 0.1, seed), -64..=64).unwrap().rescale(m).unwrap()
    }

    #[test]
    fn zero_steps() {
        let mut e = env(0.8, 1, 1);
        let p = simulate_walk(&mut e, WalkOptions::new(Stop::Steps(0)).recording(), 5);
        assert_eq!(p.positions(), Some(&[0][..]));
        assert_eq!(p.tau(), &[0]);
        assert!(!p.censored());
    }

    #[test]
    fn first_step_frequency() {
        // α_0 = 0.8 exactly: pick an environment seed where site 0 draws 0.8
        let seed = (0..).find(|&s| EnvironmentSpec::two_point(0.8, 0.1, s).site_alpha(0) == 0.8).unwrap();
        let mut e = env(0.8, seed, 1);
        let n = 100_000;
        let ups = (0..n)
            .filter(|&r| simulate_walk(&mut e, WalkOptions::new(Stop::Steps(1)), derive_seed(3, "first", r)).end() == 1)
            .count();
        let frac = ups as f64 / n as f64;
        assert!((frac - 0.8).abs() < 3.0 * (0.16f64 / n as f64).sqrt(), "{frac}");
    }

    #[test]
    fn simple_walk_censoring_is_rare() {
        let mut e = env(0.5, 1, 1);
        let n = 10_000;
        let censored = (0..n)
            .filter(|&r| {
                simulate_walk(
                    &mut e,
                    WalkOptions::new(Stop::Excursions { count: 1, cap: 1_000_000 }),
                    derive_seed(4, "simple", r),
                )
                .censored()
            })
            .count();
        assert!((censored as f64) / (n as f64) < 0.003, "{censored}");
    }

    #[test]
    fn excursion_time_examples() {
        assert_eq!(excursion_times(&[0, 1, 0]), vec![0, 2]);
        assert_eq!(excursion_times(&[0, -1, -2, -1, 0, 1, 0]), vec![0, 4, 6]);
    }

    #[test]
    fn recorded_tau_matches_recomputation() {
        for r in 0..10_000u64 {
            let m = [1u32, 4, 25][(r % 3) as usize];
            let mut e = env(0.8, r, m);
            let p = simulate_walk(
                &mut e,
                WalkOptions::new(Stop::Excursions { count: 3, cap: 20_000 }).recording(),
                derive_seed(5, "tau", r),
            );
            let pos = p.positions().unwrap();
            assert_eq!(excursion_times(pos), p.tau());
            assert!(pos.windows(2).all(|w| (w[1] - w[0]).abs() == 1));
            if !p.censored() {
                assert_eq!(p.excursions(), 3);
            }
        }
    }

    #[test]
    fn local_time_examples() {
        let p = WalkPath::from_positions(vec![0, 1, 0], 1).unwrap();
        assert_eq!(local_time(&p, 2).unwrap().counts, vec![2, 1]);
        let p = WalkPath::from_positions(vec![0, 1, 2, 1, 2, 1, 0], 1).unwrap();
        assert_eq!(local_time(&p, 6).unwrap().counts, vec![2, 3, 2]);
        assert_eq!(local_time(&p, 2).unwrap().counts, vec![1, 1, 1]);
        assert_eq!(local_time(&p, 7), Err(WalkError::HorizonBeyondPath { horizon: 7, steps: 6 }));
    }

    #[test]
    fn unrecorded_path_answers_only_full_horizon() {
        let mut e = env(0.8, 2, 4);
        let p = simulate_walk(&mut e, WalkOptions::new(Stop::Steps(100)), 9);
        assert_eq!(local_time(&p, 100).unwrap().total(), 101);
        assert_eq!(local_time(&p, 50), Err(WalkError::PathNotRecorded));
    }

    #[test]
    fn total_mass_and_zero_count() {
        for r in 0..10_000u64 {
            let mut e = env(0.8, r, 4);
            let p = simulate_walk(
                &mut e,
                WalkOptions::new(Stop::Excursions { count: 2, cap: 50_000 }).recording(),
                derive_seed(6, "mass", r),
            );
            let n = p.steps() / 2 + r % 2;
            let lt = local_time(&p, n).unwrap();
            assert_eq!(lt.total(), n + 1);
            let full = local_time(&p, p.steps()).unwrap();
            assert_eq!(full.counts, p.visits());
            if !p.censored() {
                assert_eq!(full.at(0), 3);
            }
        }
    }

    #[test]
    fn recorded_and_unrecorded_runs_agree() {
        let mut e = env(0.8, 7, 9);
        let opts = WalkOptions::new(Stop::Excursions { count: 9, cap: 1_000_000 });
        let a = simulate_walk(&mut e, opts, 77);
        let b = simulate_walk(&mut e, opts.recording(), 77);
        assert_eq!(a.tau(), b.tau());
        assert_eq!(a.visits(), b.visits());
        assert_eq!(a.upcrossings(), b.upcrossings());
        assert_eq!(a.end(), b.end());
    }

    #[test]
    fn scaled_profile_examples() {
        let p = WalkPath::from_positions(vec![0, 1, 0], 1).unwrap();
        assert_eq!(scaled_local_time_profile(&p, 1, &[0.0, 0.5, 1.0]).unwrap(), vec![2.0, 2.0, 1.0]);
        // m = 2 fixture reaching τ_2, x = 1.6 reads level [3.2] = 3
        let p = WalkPath::from_positions(vec![0, 1, 2, 3, 2, 3, 4, 3, 2, 1, 0, -1, 0], 2).unwrap();
        let lt = local_time(&p, 12).unwrap();
        assert_eq!(lt.at(3), 3);
        let prof = scaled_local_time_profile(&p, 2, &[0.4, 1.6]).unwrap();
        assert_eq!(prof, vec![2.0, 1.5]);
    }

    #[test]
    fn scaled_profile_rejects_censored() {
        let mut e = env(0.8, 3, 4);
        let p = simulate_walk(&mut e, WalkOptions::new(Stop::Excursions { count: 4, cap: 3 }), 1);
        assert!(p.censored());
        assert_eq!(scaled_local_time_profile(&p, 4, &[0.5]), Err(WalkError::Censored));
    }

    #[test]
    fn radius_preserves_inner_structure() {
        let mut e = env(0.8, 11, 16);
        let p = simulate_walk(
            &mut e,
            WalkOptions::new(Stop::excursions_default_cap(16, 16)).with_radius(16).recording(),
            3,
        );
        let pos = p.positions().unwrap();
        assert!(pos.iter().all(|s| s.abs() <= 17));
        assert_eq!(
            scaled_local_time_profile(&p, 16, &[1.5]),
            Err(WalkError::OutsideObservationWindow { level: 24, radius: 16 })
        );
        assert!(scaled_local_time_profile(&p, 16, &[1.0]).is_ok());
    }

    #[test]
    fn lattice_index_guards_rounding() {
        assert_eq!(lattice_index(100, 0.29), 29);
        assert_eq!(lattice_index(2, 1.6), 3);
        assert_eq!(lattice_index(10, 0.09), 0);
    }

    #[test]
    fn theorem_a_zero_horizon() {
        let base = sample_environment(EnvironmentSpec::two_point(0.8, 0.1, 1), -4..=4).unwrap();
        assert_eq!(theorem_a_marginal(&base, 10, 0.001, 3), 0.0);
    }

    #[test]
    fn reproducible_paths() {
        let mut e1 = env(0.8, 4, 4);
        let mut e2 = env(0.8, 4, 4);
        let opts = WalkOptions::new(Stop::Excursions { count: 4, cap: 100_000 }).recording();
        let a = simulate_walk(&mut e1, opts, 12);
        let b = simulate_walk(&mut e2, opts, 12);
        assert_eq!(a.positions(), b.positions());
    }
}
