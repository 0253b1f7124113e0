//! Random environments `{α_i}` for nearest-neighbour walks on ℤ.
//!
//! An [`Environment`] stores the base draws `α_i` on a growable window and the
//! rescaling level `m`. Rescaled values `α_i^(m) = (1 + ((1-α_i)/α_i)^(1/√m))^-1`
//! are computed from the base values and cached alongside them.
//!
//! Site values are produced by a counter-based generator keyed by
//! `(seed, site)`, so a site receives the same draw regardless of the order in
//! which the window grows.

use std::io::{self, Write};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{mix64, unit_f64};

const SITE_KEY: u64 = 0xA076_1D64_78BD_642F;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvironmentError {
    #[error("ellipticity constant nu = {0} outside (0, 1/2)")]
    InvalidNu(f64),
    #[error("two-point value a = {a} outside (nu, 1 - nu) for nu = {nu}")]
    InvalidTwoPoint { a: f64, nu: f64 },
    #[error("degenerate environment: sigma^2 = 0")]
    Degenerate,
    #[error("rescaling requires a base environment, found level {0}")]
    NotBaseLevel(u32),
    #[error("rescaling level must be positive")]
    InvalidLevel,
    #[error("empty site range {0}..={1}")]
    EmptyRange(i64, i64),
}

/// Law of a single `α_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Family {
    /// `α_0 ∈ {a, 1-a}` with probability 1/2 each.
    TwoPoint { a: f64 },
    /// `α_0` uniform on `(ν, 1-ν)`.
    UniformSymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub family: Family,
    pub nu: f64,
    pub seed: u64,
}

impl EnvironmentSpec {
    pub fn two_point(a: f64, nu: f64, seed: u64) -> Self {
        Self { family: Family::TwoPoint { a }, nu, seed }
    }

    pub fn uniform_symmetric(nu: f64, seed: u64) -> Self {
        Self { family: Family::UniformSymmetric, nu, seed }
    }

    /// The default experiment family: two-point with `a = 0.8`, `ν = 0.1`.
    pub fn default_with_seed(seed: u64) -> Self {
        Self::two_point(0.8, 0.1, seed)
    }

    /// Same law, different seed.
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), EnvironmentError> {
        if !(self.nu > 0.0 && self.nu < 0.5) {
            return Err(EnvironmentError::InvalidNu(self.nu));
        }
        if let Family::TwoPoint { a } = self.family {
            if !(a > self.nu && a < 1.0 - self.nu) {
                return Err(EnvironmentError::InvalidTwoPoint { a, nu: self.nu });
            }
        }
        Ok(())
    }

    /// Checks every Sinai condition and returns σ².
    ///
    /// Rejects degenerate laws (σ² = 0), which are otherwise valid
    /// environments (the simple symmetric walk).
    pub fn sinai_sigma2(&self) -> Result<f64, EnvironmentError> {
        self.validate()?;
        let s2 = sigma2(self);
        if s2 > 0.0 {
            Ok(s2)
        } else {
            Err(EnvironmentError::Degenerate)
        }
    }

    /// Base draw `α_site`, a pure function of `(seed, site)`.
    #[inline]
    pub fn site_alpha(&self, site: i64) -> f64 {
        let word = mix64(mix64(self.seed ^ SITE_KEY) ^ site as u64);
        match self.family {
            Family::TwoPoint { a } => {
                if word >> 63 == 0 {
                    a
                } else {
                    1.0 - a
                }
            }
            Family::UniformSymmetric => {
                // open interval: shift the 53-bit lattice by half a step
                let u = unit_f64(word) + 0.5 / (1u64 << 53) as f64;
                self.nu + (1.0 - 2.0 * self.nu) * u
            }
        }
    }
}

/// `σ² = E(log((1-α_0)/α_0))²` in closed form or by quadrature.
pub fn sigma2(spec: &EnvironmentSpec) -> f64 {
    match spec.family {
        Family::TwoPoint { a } => {
            let l = ((1.0 - a) / a).ln();
            l * l
        }
        Family::UniformSymmetric => {
            let (lo, hi) = (spec.nu, 1.0 - spec.nu);
            let f = |x: f64| {
                let l = (x / (1.0 - x)).ln();
                l * l
            };
            adaptive_simpson(&f, lo, hi, 1e-13) / (hi - lo)
        }
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Rescaling map `α ↦ (1 + ((1-α)/α)^(1/√m))^-1`.
#[inline]
pub fn rescale_alpha(alpha: f64, m: u32) -> f64 {
    if m == 1 {
        return alpha;
    }
    let rho_m = ((alpha / (1.0 - alpha)).ln() / f64::from(m).sqrt()).exp();
    rho_m / (1.0 + rho_m)
}

/// A realized environment at rescaling level `m`.
#[derive(Debug, Clone)]
pub struct Environment {
    spec: EnvironmentSpec,
    level: u32,
    lo: i64,
    base: Vec<f64>,
    scaled: Vec<f64>,
}

/// Draws the base environment (level 1) on `range`.
pub fn sample_environment(
    spec: EnvironmentSpec,
    range: RangeInclusive<i64>,
) -> Result<Environment, EnvironmentError> {
    spec.validate()?;
    let (lo, hi) = (*range.start(), *range.end());
    if lo > hi {
        return Err(EnvironmentError::EmptyRange(lo, hi));
    }
    let base: Vec<f64> = (lo..=hi).map(|i| spec.site_alpha(i)).collect();
    let scaled = base.clone();
    Ok(Environment { spec, level: 1, lo, base, scaled })
}

impl Environment {
    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn window(&self) -> RangeInclusive<i64> {
        self.lo..=self.lo + self.base.len() as i64 - 1
    }

    /// Rescales a base environment to level `m`.
    pub fn rescale(&self, m: u32) -> Result<Environment, EnvironmentError> {
        if self.level != 1 {
            return Err(EnvironmentError::NotBaseLevel(self.level));
        }
        if m == 0 {
            return Err(EnvironmentError::InvalidLevel);
        }
        let scaled = self.base.iter().map(|&a| rescale_alpha(a, m)).collect();
        Ok(Environment { spec: self.spec, level: m, lo: self.lo, base: self.base.clone(), scaled })
    }

    #[inline]
    fn index(&self, site: i64) -> Option<usize> {
        let k = site - self.lo;
        (k >= 0 && (k as usize) < self.base.len()).then_some(k as usize)
    }

    /// Base `α_site`; sites outside the window are generated on the fly.
    pub fn base_alpha(&self, site: i64) -> f64 {
        match self.index(site) {
            Some(k) => self.base[k],
            None => self.spec.site_alpha(site),
        }
    }

    /// `α_site^(m)` at this environment's level.
    pub fn alpha(&self, site: i64) -> f64 {
        match self.index(site) {
            Some(k) => self.scaled[k],
            None => rescale_alpha(self.spec.site_alpha(site), self.level),
        }
    }

    /// `ρ_site^(m) = α^(m) / (1 - α^(m))`.
    pub fn rho(&self, site: i64) -> f64 {
        let a = self.alpha(site);
        a / (1.0 - a)
    }

    /// Base-environment `ρ_site = α_site / (1 - α_site)`.
    pub fn base_rho(&self, site: i64) -> f64 {
        let a = self.base_alpha(site);
        a / (1.0 - a)
    }

    /// `ν' = (1 + ((1-ν)/ν)^(1/√m))^-1`; every `α^(m)` lies in `(ν', 1-ν')`.
    pub fn ellipticity_bound(&self) -> f64 {
        rescale_alpha(self.spec.nu, self.level)
    }

    /// Grows the materialized window to cover `lo..=hi`, at least doubling
    /// the side that has to grow.
    pub fn ensure(&mut self, lo: i64, hi: i64) {
        let cur_lo = self.lo;
        let cur_hi = self.lo + self.base.len() as i64 - 1;
        if lo >= cur_lo && hi <= cur_hi {
            return;
        }
        let width = (cur_hi - cur_lo + 1).max(16);
        let new_lo = if lo < cur_lo { lo.min(cur_lo - width) } else { cur_lo };
        let new_hi = if hi > cur_hi { hi.max(cur_hi + width) } else { cur_hi };
        let level = self.level;
        let spec = self.spec;
        let mut base = Vec::with_capacity((new_hi - new_lo + 1) as usize);
        let mut scaled = Vec::with_capacity(base.capacity());
        for site in new_lo..cur_lo {
            let a = spec.site_alpha(site);
            base.push(a);
            scaled.push(rescale_alpha(a, level));
        }
        base.extend_from_slice(&self.base);
        scaled.extend_from_slice(&self.scaled);
        for site in cur_hi + 1..=new_hi {
            let a = spec.site_alpha(site);
            base.push(a);
            scaled.push(rescale_alpha(a, level));
        }
        self.lo = new_lo;
        self.base = base;
        self.scaled = scaled;
    }

    /// Rescaled values on the materialized window with the site of index 0.
    pub fn scaled_slice(&self) -> (i64, &[f64]) {
        (self.lo, &self.scaled)
    }

    /// CSV dump `site,alpha_base,alpha_m` preceded by a `#`-prefixed JSON
    /// header carrying the spec and the level.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header = serde_json::json!({ "spec": self.spec, "m": self.level });
        writeln!(w, "# {header}")?;
        writeln!(w, "site,alpha_base,alpha_m")?;
        for (k, (b, s)) in self.base.iter().zip(&self.scaled).enumerate() {
            writeln!(w, "{},{},{}", self.lo + k as i64, b, s)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derived_stream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn degenerate_two_point_is_constant_half() {
        let env = sample_environment(EnvironmentSpec::two_point(0.5, 0.1, 99), -50..=50).unwrap();
        assert!(env.window().all(|i| env.alpha(i) == 0.5));
        assert_eq!(sigma2(env.spec()), 0.0);
        assert_eq!(env.spec().sinai_sigma2(), Err(EnvironmentError::Degenerate));
    }

    #[test]
    fn two_point_fraction_concentrates() {
        let spec = EnvironmentSpec::two_point(0.8, 0.1, 5);
        let env = sample_environment(spec, 0..=99_999).unwrap();
        let hits = env.window().filter(|&i| env.alpha(i) == 0.8).count();
        assert!(env.window().all(|i| env.alpha(i) == 0.8 || env.alpha(i) == 1.0 - 0.8));
        let frac = hits as f64 / 1e5;
        assert!((frac - 0.5).abs() < 3.0 * (0.25f64 / 1e5).sqrt(), "fraction {frac}");
    }

    #[test]
    fn site_values_do_not_depend_on_access_order() {
        let spec = EnvironmentSpec::uniform_symmetric(0.1, 17);
        let mut a = sample_environment(spec, 3..=3).unwrap();
        a.ensure(7, 7);
        let mut b = sample_environment(spec, 7..=7).unwrap();
        b.ensure(3, 3);
        assert_eq!(a.base_alpha(7).to_bits(), b.base_alpha(7).to_bits());
        assert_eq!(a.base_alpha(3).to_bits(), b.base_alpha(3).to_bits());
        // off-window reads agree with materialized ones
        let c = sample_environment(spec, 0..=0).unwrap();
        assert_eq!(c.base_alpha(7).to_bits(), a.base_alpha(7).to_bits());
    }

    #[test]
    fn configuration_errors() {
        assert_eq!(
            sample_environment(EnvironmentSpec::two_point(0.8, 0.6, 1), 0..=1).unwrap_err(),
            EnvironmentError::InvalidNu(0.6)
        );
        assert!(matches!(
            sample_environment(EnvironmentSpec::two_point(0.95, 0.1, 1), 0..=1),
            Err(EnvironmentError::InvalidTwoPoint { .. })
        ));
        assert!(matches!(
            sample_environment(EnvironmentSpec::two_point(0.8, 0.1, 1), 3..=1),
            Err(EnvironmentError::EmptyRange(3, 1))
        ));
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_alpha(0.5, 9), 0.5);
        assert_eq!(rescale_alpha(0.8, 1), 0.8);
        assert!((rescale_alpha(0.8, 4) - 2.0 / 3.0).abs() < 1e-15);
        let base = sample_environment(EnvironmentSpec::two_point(0.8, 0.1, 3), -5..=5).unwrap();
        assert!(matches!(base.rescale(0), Err(EnvironmentError::InvalidLevel)));
        let env = base.rescale(4).unwrap();
        assert_eq!(env.level(), 4);
        assert!(matches!(env.rescale(2), Err(EnvironmentError::NotBaseLevel(4))));
        for i in env.window() {
            let expect = base.base_rho(i).powf(0.5);
            assert!((env.rho(i) - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn rho_examples() {
        let env = sample_environment(EnvironmentSpec::two_point(0.8, 0.1, 3), 0..=20)
            .unwrap()
            .rescale(4)
            .unwrap();
        for i in env.window() {
            let r = env.rho(i);
            let expect = if env.base_alpha(i) == 0.8 { 2.0 } else { 0.5 };
            assert!((r - expect).abs() < 1e-12, "{r}");
        }
        let half = sample_environment(EnvironmentSpec::two_point(0.5, 0.1, 3), 0..=0).unwrap();
        assert_eq!(half.rho(0), 1.0);
    }

    #[test]
    fn sigma2_two_point() {
        let s2 = sigma2(&EnvironmentSpec::two_point(0.8, 0.1, 0));
        assert!((s2 - 4f64.ln().powi(2)).abs() < 1e-12);
        assert!((s2 - 1.921812).abs() < 1e-6);
    }

    #[test]
    fn sigma2_uniform_matches_monte_carlo() {
        let spec = EnvironmentSpec::uniform_symmetric(0.1, 0);
        let quad = sigma2(&spec);
        let mut rng = derived_stream(11, "sigma2-oracle", 0);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let a: f64 = 0.1 + 0.8 * rng.random::<f64>();
            let v = (a / (1.0 - a)).ln().powi(2);
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((quad - mean).abs() < 3.0 * se, "quad {quad} mc {mean} se {se}");
        // quadrature reproduces a refined evaluation
        let fine = adaptive_simpson(&|x: f64| (x / (1.0 - x)).ln().powi(2), 0.1, 0.9, 1e-15) / 0.8;
        assert!((quad - fine).abs() < 1e-9);
    }

    #[test]
    fn log_rho_has_zero_mean() {
        for spec in [EnvironmentSpec::two_point(0.8, 0.1, 21), EnvironmentSpec::uniform_symmetric(0.1, 21)] {
            let n = 1_000_000i64;
            let mean = (0..n).map(|i| (spec.site_alpha(i) / (1.0 - spec.site_alpha(i))).ln()).sum::<f64>()
                / n as f64;
            assert!(mean.abs() < 3.0 * sigma2(&spec).sqrt() / 1e3, "{mean}");
        }
    }

    #[test]
    fn rescaled_values_respect_bound() {
        let env = sample_environment(EnvironmentSpec::uniform_symmetric(0.1, 8), -1000..=1000)
            .unwrap()
            .rescale(25)
            .unwrap();
        let bound = env.ellipticity_bound();
        assert!(env.window().all(|i| env.alpha(i) > bound && env.alpha(i) < 1.0 - bound));
    }

    #[test]
    fn csv_dump_layout() {
        let env = sample_environment(EnvironmentSpec::two_point(0.8, 0.1, 1), -1..=1)
            .unwrap()
            .rescale(4)
            .unwrap();
        let mut buf = Vec::new();
        env.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header: serde_json::Value =
            serde_json::from_str(lines.next().unwrap().trim_start_matches("# ")).unwrap();
        assert_eq!(header["m"], 4);
        assert_eq!(lines.next(), Some("site,alpha_base,alpha_m"));
        assert_eq!(lines.count(), 3);
    }

    proptest! {
        #[test]
        fn rescaling_moves_toward_half(alpha in 0.01f64..0.99, m in 2u32..10_000) {
            let r = rescale_alpha(alpha, m);
            if (alpha - 0.5).abs() > 1e-9 {
                prop_assert!((r - 0.5).abs() < (alpha - 0.5).abs());
                prop_assert!((r - 0.5).signum() == (alpha - 0.5).signum());
            }
        }

        #[test]
        fn window_growth_is_deterministic(seed in any::<u64>(), a in -500i64..500, b in -500i64..500) {
            let spec = EnvironmentSpec::uniform_symmetric(0.2, seed);
            let mut e1 = sample_environment(spec, 0..=0).unwrap();
            e1.ensure(a.min(b), a.max(b));
            let mut e2 = sample_environment(spec, b..=b).unwrap();
            e2.ensure(a, a);
            prop_assert_eq!(e1.base_alpha(a).to_bits(), e2.base_alpha(a).to_bits());
            prop_assert_eq!(e1.base_alpha(b).to_bits(), e2.base_alpha(b).to_bits());
        }
    }
}
