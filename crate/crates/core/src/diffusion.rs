//! Continuum objects: Brownian paths and their local times, the two-sided
//! Brownian potential, the scale function `A` and clock `T`, the Brox path,
//! the squared-Bessel-type diffusion `V`, the limit `H`, and the Brox local
//! time read at the inverse local time of Brownian motion at 0.
//!
//! Local time is the occupation density: `∫ l(x, t) dx = t`.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_seed, derived_stream, stream, StreamRng};

/// Number of grid increments per deterministic potential block.
pub const POTENTIAL_BLOCK: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("argument {value} outside the covered range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("local time at 0 stayed below {threshold} up to t = {horizon}")]
    NotReached { threshold: f64, horizon: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("map values are not strictly increasing")]
    NotMonotone,
}

fn positive(name: &str, v: f64) -> Result<(), DiffusionError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DiffusionError::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Values on a uniform grid `k · step`, `k = 0, 1, …`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    pub step: f64,
    pub values: Vec<f64>,
}

impl GridPath {
    pub fn horizon(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    /// Linear interpolation; arguments past the horizon are a range error.
    pub fn at(&self, t: f64) -> Result<f64, DiffusionError> {
        let h = self.horizon();
        if !(0.0..=h * (1.0 + 1e-12)).contains(&t) {
            return Err(DiffusionError::OutOfRange { value: t, lo: 0.0, hi: h });
        }
        let u = t / self.step;
        let k = (u.floor() as usize).min(self.values.len() - 1);
        if k + 1 >= self.values.len() {
            return Ok(self.values[k]);
        }
        let f = u - k as f64;
        Ok(self.values[k] + f * (self.values[k + 1] - self.values[k]))
    }

    /// Value at the grid point nearest to `t`.
    pub fn nearest(&self, t: f64) -> Result<f64, DiffusionError> {
        let k = (t / self.step).round();
        if k < 0.0 || k as usize >= self.values.len() {
            return Err(DiffusionError::OutOfRange { value: t, lo: 0.0, hi: self.horizon() });
        }
        Ok(self.values[k as usize])
    }
}

/// Standard Brownian motion on `[0, horizon]` with step `dt`.
pub fn sample_brownian(horizon: f64, dt: f64, seed: u64) -> Result<GridPath, DiffusionError> {
    positive("horizon", horizon)?;
    positive("dt", dt)?;
    let n = (horizon / dt).round().max(1.0) as usize;
    let mut rng = stream(seed);
    Ok(GridPath { step: dt, values: brownian_values(n, dt, 0.0, &mut rng) })
}

fn brownian_values(n: usize, dt: f64, start: f64, rng: &mut StreamRng) -> Vec<f64> {
    let sd = dt.sqrt();
    let mut v = Vec::with_capacity(n + 1);
    let mut b = start;
    v.push(b);
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        b += sd * z;
        v.push(b);
    }
    v
}

/// Two-sided potential `W(x) = σ W_1(x)` for `x ≥ 0` and `σ W_2(-x)` for
/// `x ≤ 0` on a grid of step `dx`. Each side grows in blocks whose
/// increments depend only on `(seed, side, block)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    dx: f64,
    sigma: f64,
    seed: Option<u64>,
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl Potential {
    fn grow(side: &mut Vec<f64>, blocks: usize, dx: f64, sigma: f64, seed: u64, tag: &str) {
        let sd = sigma * dx.sqrt();
        while side.len() - 1 < blocks * POTENTIAL_BLOCK {
            let mut rng = derived_stream(seed, tag, ((side.len() - 1) / POTENTIAL_BLOCK) as u64);
            let mut w = *side.last().unwrap();
            for _ in 0..POTENTIAL_BLOCK {
                let z: f64 = rng.sample(StandardNormal);
                w += sd * z;
                side.push(w);
            }
        }
    }

    /// Fixed (non-extendable) potential from a function on `[-x_max, x_max]`.
    pub fn from_fn(dx: f64, x_max: f64, f: impl Fn(f64) -> f64) -> Result<Self, DiffusionError> {
        positive("dx", dx)?;
        let n = (x_max / dx).ceil() as usize;
        let pos = (0..=n).map(|k| f(k as f64 * dx)).collect();
        let neg = (0..=n).map(|k| f(-(k as f64) * dx)).collect();
        Ok(Self { dx, sigma: 0.0, seed: None, pos, neg })
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Covered half-width.
    pub fn extent(&self) -> f64 {
        self.dx * (self.pos.len().min(self.neg.len()) - 1) as f64
    }

    /// Grows both sides to cover `[-x, x]`. Fixed potentials cannot grow.
    pub fn ensure(&mut self, x: f64) -> Result<(), DiffusionError> {
        if x <= self.extent() {
            return Ok(());
        }
        let Some(seed) = self.seed else {
            return Err(DiffusionError::OutOfRange { value: x, lo: -self.extent(), hi: self.extent() });
        };
        let blocks = (x / self.dx / POTENTIAL_BLOCK as f64).ceil() as usize;
        Self::grow(&mut self.pos, blocks, self.dx, self.sigma, seed, "potential+");
        Self::grow(&mut self.neg, blocks, self.dx, self.sigma, seed, "potential-");
        Ok(())
    }

    /// `W(x)` by linear interpolation.
    pub fn at(&self, x: f64) -> Result<f64, DiffusionError> {
        let side = if x >= 0.0 { &self.pos } else { &self.neg };
        let u = x.abs() / self.dx;
        let k = u.floor() as usize;
        if k + 1 >= side.len() {
            if k < side.len() && u == k as f64 {
                return Ok(side[k]);
            }
            return Err(DiffusionError::OutOfRange { value: x, lo: -self.extent(), hi: self.extent() });
        }
        let f = u - k as f64;
        Ok(side[k] + f * (side[k + 1] - side[k]))
    }

    /// Nonnegative half `x ↦ W(x)` as a grid path.
    pub fn positive_side(&self) -> GridPath {
        GridPath { step: self.dx, values: self.pos.clone() }
    }

    /// Grid values on `[-n dx, n dx]`, from the left end.
    fn two_sided(&self, n: usize) -> Vec<f64> {
        let mut v: Vec<f64> = self.neg[1..=n].iter().rev().copied().collect();
        v.extend_from_slice(&self.pos[..=n]);
        v
    }
}

/// `W` on `[-x_max, x_max]`; it grows on demand beyond that.
pub fn sample_potential(sigma: f64, x_max: f64, dx: f64, seed: u64) -> Result<Potential, DiffusionError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(DiffusionError::InvalidParameter(format!("sigma must be nonnegative, got {sigma}")));
    }
    positive("dx", dx)?;
    let mut p = Potential { dx, sigma, seed: Some(seed), pos: vec![0.0], neg: vec![0.0] };
    p.ensure(x_max.max(dx))?;
    Ok(p)
}

/// One-sided `σ`-scaled Brownian path on `[0, x_max]`.
pub fn sample_one_sided(sigma: f64, x_max: f64, dx: f64, seed: u64) -> Result<GridPath, DiffusionError> {
    let p = sample_potential(sigma, x_max, dx, seed)?;
    let n = (x_max / dx).ceil() as usize;
    Ok(GridPath { step: dx, values: p.pos[..=n].to_vec() })
}

/// A strictly increasing piecewise-linear map and its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneMap {
    args: Vec<f64>,
    vals: Vec<f64>,
}

fn interp(xs: &[f64], ys: &[f64], x: f64, k: usize) -> f64 {
    let (x0, x1) = (xs[k], xs[k + 1]);
    let f = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
    ys[k] + f * (ys[k + 1] - ys[k])
}

fn bracket(xs: &[f64], x: f64) -> Result<usize, DiffusionError> {
    let (lo, hi) = (xs[0], *xs.last().unwrap());
    if !(lo..=hi).contains(&x) {
        return Err(DiffusionError::OutOfRange { value: x, lo, hi });
    }
    let k = xs.partition_point(|&a| a <= x);
    Ok(k.saturating_sub(1).min(xs.len() - 2))
}

fn bracket_near(xs: &[f64], x: f64, hint: &mut usize) -> Result<usize, DiffusionError> {
    let (lo, hi) = (xs[0], *xs.last().unwrap());
    if !(lo..=hi).contains(&x) {
        return Err(DiffusionError::OutOfRange { value: x, lo, hi });
    }
    let mut k = (*hint).min(xs.len() - 2);
    while k > 0 && xs[k] > x {
        k -= 1;
    }
    while k + 2 < xs.len() && xs[k + 1] < x {
        k += 1;
    }
    *hint = k;
    Ok(k)
}

impl MonotoneMap {
    pub fn new(args: Vec<f64>, vals: Vec<f64>) -> Result<Self, DiffusionError> {
        if args.len() != vals.len() || args.len() < 2 {
            return Err(DiffusionError::InvalidParameter("map needs at least two matching points".into()));
        }
        if args.windows(2).any(|w| w[1] <= w[0]) || vals.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DiffusionError::NotMonotone);
        }
        Ok(Self { args, vals })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.args[0], *self.args.last().unwrap())
    }

    pub fn range(&self) -> (f64, f64) {
        (self.vals[0], *self.vals.last().unwrap())
    }

    pub fn eval(&self, x: f64) -> Result<f64, DiffusionError> {
        let k = bracket(&self.args, x)?;
        Ok(interp(&self.args, &self.vals, x, k))
    }

    pub fn inverse(&self, y: f64) -> Result<f64, DiffusionError> {
        let k = bracket(&self.vals, y)?;
        Ok(interp(&self.vals, &self.args, y, k))
    }

    /// [`inverse`](Self::inverse) with a search starting at `hint`, which is
    /// updated to the bracketing cell.
    pub fn inverse_near(&self, y: f64, hint: &mut usize) -> Result<f64, DiffusionError> {
        let k = bracket_near(&self.vals, y, hint)?;
        Ok(interp(&self.vals, &self.args, y, k))
    }

    /// Largest gap between consecutive arguments.
    pub fn cell(&self) -> f64 {
        self.args.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.args.iter().copied().zip(self.vals.iter().copied())
    }
}

fn cumulative_trapezoid(step: f64, f: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in f.windows(2) {
        acc += 0.5 * step * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// `A(y) = ∫_0^y e^{W(z)} dz` on the potential's whole grid.
pub fn scale_function(w: &Potential) -> MonotoneMap {
    let n = (w.pos.len().min(w.neg.len())) - 1;
    let values = w.two_sided(n);
    let e: Vec<f64> = values.iter().map(|v| v.exp()).collect();
    let cum = cumulative_trapezoid(w.dx, &e);
    let zero = cum[n];
    let args = (0..=2 * n).map(|k| (k as f64 - n as f64) * w.dx).collect();
    MonotoneMap { args, vals: cum.into_iter().map(|c| c - zero).collect() }
}

/// `T(t) = ∫_0^t exp{-2 W(A^{-1}(B(s)))} ds` on the grid of `b`.
pub fn time_change(w: &Potential, a: &MonotoneMap, b: &GridPath) -> Result<MonotoneMap, DiffusionError> {
    let mut hint = a.args.len() / 2;
    let mut f = Vec::with_capacity(b.values.len());
    for &bv in &b.values {
        let x = a.inverse_near(bv, &mut hint)?;
        f.push((-2.0 * w.at(x)?).exp());
    }
    let vals = cumulative_trapezoid(b.step, &f);
    let args = (0..b.values.len()).map(|k| k as f64 * b.step).collect();
    MonotoneMap::new(args, vals)
}

/// `X(t) = A^{-1}(B(T^{-1}(t)))` on the grid `k · dt` up to `T(horizon of B)`.
pub fn brox_path(w: &Potential, b: &GridPath, dt: f64) -> Result<GridPath, DiffusionError> {
    positive("dt", dt)?;
    let a = scale_function(w);
    let t = time_change(w, &a, b)?;
    let t_end = t.range().1;
    let n = (t_end / dt * (1.0 + 1e-12)).floor() as usize;
    let mut hint_t = 0usize;
    let mut hint_a = a.args.len() / 2;
    let mut values = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let s = t.inverse_near((k as f64 * dt).min(t_end), &mut hint_t)?;
        values.push(a.inverse_near(b.at(s.min(b.horizon()))?, &mut hint_a)?);
    }
    Ok(GridPath { step: dt, values })
}

/// `X(t)` of a fresh Brox diffusion with potential `σ`·(two-sided BM).
/// The Brownian driver runs on step `dt` until the clock `T` passes `t`;
/// the potential lives on step `dx` and grows when `B` leaves the range of `A`.
pub fn brox_marginal(sigma: f64, t: f64, dt: f64, dx: f64, seed: u64) -> Result<f64, DiffusionError> {
    positive("t", t)?;
    positive("dt", dt)?;
    let mut w = sample_potential(sigma, 1.0, dx, derive_seed(seed, "brox-potential", 0))?;
    let mut a = scale_function(&w);
    let mut rng = derived_stream(seed, "brox-driver", 0);
    let sd = dt.sqrt();
    let mut hint = a.args.len() / 2;
    let (mut b, mut clock) = (0.0f64, 0.0f64);
    let mut rate = (-2.0 * w.at(0.0)?).exp();
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let b_new = b + sd * z;
        while !(a.range().0..=a.range().1).contains(&b_new) {
            let grow = 2.0 * w.extent();
            w.ensure(grow)?;
            a = scale_function(&w);
            hint = a.args.len() / 2;
        }
        let x_new = a.inverse_near(b_new, &mut hint)?;
        let rate_new = (-2.0 * w.at(x_new)?).exp();
        let d = 0.5 * dt * (rate + rate_new);
        if clock + d >= t {
            let theta = (t - clock) / d;
            return a.inverse_near(b + theta * (b_new - b), &mut hint);
        }
        clock += d;
        b = b_new;
        rate = rate_new;
    }
}

/// Local-time profile with the horizon it refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuumLocalTimeProfile {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub horizon: f64,
    pub bandwidth: Option<f64>,
}

impl ContinuumLocalTimeProfile {
    /// CSV `x,value` preceded by a `#`-prefixed JSON header.
    pub fn write_csv<W: Write>(&self, mut w: W, header: &serde_json::Value) -> io::Result<()> {
        writeln!(w, "# {header}")?;
        writeln!(w, "x,value")?;
        for (x, v) in self.x.iter().zip(&self.values) {
            writeln!(w, "{x},{v}")?;
        }
        Ok(())
    }
}

/// Occupation-window estimate `(2ε)^{-1} Leb{s ≤ t : |B(s) - x| ≤ ε}` over the
/// first `steps` grid cells (left-point rule).
pub fn window_local_time(b: &GridPath, steps: usize, x: f64, eps: f64) -> f64 {
    let n = steps.min(b.values.len() - 1);
    let hits = b.values[..n].iter().filter(|&&v| (v - x).abs() <= eps).count();
    hits as f64 * b.step / (2.0 * eps)
}

/// Window estimator over the whole path for every level in `x_grid`.
pub fn brownian_local_time(b: &GridPath, x_grid: &[f64], eps: f64) -> Result<ContinuumLocalTimeProfile, DiffusionError> {
    positive("eps", eps)?;
    let n = b.values.len() - 1;
    let mut values = vec![0.0; x_grid.len()];
    let sorted = x_grid.windows(2).all(|w| w[0] <= w[1]);
    if sorted && !x_grid.is_empty() {
        for &v in &b.values[..n] {
            let lo = x_grid.partition_point(|&x| x < v - eps);
            for (k, &x) in x_grid.iter().enumerate().skip(lo) {
                if x > v + eps {
                    break;
                }
                values[k] += 1.0;
            }
        }
        let scale = b.step / (2.0 * eps);
        values.iter_mut().for_each(|c| *c *= scale);
    } else {
        for (k, &x) in x_grid.iter().enumerate() {
            values[k] = window_local_time(b, n, x, eps);
        }
    }
    Ok(ContinuumLocalTimeProfile { x: x_grid.to_vec(), values, horizon: b.horizon(), bandwidth: Some(eps) })
}

/// First grid index at which the running window estimate of `l(0, ·)`
/// exceeds `threshold`, with its time.
pub fn first_level_crossing(b: &GridPath, eps: f64, threshold: f64) -> Result<(usize, f64), DiffusionError> {
    positive("eps", eps)?;
    let w = b.step / (2.0 * eps);
    let mut acc = 0.0;
    for (k, &v) in b.values[..b.values.len() - 1].iter().enumerate() {
        if v.abs() <= eps {
            acc += w;
            if acc > threshold {
                return Ok((k + 1, (k + 1) as f64 * b.step));
            }
        }
    }
    Err(DiffusionError::NotReached { threshold, horizon: b.horizon() })
}

/// Window estimates of `l(x, T̃)` with `T̃` the first time the estimate at 0
/// exceeds `threshold`. The path starts at horizon `initial` and doubles,
/// each segment drawn from its own continuation stream, until the crossing
/// happens or `max_horizon` is passed.
pub fn window_local_times_at_crossing(
    levels: &[f64],
    threshold: f64,
    dt: f64,
    eps: f64,
    initial: f64,
    max_horizon: f64,
    seed: u64,
) -> Result<Vec<f64>, DiffusionError> {
    positive("dt", dt)?;
    positive("eps", eps)?;
    let w = dt / (2.0 * eps);
    let mut acc0 = 0.0;
    let mut acc = vec![0.0; levels.len()];
    let mut b = 0.0f64;
    let mut horizon = 0.0;
    let mut segment = 0u64;
    let mut len = initial;
    let sd = dt.sqrt();
    while horizon < max_horizon {
        let mut rng = derived_stream(seed, "crossing-segment", segment);
        let n = (len / dt).round() as usize;
        for _ in 0..n {
            if b.abs() <= eps {
                acc0 += w;
                if acc0 > threshold {
                    return Ok(acc);
                }
            }
            for (k, &x) in levels.iter().enumerate() {
                if (b - x).abs() <= eps {
                    acc[k] += w;
                }
            }
            let z: f64 = rng.sample(StandardNormal);
            b += sd * z;
        }
        horizon += len;
        len = horizon;
        segment += 1;
    }
    Err(DiffusionError::NotReached { threshold, horizon })
}

/// Exact joint law of `l(x, T̃)` at finitely many levels, where
/// `T̃ = inf{t : l(0, t) > threshold}`.
///
/// Watched at the levels (0 included) Brownian motion is a nearest-neighbour
/// chain. From level `a` with neighbours `b < a < c`, the local time gained
/// at `a` before hitting `b` or `c` is exponential with mean
/// `2 (a-b)(c-a)/(c-b)`, and the exit is at `c` with probability
/// `(a-b)/(c-b)`, independently. An outermost level only has one neighbour.
pub fn local_times_at_inverse(levels: &[f64], threshold: f64, rng: &mut StreamRng) -> Vec<f64> {
    let mut sites: Vec<f64> = levels.iter().copied().chain([0.0]).collect();
    sites.sort_by(f64::total_cmp);
    sites.dedup();
    let zero = sites.iter().position(|&s| s == 0.0).unwrap();
    let mut acc = vec![0.0; sites.len()];
    let mut i = zero;
    loop {
        let up = (i + 1 < sites.len()).then(|| 0.5 / (sites[i + 1] - sites[i]));
        let down = (i > 0).then(|| 0.5 / (sites[i] - sites[i - 1]));
        let rate = up.unwrap_or(0.0) + down.unwrap_or(0.0);
        if rate == 0.0 {
            acc[i] = threshold;
            break;
        }
        let e: f64 = rng.sample(Exp1);
        let gained = e / rate;
        if i == zero && acc[i] + gained > threshold {
            acc[i] = threshold;
            break;
        }
        acc[i] += gained;
        let go_up = match (up, down) {
            (Some(u), Some(_)) => rng.random::<f64>() * rate < u,
            (Some(_), None) => true,
            _ => false,
        };
        i = if go_up { i + 1 } else { i - 1 };
    }
    levels
        .iter()
        .map(|l| acc[sites.iter().position(|s| s == l).unwrap()])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VScheme {
    Euler,
    ExactBesq,
}

/// One exact transition of `V` (generator `½ y f''`) over a step `h`:
/// `V(s+h) ~ Gamma(N, scale h/2)` with `N ~ Poisson(2 V(s) / h)`, and 0 when
/// `N = 0`.
pub fn besq_step(v: f64, h: f64, rng: &mut StreamRng) -> f64 {
    if v <= 0.0 || h <= 0.0 {
        return v.max(0.0);
    }
    let n = Poisson::new(2.0 * v / h).expect("finite intensity").sample(rng);
    if n == 0.0 {
        0.0
    } else {
        Gamma::new(n, 0.5 * h).expect("valid gamma").sample(rng)
    }
}

/// Exact values of `V` from `V(0) = start` at increasing times `xs`.
pub fn besq_at(start: f64, xs: &[f64], rng: &mut StreamRng) -> Vec<f64> {
    let mut v = start;
    let mut prev = 0.0;
    xs.iter()
        .map(|&x| {
            v = besq_step(v, x - prev, rng);
            prev = x;
            v
        })
        .collect()
}

/// `V(x) = start + ∫_0^x √(V^+) dB` on `[0, x_max]` with step `dx`.
pub fn simulate_v_from(start: f64, x_max: f64, dx: f64, seed: u64, scheme: VScheme) -> Result<GridPath, DiffusionError> {
    positive("dx", dx)?;
    let n = (x_max / dx).round() as usize;
    let mut rng = stream(seed);
    let mut values = Vec::with_capacity(n + 1);
    let mut v = start;
    values.push(v);
    let sd = dx.sqrt();
    for _ in 0..n {
        v = match scheme {
            VScheme::ExactBesq => besq_step(v, dx, &mut rng),
            VScheme::Euler => {
                if v > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    (v + v.sqrt() * sd * z).max(0.0)
                } else {
                    0.0
                }
            }
        };
        values.push(v);
    }
    Ok(GridPath { step: dx, values })
}

pub fn simulate_v(x_max: f64, dx: f64, seed: u64, scheme: VScheme) -> Result<GridPath, DiffusionError> {
    simulate_v_from(1.0, x_max, dx, seed, scheme)
}

/// `β(x) = 2 ∫_0^x e^{-M(s)} ds`.
pub fn beta_map(m: &GridPath) -> MonotoneMap {
    let e: Vec<f64> = m.values.iter().map(|v| (-v).exp()).collect();
    let vals = cumulative_trapezoid(m.step, &e).into_iter().map(|v| 2.0 * v).collect();
    let args = (0..m.values.len()).map(|k| k as f64 * m.step).collect();
    MonotoneMap { args, vals }
}

/// `∫_0^x e^{M(s)} ds` on the grid of `m`.
pub fn one_sided_scale(m: &GridPath) -> MonotoneMap {
    let e: Vec<f64> = m.values.iter().map(|v| v.exp()).collect();
    let vals = cumulative_trapezoid(m.step, &e);
    let args = (0..m.values.len()).map(|k| k as f64 * m.step).collect();
    MonotoneMap { args, vals }
}

/// `H(x) = V(β(x)) e^{M(x)}`.
pub fn limit_h(v: &GridPath, m: &GridPath, x_grid: &[f64]) -> Result<Vec<f64>, DiffusionError> {
    let beta = beta_map(m);
    x_grid.iter().map(|&x| Ok(v.at(beta.eval(x)?)? * m.at(x)?.exp())).collect()
}

/// Euler scheme for `dH = ½σ²H dx + √(2H + σ²H²) dB`, `H(0) = 1`, absorbed at 0.
pub fn simulate_h_direct(x_max: f64, dx: f64, sigma: f64, seed: u64) -> Result<GridPath, DiffusionError> {
    positive("dx", dx)?;
    let n = (x_max / dx).round() as usize;
    let mut rng = stream(seed);
    let s2 = sigma * sigma;
    let sd = dx.sqrt();
    let mut values = Vec::with_capacity(n + 1);
    let mut h = 1.0f64;
    values.push(h);
    for _ in 0..n {
        if h > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            h = (h + 0.5 * s2 * h * dx + (2.0 * h + s2 * h * h).sqrt() * sd * z).max(0.0);
        }
        values.push(h);
    }
    Ok(GridPath { step: dx, values })
}

/// `L_X(x; t) = l(A(x), T^{-1}(t)) e^{-W(x)}` from grid paths, with the
/// window estimator of bandwidth `eps`.
pub fn brox_local_time(
    w: &Potential,
    b: &GridPath,
    x_grid: &[f64],
    t: f64,
    eps: f64,
) -> Result<ContinuumLocalTimeProfile, DiffusionError> {
    let a = scale_function(w);
    let clock = time_change(w, &a, b)?;
    let end = clock.range().1;
    let s = clock.inverse(if t > end && t <= end * (1.0 + 1e-9) { end } else { t })?;
    let steps = (s / b.step).round() as usize;
    let values = x_grid
        .iter()
        .map(|&x| Ok(window_local_time(b, steps, a.eval(x)?, eps) * (-w.at(x)?).exp()))
        .collect::<Result<Vec<_>, DiffusionError>>()?;
    Ok(ContinuumLocalTimeProfile { x: x_grid.to_vec(), values, horizon: t, bandwidth: Some(eps) })
}

/// `L*_X(x) = L_X(x) + L_X(-x)` read at `t = T(T̃)`, where `L_X(x, T(T̃)) =
/// l(A(x), T̃) e^{-W(x)}`; the local times are exact.
pub fn l_star(w: &Potential, x_grid: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>, DiffusionError> {
    let a = scale_function(w);
    let mut levels = Vec::with_capacity(2 * x_grid.len());
    for &x in x_grid {
        levels.push(a.eval(x)?);
        levels.push(a.eval(-x)?);
    }
    let l = local_times_at_inverse(&levels, 1.0, rng);
    x_grid
        .iter()
        .enumerate()
        .map(|(k, &x)| Ok(l[2 * k] * (-w.at(x)?).exp() + l[2 * k + 1] * (-w.at(-x)?).exp()))
        .collect()
}

/// Fresh replica of `L*_X` on `x_grid` with potential `σ`·(two-sided BM).
pub fn sample_l_star(sigma: f64, x_grid: &[f64], dx: f64, seed: u64) -> Result<Vec<f64>, DiffusionError> {
    let x_max = x_grid.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let w = sample_potential(sigma, x_max, dx, derive_seed(seed, "lstar-potential", 0))?;
    l_star(&w, x_grid, &mut derived_stream(seed, "lstar-local-time", 0))
}

/// Fresh replica of `H = V(β) e^{M}` on `x_grid` with exact `V`.
pub fn sample_limit_h(sigma: f64, x_grid: &[f64], dx: f64, seed: u64) -> Result<Vec<f64>, DiffusionError> {
    let x_max = x_grid.iter().fold(0.0f64, |a, &b| a.max(b));
    let m = one_sided(sigma, x_max, dx, derive_seed(seed, "h-potential", 0))?;
    let beta = beta_map(&m);
    let times = x_grid.iter().map(|&x| beta.eval(x)).collect::<Result<Vec<_>, _>>()?;
    let mut order: Vec<usize> = (0..x_grid.len()).collect();
    order.sort_by(|&i, &j| times[i].total_cmp(&times[j]));
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    let v = besq_at(1.0, &sorted, &mut derived_stream(seed, "h-besq", 0));
    let mut out = vec![0.0; x_grid.len()];
    for (k, &i) in order.iter().enumerate() {
        out[i] = v[k] * m.at(x_grid[i])?.exp();
    }
    Ok(out)
}

/// Fresh replica of `l(2 A(x) / c², T̃) e^{-M(x)}` with `A(x) = ∫_0^x e^{M}`
/// for a one-sided potential `M`; `c` is the local-time calibration.
pub fn sample_h_from_local_time(sigma: f64, x_grid: &[f64], dx: f64, c: f64, seed: u64) -> Result<Vec<f64>, DiffusionError> {
    let x_max = x_grid.iter().fold(0.0f64, |a, &b| a.max(b));
    let m = one_sided(sigma, x_max, dx, derive_seed(seed, "h-lt-potential", 0))?;
    let a = one_sided_scale(&m);
    let levels = x_grid.iter().map(|&x| Ok(2.0 * a.eval(x)? / (c * c))).collect::<Result<Vec<_>, DiffusionError>>()?;
    let l = local_times_at_inverse(&levels, 1.0, &mut derived_stream(seed, "h-lt-local-time", 0));
    x_grid.iter().zip(l).map(|(&x, l)| Ok(l * (-m.at(x)?).exp())).collect()
}

fn one_sided(sigma: f64, x_max: f64, dx: f64, seed: u64) -> Result<GridPath, DiffusionError> {
    if sigma == 0.0 {
        let n = (x_max / dx).ceil() as usize;
        return Ok(GridPath { step: dx, values: vec![0.0; n + 1] });
    }
    sample_one_sided(sigma, x_max.max(dx), dx, seed)
}
