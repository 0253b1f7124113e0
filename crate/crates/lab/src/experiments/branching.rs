use serde_json::json;
use sinai_core::branching::{
    kurtz_statistics, kurtz_variance_bound, moments as offspring_moments, offspring_at_site, sample_offspring, verify_identity,
};
use sinai_core::compare::{chi_square_gof, mean_ci, variance_with_se, Verdict};
use sinai_core::environment::sample_environment;
use sinai_core::seed::{derive_seed, derived_stream};
use sinai_core::walk::{simulate_walk, Stop, WalkOptions};

use super::{censored_set, sample_set};
use crate::{Check, ExperimentConfig, LabError, Outcome, Table};

pub fn identity(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let mut out = Outcome::new("identity");
    let ms = &cfg.m_list;
    let mut table = Table::new("identity", &["m", "n", "walks", "censored_draws", "levels_checked", "failures"]);
    let mut cells = vec![[0u64; 4]; ms.len() * 3];
    let mut levels = Vec::with_capacity(cfg.replicas as usize);
    let mut failures = 0u64;
    let mut attempt = 0u64;
    let mut accepted = 0u64;
    let max_attempts = 100 * cfg.replicas;
    while accepted < cfg.replicas && attempt < max_attempts {
        let i = attempt;
        attempt += 1;
        let mi = (accepted % ms.len() as u64) as usize;
        let ni = ((accepted / ms.len() as u64) % 3) as usize;
        let m = ms[mi];
        let n = [1, 5, u64::from(m)][ni];
        let base = sample_environment(cfg.environment.spec(derive_seed(cfg.master_seed, "identity-environment", i)), -64..=64)?;
        let mut env = base.rescale(m)?;
        let stop = Stop::Excursions { count: n, cap: cfg.n_cap(m) };
        let path = simulate_walk(&mut env, WalkOptions::new(stop).recording(), derive_seed(cfg.master_seed, "identity-walk", i));
        let cell = &mut cells[mi * 3 + ni];
        if path.censored() {
            cell[1] += 1;
            levels.push(None);
            continue;
        }
        accepted += 1;
        cell[0] += 1;
        let report = verify_identity(&path, n)?;
        let bad = report.rows.iter().filter(|r| !r.holds).count() as u64;
        cell[2] += report.rows.len() as u64;
        cell[3] += bad;
        failures += bad;
        levels.push(Some(report.rows.len() as f64));
    }
    for (k, c) in cells.iter().enumerate() {
        let m = ms[k / 3];
        let n = [1, 5, u64::from(m)][k % 3];
        table.push(vec![f64::from(m), n as f64, c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64]);
    }
    let censored: u64 = cells.iter().map(|c| c[1]).sum();
    let checked: u64 = cells.iter().map(|c| c[2]).sum();
    let shortfall = 1.0 - accepted as f64 / cfg.replicas as f64;
    out.checks.push(Check::new(
        "exact-identity",
        Verdict::from_bool(failures == 0).censored(shortfall),
        format!("{accepted} complete walks, {checked} level identities, {failures} failures ({censored} censored draws replaced)"),
        json!({ "walks": accepted, "levels": checked, "failures": failures, "censored_draws": censored }),
    ));
    out.samples.push(censored_set("levels_checked".into(), levels, "branching", None, None, cfg)?);
    out.tables.push(table);
    Ok(out)
}

pub fn offspring(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let mut out = Outcome::new("offspring");
    let m = cfg.m_list[0];
    let r = cfg.sites;
    let base = sample_environment(cfg.environment.spec(derive_seed(cfg.master_seed, "offspring-environment", 0)), -(i64::from(r) + 2)..=i64::from(r) + 2)?;
    let mut env = base.rescale(m)?;
    let stop = Stop::Excursions { count: cfg.replicas, cap: cfg.n_cap(m).max(cfg.replicas * 1000) };
    let path = simulate_walk(&mut env, WalkOptions::new(stop).recording().with_radius(r), derive_seed(cfg.master_seed, "offspring-walk", 0));
    let mut table = Table::new("offspring", &["site", "alpha", "individuals", "statistic", "dof", "critical", "p_value", "pass"]);
    let mut passed = 0usize;
    let sites: Vec<i64> = (1..=i64::from(r)).chain((1..=i64::from(r)).map(|s| -s)).collect();
    for &s in &sites {
        let runs = offspring_at_site(&path, s)?;
        let alpha = if s > 0 { env.alpha(s) } else { 1.0 - env.alpha(s) };
        let top = runs.iter().copied().max().unwrap_or(0) as usize + 1;
        let mut hist = vec![0u64; top + 1];
        for &k in &runs {
            hist[k as usize] += 1;
        }
        let mut probs: Vec<f64> = (0..top).map(|k| alpha.powi(k as i32) * (1.0 - alpha)).collect();
        probs.push(alpha.powi(top as i32));
        let report = chi_square_gof(&hist, &probs, 0.01)?;
        let ok = report.verdict == Verdict::Pass;
        passed += usize::from(ok);
        table.push(vec![s as f64, alpha, runs.len() as f64, report.statistic, report.dof as f64, report.critical, report.p_value, f64::from(u8::from(ok))]);
        if s == 1 || s == -1 {
            let values = runs.iter().map(|&k| k as f64).collect();
            out.samples.push(sample_set(format!("offspring_site_{s}"), values, "branching", Some(m), None, cfg)?);
        }
    }
    let frac = passed as f64 / sites.len() as f64;
    let verdict = Verdict::from_bool(frac >= 0.95).censored(if path.censored() { 1.0 } else { 0.0 });
    out.checks.push(Check::new(
        "offspring-chi-square",
        verdict,
        format!("{passed}/{} sites pass at level 0.01 ({} excursions, m = {m})", sites.len(), path.excursions()),
        json!({ "passed": passed, "sites": sites.len(), "fraction": frac, "excursions": path.excursions(), "censored": path.censored() }),
    ));
    out.tables.push(table);
    Ok(out)
}

pub fn moments(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let mut out = Outcome::new("moments");
    let n = cfg.replicas as usize;
    let mut table = Table::new(
        "moments",
        &["alpha", "lambda", "a", "emp_a", "half_a", "third", "emp_third", "half_third", "emp_abs3", "y_bound"],
    );
    for (k, &alpha) in cfg.alphas.iter().enumerate() {
        let mo = offspring_moments(alpha)?;
        let mut rng = derived_stream(cfg.master_seed, "moments", k as u64);
        let y: Vec<f64> = sample_offspring(alpha, n, &mut rng)?.into_iter().map(|d| d as f64 / mo.lambda).collect();
        let (e1, h1) = mean_ci(y.iter().copied(), n)?;
        let (e2, h2) = mean_ci(y.iter().map(|v| (v - 1.0).powi(2)), n)?;
        let (e3, h3) = mean_ci(y.iter().map(|v| v.powi(3)), n)?;
        let abs3 = y.iter().map(|v| (v - 1.0).abs().powi(3)).sum::<f64>() / n as f64;
        let ok = (e1 - 1.0).abs() <= h1 && (e2 - mo.a).abs() <= h2 && (e3 - mo.third_exact).abs() <= h3 && abs3 <= mo.y_bound;
        out.checks.push(Check::new(
            format!("moments-alpha-{alpha:.4}"),
            Verdict::from_bool(ok),
            format!(
                "λ = {:.4}: mean {e1:.4}±{h1:.4} vs 1, a {e2:.4}±{h2:.4} vs {:.4}, third {e3:.3}±{h3:.3} vs {:.3}, E|ξ/λ-1|³ = {abs3:.3} ≤ {:.1}",
                mo.lambda, mo.a, mo.third_exact, mo.y_bound
            ),
            json!({ "moments": mo, "mean": [e1, h1], "a": [e2, h2], "third": [e3, h3], "abs3": abs3 }),
        ));
        table.push(vec![alpha, mo.lambda, mo.a, e2, h2, mo.third_exact, e3, h3, abs3, mo.y_bound]);
        out.samples.push(sample_set(format!("scaled_offspring_alpha_{k}"), y[..n.min(10_000)].to_vec(), "branching", None, None, cfg)?);
    }
    out.tables.push(table);
    Ok(out)
}

pub fn kurtz(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let mut out = Outcome::new("kurtz");
    let ms = &cfg.m_list;
    let top = ms.iter().copied().max().unwrap();
    let s2 = cfg.environment.spec(0).sinai_sigma2()?;
    let mut drift = vec![Vec::with_capacity(cfg.replicas as usize); ms.len()];
    let mut var_gap = vec![Vec::with_capacity(cfg.replicas as usize); ms.len()];
    let mut third = vec![Vec::with_capacity(cfg.replicas as usize); ms.len()];
    let mut bound_ok = vec![true; ms.len()];
    for i in 0..cfg.replicas {
        let env = sample_environment(cfg.environment.spec(derive_seed(cfg.master_seed, "kurtz-environment", i)), 1..=i64::from(top))?;
        for (k, &m) in ms.iter().enumerate() {
            let t = kurtz_statistics(&env, m, &[1.0]);
            drift[k].push(t.drift[0]);
            var_gap[k].push(t.variance[0] - 2.0);
            third[k].push(t.third_bound[0]);
            if (t.variance[0] - 2.0).abs() > kurtz_variance_bound(cfg.environment.nu, m, 1.0) + 1e-12 {
                bound_ok[k] = false;
            }
        }
    }
    let mut table = Table::new("kurtz", &["m", "var_M", "se_var_M", "sigma2", "mean_A_minus_2", "max_abs_A_minus_2", "bound", "mean_G"]);
    for (k, &m) in ms.iter().enumerate() {
        let (v, se) = variance_with_se(&drift[k]);
        let max_gap = var_gap[k].iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let bound = kurtz_variance_bound(cfg.environment.nu, m, 1.0);
        let g = super::mean(&third[k]);
        table.push(vec![f64::from(m), v, se, s2, super::mean(&var_gap[k]), max_gap, bound, g]);
        out.checks.push(Check::new(
            format!("variance-of-M-m{m}"),
            Verdict::from_bool((v - s2).abs() <= 3.0 * se),
            format!("Var M_m(1) = {v:.4} ± {:.4} (3 se) vs σ² = {s2:.4}", 3.0 * se),
            json!({ "m": m, "variance": v, "se": se, "sigma2": s2 }),
        ));
        out.checks.push(Check::new(
            format!("ellipticity-bound-m{m}"),
            Verdict::from_bool(bound_ok[k]),
            format!("max |A_m(1) - 2| = {max_gap:.3e} ≤ {bound:.3e} on all {} environments", cfg.replicas),
            json!({ "m": m, "max_gap": max_gap, "bound": bound }),
        ));
        out.samples.push(sample_set(format!("M_m{m}"), drift[k].clone(), "branching", Some(m), Some(1.0), cfg)?);
        out.samples.push(sample_set(format!("G_bound_m{m}"), third[k].clone(), "branching", Some(m), Some(1.0), cfg)?);
    }
    let lo = ms.iter().position(|&m| m == *ms.iter().min().unwrap()).unwrap();
    let hi = ms.iter().position(|&m| m == top).unwrap();
    if lo != hi {
        let ratio = third[lo].iter().zip(&third[hi]).map(|(a, b)| a / b).fold(f64::INFINITY, f64::min);
        let factor = 5.0;
        out.checks.push(Check::new(
            "third-moment-decay",
            Verdict::from_bool(ratio >= factor),
            format!("min over environments of G_{}(1) / G_{}(1) = {ratio:.2} (need ≥ {factor})", ms[lo], ms[hi]),
            json!({ "min_ratio": ratio, "mean_low": super::mean(&third[lo]), "mean_high": super::mean(&third[hi]) }),
        ));
    }
    out.tables.push(table);
    Ok(out)
}
