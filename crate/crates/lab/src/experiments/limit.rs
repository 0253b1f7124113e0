use serde_json::json;
use sinai_core::compare::{convergence_trend, KsReport, Verdict};
use sinai_core::diffusion::{brox_marginal, sample_l_star, sample_limit_h};
use sinai_core::environment::sample_environment;
use sinai_core::seed::derive_seed;
use sinai_core::walk::{lattice_index, scaled_local_time_profile, simulate_walk, theorem_a_marginal, Stop, WalkOptions};

use super::{censored_set, ecdf_table, ks_check, sample_set};
use crate::{Check, ExperimentConfig, LabError, Outcome, Table};

pub fn main_limit(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let mut out = Outcome::new("main-limit");
    let sigma = cfg.sigma()?;
    let xs = &cfg.x_grid;
    let x_max = xs.iter().fold(0.0f64, |a, &b| a.max(b));
    let n = cfg.replicas as usize;

    let mut lstar = vec![Vec::with_capacity(n); xs.len()];
    let mut two_h = vec![Vec::with_capacity(n); xs.len()];
    for i in 0..cfg.replicas {
        let l = sample_l_star(sigma, xs, cfg.dx, derive_seed(cfg.master_seed, "main-limit-lstar", i))?;
        let h = sample_limit_h(sigma, xs, cfg.dx, derive_seed(cfg.master_seed, "main-limit-h", i))?;
        for k in 0..xs.len() {
            lstar[k].push(l[k]);
            two_h[k].push(2.0 * h[k]);
        }
    }
    let lstar: Vec<_> = xs
        .iter()
        .zip(lstar)
        .map(|(&x, v)| sample_set(format!("lstar_x{x}"), v, "diffusion", None, Some(x), cfg))
        .collect::<Result<_, _>>()?;
    let two_h: Vec<_> = xs
        .iter()
        .zip(two_h)
        .map(|(&x, v)| sample_set(format!("two_h_x{x}"), v, "diffusion", None, Some(x), cfg))
        .collect::<Result<_, _>>()?;

    let mut reports: Vec<Vec<(u32, KsReport)>> = vec![Vec::new(); xs.len()];
    let mut pathwise_checked = 0u64;
    let mut pathwise_failures = 0u64;
    let mut censored_total = 0u64;
    let mut last_walk = Vec::new();
    let mut censoring = vec![0.0f64; xs.len()];
    let mut table = Table::new("walk_vs_lstar", &["m", "x", "D", "critical", "censoring_rate"]);
    for &m in &cfg.m_list {
        let radius = lattice_index(m, x_max).max(1) as u32;
        let window = i64::from(radius) + 2;
        let mut walk = vec![Vec::with_capacity(n); xs.len()];
        for i in 0..cfg.replicas {
            let base = sample_environment(cfg.environment.spec(derive_seed(cfg.master_seed, "main-limit-environment", i)), -window..=window)?;
            let mut env = base.rescale(m)?;
            let stop = Stop::Excursions { count: u64::from(m), cap: cfg.n_cap(m) };
            let seed = derive_seed(derive_seed(cfg.master_seed, "main-limit-walk", u64::from(m)), "replica", i);
            let path = simulate_walk(&mut env, WalkOptions::new(stop).with_radius(radius), seed);
            if path.censored() {
                censored_total += 1;
                walk.iter_mut().for_each(|w| w.push(None));
                continue;
            }
            let profile = scaled_local_time_profile(&path, m, xs)?;
            for (k, &x) in xs.iter().enumerate() {
                let j = lattice_index(m, x) as usize;
                if j >= 1 {
                    let (below, at) = (path.upcrossings_at(j - 1), path.upcrossings_at(j));
                    let visits = path.visits().get(j).copied().unwrap_or(0);
                    pathwise_checked += 1;
                    pathwise_failures += u64::from(visits != below + at);
                }
                walk[k].push(Some(profile[k]));
            }
        }
        let mut sets = Vec::new();
        for (k, &x) in xs.iter().enumerate() {
            let w = censored_set(format!("walk_m{m}_x{x}"), std::mem::take(&mut walk[k]), "walk", Some(m), Some(x), cfg)?;
            let (check, r) = ks_check(format!("walk-vs-lstar-m{m}-x{x}"), &w, &lstar[k], None)?;
            table.push(vec![f64::from(m), x, r.statistic, r.critical, w.censoring_rate()]);
            out.checks.push(check.informational());
            censoring[k] = censoring[k].max(w.censoring_rate());
            reports[k].push((m, r));
            sets.push(w);
        }
        last_walk = sets.clone();
        out.samples.extend(sets);
    }

    let threshold = cfg.threshold.unwrap_or(0.06);
    let mut trend_table = Table::new("trend", &["x", "m", "D", "band"]);
    for (k, &x) in xs.iter().enumerate() {
        let max_censoring = censoring[k];
        if reports[k].len() >= 3 {
            let trend = convergence_trend(&reports[k], threshold)?;
            for row in &trend.rows {
                trend_table.push(vec![x, f64::from(row.m), row.statistic, row.band]);
            }
            let summary: Vec<String> = trend.rows.iter().map(|r| format!("D({}) = {:.4}", r.m, r.statistic)).collect();
            out.checks.push(Check::new(
                format!("trend-x{x}"),
                trend.verdict.censored(max_censoring),
                format!("{} (threshold {threshold}, max censoring {:.2}%)", summary.join(", "), 100.0 * max_censoring),
                json!({ "trend": trend, "censoring": max_censoring }),
            ));
        } else {
            let (m, r) = reports[k].last().cloned().expect("at least one level");
            out.checks.push(Check::new(
                format!("distance-x{x}"),
                Verdict::from_bool(r.statistic < threshold).censored(max_censoring),
                format!("D({m}) = {:.4} (threshold {threshold}; fewer than three levels, no trend)", r.statistic),
                json!({ "ks": r, "censoring": max_censoring }),
            ));
        }
        if let Some(w) = last_walk.get(k) {
            out.checks.push(ks_check(format!("walk-vs-two-h-x{x}"), w, &two_h[k], None)?.0.informational());
            out.checks.push(ks_check(format!("lstar-vs-two-h-x{x}"), &lstar[k], &two_h[k], None)?.0.informational());
            out.tables.push(ecdf_table(format!("walk_vs_lstar_x{x}"), &w.values, &lstar[k].values));
        }
    }
    out.checks.push(Check::new(
        "pathwise-branching-identity",
        Verdict::from_bool(pathwise_failures == 0),
        format!(
            "L([mx]; τ_m) = U([mx]-1) + U([mx]) on {pathwise_checked} (walk, x) pairs, {pathwise_failures} failures; {censored_total} walks censored"
        ),
        json!({ "checked": pathwise_checked, "failures": pathwise_failures, "censored": censored_total }),
    ));
    out.samples.extend(lstar);
    out.samples.extend(two_h);
    out.tables.push(table);
    out.tables.push(trend_table);
    Ok(out)
}

pub fn theorem_a(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let mut out = Outcome::new("theorem-a");
    let sigma = cfg.sigma()?;
    let t = cfg.horizon;
    let brox = (0..cfg.replicas)
        .map(|i| brox_marginal(sigma, t, cfg.dt, cfg.dx, derive_seed(cfg.master_seed, "theorem-a-brox", i)))
        .collect::<Result<Vec<_>, _>>()?;
    let b = sample_set("brox".into(), brox, "diffusion", None, None, cfg)?;
    for &m in &cfg.m_list {
        let window = 4 * i64::from(m);
        let mut walk = Vec::with_capacity(cfg.replicas as usize);
        for i in 0..cfg.replicas {
            let base = sample_environment(cfg.environment.spec(derive_seed(cfg.master_seed, "theorem-a-environment", i)), -window..=window)?;
            walk.push(theorem_a_marginal(&base, m, t, derive_seed(derive_seed(cfg.master_seed, "theorem-a-walk", u64::from(m)), "replica", i)));
        }
        let w = sample_set(format!("walk_m{m}"), walk, "walk", Some(m), None, cfg)?;
        out.checks.push(ks_check(format!("walk-vs-brox-m{m}"), &w, &b, cfg.threshold)?.0);
        out.tables.push(ecdf_table(format!("walk_vs_brox_m{m}"), &w.values, &b.values));
        out.samples.push(w);
    }
    out.samples.push(b);
    Ok(out)
}
