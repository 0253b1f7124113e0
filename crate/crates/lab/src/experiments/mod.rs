//! The named experiments. Each consumes an [`ExperimentConfig`] and returns
//! an [`Outcome`]; nothing here touches the filesystem.

mod branching;
mod diffusion;
mod limit;

use serde_json::json;
use sinai_core::compare::{ks_two_sample, KsReport, Provenance, SampleSet, Verdict};

use crate::{Check, ExperimentConfig, LabError, Outcome, Table};

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    cfg.validate()?;
    match cfg.experiment.as_str() {
        "identity" => branching::identity(cfg),
        "offspring" => branching::offspring(cfg),
        "moments" => branching::moments(cfg),
        "kurtz" => branching::kurtz(cfg),
        "diffusion-oracles" => diffusion::oracles(cfg),
        "calibrate-rayknight" => diffusion::calibrate(cfg),
        "h-consistency" => diffusion::h_consistency(cfg),
        "main-limit" => limit::main_limit(cfg),
        "theorem-a" => limit::theorem_a(cfg),
        other => Err(LabError::UnknownExperiment(other.to_string())),
    }
}

fn provenance(module: &str, m: Option<u32>, x: Option<f64>, cfg: &ExperimentConfig) -> Provenance {
    Provenance { module: module.to_string(), m, x, master_seed: cfg.master_seed, censored: 0 }
}

fn sample_set(label: String, values: Vec<f64>, module: &str, m: Option<u32>, x: Option<f64>, cfg: &ExperimentConfig) -> Result<SampleSet, LabError> {
    Ok(SampleSet::new(label, values)?.with_provenance(provenance(module, m, x, cfg)))
}

/// Like [`sample_set`], `None` entries being censored replicas.
fn censored_set(label: String, outcomes: Vec<Option<f64>>, module: &str, m: Option<u32>, x: Option<f64>, cfg: &ExperimentConfig) -> Result<SampleSet, LabError> {
    Ok(SampleSet::from_outcomes(label, outcomes)?.with_provenance(provenance(module, m, x, cfg)))
}

/// KS check against the `0.01` critical value, or against a fixed threshold
/// when one is given.
fn ks_check(name: String, a: &SampleSet, b: &SampleSet, threshold: Option<f64>) -> Result<(Check, KsReport), LabError> {
    let r = ks_two_sample(a, b)?;
    let bound = threshold.unwrap_or(r.critical);
    let censoring = a.censoring_rate().max(b.censoring_rate());
    let verdict = Verdict::from_bool(r.statistic < bound).censored(censoring);
    let detail = format!(
        "D = {:.4} vs {} {:.4} (n = {}, {}; censoring {:.2}%)",
        r.statistic,
        if threshold.is_some() { "threshold" } else { "critical" },
        bound,
        r.n1,
        r.n2,
        100.0 * censoring
    );
    let data = json!({ "ks": r, "bound": bound, "a": a.label, "b": b.label, "censoring": censoring });
    Ok((Check::new(name, verdict, detail, data), r))
}

/// Both empirical CDFs on the merged sample: columns `value F_a F_b`.
fn ecdf_table(name: String, a: &[f64], b: &[f64]) -> Table {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = sa.iter().chain(&sb).copied().collect();
    merged.sort_by(f64::total_cmp);
    merged.dedup();
    let mut t = Table::new(name, &["value", "ecdf_a", "ecdf_b"]);
    let (mut i, mut j) = (0, 0);
    for v in merged {
        while i < sa.len() && sa[i] <= v {
            i += 1;
        }
        while j < sb.len() && sb[j] <= v {
            j += 1;
        }
        t.push(vec![v, i as f64 / sa.len() as f64, j as f64 / sb.len() as f64]);
    }
    t
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
