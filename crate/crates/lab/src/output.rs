use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sinai_core::compare::SampleSet;

use crate::{ExperimentConfig, LabError, Outcome, Table};

pub const OUT_ENV: &str = "SINAI_LAB_OUT";

/// Output root: the config's directory, else `$SINAI_LAB_OUT`, else `out`.
pub fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> LabError + '_ {
    move |e| LabError::Io(path.to_path_buf(), e.to_string())
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Fresh `<root>/<experiment>/<timestamp>` directory.
pub fn run_directory(cfg: &ExperimentConfig) -> Result<PathBuf, LabError> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let base = output_root(cfg).join(&cfg.experiment);
    let mut dir = base.join(&stamp);
    let mut k = 1;
    while dir.exists() {
        dir = base.join(format!("{stamp}-{k}"));
        k += 1;
    }
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

pub fn write_samples<W: Write>(mut w: W, header: &str, set: &SampleSet) -> std::io::Result<()> {
    writeln!(w, "# {header}")?;
    writeln!(w, "# label={} censored={} module={} m={} x={}", set.label, set.provenance.censored, set.provenance.module,
        set.provenance.m.map_or("-".into(), |m| m.to_string()), set.provenance.x.map_or("-".into(), |x| x.to_string()))?;
    writeln!(w, "index,value")?;
    for (i, v) in set.values.iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    Ok(())
}

pub fn write_table<W: Write>(mut w: W, header: &str, table: &Table) -> std::io::Result<()> {
    writeln!(w, "# {header}")?;
    writeln!(w, "# {}", table.columns.join(" "))?;
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(" "))?;
    }
    Ok(())
}

/// Writes `config.json`, `samples_*.csv`, `plotdata_*.dat` and `verdict.json`.
pub fn write_outcome(cfg: &ExperimentConfig, outcome: &Outcome) -> Result<PathBuf, LabError> {
    let dir = run_directory(cfg)?;
    let header = cfg.header();
    let cfg_path = dir.join("config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(cfg).expect("config serializes") + "\n").map_err(io_err(&cfg_path))?;
    for set in &outcome.samples {
        let path = dir.join(format!("samples_{}.csv", file_stem(&set.label)));
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        write_samples(BufWriter::new(f), &header, set).map_err(io_err(&path))?;
    }
    for table in &outcome.tables {
        let path = dir.join(format!("plotdata_{}.dat", file_stem(&table.name)));
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        write_table(BufWriter::new(f), &header, table).map_err(io_err(&path))?;
    }
    let verdict = serde_json::json!({
        "experiment": outcome.experiment,
        "verdict": outcome.verdict(),
        "config": cfg,
        "checks": outcome.checks,
    });
    let path = dir.join("verdict.json");
    fs::write(&path, serde_json::to_string_pretty(&verdict).expect("verdict serializes") + "\n").map_err(io_err(&path))?;
    Ok(dir)
}
