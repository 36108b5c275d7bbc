//! File formats of the harness: the results CSV, per-(scheme, mechanism)
//! plot-data files, plan files, and the metadata comment block every output
//! starts with.

use super::{ResultRow, SummaryRow};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const RESULTS_HEADER: &str =
    "replicate,scheme,mechanism,epsilon,accuracy,value,noise_scale,gamma_ridge,w1_bar,w2_bar,wall_time_ms,seed,status";

/// Key-value metadata echoed at the top of every output file, enough to
/// reproduce it with the same binary.
#[derive(Debug, Clone, Default)]
pub struct RunMetadata {
    pub entries: Vec<(String, String)>,
}

impl RunMetadata {
    pub fn new(seed: u64) -> Self {
        let mut m = Self::default();
        m.push("version", env!("CARGO_PKG_VERSION"));
        m.push("seed", seed);
        m
    }

    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn comment_block(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        out
    }
}

fn fmt_eps(eps: f64) -> String {
    if eps.is_infinite() {
        "inf".to_string()
    } else {
        format!("{eps}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Write the results table with its metadata block.
pub fn write_results_csv(path: &Path, rows: &[ResultRow], meta: &RunMetadata) -> Result<()> {
    let mut out = String::new();
    out.push_str(&meta.comment_block());
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.replicate,
            r.scheme,
            r.mechanism,
            fmt_eps(r.epsilon),
            fmt_opt(r.accuracy),
            fmt_opt(r.value),
            r.noise_scale,
            r.gamma_ridge,
            r.w1_bar,
            r.w2_bar,
            r.wall_time_ms,
            r.seed,
            r.status.replace(',', ";"),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a results table written by [`write_results_csv`].
pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(format!("{} row {}: {e}", path.display(), i + 2)))?;
        let get = |c: usize| rec.get(c).unwrap_or("").trim().to_string();
        let parse_f = |c: usize, name: &str| -> Result<f64> {
            let s = get(c);
            if s == "inf" {
                return Ok(f64::INFINITY);
            }
            s.parse::<f64>().map_err(|e| {
                Error::Csv(format!("{} row {}: {name}: {e}", path.display(), i + 2))
            })
        };
        let parse_opt = |c: usize| -> Option<f64> {
            let s = get(c);
            if s.is_empty() {
                None
            } else {
                s.parse::<f64>().ok()
            }
        };
        rows.push(ResultRow {
            replicate: get(0).parse().map_err(|e| {
                Error::Csv(format!("{} row {}: replicate: {e}", path.display(), i + 2))
            })?,
            scheme: get(1),
            mechanism: get(2),
            epsilon: parse_f(3, "epsilon")?,
            accuracy: parse_opt(4),
            value: parse_opt(5),
            noise_scale: parse_f(6, "noise_scale")?,
            gamma_ridge: parse_f(7, "gamma_ridge")?,
            w1_bar: parse_f(8, "w1_bar")?,
            w2_bar: parse_f(9, "w2_bar")?,
            wall_time_ms: get(10).parse().unwrap_or(0),
            seed: get(11).parse().unwrap_or(0),
            status: get(12),
        });
    }
    Ok(rows)
}

/// Write one whitespace-delimited `epsilon mean_acc sd_acc` file per
/// (scheme, mechanism) pair into `dir`. Returns the written paths.
pub fn write_plot_data(
    dir: &Path,
    summaries: &[SummaryRow],
    meta: &RunMetadata,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut groups: BTreeMap<(String, String), Vec<&SummaryRow>> = BTreeMap::new();
    for s in summaries {
        groups.entry((s.scheme.clone(), s.mechanism.clone())).or_default().push(s);
    }
    let mut paths = Vec::new();
    for ((scheme, mechanism), mut rows) in groups {
        rows.sort_by(|a, b| a.epsilon.partial_cmp(&b.epsilon).unwrap());
        let path = dir.join(format!("plot_{scheme}_{mechanism}.dat"));
        let mut out = String::new();
        out.push_str(&meta.comment_block());
        out.push_str("# epsilon mean_acc sd_acc\n");
        for r in rows {
            if let (Some(mean), Some(sd)) = (r.mean_accuracy, r.sd_accuracy) {
                out.push_str(&format!("{} {} {}\n", fmt_eps(r.epsilon), mean, sd));
            }
        }
        std::fs::write(&path, out)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Write the summary table as CSV.
pub fn write_summary_csv(path: &Path, summaries: &[SummaryRow], meta: &RunMetadata) -> Result<()> {
    let mut out = String::new();
    out.push_str(&meta.comment_block());
    out.push_str("scheme,mechanism,epsilon,replicates,mean_acc,sd_acc,mean_value,sd_value\n");
    for s in summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.scheme,
            s.mechanism,
            fmt_eps(s.epsilon),
            s.replicates,
            fmt_opt(s.mean_accuracy),
            fmt_opt(s.sd_accuracy),
            fmt_opt(s.mean_value),
            fmt_opt(s.sd_value),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Render a summary table for the terminal.
pub fn format_summary_table(summaries: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:<9} {:>8} {:>5} {:>18} {:>18}\n",
        "scheme", "mechanism", "epsilon", "reps", "accuracy", "value"
    ));
    for s in summaries {
        let cell = |m: Option<f64>, sd: Option<f64>| match (m, sd) {
            (Some(m), Some(sd)) => format!("{m:.3} ({sd:.3})"),
            _ => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<12} {:<9} {:>8} {:>5} {:>18} {:>18}\n",
            s.scheme,
            s.mechanism,
            fmt_eps(s.epsilon),
            s.replicates,
            cell(s.mean_accuracy, s.sd_accuracy),
            cell(s.mean_value, s.sd_value),
        ));
    }
    out
}

/// Parse a plan file of `key = value` lines; `#` starts a comment. Keys are
/// free-form here; the CLI maps them onto plan fields with the precedence
/// flags > environment > plan file > defaults.
pub fn parse_plan_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::invalid(format!(
                "{} line {}: expected `key = value`, got `{raw}`",
                path.display(),
                lineno + 1
            ))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Write a weight vector with diagnostics comments.
pub fn write_weights_csv(
    path: &Path,
    weights: &[f64],
    meta: &RunMetadata,
) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    write!(file, "{}", meta.comment_block())?;
    writeln!(file, "weight")?;
    for w in weights {
        writeln!(file, "{w}")?;
    }
    Ok(())
}
