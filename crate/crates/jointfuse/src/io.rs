//! Run artifacts on disk: per-chain draw files, summary JSON and table,
//! plot-data CSVs, and the reproducibility manifest.
//!
//! Draw values are written with the shortest round-trip float representation
//! so reading them back reproduces the original bits, which is what lets the
//! `diagnose` command rebuild the exact summary a fit produced.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diagnostics::{caterpillar, density_data, ParameterSummary, DENSITY_BINS};
use crate::sampler::ChainOutput;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("draws: {0}")]
    Draws(String),
}

fn file_err(path: &Path, message: impl ToString) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn draws_file_name(chain: usize) -> String {
    format!("draws_chain{}.csv", chain + 1)
}

/// Writes one CSV per chain (`draws_chain1.csv`, ...) with a header row of
/// parameter names. Returns the file names written.
pub fn write_draws(dir: &Path, chains: &[ChainOutput]) -> Result<Vec<String>, IoError> {
    let mut written = Vec::with_capacity(chains.len());
    for c in chains {
        let name = draws_file_name(c.chain);
        let path = dir.join(&name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| file_err(&path, e))?;
        w.write_record(&c.names).map_err(|e| file_err(&path, e))?;
        for r in 0..c.n_retained {
            w.write_record(c.row(r).iter().map(f64::to_string))
                .map_err(|e| file_err(&path, e))?;
        }
        w.flush().map_err(|e| file_err(&path, e))?;
        written.push(name);
    }
    Ok(written)
}

/// Reads every `draws_chain*.csv` in a directory back into chain outputs
/// (sampler metadata like block statistics is not stored, so those fields
/// come back empty). Chains must agree on columns and draw counts.
pub fn read_draws(dir: &Path) -> Result<Vec<ChainOutput>, IoError> {
    let entries = std::fs::read_dir(dir).map_err(|e| file_err(dir, e))?;
    let mut found: Vec<(usize, std::path::PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| file_err(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(n) = name
            .strip_prefix("draws_chain")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            if n >= 1 {
                found.push((n - 1, entry.path()));
            }
        }
    }
    if found.is_empty() {
        return Err(IoError::Draws(format!(
            "no draws_chain*.csv files in {}",
            dir.display()
        )));
    }
    found.sort_by_key(|(n, _)| *n);

    let mut chains = Vec::with_capacity(found.len());
    for (chain, path) in found {
        let mut r = csv::Reader::from_path(&path).map_err(|e| file_err(&path, e))?;
        let names: Vec<String> = r
            .headers()
            .map_err(|e| file_err(&path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut draws = Vec::new();
        let mut n_retained = 0;
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| file_err(&path, e))?;
            if rec.len() != names.len() {
                return Err(IoError::Draws(format!(
                    "{} row {}: {} fields, expected {}",
                    path.display(),
                    row + 2,
                    rec.len(),
                    names.len()
                )));
            }
            for field in rec.iter() {
                let v = field.trim().parse::<f64>().map_err(|_| {
                    IoError::Draws(format!(
                        "{} row {}: cannot parse `{field}`",
                        path.display(),
                        row + 2
                    ))
                })?;
                draws.push(v);
            }
            n_retained += 1;
        }
        chains.push(ChainOutput {
            chain,
            names,
            draws,
            n_retained,
            blocks: vec![],
            seed: 0,
            elapsed_ms: 0,
        });
    }

    let first = &chains[0];
    for c in &chains[1..] {
        for name in &first.names {
            if !c.names.contains(name) {
                return Err(IoError::Draws(format!(
                    "parameter column `{}` missing from {}",
                    name,
                    draws_file_name(c.chain)
                )));
            }
        }
        for name in &c.names {
            if !first.names.contains(name) {
                return Err(IoError::Draws(format!(
                    "parameter column `{}` missing from {}",
                    name,
                    draws_file_name(first.chain)
                )));
            }
        }
        if c.n_retained != first.n_retained {
            return Err(IoError::Draws(format!(
                "{} has {} draws, expected {}",
                draws_file_name(c.chain),
                c.n_retained,
                first.n_retained
            )));
        }
    }
    Ok(chains)
}

/// Serializes a value as pretty JSON with a trailing newline. Output bytes
/// are a pure function of the value, so identical inputs give identical
/// files.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| file_err(path, e))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| file_err(path, e))
}

/// Aligned text table of parameter summaries.
pub fn summary_table(summaries: &[ParameterSummary]) -> String {
    let width = summaries
        .iter()
        .map(|s| s.name.len())
        .chain(["parameter".len()])
        .max()
        .unwrap_or(9);
    let mut out = format!(
        "{:width$}  {:>10}  {:>10}  {:>10}  {:>10}  {:>10}  {:>7}\n",
        "parameter", "mean", "sd", "2.5%", "median", "97.5%", "Rhat"
    );
    for s in summaries {
        let rhat = if s.rhat.is_nan() {
            format!("{:>7}", "-")
        } else {
            format!("{:>7.3}", s.rhat)
        };
        out.push_str(&format!(
            "{:width$}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}  {}\n",
            s.name, s.mean, s.sd, s.q025, s.median, s.q975, rhat
        ));
    }
    out
}

/// Writes `trace.csv`, `density.csv`, and `caterpillar.csv` in long format,
/// ready for any plotting tool. Returns the file names written.
pub fn write_plot_data(
    dir: &Path,
    chains: &[ChainOutput],
    summaries: &[ParameterSummary],
) -> Result<Vec<String>, IoError> {
    let trace_path = dir.join("trace.csv");
    let mut w = csv::Writer::from_path(&trace_path).map_err(|e| file_err(&trace_path, e))?;
    w.write_record(["parameter", "chain", "iteration", "value"])
        .map_err(|e| file_err(&trace_path, e))?;
    for s in summaries {
        for c in chains {
            let Some(col) = c.column(&s.name) else {
                continue;
            };
            for (it, v) in col.iter().enumerate() {
                w.write_record([
                    s.name.as_str(),
                    &(c.chain + 1).to_string(),
                    &(it + 1).to_string(),
                    &v.to_string(),
                ])
                .map_err(|e| file_err(&trace_path, e))?;
            }
        }
    }
    w.flush().map_err(|e| file_err(&trace_path, e))?;

    let density_path = dir.join("density.csv");
    let mut w = csv::Writer::from_path(&density_path).map_err(|e| file_err(&density_path, e))?;
    w.write_record(["parameter", "chain", "bin_start", "bin_end", "count"])
        .map_err(|e| file_err(&density_path, e))?;
    for s in summaries {
        let Some(d) = density_data(chains, &s.name, DENSITY_BINS) else {
            continue;
        };
        for (row, counts) in d.counts.iter().enumerate() {
            let chain = chains[row].chain + 1;
            for (b, count) in counts.iter().enumerate() {
                w.write_record([
                    s.name.as_str(),
                    &chain.to_string(),
                    &d.breaks[b].to_string(),
                    &d.breaks[b + 1].to_string(),
                    &count.to_string(),
                ])
                .map_err(|e| file_err(&density_path, e))?;
            }
        }
    }
    w.flush().map_err(|e| file_err(&density_path, e))?;

    let cat_path = dir.join("caterpillar.csv");
    let mut w = csv::Writer::from_path(&cat_path).map_err(|e| file_err(&cat_path, e))?;
    w.write_record(["parameter", "q025", "median", "q975"])
        .map_err(|e| file_err(&cat_path, e))?;
    for row in caterpillar(summaries) {
        w.write_record([
            row.name.as_str(),
            &row.low.to_string(),
            &row.median.to_string(),
            &row.high.to_string(),
        ])
        .map_err(|e| file_err(&cat_path, e))?;
    }
    w.flush().map_err(|e| file_err(&cat_path, e))?;

    Ok(vec![
        "trace.csv".into(),
        "density.csv".into(),
        "caterpillar.csv".into(),
    ])
}

/// Everything needed to reproduce a run: input hashes, seed, version.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    /// File name to SHA-256, covering the data files the run consumed or
    /// produced.
    pub data_sha256: BTreeMap<String, String>,
    pub elapsed_ms: u64,
    pub outputs: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let mut f = std::fs::File::open(path).map_err(|e| file_err(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf).map_err(|e| file_err(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_output(chain: usize, names: &[&str], rows: &[&[f64]]) -> ChainOutput {
        ChainOutput {
            chain,
            names: names.iter().map(|s| s.to_string()).collect(),
            draws: rows.iter().flat_map(|r| r.iter().copied()).collect(),
            n_retained: rows.len(),
            blocks: vec![],
            seed: 9,
            elapsed_ms: 12,
        }
    }

    #[test]
    fn draws_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let chains = vec![
            chain_output(
                0,
                &["beta[1][1]", "sigma2[1]"],
                &[&[1.0 / 3.0, 0.1 + 0.2], &[-7.25e-300, 2.0f64.sqrt()]],
            ),
            chain_output(1, &["beta[1][1]", "sigma2[1]"], &[&[0.5, 1.5], &[0.25, 2.5]]),
        ];
        let files = write_draws(dir.path(), &chains).unwrap();
        assert_eq!(files, vec!["draws_chain1.csv", "draws_chain2.csv"]);
        let back = read_draws(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        for (b, c) in back.iter().zip(&chains) {
            assert_eq!(b.chain, c.chain);
            assert_eq!(b.names, c.names);
            assert_eq!(b.n_retained, c.n_retained);
            // Bit-exact, not approximately equal.
            assert!(b.draws.iter().zip(&c.draws).all(|(x, y)| x == y));
        }
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let chains = vec![
            chain_output(0, &["a", "b"], &[&[1.0, 2.0]]),
            chain_output(1, &["a"], &[&[1.0]]),
        ];
        write_draws(dir.path(), &chains).unwrap();
        let err = read_draws(dir.path()).unwrap_err().to_string();
        assert!(err.contains('`') && err.contains('b'), "{err}");
        assert!(err.contains("draws_chain2.csv"), "{err}");
    }

    #[test]
    fn unparseable_cell_is_located() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("draws_chain1.csv"), "a,b\n1.0,oops\n").unwrap();
        let err = read_draws(dir.path()).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("oops"), "{err}");
    }

    #[test]
    fn summary_table_lines_up() {
        let summaries = vec![
            ParameterSummary {
                name: "beta[1][1]".into(),
                mean: -0.5012,
                sd: 0.081,
                q025: -0.66,
                median: -0.5,
                q975: -0.34,
                rhat: 1.002,
            },
            ParameterSummary {
                name: "nu".into(),
                mean: 1.2,
                sd: 0.1,
                q025: 1.0,
                median: 1.2,
                q975: 1.4,
                rhat: f64::NAN,
            },
        ];
        let table = summary_table(&summaries);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
        assert!(lines[1].starts_with("beta[1][1]"));
        assert!(lines[2].ends_with('-'));
    }

    #[test]
    fn plot_files_cover_every_monitored_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let chains = vec![
            chain_output(0, &["a", "b"], &[&[1.0, 5.0], &[2.0, 5.0], &[3.0, 5.0]]),
            chain_output(1, &["a", "b"], &[&[1.5, 5.0], &[2.5, 5.0], &[3.5, 5.0]]),
        ];
        let summaries = crate::diagnostics::summarize(&chains, false).unwrap();
        let files = write_plot_data(dir.path(), &chains, &summaries).unwrap();
        assert_eq!(files.len(), 3);
        let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        // Header plus 2 parameters x 2 chains x 3 draws.
        assert_eq!(trace.lines().count(), 1 + 12);
        let density = std::fs::read_to_string(dir.path().join("density.csv")).unwrap();
        assert!(density.lines().count() > 2);
        let cat = std::fs::read_to_string(dir.path().join("caterpillar.csv")).unwrap();
        assert_eq!(cat.lines().count(), 3);
    }

    #[test]
    fn file_hash_matches_known_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, b"abc").unwrap();
        // SHA-256 of "abc", a fixed reference value.
        assert_eq!(
            sha256_file(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
