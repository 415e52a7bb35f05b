//! Comparison tables over evaluated runs: CSV, JSON and plain text.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ircoco_core::metrics::LengthBucket;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jsonl;
use crate::pipeline::ResultsBundle;

pub const CSV_HEADER: &str = "method,edit_sim,em,bleu4";
pub const CSV: &str = "report.csv";
pub const JSON: &str = "report.json";
pub const TEXT: &str = "report.txt";

#[derive(Debug, Serialize)]
struct JsonReport<'a> {
    corpus_hash: &'a str,
    start_checkpoint: &'a str,
    runs: &'a [ResultsBundle],
}

/// A bundle path, or a directory holding `results.json`.
pub fn load_bundle(path: &Path) -> Result<ResultsBundle> {
    let file: PathBuf = if path.is_dir() {
        path.join("results.json")
    } else {
        path.to_path_buf()
    };
    jsonl::read_json(&file)
}

fn pct(v: f64) -> String {
    format!("{v:.2}")
}

fn opt_pct(v: Option<f64>) -> String {
    v.map(pct).unwrap_or_else(|| "-".into())
}

pub fn csv(bundles: &[ResultsBundle]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for b in bundles {
        let r = &b.report;
        let _ = writeln!(out, "{},{},{},{}", b.method, pct(r.edit_sim), pct(r.em), pct(r.bleu4));
    }
    out
}

pub fn text_table(bundles: &[ResultsBundle]) -> String {
    let width = bundles.iter().map(|b| b.method.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}  {:>6}", "method", "edit_sim", "em", "bleu4", "count");
    for b in bundles {
        let r = &b.report;
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>6}",
            b.method,
            pct(r.edit_sim),
            pct(r.em),
            pct(r.bleu4),
            r.count
        );
    }
    for b in bundles {
        let _ = writeln!(out, "\n{} by completion length", b.method);
        let _ = writeln!(out, "{:>6}  {:>6}  {:>8}  {:>8}  {:>8}", "tokens", "count", "edit_sim", "em", "bleu4");
        for LengthBucket {
            tokens,
            count,
            edit_sim,
            em,
            bleu4,
        } in &b.report.per_length
        {
            let _ = writeln!(
                out,
                "{tokens:>6}  {count:>6}  {:>8}  {:>8}  {:>8}",
                opt_pct(*edit_sim),
                opt_pct(*em),
                opt_pct(*bleu4)
            );
        }
    }
    out
}

/// Refuses bundles scored on different corpora or descending from
/// different supervised checkpoints.
pub fn check_comparable(bundles: &[ResultsBundle]) -> Result<()> {
    let Some(first) = bundles.first() else {
        return Err(Error::Config("report needs at least one run".into()));
    };
    for b in bundles {
        if b.corpus_hash != first.corpus_hash {
            return Err(Error::Config(format!(
                "corpus hash of {} differs from {}",
                b.method, first.method
            )));
        }
        if b.start_checkpoint != first.start_checkpoint {
            return Err(Error::Config(format!(
                "{} and {} start from different supervised checkpoints",
                b.method, first.method
            )));
        }
    }
    Ok(())
}

/// Writes the three report files into `out` and returns their paths.
pub fn render_report(bundles: &[ResultsBundle], out: &Path) -> Result<Vec<PathBuf>> {
    check_comparable(bundles)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let paths = [out.join(CSV), out.join(JSON), out.join(TEXT)];
    fs::write(&paths[0], csv(bundles)).map_err(|e| Error::io(&paths[0], e))?;
    jsonl::write_json(
        &paths[1],
        &JsonReport {
            corpus_hash: &bundles[0].corpus_hash,
            start_checkpoint: &bundles[0].start_checkpoint,
            runs: bundles,
        },
    )?;
    fs::write(&paths[2], text_table(bundles)).map_err(|e| Error::io(&paths[2], e))?;
    Ok(paths.to_vec())
}
