//! Joining per-run evaluation CSVs into one comparison table: one row per
//! (variant, split) with metrics averaged across runs (seeds). A pure
//! function of the input files.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use mmc_core::eval::REPORT_HEADER;
use mmc_core::train::Variant;
use mmc_core::{MmcError, Result};

pub const JOIN_HEADER: &str = "variant,split,map,f1,runs";

struct Cell {
    map_sum: f64,
    f1_sum: f64,
    runs: u32,
}

/// Join the "mean" summary rows of each eval CSV, averaging over files.
pub fn join(paths: &[PathBuf]) -> Result<String> {
    let mut cells: BTreeMap<(String, String), Cell> = BTreeMap::new();
    for path in paths {
        let text = fs::read_to_string(path)
            .map_err(|e| MmcError::Format(format!("cannot read {}: {e}", path.display())))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == REPORT_HEADER => {}
            _ => {
                return Err(MmcError::Format(format!(
                    "{}: expected header '{REPORT_HEADER}'",
                    path.display()
                )))
            }
        }
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(MmcError::Format(format!(
                    "{}:{}: expected 8 fields, got {}",
                    path.display(),
                    idx + 1,
                    f.len()
                )));
            }
            if f[3] != "mean" {
                continue;
            }
            let parse = |v: &str, what: &str| -> Result<f64> {
                v.parse::<f64>().map_err(|_| {
                    MmcError::Format(format!(
                        "{}:{}: bad {what} value '{v}'",
                        path.display(),
                        idx + 1
                    ))
                })
            };
            let map = parse(f[4], "map")?;
            let f1 = parse(f[5], "f1")?;
            let cell = cells
                .entry((f[1].to_string(), f[2].to_string()))
                .or_insert(Cell {
                    map_sum: 0.0,
                    f1_sum: 0.0,
                    runs: 0,
                });
            cell.map_sum += map;
            cell.f1_sum += f1;
            cell.runs += 1;
        }
    }

    let mut keys: Vec<&(String, String)> = cells.keys().collect();
    keys.sort_by_key(|(variant, split)| {
        (
            variant_rank(variant),
            variant.clone(),
            split_rank(split),
            split.clone(),
        )
    });

    let mut out = String::from(JOIN_HEADER);
    out.push('\n');
    for key in keys {
        let c = &cells[key];
        let n = c.runs as f64;
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            key.0,
            key.1,
            c.map_sum / n,
            c.f1_sum / n,
            c.runs
        ));
    }
    Ok(out)
}

/// Canonical variant order first, anything else after, alphabetically.
fn variant_rank(v: &str) -> usize {
    Variant::ALL
        .iter()
        .position(|k| k.as_str() == v)
        .unwrap_or(Variant::ALL.len())
}

fn split_rank(s: &str) -> usize {
    ["all", "day", "night"]
        .iter()
        .position(|k| *k == s)
        .unwrap_or(3)
}
