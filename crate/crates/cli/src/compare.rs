//! `compare`: join two metrics.csv files on `iter`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use serde_json::{json, Value};

use spolab_core::manifest::{ExperimentManifest, MANIFEST_FILE};
use spolab_core::trainloop::UNDEFINED;

pub const COMPARE_CSV_HEADER: &str =
    "iter,spo_J,grpo_J,J_delta,spo_nz_ratio_1e-4,grpo_degenerate_ratio,spo_adv_var_raw,grpo_adv_var_raw";

struct Run {
    /// Rows keyed by iteration, columns by header name.
    rows: BTreeMap<u64, BTreeMap<String, Option<f64>>>,
}

impl Run {
    fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("metrics.csv");
        let mut reader =
            csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = BTreeMap::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.with_context(|| format!("{} row {}", path.display(), line + 2))?;
            let mut row = BTreeMap::new();
            for (name, field) in header.iter().zip(record.iter()) {
                let v = if field == UNDEFINED {
                    None
                } else {
                    Some(field.parse::<f64>().with_context(|| {
                        format!(
                            "{} row {} column {name}: `{field}`",
                            path.display(),
                            line + 2
                        )
                    })?)
                };
                row.insert(name.clone(), v);
            }
            let iter = row
                .get("iter")
                .copied()
                .flatten()
                .ok_or_else(|| anyhow!("{} row {} has no iter", path.display(), line + 2))?;
            rows.insert(iter as u64, row);
        }
        if rows.is_empty() {
            return Err(anyhow!("{} has no rows", path.display()));
        }
        Ok(Self { rows })
    }

    fn get(&self, iter: u64, col: &str) -> Option<f64> {
        self.rows
            .get(&iter)
            .and_then(|r| r.get(col))
            .copied()
            .flatten()
    }

    fn final_j(&self) -> Option<f64> {
        self.rows
            .values()
            .next_back()
            .and_then(|r| r.get("J"))
            .copied()
            .flatten()
    }

    fn mean(&self, col: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .values()
            .filter_map(|r| r.get(col).copied().flatten())
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| x.to_string())
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

pub fn run(spo_dir: &Path, grpo_dir: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let spo = Run::load(spo_dir)?;
    let grpo = Run::load(grpo_dir)?;

    let mut csv = String::from(COMPARE_CSV_HEADER);
    csv.push('\n');
    for &iter in spo.rows.keys().filter(|i| grpo.rows.contains_key(i)) {
        let (js, jg) = (spo.get(iter, "J"), grpo.get(iter, "J"));
        writeln!(
            csv,
            "{iter},{},{},{},{},{},{},{}",
            cell(js),
            cell(jg),
            cell(diff(js, jg)),
            cell(spo.get(iter, "nz_ratio_1e-4")),
            cell(grpo.get(iter, "degenerate_ratio")),
            cell(spo.get(iter, "adv_var_raw")),
            cell(grpo.get(iter, "adv_var_raw")),
        )?;
    }

    let summary = json!({
        "final_J": {
            "spo": spo.final_j(),
            "grpo": grpo.final_j(),
            "delta": diff(spo.final_j(), grpo.final_j()),
        },
        "mean_degenerate_ratio": {
            "spo": spo.mean("degenerate_ratio"),
            "grpo": grpo.mean("degenerate_ratio"),
            "delta": diff(spo.mean("degenerate_ratio"), grpo.mean("degenerate_ratio")),
        },
        "mean_nz_ratio_1e-4": {
            "spo": spo.mean("nz_ratio_1e-4"),
            "grpo": grpo.mean("nz_ratio_1e-4"),
            "delta": diff(spo.mean("nz_ratio_1e-4"), grpo.mean("nz_ratio_1e-4")),
        },
    });

    let summary_lines = summary_text(&summary);
    match out {
        None => {
            print!("{csv}");
            eprint!("{summary_lines}");
        }
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            std::fs::write(dir.join("compare.csv"), &csv)?;
            let mut text = serde_json::to_string_pretty(&summary)?;
            text.push('\n');
            std::fs::write(dir.join("summary.json"), text)?;
            let mut manifest = ExperimentManifest::new(
                "compare",
                Path::new(""),
                dir,
                json!({ "spo": spo_dir, "grpo": grpo_dir }),
            );
            manifest.record_input(&spo_dir.join("metrics.csv"))?;
            manifest.record_input(&grpo_dir.join("metrics.csv"))?;
            manifest.write(&dir.join(MANIFEST_FILE))?;
            print!("{summary_lines}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn summary_text(summary: &Value) -> String {
    let fmt = |v: &Value| {
        v.as_f64()
            .map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:.6}"))
    };
    let mut s = String::new();
    for key in ["final_J", "mean_degenerate_ratio", "mean_nz_ratio_1e-4"] {
        let block = &summary[key];
        writeln!(
            s,
            "{key}: spo {} grpo {} delta {}",
            fmt(&block["spo"]),
            fmt(&block["grpo"]),
            fmt(&block["delta"])
        )
        .unwrap();
    }
    s
}
