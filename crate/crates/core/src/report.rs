//! Report generation: collects every `aggregate.json` under a results
//! directory and renders a methods-as-columns table, one row per task, with
//! the best mean per row bolded.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::AggregateRecord;

/// Recursively gathers `(path, record)` pairs for every `aggregate.json`.
pub fn collect_aggregates(dir: &Path) -> Result<Vec<(PathBuf, AggregateRecord)>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in std::fs::read_dir(&current)? {
            let entry = entry?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "aggregate.json") {
                let record: AggregateRecord =
                    serde_json::from_str(&std::fs::read_to_string(&path)?).map_err(|e| {
                        Error::Format(format!("{}: {e}", path.display()))
                    })?;
                found.push((path, record));
            }
        }
    }
    if found.is_empty() {
        return Err(Error::InvalidData(format!(
            "no aggregate.json files under {}",
            dir.display()
        )));
    }
    found.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(found)
}

type Grid = BTreeMap<String, BTreeMap<String, AggregateRecord>>;

fn grid_of(records: &[AggregateRecord]) -> (Grid, BTreeSet<String>) {
    let mut grid: Grid = BTreeMap::new();
    let mut methods = BTreeSet::new();
    for r in records {
        methods.insert(r.method.clone());
        // sweeps produce several cells per (task, method); keep the best one
        let cell = grid.entry(r.task.clone()).or_default();
        match cell.get(&r.method) {
            Some(existing) if existing.mean <= r.mean => {}
            _ => {
                cell.insert(r.method.clone(), r.clone());
            }
        }
    }
    (grid, methods)
}

fn cell_text(record: &AggregateRecord, best: bool) -> String {
    let body = match record.std {
        Some(std) => format!("{:.2} (±{:.2})", record.mean, std),
        None => format!("{:.2} (±?)", record.mean),
    };
    if best {
        format!("**{body}**")
    } else {
        body
    }
}

/// Markdown table: tasks as rows, methods as columns, the lowest mean per
/// row bolded. Rows with a missing standard deviation are flagged, not
/// dropped.
pub fn render_markdown(records: &[AggregateRecord]) -> String {
    let (grid, methods) = grid_of(records);
    let mut out = String::from("# Results\n\nLower is better; best per row in bold.\n\n");
    out.push_str("| task |");
    for m in &methods {
        out.push_str(&format!(" {m} |"));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in &methods {
        out.push_str("---|");
    }
    out.push('\n');

    let mut flagged = Vec::new();
    for (task, row) in &grid {
        let best = row
            .values()
            .map(|r| r.mean)
            .fold(f64::INFINITY, f64::min);
        let missing_std = row.values().any(|r| r.std.is_none());
        if missing_std {
            flagged.push(task.clone());
        }
        let marker = if missing_std { " ⚠" } else { "" };
        out.push_str(&format!("| {task}{marker} |"));
        for m in &methods {
            match row.get(m) {
                Some(r) => out.push_str(&format!(" {} |", cell_text(r, r.mean == best))),
                None => out.push_str(" — |"),
            }
        }
        out.push('\n');
    }
    if !flagged.is_empty() {
        out.push_str("\n⚠ rows contain entries without a recorded standard deviation.\n");
    }
    out
}

/// Long-form CSV: `task,method,mean,std,runs`, sorted by task then method.
/// A missing standard deviation leaves the field empty.
pub fn render_csv(records: &[AggregateRecord]) -> String {
    let (grid, _) = grid_of(records);
    let mut out = String::from("task,method,mean,std,runs\n");
    for (task, row) in &grid {
        for (method, r) in row {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                task,
                method,
                r.mean,
                r.std.map_or(String::new(), |s| s.to_string()),
                r.runs
            ));
        }
    }
    out
}

/// Collects, renders, and writes `report.md` and `report.csv` into `out`.
pub fn write_report(results_dir: &Path, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let records: Vec<AggregateRecord> = collect_aggregates(results_dir)?
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    std::fs::create_dir_all(out)?;
    let md_path = out.join("report.md");
    let csv_path = out.join("report.csv");
    crate::experiment::atomic_write(&md_path, render_markdown(&records).as_bytes())?;
    crate::experiment::atomic_write(&csv_path, render_csv(&records).as_bytes())?;
    Ok((md_path, csv_path))
}
