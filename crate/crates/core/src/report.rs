//! Text and CSV renderings of audit and experiment output directories.

use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::sim::experiment::{parse_results_jsonl, summarize, summary_csv, ScenarioSummary};

#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub text: String,
    pub csv: String,
}

/// Render whatever `dir` holds: experiment results (`results.jsonl`) or a
/// single audit (`report.json` and `draws.jsonl`).
pub fn render_dir(dir: &Path) -> Result<Rendered> {
    if !dir.is_dir() {
        return Err(Error::Precondition(format!("{} is not a directory", dir.display())));
    }
    let results = dir.join("results.jsonl");
    let report = dir.join("report.json");
    if results.exists() {
        render_experiment(dir)
    } else if report.exists() {
        render_audit(dir)
    } else {
        Err(Error::Precondition(format!(
            "no results.jsonl or report.json in {}",
            dir.display()
        )))
    }
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ");
        s.truncate(s.trim_end().len());
        s.push('\n');
        s
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

/// Recompute the summary from `results.jsonl` and check it against
/// `summary.json` when that file is present.
pub fn render_experiment(dir: &Path) -> Result<Rendered> {
    let path = dir.join("results.jsonl");
    let records = parse_results_jsonl(&crate::io::read_text(&path)?, &path.display().to_string())?;
    if records.is_empty() {
        return Err(Error::Precondition(format!("{} has no records", path.display())));
    }
    let summary = summarize(&records);
    let stored = dir.join("summary.json");
    if stored.exists() {
        let on_disk: Vec<ScenarioSummary> =
            crate::io::parse_json(&crate::io::read_text(&stored)?, &stored.display().to_string())?;
        if on_disk != summary {
            return Err(Error::Precondition(format!(
                "{} disagrees with the summary recomputed from results.jsonl",
                stored.display()
            )));
        }
    }
    let rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            vec![
                s.scenario.clone(),
                s.reps.to_string(),
                if s.reported_outcome_correct { "yes" } else { "no" }.into(),
                format!("{:.4}", s.confirmation_rate),
                format!("{:.4}", s.full_count_rate),
                format!("{:.1}", s.mean_draws),
                s.p50_draws.to_string(),
                s.p90_draws.to_string(),
                s.p99_draws.to_string(),
                s.max_draws.to_string(),
            ]
        })
        .collect();
    let text = table(
        &["scenario", "reps", "correct", "confirmed", "full_count", "mean", "p50", "p90", "p99", "max"],
        &rows,
    );
    Ok(Rendered {
        text,
        csv: summary_csv(&summary),
    })
}

#[derive(Deserialize)]
struct LoggedStep {
    label: String,
    risk: f64,
}

#[derive(Deserialize)]
struct LoggedDraw {
    draw: u64,
    assertions: Vec<LoggedStep>,
}

fn show(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Draw numbers at which the trajectory is sampled: 1, 2, 5, 10, 20, 50, ...
fn checkpoints(last: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut scale = 1;
    'outer: loop {
        for m in [1, 2, 5] {
            let d = m * scale;
            if d >= last {
                break 'outer;
            }
            out.push(d);
        }
        scale *= 10;
    }
    out.push(last);
    out
}

pub fn render_audit(dir: &Path) -> Result<Rendered> {
    let path = dir.join("report.json");
    let report: Value = crate::io::parse_json(&crate::io::read_text(&path)?, &path.display().to_string())?;
    let mut text = format!(
        "verdict: {}{}\ntotal draws: {}\n\n",
        show(&report["verdict"]),
        report.get("reason").map(|r| format!(" ({})", show(r))).unwrap_or_default(),
        show(&report["total_draws"]),
    );
    let mut rows = Vec::new();
    let mut csv = csv::Writer::from_writer(Vec::new());
    let header = ["contest", "assertion", "margin", "risk", "draws", "confirmed_at_draw"];
    csv.write_record(header).expect("in-memory csv write");
    for contest in report["contests"].as_array().into_iter().flatten() {
        for a in contest["assertions"].as_array().into_iter().flatten() {
            let row = vec![
                show(&contest["contest_id"]),
                show(&a["label"]),
                show(&a["margin"]),
                show(&a["risk"]),
                show(&a["draws"]),
                show(&a["confirmed_at_draw"]),
            ];
            csv.write_record(&row).expect("in-memory csv write");
            rows.push(row);
        }
    }
    text.push_str(&table(&header, &rows));

    let draws_path = dir.join("draws.jsonl");
    if draws_path.exists() {
        let mut latest: Vec<(String, Vec<(u64, f64)>)> = Vec::new();
        for (i, line) in crate::io::read_text(&draws_path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let d: LoggedDraw = serde_json::from_str(line)
                .map_err(|e| Error::parse(format!("{} line {}", draws_path.display(), i + 1), e))?;
            for s in d.assertions {
                match latest.iter_mut().find(|(l, _)| *l == s.label) {
                    Some((_, t)) => t.push((d.draw, s.risk)),
                    None => latest.push((s.label, vec![(d.draw, s.risk)])),
                }
            }
        }
        for (label, traj) in &latest {
            let last = traj.last().map_or(0, |p| p.0);
            let rows: Vec<Vec<String>> = checkpoints(last)
                .into_iter()
                .filter_map(|c| {
                    let (d, r) = traj.iter().rev().find(|(d, _)| *d <= c)?;
                    Some(vec![c.to_string(), d.to_string(), format!("{r:.6}")])
                })
                .collect();
            text.push_str(&format!("\nrisk trajectory: {label}\n"));
            text.push_str(&table(&["at_draw", "last_update", "risk"], &rows));
        }
    }
    let csv = String::from_utf8(csv.into_inner().expect("in-memory csv flush")).expect("csv is utf-8");
    Ok(Rendered { text, csv })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_sequence() {
        assert_eq!(checkpoints(1), vec![1]);
        assert_eq!(checkpoints(290), vec![1, 2, 5, 10, 20, 50, 100, 200, 290]);
        assert_eq!(checkpoints(100), vec![1, 2, 5, 10, 20, 50, 100]);
    }

    #[test]
    fn aligned_table() {
        let t = table(&["a", "bb"], &[vec!["xyz".into(), "1".into()]]);
        assert_eq!(t, "a    bb\n---  --\nxyz  1\n");
    }

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(render_dir(dir.path()), Err(Error::Precondition(_))));
        assert!(render_dir(&dir.path().join("missing")).is_err());
    }
}
