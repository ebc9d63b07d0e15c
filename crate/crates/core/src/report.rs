//! JSON-lines run reports and their aggregation.
//!
//! One line per session, then a footer line. Accuracies and PPDR are written
//! rounded to one decimal.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Method, RunResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionLine {
    pub session: usize,
    pub seen_classes: usize,
    pub top1: f64,
    pub cumulative_test_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFooter {
    pub method: Method,
    pub seed: u64,
    pub ppdr: f64,
    pub final_top1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Line {
    Session(SessionLine),
    Footer(RunFooter),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub sessions: Vec<SessionLine>,
    pub footer: RunFooter,
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

impl RunRecord {
    pub fn from_result(result: &RunResult, dataset: Option<&str>) -> Self {
        Self {
            sessions: result
                .sessions
                .iter()
                .map(|s| SessionLine {
                    session: s.session,
                    seen_classes: s.seen_classes,
                    top1: round1(s.top1),
                    cumulative_test_size: s.cumulative_test_size,
                })
                .collect(),
            footer: RunFooter {
                method: result.method,
                seed: result.seed,
                ppdr: round1(result.ppdr),
                final_top1: round1(result.final_accuracy()),
                dataset: dataset.map(str::to_owned),
            },
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.sessions {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut w, &self.footer)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut sessions = Vec::new();
        let mut footer = None;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if footer.is_some() {
                return Err(Error::Corrupt(format!("line {} follows the footer", n + 1)));
            }
            match serde_json::from_str::<Line>(&line) {
                Ok(Line::Session(s)) => sessions.push(s),
                Ok(Line::Footer(f)) => footer = Some(f),
                Err(_) => {
                    return Err(Error::Corrupt(format!(
                        "line {} is neither a session line nor a footer",
                        n + 1
                    )))
                }
            }
        }
        let footer = footer.ok_or_else(|| Error::Corrupt("missing footer line".into()))?;
        if sessions.is_empty() {
            return Err(Error::Corrupt("no session lines".into()));
        }
        Ok(Self { sessions, footer })
    }

    pub fn dataset(&self) -> &str {
        self.footer.dataset.as_deref().unwrap_or("-")
    }
}

/// Seed-averaged summary of one (dataset, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub method: Method,
    pub runs: usize,
    pub final_top1: f64,
    pub ppdr: f64,
    /// Mean accuracy per session; sessions missing from some runs average
    /// over the runs that have them.
    pub per_session: Vec<f64>,
}

pub fn summarize(runs: &[RunRecord]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(String, Method), Vec<&RunRecord>> = BTreeMap::new();
    for r in runs {
        cells
            .entry((r.dataset().to_owned(), r.footer.method))
            .or_default()
            .push(r);
    }
    cells
        .into_iter()
        .map(|((dataset, method), rs)| {
            let n = rs.len() as f64;
            let longest = rs.iter().map(|r| r.sessions.len()).max().unwrap_or(0);
            let per_session = (0..longest)
                .map(|i| {
                    let vals: Vec<f64> = rs
                        .iter()
                        .filter_map(|r| r.sessions.get(i).map(|s| s.top1))
                        .collect();
                    vals.iter().sum::<f64>() / vals.len() as f64
                })
                .collect();
            SummaryRow {
                dataset,
                method,
                runs: rs.len(),
                final_top1: rs.iter().map(|r| r.footer.final_top1).sum::<f64>() / n,
                ppdr: rs.iter().map(|r| r.footer.ppdr).sum::<f64>() / n,
                per_session,
            }
        })
        .collect()
}

/// Per method: mean over datasets of `final_top1(method) - final_top1(na)`,
/// using only datasets that have an NA row.
pub fn average_gain_over_na(rows: &[SummaryRow]) -> BTreeMap<Method, f64> {
    let na: BTreeMap<&str, f64> = rows
        .iter()
        .filter(|r| r.method == Method::Na)
        .map(|r| (r.dataset.as_str(), r.final_top1))
        .collect();
    let mut sums: BTreeMap<Method, (f64, usize)> = BTreeMap::new();
    for r in rows {
        if let Some(base) = na.get(r.dataset.as_str()) {
            let e = sums.entry(r.method).or_default();
            e.0 += r.final_top1 - base;
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(m, (s, n))| (m, s / n as f64))
        .collect()
}
