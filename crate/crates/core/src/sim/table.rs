//! Rendering of simulation summaries.
//!
//! CSV is long format (one row per summary). Markdown is wide: one row per
//! model and estimator, one column group per randomizer, in order of first
//! appearance.

use crate::error::{Error, Result};
use crate::sim::SimulationSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl TableFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(Error::config(format!("unknown table format '{other}'"))),
        }
    }
}

pub const COLUMNS: [&str; 7] = ["Model", "Estimator", "Randomizer", "Bias", "SD", "SE", "CP"];
const STATS: [&str; 4] = ["Bias", "SD", "SE", "CP"];

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn stats(s: &SimulationSummary) -> [String; 4] {
    [fmt2(s.bias), fmt2(s.sd), fmt2(s.se), fmt2(s.cp)]
}

pub fn emit_table(summaries: &[SimulationSummary], format: TableFormat) -> Result<String> {
    if summaries.is_empty() {
        return Err(Error::config("no summaries to render"));
    }
    match format {
        TableFormat::Csv => csv_table(summaries),
        TableFormat::Markdown => Ok(markdown_table(summaries)),
    }
}

fn csv_table(summaries: &[SimulationSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for s in summaries {
        let [b, sd, se, cp] = stats(s);
        w.write_record([s.model.to_string(), s.estimator.clone(), s.randomizer.clone(), b, sd, se, cp])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn first_appearance<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}

fn markdown_table(summaries: &[SimulationSummary]) -> String {
    let randomizers = first_appearance(summaries.iter().map(|s| s.randomizer.clone()));
    let rows = first_appearance(summaries.iter().map(|s| (s.model, s.estimator.clone())));
    let mut header = vec!["Model".to_string(), "Estimator".to_string()];
    let mut align = vec!["---".to_string(), "---".to_string()];
    for r in &randomizers {
        for st in STATS {
            header.push(format!("{r} {st}"));
            align.push("---:".to_string());
        }
    }
    let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
    let mut out = line(&header);
    out.push_str(&line(&align));
    for (model, est) in &rows {
        let mut cells = vec![model.to_string(), est.clone()];
        for r in &randomizers {
            match summaries.iter().find(|s| s.model == *model && &s.estimator == est && &s.randomizer == r) {
                Some(s) => cells.extend(stats(s)),
                None => cells.extend(std::iter::repeat_n(String::new(), STATS.len())),
            }
        }
        out.push_str(&line(&cells));
    }
    out
}
