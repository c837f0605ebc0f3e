use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Shared-weight training on sampled children.
    Child,
    /// Policy-gradient updates of the controller.
    Controller,
    /// Training a fixed architecture from scratch.
    Retrain,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Child => "child",
            Phase::Controller => "controller",
            Phase::Retrain => "retrain",
        }
    }
}

/// One line of the metrics CSV. Fields a phase does not produce are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub latency: Option<f64>,
    pub reward: Option<f64>,
    pub lr: f64,
    pub clamp_count: usize,
}

pub const CSV_HEADER: &str = "epoch,phase,loss,val_acc,latency,reward,lr,clamp_count";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.phase.name(),
            cell(self.loss),
            cell(self.val_acc),
            cell(self.latency),
            cell(self.reward),
            self.lr,
            self.clamp_count
        )
    }
}

/// Header plus one line per row, newline-terminated.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{}", r.csv_line()).unwrap();
    }
    out
}

fn parse_cell(field: &str, line: usize, raw: &str) -> crate::Result<Option<f64>> {
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|_| crate::Error::Data(format!("metrics line {line}: bad {field} `{raw}`")))
}

/// Inverse of [`metrics_csv`].
pub fn parse_metrics_csv(text: &str) -> crate::Result<Vec<MetricsRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(crate::Error::Data("metrics file lacks the expected header".into())),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(crate::Error::Data(format!("metrics line {line}: expected 8 fields")));
            }
            let int = |name: &str, raw: &str| {
                raw.parse::<usize>()
                    .map_err(|_| crate::Error::Data(format!("metrics line {line}: bad {name} `{raw}`")))
            };
            let phase = match f[1] {
                "child" => Phase::Child,
                "controller" => Phase::Controller,
                "retrain" => Phase::Retrain,
                other => return Err(crate::Error::Data(format!("metrics line {line}: unknown phase `{other}`"))),
            };
            Ok(MetricsRow {
                epoch: int("epoch", f[0])?,
                phase,
                loss: parse_cell("loss", line, f[2])?,
                val_acc: parse_cell("val_acc", line, f[3])?,
                latency: parse_cell("latency", line, f[4])?,
                reward: parse_cell("reward", line, f[5])?,
                lr: parse_cell("lr", line, f[6])?
                    .ok_or_else(|| crate::Error::Data(format!("metrics line {line}: missing lr")))?,
                clamp_count: int("clamp_count", f[7])?,
            })
        })
        .collect()
}

/// One sampled architecture evaluated during a controller step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Position in the whole search's sample history.
    pub index: usize,
    pub epoch: usize,
    pub step: usize,
    pub arch: String,
    pub accuracy: f64,
    pub latency: f64,
    pub reward: f64,
    pub clamped: bool,
    pub log_prob: f64,
}

/// JSON lines, one record per line.
pub fn traces_jsonl(records: &[SampleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    out
}

pub fn parse_traces_jsonl(text: &str) -> crate::Result<Vec<SampleRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}
