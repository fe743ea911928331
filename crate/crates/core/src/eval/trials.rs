//! Trial lists (`label enroll test`) and score files.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRecord {
    pub target: bool,
    pub enroll: String,
    pub test: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub trial: TrialRecord,
    pub score: f64,
}

pub fn parse_trials_str(text: &str, path: &Path) -> Result<Vec<TrialRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [label, enroll, test] = fields[..] else {
            return Err(bad(format!("expected `label enroll test`, found {} fields", fields.len())));
        };
        let target = match label {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("label must be 1 or 0, found {other:?}"))),
        };
        out.push(TrialRecord {
            target,
            enroll: enroll.to_string(),
            test: test.to_string(),
        });
    }
    Ok(out)
}

pub fn parse_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trials_str(&text, path)
}

pub fn format_scores(scores: &[ScoreRecord]) -> String {
    scores
        .iter()
        .map(|s| format!("{} {} {:.6}\n", s.trial.enroll, s.trial.test, s.score))
        .collect()
}
