use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Trial {
    pub target: bool,
    /// One utterance id, or several joined by `+` for multi-utterance enrollment.
    pub enroll: String,
    pub test: String,
}

impl Trial {
    pub fn enroll_ids(&self) -> impl Iterator<Item = &str> {
        self.enroll.split('+')
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
}

impl TrialSet {
    /// Lines of `label enroll_id test_id` with label `1` (target) or `0`.
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut trials = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: &str| Error::format(format!("{context}:{}", n + 1), msg.to_string());
            let [label, enroll, test] = fields[..] else {
                return Err(bad("expected `label enroll_id test_id`"));
            };
            let target = match label {
                "1" => true,
                "0" => false,
                _ => return Err(bad("label must be 1 or 0")),
            };
            if enroll.split('+').any(str::is_empty) {
                return Err(bad("empty enrollment id"));
            }
            trials.push(Trial {
                target,
                enroll: enroll.to_string(),
                test: test.to_string(),
            });
        }
        Ok(TrialSet { trials })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.trials {
            writeln!(s, "{} {} {}", u8::from(t.target), t.enroll, t.test).unwrap();
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Every utterance id referenced, in first-seen order.
    pub fn utterance_ids(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for t in &self.trials {
            for id in t.enroll_ids().chain(std::iter::once(t.test.as_str())) {
                if seen.insert(id) {
                    out.push(id.to_string());
                }
            }
        }
        out
    }
}

/// `enroll_id test_id score` lines, six decimals.
pub fn format_scores(trials: &TrialSet, scores: &[f64]) -> Result<String> {
    if trials.len() != scores.len() {
        return Err(Error::ShapeMismatch {
            op: "format_scores",
            left: vec![trials.len()],
            right: vec![scores.len()],
        });
    }
    let mut s = String::new();
    for (t, score) in trials.trials.iter().zip(scores) {
        writeln!(s, "{} {} {score:.6}", t.enroll, t.test).unwrap();
    }
    Ok(s)
}
