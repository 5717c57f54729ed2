use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An utterance paired with its logical form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    /// 1-based line number in the source file, or the generator's sequence number.
    pub id: usize,
    pub task: String,
    /// Original token order.
    pub utterance: Vec<String>,
    pub logical_form: Vec<String>,
}

impl Example {
    pub fn new(id: usize, task: &str, utterance: &str, logical_form: &str) -> Self {
        Example {
            id,
            task: task.to_string(),
            utterance: utterance.split_whitespace().map(String::from).collect(),
            logical_form: logical_form.split_whitespace().map(String::from).collect(),
        }
    }

    pub fn to_line(&self) -> String {
        format!("{}\t{}", self.utterance.join(" "), self.logical_form.join(" "))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineIssue {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct LoadedCorpus {
    pub examples: Vec<Example>,
    pub issues: Vec<LineIssue>,
}

/// Parses `utterance TAB logical form` lines. Malformed lines are reported in
/// `issues` and skipped.
pub fn parse_corpus(text: &str, task: &str) -> LoadedCorpus {
    let mut out = LoadedCorpus::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let issue = |reason: &str| LineIssue {
            line: line_no,
            reason: reason.to_string(),
        };
        if line.trim().is_empty() {
            out.issues.push(issue("empty line"));
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(utt), Some(lf)) = (parts.next(), parts.next()) else {
            out.issues.push(issue("missing TAB separator"));
            continue;
        };
        if parts.next().is_some() {
            out.issues.push(issue("more than one TAB separator"));
            continue;
        }
        let ex = Example::new(line_no, task, utt, lf);
        if ex.utterance.is_empty() || ex.logical_form.is_empty() {
            out.issues.push(issue("empty utterance or logical form"));
            continue;
        }
        out.examples.push(ex);
    }
    out
}

pub fn load_corpus(path: &Path, task: &str) -> Result<LoadedCorpus> {
    let text = fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "corpus file is empty".into(),
        });
    }
    Ok(parse_corpus(&text, task))
}

pub fn save_corpus(path: &Path, examples: &[Example]) -> Result<()> {
    let mut s = String::new();
    for ex in examples {
        s.push_str(&ex.to_line());
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}
