//! Mapping free-form model output back onto the answer set.

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AnswerSet;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseRule {
    /// The trimmed response is an answer, or exactly one answer occurs in it
    /// as a whole word (case-insensitive).
    ExactMatch,
    /// The first capture group of `pattern` names the answer.
    Regex { pattern: String },
    /// The last non-empty line, with `prefix` (e.g. `Answer:`) stripped.
    LastLine { prefix: String },
}

#[derive(Clone, Debug)]
pub struct AnswerParser {
    rule: ParseRule,
    regex: Option<Regex>,
}

impl AnswerParser {
    pub fn new(rule: ParseRule) -> Result<Self> {
        let regex = match &rule {
            ParseRule::Regex { pattern } => {
                let re = Regex::new(pattern).map_err(|e| Error::InvalidParams(format!("answer regex: {e}")))?;
                if re.captures_len() < 2 {
                    return Err(Error::InvalidParams("answer regex needs a capture group".into()));
                }
                Some(re)
            }
            _ => None,
        };
        Ok(AnswerParser { rule, regex })
    }

    pub fn rule(&self) -> &ParseRule {
        &self.rule
    }

    /// Index of the parsed answer, or `None` when the response is unformatted.
    pub fn parse(&self, raw: &str, answers: &AnswerSet) -> Option<usize> {
        let text = raw.trim();
        match &self.rule {
            ParseRule::ExactMatch => match_candidate(text, answers).or_else(|| unique_word_match(text, answers)),
            ParseRule::Regex { .. } => {
                let caps = self.regex.as_ref()?.captures(text)?;
                match_candidate(caps.get(1)?.as_str(), answers)
            }
            ParseRule::LastLine { prefix } => {
                let line = text.lines().rev().map(str::trim).find(|l| !l.is_empty())?;
                let body = strip_prefix_ci(line, prefix).unwrap_or(line);
                match_candidate(body, answers)
            }
        }
    }
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

fn match_candidate(candidate: &str, answers: &AnswerSet) -> Option<usize> {
    let c = candidate.trim();
    if let Some(i) = answers.index_of(c) {
        return Some(i);
    }
    let c = c.trim_matches(|ch: char| ch.is_ascii_punctuation() || ch.is_whitespace());
    answers.labels().position(|l| l.eq_ignore_ascii_case(c))
}

fn unique_word_match(text: &str, answers: &AnswerSet) -> Option<usize> {
    let mut found = None;
    for (i, label) in answers.labels().enumerate() {
        let re = Regex::new(&format!(r"(?i)(^|\W){}($|\W)", regex::escape(label))).ok()?;
        if re.is_match(text) {
            if found.is_some() {
                return None;
            }
            found = Some(i);
        }
    }
    found
}
