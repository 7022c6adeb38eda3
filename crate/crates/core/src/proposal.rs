//! Prompt assembly and parsing of free-form proposer output into a label list.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Prompt pair shipped with the crate. Task text, a `---` line, then the addendum.
pub const DEFAULT_PROMPT_ASSET: &str = include_str!("../assets/default_prompt.txt");

/// Characters stripped from both ends of a label.
const EDGE_PUNCT: &[char] = &[
    '.', ',', ';', ':', '!', '?', '-', '–', '—', '"', '\'', '*', '•', '`', '“', '”', '‘', '’',
];

/// Fragment separators, applied after list markers are removed from each line.
const LINE_SEPARATORS: &[char] = &['\n', '\r', ',', ';'];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProposalError {
    #[error("task prompt is empty")]
    EmptyPrompt,
    #[error("label is empty after normalization")]
    EmptyLabel,
    #[error("proposal contains no usable labels")]
    EmptyProposal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPrompt {
    task: String,
    #[serde(default)]
    addendum: String,
}

impl TaskPrompt {
    pub fn new(
        task: impl Into<String>,
        addendum: impl Into<String>,
    ) -> Result<Self, ProposalError> {
        let task = task.into();
        if task.trim().is_empty() {
            return Err(ProposalError::EmptyPrompt);
        }
        Ok(Self {
            task,
            addendum: addendum.into(),
        })
    }

    /// Parses the prompt file format: task text, optionally followed by a line
    /// holding only `---` and the addendum.
    pub fn parse_file(text: &str) -> Result<Self, ProposalError> {
        let mut task = Vec::new();
        let mut addendum = Vec::new();
        let mut in_addendum = false;
        for line in text.lines() {
            if !in_addendum && line.trim() == "---" {
                in_addendum = true;
            } else if in_addendum {
                addendum.push(line);
            } else {
                task.push(line);
            }
        }
        Self::new(task.join("\n").trim(), addendum.join("\n").trim())
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn addendum(&self) -> &str {
        &self.addendum
    }

    pub fn validate(&self) -> Result<(), ProposalError> {
        if self.task.trim().is_empty() {
            Err(ProposalError::EmptyPrompt)
        } else {
            Ok(())
        }
    }
}

impl Default for TaskPrompt {
    fn default() -> Self {
        Self::parse_file(DEFAULT_PROMPT_ASSET).expect("bundled prompt asset is well formed")
    }
}

/// Renders the text sent to the proposer: task, then the addendum on a new line.
pub fn build_prompt(prompt: &TaskPrompt) -> Result<String, ProposalError> {
    prompt.validate()?;
    if prompt.addendum.is_empty() {
        Ok(prompt.task.clone())
    } else {
        Ok(format!("{}\n{}", prompt.task, prompt.addendum))
    }
}

/// Hex SHA-256 of a rendered prompt. Keys proposer fixtures.
pub fn prompt_digest(rendered: &str) -> String {
    Sha256::digest(rendered.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Verbatim proposer output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawProposal {
    pub text: String,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationLevel {
    /// Case, whitespace, punctuation and list markers only.
    #[default]
    Conservative,
    /// Additionally folds a plural head noun to its naive singular.
    FoldPlurals,
}

/// Removes one leading list marker such as `1.` or `2)`. The marker must be
/// followed by whitespace or end the string.
fn strip_list_marker(s: &str) -> &str {
    let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return s;
    }
    let rest = &s[digits..];
    let Some(after) = rest.strip_prefix(['.', ')']) else {
        return s;
    };
    if after.is_empty() || after.starts_with(char::is_whitespace) {
        after.trim_start()
    } else {
        s
    }
}

fn trim_edges(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || EDGE_PUNCT.contains(&c))
}

pub fn normalize_label(s: &str) -> Result<String, ProposalError> {
    normalize_label_with(s, NormalizationLevel::Conservative)
}

pub fn normalize_label_with(s: &str, level: NormalizationLevel) -> Result<String, ProposalError> {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut cur = collapsed.as_str();
    loop {
        let next = trim_edges(strip_list_marker(cur));
        if next.len() == cur.len() {
            break;
        }
        cur = next;
    }
    if cur.is_empty() {
        return Err(ProposalError::EmptyLabel);
    }
    let lowered = cur.to_lowercase();
    Ok(match level {
        NormalizationLevel::Conservative => lowered,
        NormalizationLevel::FoldPlurals => fold_plural_head(&lowered),
    })
}

/// Naive singularization of the last word. Idempotent: every output form is
/// left alone by a second application.
fn fold_plural_head(label: &str) -> String {
    let (prefix, word) = match label.rfind(' ') {
        Some(i) => label.split_at(i + 1),
        None => ("", label),
    };
    let n = word.chars().count();
    let folded = if n > 4 && word.ends_with("ies") {
        format!("{}y", &word[..word.len() - 3])
    } else if n > 3
        && word.ends_with("es")
        && ["ss", "x", "ch", "sh"]
            .iter()
            .any(|s| word[..word.len() - 2].ends_with(s))
    {
        word[..word.len() - 2].to_string()
    } else if n > 3 && word.ends_with('s') && !["ss", "us", "is"].iter().any(|s| word.ends_with(s))
    {
        word[..word.len() - 1].to_string()
    } else {
        word.to_string()
    };
    format!("{prefix}{folded}")
}

/// Normalized, deduplicated labels in first-occurrence order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ProposalList {
    labels: Vec<String>,
}

impl ProposalList {
    pub fn from_labels<I, S>(labels: I, level: NormalizationLevel) -> Result<Self, ProposalError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for raw in labels {
            if let Ok(label) = normalize_label_with(raw.as_ref(), level) {
                if !out.contains(&label) {
                    out.push(label);
                }
            }
        }
        if out.is_empty() {
            return Err(ProposalError::EmptyProposal);
        }
        Ok(Self { labels: out })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    /// Comma-joined form; parses back to the same list.
    pub fn render(&self) -> String {
        self.labels.join(", ")
    }
}

impl TryFrom<Vec<String>> for ProposalList {
    type Error = ProposalError;

    fn try_from(labels: Vec<String>) -> Result<Self, Self::Error> {
        Self::from_labels(labels, NormalizationLevel::Conservative)
    }
}

impl From<ProposalList> for Vec<String> {
    fn from(list: ProposalList) -> Self {
        list.labels
    }
}

/// Splits raw proposer text into fragments on newlines, commas, semicolons and
/// periods. List markers are removed per line first so `1. belt` survives the
/// period split.
fn fragments(text: &str) -> impl Iterator<Item = &str> {
    text.split(LINE_SEPARATORS).flat_map(|piece| {
        let mut cur = piece.trim();
        loop {
            let next =
                strip_list_marker(cur.trim_start_matches(|c: char| {
                    c.is_whitespace() || matches!(c, '-' | '*' | '•')
                }));
            if next.len() == cur.len() {
                break;
            }
            cur = next;
        }
        cur.split('.')
    })
}

pub fn parse_proposal(raw: &RawProposal) -> Result<ProposalList, ProposalError> {
    parse_proposal_with(raw, NormalizationLevel::Conservative)
}

pub fn parse_proposal_with(
    raw: &RawProposal,
    level: NormalizationLevel,
) -> Result<ProposalList, ProposalError> {
    ProposalList::from_labels(fragments(&raw.text), level)
}
