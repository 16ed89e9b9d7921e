//! Few-shot prompt rendering and prompt/source segmentation.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{LanguageModel, TokenId};
use crate::{Error, Result};

/// Token ids split into a prompt span `[0, s)`, a source span `[s, c)` and a
/// trailing prompt suffix `[c, len)` (e.g. the response header). Generation
/// continues after the last token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentedSequence {
    tokens: Vec<TokenId>,
    s: usize,
    c: usize,
}

impl SegmentedSequence {
    pub fn new(tokens: Vec<TokenId>, s: usize, c: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("token sequence"));
        }
        if !(s <= c && c <= tokens.len()) {
            return Err(Error::InvalidArgument(format!(
                "segment bounds s={s}, c={c} invalid for {} tokens",
                tokens.len()
            )));
        }
        Ok(Self { tokens, s, c })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn source_range(&self) -> Range<usize> {
        self.s..self.c
    }

    pub fn source(&self) -> &[TokenId] {
        &self.tokens[self.s..self.c]
    }

    /// Index at which generated tokens begin.
    pub fn generated_from(&self) -> usize {
        self.tokens.len()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Summarization,
    Dialogue,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Summarization => "summarization",
            Task::Dialogue => "dialogue",
        }
    }

    /// Default generation budget for the task.
    pub fn default_max_new_tokens(&self) -> usize {
        match self {
            Task::Summarization => 128,
            Task::Dialogue => 64,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A speaker-tagged dialogue turn, rendered as `"{speaker}: {text}"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskTemplate {
    pub name: Task,
    pub shots: Vec<String>,
    pub source_header: String,
    pub response_header: String,
    pub separator: String,
}

const SUMMARIZATION_TEMPLATE: &str = include_str!("../templates/summarization.json");
const DIALOGUE_TEMPLATE: &str = include_str!("../templates/dialogue.json");

impl TaskTemplate {
    /// The two-shot template shipped with the crate for `task`.
    pub fn builtin(task: Task) -> Self {
        let text = match task {
            Task::Summarization => SUMMARIZATION_TEMPLATE,
            Task::Dialogue => DIALOGUE_TEMPLATE,
        };
        serde_json::from_str(text).expect("builtin template is valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tpl: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        tpl.validate()?;
        Ok(tpl)
    }

    pub fn validate(&self) -> Result<()> {
        if self.source_header.trim().is_empty() || self.response_header.trim().is_empty() {
            return Err(Error::InvalidArgument("template headers must be non-empty".into()));
        }
        Ok(())
    }
}

/// Renders the prompt for one instance and returns it with the byte range of
/// the source content.
///
/// Layout: each shot followed by the separator, then the source header and
/// source, the separator, any dialogue history turns each followed by the
/// separator, and finally the response header.
pub fn render_prompt(tpl: &TaskTemplate, source: &str, history: &[Turn]) -> Result<(String, Range<usize>)> {
    tpl.validate()?;
    if source.trim().is_empty() {
        return Err(Error::EmptyInput("instance source"));
    }
    let mut text = String::new();
    for shot in &tpl.shots {
        text.push_str(shot);
        text.push_str(&tpl.separator);
    }
    text.push_str(&tpl.source_header);
    let start = text.len();
    text.push_str(source);
    let span = start..text.len();
    text.push_str(&tpl.separator);
    for turn in history {
        text.push_str(&turn.speaker);
        text.push_str(": ");
        text.push_str(&turn.text);
        text.push_str(&tpl.separator);
    }
    text.push_str(&tpl.response_header);
    Ok((text, span))
}

/// Tokenizes `text` and maps the byte range `span` onto the smallest token
/// range whose coverage contains it. Tokens partially overlapping the span
/// are included; spaces and tabs at the span edges are ignored.
pub fn segment(text: &str, span: Range<usize>, backend: &dyn LanguageModel) -> Result<SegmentedSequence> {
    if span.start > span.end
        || span.end > text.len()
        || !text.is_char_boundary(span.start)
        || !text.is_char_boundary(span.end)
    {
        return Err(Error::InvalidArgument(format!(
            "span {span:?} outside text of length {}",
            text.len()
        )));
    }
    // blanks at the edges belong to no particular token; line breaks may
    let blank = |ch: char| matches!(ch, ' ' | '\t' | '\r');
    let inner = &text[span.clone()];
    let trimmed = inner.trim_matches(blank);
    if trimmed.is_empty() {
        return Err(Error::EmptyInput("source span"));
    }
    let lead = inner.len() - inner.trim_start_matches(blank).len();
    let span = span.start + lead..span.start + lead + trimmed.len();
    let ids = backend.tokenize(text)?;
    if ids.is_empty() {
        return Err(Error::EmptyInput("tokenized text"));
    }
    let n = ids.len();
    // start(i): byte offset where token i's coverage begins; start(n) = len
    let (s, c) = match backend.token_starts(text, &ids)? {
        Some(starts) => {
            let start = |i: usize| if i == n { text.len() } else { starts[i] };
            bracket(n, span.clone(), |i| Ok(start(i)))?
        }
        None => bracket_by_retokenizing(text, span.clone(), &ids, backend)?,
    };
    if s >= c {
        return Err(Error::InvalidArgument(format!("span {span:?} maps to an empty token range")));
    }
    SegmentedSequence::new(ids, s, c)
}

/// Offsets for backends that only expose ids. A cut at byte `at` is clean
/// when the two halves tokenize to exactly `ids`; the boundary index is then
/// the length of the left half. Otherwise the cut splits a token, which is
/// placed inside the span: the left half is matched against the front of
/// `ids` (for `s`) or the right half against the back (for `c`), and the
/// match never covers the split piece.
fn bracket_by_retokenizing(
    text: &str,
    span: Range<usize>,
    ids: &[TokenId],
    backend: &dyn LanguageModel,
) -> Result<(usize, usize)> {
    let n = ids.len();
    let cut = |at: usize| -> Result<(Vec<TokenId>, Vec<TokenId>, bool)> {
        let head = backend.tokenize(&text[..at])?;
        let tail = backend.tokenize(&text[at..])?;
        let clean = head.len() + tail.len() == n && head.iter().chain(&tail).eq(ids);
        Ok((head, tail, clean))
    };

    let (head, _, clean) = cut(span.start)?;
    let s = if clean {
        head.len()
    } else {
        let common = head.iter().zip(ids).take_while(|(a, b)| a == b).count();
        common.min(head.len().saturating_sub(1))
    };

    let (_, tail, clean) = cut(span.end)?;
    let after = if clean {
        tail.len()
    } else {
        let common = tail.iter().rev().zip(ids.iter().rev()).take_while(|(a, b)| a == b).count();
        common.min(tail.len().saturating_sub(1))
    };
    let c = n - after.min(n - s);
    Ok((s, c))
}

/// s = first token whose coverage ends after `span.start`;
/// c = number of tokens whose coverage starts before `span.end`.
/// Both are found by binary search over the monotone `start` function.
fn bracket<F>(n: usize, span: Range<usize>, start: F) -> Result<(usize, usize)>
where
    F: Fn(usize) -> Result<usize>,
{
    let first_true = |pred: &dyn Fn(usize) -> Result<bool>| -> Result<usize> {
        let (mut lo, mut hi) = (0, n);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if pred(mid)? {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Ok(lo)
    };
    // end of token i is start(i + 1)
    let s = first_true(&|i| Ok(start(i + 1)? > span.start))?;
    let c = first_true(&|i| Ok(start(i)? >= span.end))?;
    Ok((s, c))
}
