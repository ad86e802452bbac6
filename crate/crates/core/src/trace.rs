//! Parsing raw model outputs into ordered reasoning steps, and streaming
//! line-delimited JSON corpora from disk.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

/// What to return when the text carries no opening think tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThinkMode {
    /// Treat the whole text as reasoning.
    #[default]
    WholeText,
    /// Treat the text as having no reasoning at all.
    Empty,
}

/// One record of an input corpus.
///
/// `steps` bypasses extraction and segmentation when present; `embeddings`,
/// when present, must align 1:1 with `steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, serde_json::Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<Vec<Vec<f64>>>,
}

impl RawResponse {
    pub fn from_text(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: Some(text.into()),
            meta: None,
            steps: None,
            embeddings: None,
        }
    }

    pub fn from_steps(id: impl Into<String>, steps: Vec<String>) -> Self {
        Self {
            id: id.into(),
            text: None,
            meta: None,
            steps: Some(steps),
            embeddings: None,
        }
    }

    /// Checks the record shape: non-empty id, a text or steps source, and
    /// embeddings aligned with steps.
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.id.is_empty() {
            return Err(RecordError::MissingField("id"));
        }
        match (&self.text, &self.steps, &self.embeddings) {
            (None, None, _) => Err(RecordError::MissingField("text")),
            (_, None, Some(_)) => Err(RecordError::EmbeddingsWithoutSteps),
            (_, Some(steps), Some(emb)) if steps.len() != emb.len() => {
                Err(RecordError::Misaligned {
                    steps: steps.len(),
                    embeddings: emb.len(),
                })
            }
            _ => Ok(()),
        }
    }
}

/// A parsed response: the ordered reasoning steps of its think block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub id: String,
    pub steps: Vec<String>,
    /// Byte range of the extracted think content within the source text.
    /// `None` when the steps were supplied directly.
    pub source_span: Option<Range<usize>>,
}

impl ReasoningTrace {
    pub fn parse(id: impl Into<String>, text: &str, mode: ThinkMode) -> Self {
        let span = think_span(text, mode);
        let steps = segment_steps(&text[span.clone()]);
        Self {
            id: id.into(),
            steps,
            source_span: Some(span),
        }
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }
}

/// Byte range of the think content inside `text`.
///
/// Only the first think block is considered. An unterminated block runs to
/// end-of-text; a missing opening tag falls back to `mode`.
pub fn think_span(text: &str, mode: ThinkMode) -> Range<usize> {
    match text.find(THINK_OPEN) {
        Some(open) => {
            let start = open + THINK_OPEN.len();
            let end = text[start..]
                .find(THINK_CLOSE)
                .map_or(text.len(), |close| start + close);
            start..end
        }
        None => match mode {
            ThinkMode::WholeText => 0..text.len(),
            ThinkMode::Empty => 0..0,
        },
    }
}

/// Returns the content of the first think block of `text`.
pub fn extract_think(text: &str, mode: ThinkMode) -> &str {
    &text[think_span(text, mode)]
}

/// Splits think content into steps at newline boundaries. Lines are trimmed
/// and blank lines dropped; order is preserved.
pub fn segment_steps(think_content: &str) -> Vec<String> {
    think_content
        .lines()
        .map(str::trim)
        .filter(|line| !line.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("`embeddings` given without `steps`")]
    EmbeddingsWithoutSteps,
    #[error("{embeddings} embeddings do not align with {steps} steps")]
    Misaligned { steps: usize, embeddings: usize },
}

/// A record-level failure, tagged with its 1-based line number.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {source}")]
pub struct LineError {
    pub line: usize,
    /// The record id, when the line parsed far enough to carry one.
    pub id: Option<String>,
    #[source]
    pub source: RecordError,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open corpus {path}: {source}")]
    Open {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Record(#[from] LineError),
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
}

/// One item yielded by [`CorpusReader`]: the line number and either a record
/// or the reason the line was rejected.
pub type CorpusItem = (usize, Result<RawResponse, LineError>);

/// Streams records from a line-delimited JSON corpus in file order.
///
/// In lenient mode a malformed line yields a [`LineError`] and reading
/// continues. Strict mode turns record errors and duplicate ids into a
/// fatal [`CorpusError`] and stops.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    strict: bool,
    seen: HashSet<String>,
    done: bool,
}

impl CorpusReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, strict: bool) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| CorpusError::Open {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::new(BufReader::new(file), strict))
    }
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R, strict: bool) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            strict,
            seen: HashSet::new(),
            done: false,
        }
    }

    fn parse_line(line: &str, line_no: usize) -> Result<RawResponse, LineError> {
        let fail = |id: Option<String>, source| LineError {
            line: line_no,
            id,
            source,
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| fail(None, RecordError::Json(e.to_string())))?;
        let id = value.get("id").and_then(|v| v.as_str()).map(str::to_owned);
        let record: RawResponse = serde_json::from_value(value).map_err(|e| {
            let err = if id.is_none() {
                RecordError::MissingField("id")
            } else {
                RecordError::Json(e.to_string())
            };
            fail(id.clone(), err)
        })?;
        record.validate().map_err(|e| fail(id, e))?;
        Ok(record)
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<CorpusItem, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = Self::parse_line(&line, self.line_no);
            if self.strict {
                let record = match parsed {
                    Ok(r) => r,
                    Err(e) => {
                        self.done = true;
                        return Some(Err(e.into()));
                    }
                };
                if !self.seen.insert(record.id.clone()) {
                    self.done = true;
                    return Some(Err(CorpusError::DuplicateId {
                        line: self.line_no,
                        id: record.id,
                    }));
                }
                return Some(Ok((self.line_no, Ok(record))));
            }
            return Some(Ok((self.line_no, parsed)));
        }
    }
}

/// Reads a whole corpus into memory. Fails only on I/O errors or, in strict
/// mode, on the first bad record.
pub fn read_corpus(path: impl AsRef<Path>, strict: bool) -> Result<Vec<CorpusItem>, CorpusError> {
    CorpusReader::open(path, strict)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extracts_tagged_block() {
        assert_eq!(
            extract_think("<think>a\nb</think>final", ThinkMode::WholeText),
            "a\nb"
        );
    }

    #[test]
    fn unterminated_block_runs_to_end() {
        assert_eq!(extract_think("<think>a\nb", ThinkMode::WholeText), "a\nb");
    }

    #[test]
    fn tagless_text_follows_mode() {
        assert_eq!(
            extract_think("no tags here", ThinkMode::WholeText),
            "no tags here"
        );
        assert_eq!(extract_think("no tags here", ThinkMode::Empty), "");
    }

    #[test]
    fn only_first_block_is_used() {
        let text = "pre<think>one</think>mid<think>two</think>";
        assert_eq!(extract_think(text, ThinkMode::WholeText), "one");
    }

    #[test]
    fn segmentation_examples() {
        assert_eq!(segment_steps("a\n\n  b  \nc"), vec!["a", "b", "c"]);
        assert!(segment_steps("").is_empty());
        assert_eq!(segment_steps("single line"), vec!["single line"]);
        assert_eq!(segment_steps("x\r\ny\r\n"), vec!["x", "y"]);
    }

    #[test]
    fn parse_records_span() {
        let text = "<think>\nsetup\nsolve\n</think>42";
        let trace = ReasoningTrace::parse("t", text, ThinkMode::WholeText);
        assert_eq!(trace.steps, vec!["setup", "solve"]);
        let span = trace.source_span.unwrap();
        assert_eq!(&text[span], "\nsetup\nsolve\n");
    }

    #[test]
    fn corpus_reports_line_errors_and_continues() {
        let data = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\"}\nnot json\n\n{\"id\":\"c\",\"steps\":[\"s\"]}\n";
        let items: Vec<_> = CorpusReader::new(data.as_bytes(), false)
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(items.len(), 4);
        assert!(items[0].1.is_ok());
        let err = items[1].1.as_ref().unwrap_err();
        assert_eq!(err.line, 2);
        assert_eq!(err.id.as_deref(), Some("b"));
        assert_eq!(err.source, RecordError::MissingField("text"));
        assert_eq!(items[2].1.as_ref().unwrap_err().line, 3);
        assert_eq!(items[3].0, 5);
    }

    #[test]
    fn strict_mode_rejects_duplicates() {
        let data = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n";
        let res: Result<Vec<_>, _> = CorpusReader::new(data.as_bytes(), true).collect();
        assert!(matches!(res, Err(CorpusError::DuplicateId { line: 2, .. })));
        // lenient mode keeps both
        let res: Vec<_> = CorpusReader::new(data.as_bytes(), false)
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(res.len(), 2);
    }

    #[test]
    fn misaligned_embeddings_rejected() {
        let line = r#"{"id":"a","steps":["x","y"],"embeddings":[[1,0]]}"#;
        let items: Vec<_> = CorpusReader::new(line.as_bytes(), false)
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(
            items[0].1.as_ref().unwrap_err().source,
            RecordError::Misaligned {
                steps: 2,
                embeddings: 1
            }
        );
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(matches!(
            read_corpus("/nonexistent/corpus.jsonl", false),
            Err(CorpusError::Open { .. })
        ));
    }

    proptest! {
        #[test]
        fn segmentation_is_idempotent(text in "[a-c \t\n]{0,64}") {
            let once = segment_steps(&text);
            let twice = segment_steps(&once.join("\n"));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn extract_returns_substring(text in "(<think>|</think>|[a-z\n]){0,12}", empty in any::<bool>()) {
            let mode = if empty { ThinkMode::Empty } else { ThinkMode::WholeText };
            let span = think_span(&text, mode);
            prop_assert!(span.start <= span.end && span.end <= text.len());
            let out = extract_think(&text, mode);
            prop_assert!(text.contains(out));
        }

        #[test]
        fn steps_are_trimmed_and_non_empty(text in "\\PC{0,80}") {
            for step in segment_steps(&text) {
                prop_assert!(!step.is_empty());
                prop_assert_eq!(step.trim(), step.as_str());
            }
        }
    }
}
