//! Textbook corpus loading, chunking with page provenance, and topic selection.
//!
//! A corpus file is UTF-8 text split into pages by delimiter lines of the
//! form `===PAGE n===`, where `n` is the printed page number. The table of
//! contents lives in a separate JSON file: an ordered array of
//! `{title, page_start, page_end, subtopics: [...]}` objects.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default chunk size in characters.
pub const DEFAULT_CHUNK_SIZE: usize = 1200;
/// Default overlap between consecutive chunks in characters.
pub const DEFAULT_CHUNK_OVERLAP: usize = 200;
/// Page span above which a topic with subtopics counts as too broad.
pub const DEFAULT_BREADTH_PAGE_LIMIT: u32 = 25;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed page delimiter at line {line}: {text:?}")]
    MalformedDelimiter { line: usize, text: String },
    #[error("text before the first page delimiter at line {line}")]
    TextOutsidePage { line: usize },
    #[error("non-monotonic pages: page {page} follows page {previous}")]
    NonMonotonicPages { previous: u32, page: u32 },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("subject must not be empty")]
    EmptySubject,
    #[error("invalid table of contents: {0}")]
    InvalidToc(String),
    #[error("chunk_size ({chunk_size}) must be greater than overlap ({overlap})")]
    InvalidChunking { chunk_size: usize, overlap: usize },
    #[error("invalid selection: {0}")]
    InvalidSelection(String),
    #[error("only {available} topics reachable, {requested} requested at stride {stride}")]
    NotEnoughTopics {
        available: usize,
        requested: usize,
        stride: usize,
    },
}

/// Secondary school level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    S1,
    S2,
    S3,
    S4,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::S1, Level::S2, Level::S3, Level::S4];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::S1 => "S1",
            Level::S2 => "S2",
            Level::S3 => "S3",
            Level::S4 => "S4",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S1" => Ok(Level::S1),
            "S2" => Ok(Level::S2),
            "S3" => Ok(Level::S3),
            "S4" => Ok(Level::S4),
            other => Err(format!("unknown level {other:?}")),
        }
    }
}

/// Which printing of a textbook was ingested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edition {
    Student,
    Teacher,
}

impl Edition {
    pub fn as_str(self) -> &'static str {
        match self {
            Edition::Student => "student",
            Edition::Teacher => "teacher",
        }
    }
}

impl fmt::Display for Edition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Edition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "student" => Ok(Edition::Student),
            "teacher" => Ok(Edition::Teacher),
            other => Err(format!("unknown edition {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub number: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextbookDocument {
    pub subject: String,
    pub level: Level,
    pub edition: Edition,
    pub pages: Vec<Page>,
}

impl TextbookDocument {
    pub fn new(
        subject: impl Into<String>,
        level: Level,
        edition: Edition,
        pages: Vec<Page>,
    ) -> Result<Self, CorpusError> {
        let subject = subject.into();
        if subject.trim().is_empty() {
            return Err(CorpusError::EmptySubject);
        }
        if pages.is_empty() || pages.iter().all(|p| p.text.is_empty()) {
            return Err(CorpusError::EmptyCorpus);
        }
        for pair in pages.windows(2) {
            if pair[1].number <= pair[0].number {
                return Err(CorpusError::NonMonotonicPages {
                    previous: pair[0].number,
                    page: pair[1].number,
                });
            }
        }
        Ok(Self {
            subject,
            level,
            edition,
            pages,
        })
    }

    /// The normalized document text: page texts joined by a single newline.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, page) in self.pages.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&page.text);
        }
        out
    }

    /// Char-offset ranges per page inside [`Self::text`]. The separator
    /// newline after a page belongs to that page.
    fn page_spans(&self) -> Vec<(u32, usize, usize)> {
        let mut spans = Vec::with_capacity(self.pages.len());
        let mut offset = 0;
        let last = self.pages.len() - 1;
        for (i, page) in self.pages.iter().enumerate() {
            let len = page.text.chars().count() + usize::from(i < last);
            spans.push((page.number, offset, offset + len));
            offset += len;
        }
        spans
    }
}

/// Collapse every whitespace run to one space and trim both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn parse_delimiter(line: &str) -> Option<Result<u32, ()>> {
    let trimmed = line.trim();
    if !trimmed.starts_with("===PAGE") {
        return None;
    }
    let number = trimmed
        .strip_prefix("===PAGE ")
        .and_then(|rest| rest.strip_suffix("==="))
        .and_then(|n| n.trim().parse::<u32>().ok())
        .filter(|&n| n > 0);
    Some(number.ok_or(()))
}

/// Parse corpus text in the page-delimited format.
pub fn parse_textbook(
    content: &str,
    subject: &str,
    level: Level,
    edition: Edition,
) -> Result<TextbookDocument, CorpusError> {
    let mut pages: Vec<(u32, String)> = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        match parse_delimiter(line) {
            Some(Ok(number)) => {
                if let Some((previous, _)) = pages.last() {
                    if number <= *previous {
                        return Err(CorpusError::NonMonotonicPages {
                            previous: *previous,
                            page: number,
                        });
                    }
                }
                pages.push((number, String::new()));
            }
            Some(Err(())) => {
                return Err(CorpusError::MalformedDelimiter {
                    line: idx + 1,
                    text: line.to_string(),
                })
            }
            None => match pages.last_mut() {
                Some((_, buf)) => {
                    buf.push_str(line);
                    buf.push('\n');
                }
                None if line.trim().is_empty() => {}
                None => return Err(CorpusError::TextOutsidePage { line: idx + 1 }),
            },
        }
    }
    let pages = pages
        .into_iter()
        .map(|(number, raw)| Page {
            number,
            text: normalize_whitespace(&raw),
        })
        .collect();
    TextbookDocument::new(subject, level, edition, pages)
}

pub fn load_textbook(
    path: &Path,
    subject: &str,
    level: Level,
    edition: Edition,
) -> Result<TextbookDocument, CorpusError> {
    let content = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_textbook(&content, subject, level, edition)
}

/// A contiguous passage of textbook text; the retrieval unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub subject: String,
    pub text: String,
    pub page_start: u32,
    pub page_end: u32,
    pub char_count: usize,
}

/// Split a document into fixed-stride character windows.
///
/// Window `i` starts at `i * (chunk_size - overlap)`; the last window ends at
/// the end of the text. Dropping the trailing `overlap` characters of every
/// non-final chunk and concatenating gives back [`TextbookDocument::text`].
pub fn chunk_document(
    doc: &TextbookDocument,
    chunk_size: usize,
    overlap: usize,
) -> Result<Vec<Chunk>, CorpusError> {
    if chunk_size <= overlap {
        return Err(CorpusError::InvalidChunking {
            chunk_size,
            overlap,
        });
    }
    let chars: Vec<char> = doc.text().chars().collect();
    let spans = doc.page_spans();
    let page_at = |offset: usize| -> u32 {
        let idx = spans.partition_point(|&(_, _, end)| end <= offset);
        spans[idx.min(spans.len() - 1)].0
    };

    let stride = chunk_size - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + chunk_size).min(chars.len());
        let text: String = chars[start..end].iter().collect();
        chunks.push(Chunk {
            chunk_id: format!("{}-{:05}", doc.subject, chunks.len()),
            subject: doc.subject.clone(),
            char_count: end - start,
            text,
            page_start: page_at(start),
            page_end: page_at(end - 1),
        });
        if end == chars.len() {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicEntry {
    pub title: String,
    pub page_start: u32,
    pub page_end: u32,
    #[serde(default)]
    pub subtopics: Vec<TopicEntry>,
}

impl TopicEntry {
    /// Number of pages covered, inclusive of both ends.
    pub fn page_span(&self) -> u32 {
        self.page_end - self.page_start + 1
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.title.trim().is_empty() {
            return Err(CorpusError::InvalidToc("entry with empty title".into()));
        }
        if self.page_start > self.page_end {
            return Err(CorpusError::InvalidToc(format!(
                "{:?}: page_start {} > page_end {}",
                self.title, self.page_start, self.page_end
            )));
        }
        for sub in &self.subtopics {
            if sub.page_start < self.page_start || sub.page_end > self.page_end {
                return Err(CorpusError::InvalidToc(format!(
                    "subtopic {:?} ({}-{}) outside parent {:?} ({}-{})",
                    sub.title,
                    sub.page_start,
                    sub.page_end,
                    self.title,
                    self.page_start,
                    self.page_end
                )));
            }
            sub.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TableOfContents {
    pub entries: Vec<TopicEntry>,
}

impl TableOfContents {
    pub fn new(entries: Vec<TopicEntry>) -> Result<Self, CorpusError> {
        if entries.is_empty() {
            return Err(CorpusError::InvalidToc("no entries".into()));
        }
        for entry in &entries {
            entry.validate()?;
        }
        Ok(Self { entries })
    }

    pub fn from_json(json: &str) -> Result<Self, CorpusError> {
        let entries: Vec<TopicEntry> =
            serde_json::from_str(json).map_err(|e| CorpusError::InvalidToc(e.to_string()))?;
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let content = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&content)
    }
}

/// Pick entries 0, stride, 2*stride, ... until `count` are chosen. A chosen
/// entry whose page span exceeds `breadth_page_limit` and that has subtopics
/// is replaced by its first subtopic.
pub fn select_topics(
    toc: &TableOfContents,
    count: usize,
    stride: usize,
    breadth_page_limit: u32,
) -> Result<Vec<TopicEntry>, CorpusError> {
    if count == 0 {
        return Err(CorpusError::InvalidSelection("count must be at least 1".into()));
    }
    if stride == 0 {
        return Err(CorpusError::InvalidSelection("stride must be at least 1".into()));
    }
    let available = toc.entries.len().div_ceil(stride);
    if available < count {
        return Err(CorpusError::NotEnoughTopics {
            available,
            requested: count,
            stride,
        });
    }
    Ok(toc
        .entries
        .iter()
        .step_by(stride)
        .take(count)
        .map(|entry| match entry.subtopics.first() {
            Some(first) if entry.page_span() > breadth_page_limit => first.clone(),
            _ => entry.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(pages: &[(u32, &str)]) -> TextbookDocument {
        TextbookDocument::new(
            "History",
            Level::S1,
            Edition::Student,
            pages
                .iter()
                .map(|&(number, text)| Page {
                    number,
                    text: text.to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn entry(title: &str, start: u32, end: u32, subs: Vec<TopicEntry>) -> TopicEntry {
        TopicEntry {
            title: title.into(),
            page_start: start,
            page_end: end,
            subtopics: subs,
        }
    }

    #[test]
    fn loads_two_pages_in_order() {
        let d = parse_textbook(
            "===PAGE 1===\nFirst   page\r\n text.\n===PAGE 2===\nSecond\tpage.\n",
            "History",
            Level::S1,
            Edition::Student,
        )
        .unwrap();
        let numbers: Vec<u32> = d.pages.iter().map(|p| p.number).collect();
        assert_eq!(numbers, vec![1, 2]);
        assert_eq!(d.pages[0].text, "First page text.");
        assert_eq!(d.pages[1].text, "Second page.");
    }

    #[test]
    fn rejects_non_monotonic_pages() {
        let err = parse_textbook(
            "===PAGE 2===\nb\n===PAGE 1===\na\n",
            "History",
            Level::S1,
            Edition::Student,
        )
        .unwrap_err();
        assert!(err.to_string().contains("non-monotonic pages"), "{err}");
    }

    #[test]
    fn rejects_malformed_delimiter_and_empty_corpus() {
        let err = parse_textbook("===PAGE x===\na\n", "ICT", Level::S1, Edition::Teacher)
            .unwrap_err();
        assert!(matches!(err, CorpusError::MalformedDelimiter { line: 1, .. }));

        let err = parse_textbook("\n\n", "ICT", Level::S1, Edition::Teacher).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyCorpus));

        let err = parse_textbook("intro\n===PAGE 1===\na", "ICT", Level::S1, Edition::Teacher)
            .unwrap_err();
        assert!(matches!(err, CorpusError::TextOutsidePage { line: 1 }));
    }

    #[test]
    fn teacher_edition_with_150_pages() {
        let mut content = String::new();
        for n in 1..=150 {
            content.push_str(&format!("===PAGE {n}===\nICT content on page {n}.\n"));
        }
        let d = parse_textbook(&content, "ICT", Level::S1, Edition::Teacher).unwrap();
        assert_eq!(d.pages.len(), 150);
        assert_eq!(d.edition, Edition::Teacher);
    }

    #[test]
    fn load_reports_missing_file() {
        let err = load_textbook(
            Path::new("/nonexistent/corpus.txt"),
            "ICT",
            Level::S1,
            Edition::Student,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    #[test]
    fn short_text_is_one_chunk() {
        let text = "a".repeat(100);
        let d = doc(&[(1, &text)]);
        let chunks = chunk_document(&d, 500, 50).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, text);
        assert_eq!(chunks[0].char_count, 100);
    }

    #[test]
    fn thousand_chars_share_exact_overlap() {
        // Oracle: reassemble by dropping trailing overlaps, compare; and
        // check the shared region of neighbours directly on the source.
        let text: String = (0..1000).map(|i| (b'a' + (i % 26) as u8) as char).collect();
        let d = doc(&[(1, &text)]);
        let chunks = chunk_document(&d, 400, 100).unwrap();
        let mut rebuilt = String::new();
        for (i, c) in chunks.iter().enumerate() {
            assert!(c.char_count <= 400);
            if i + 1 < chunks.len() {
                rebuilt.extend(c.text.chars().take(c.char_count - 100));
                let tail: String = c.text.chars().skip(c.char_count - 100).collect();
                let head: String = chunks[i + 1].text.chars().take(100).collect();
                assert_eq!(tail, head);
            } else {
                rebuilt.push_str(&c.text);
            }
        }
        assert_eq!(rebuilt, text);
    }

    #[test]
    fn chunk_spanning_two_pages_carries_both() {
        let p12 = "x".repeat(300);
        let p13 = "y".repeat(300);
        let d = doc(&[(12, &p12), (13, &p13)]);
        let chunks = chunk_document(&d, 400, 0).unwrap();
        // Offset-to-page oracle: page 12 owns chars 0..301 (incl. separator).
        assert_eq!((chunks[0].page_start, chunks[0].page_end), (12, 13));
        assert_eq!((chunks[1].page_start, chunks[1].page_end), (13, 13));
    }

    #[test]
    fn invalid_chunk_parameters() {
        let d = doc(&[(1, "abc")]);
        assert!(matches!(
            chunk_document(&d, 10, 10),
            Err(CorpusError::InvalidChunking { .. })
        ));
    }

    #[test]
    fn selects_every_second_topic() {
        let toc = TableOfContents::new(
            (0..16)
                .map(|i| entry(&format!("T{i}"), i * 2 + 1, i * 2 + 2, vec![]))
                .collect(),
        )
        .unwrap();
        let picked = select_topics(&toc, 8, 2, DEFAULT_BREADTH_PAGE_LIMIT).unwrap();
        let titles: Vec<_> = picked.iter().map(|e| e.title.as_str()).collect();
        assert_eq!(titles, ["T0", "T2", "T4", "T6", "T8", "T10", "T12", "T14"]);

        let one = select_topics(&toc, 1, 1, DEFAULT_BREADTH_PAGE_LIMIT).unwrap();
        assert_eq!(one[0].title, "T0");

        let err = select_topics(&toc, 9, 2, DEFAULT_BREADTH_PAGE_LIMIT).unwrap_err();
        assert!(matches!(err, CorpusError::NotEnoughTopics { available: 8, .. }));
    }

    #[test]
    fn broad_topic_replaced_by_first_subtopic() {
        let broad = entry(
            "Numbers",
            1,
            40,
            vec![
                entry("Whole numbers", 1, 10, vec![]),
                entry("Fractions", 11, 25, vec![]),
                entry("Decimals", 26, 40, vec![]),
            ],
        );
        let leaf_broad = entry("Geometry", 41, 80, vec![]);
        let toc = TableOfContents::new(vec![broad, leaf_broad]).unwrap();
        let picked = select_topics(&toc, 2, 1, 25).unwrap();
        assert_eq!(picked[0].title, "Whole numbers");
        // No subtopics to fall back on: kept as is.
        assert_eq!(picked[1].title, "Geometry");
    }

    #[test]
    fn toc_rejects_bad_nesting() {
        let bad = entry("A", 5, 10, vec![entry("B", 4, 6, vec![])]);
        assert!(TableOfContents::new(vec![bad]).is_err());
        assert!(TableOfContents::from_json("[]").is_err());
        let toc = TableOfContents::from_json(
            r#"[{"title":"A","page_start":1,"page_end":3,"subtopics":[{"title":"A1","page_start":1,"page_end":2}]}]"#,
        )
        .unwrap();
        assert_eq!(toc.entries[0].subtopics[0].title, "A1");
    }
}
