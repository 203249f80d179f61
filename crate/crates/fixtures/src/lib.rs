//! A small synthetic S1 corpus: three textbooks with sixteen table of
//! contents entries each.
//!
//! Every topic gets two pages of text dense in its own title words, except:
//!
//! * History entry 12, "Kenya", which has a single short page (well under
//!   one page-equivalent), and
//! * Mathematics entry 2, which spans 26 pages and so is replaced by its
//!   first subtopic under the default breadth limit.

use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeZone, Utc};
use lessonplan_core::corpus::{
    parse_textbook, Edition, Level, TableOfContents, TextbookDocument, TopicEntry,
};
use lessonplan_core::embedding::OfflineEmbedder;
use lessonplan_core::ingest::ingest_document;
use lessonplan_core::store::{persist_store, StoreSet, VectorStore};

pub const CHUNK_SIZE: usize = 400;
pub const CHUNK_OVERLAP: usize = 50;
pub const SHORT_TOPIC: &str = "Kenya";
pub const SHORT_TOPIC_SUBJECT: &str = "History";
pub const SHORT_TOPIC_INDEX: usize = 12;
pub const OFF_TOPIC: &str = "Mukasa and the court of the Kabaka";

const HISTORY: [&str; 16] = [
    "Sources of historical information",
    "Prehistoric peoples of the Rift Valley",
    "The Stone Age toolmakers",
    "Early iron working",
    "Migration of the Bantu",
    "The Nilotic pastoralists",
    "Kingdom of Bunyoro Kitara",
    "Kingdom of Buganda",
    "Caravans across the Sahara",
    "City states of the Swahili coast",
    "Arab merchants and the ivory trade",
    "Colonial administration and indirect rule",
    SHORT_TOPIC,
    OFF_TOPIC,
    "Uganda at independence",
    "Citizenship and the constitution",
];

const MATHEMATICS: [&str; 16] = [
    "Number bases",
    "Working with integers",
    "Fractions decimals and percentages",
    "Algebraic expressions",
    "Linear equations",
    "Geometric constructions",
    "Angles and polygons",
    "Cartesian coordinates",
    "Sets and Venn diagrams",
    "Ratio and proportion",
    "Perimeter and area",
    "Volume and capacity",
    "Bearings and scale drawing",
    "Data collection and tallies",
    "Probability experiments",
    "Simple interest",
];

const FRACTION_SUBTOPICS: [&str; 4] = [
    "Proper and improper fractions",
    "Decimal place value",
    "Converting percentages",
    "Recurring decimals",
];

const ICT: [&str; 16] = [
    "Introduction to computers",
    "Computer hardware components",
    "Keyboard and mouse input",
    "Printers and monitors",
    "Storage devices and memory",
    "System and application software",
    "Operating systems",
    "Word processing",
    "Spreadsheets and formulas",
    "Presentation software",
    "Computer networks",
    "The internet and browsers",
    "Electronic mail",
    "Computer laboratory safety",
    "Ethics and digital citizenship",
    "Careers in computing",
];

const TOPIC_SENTENCES: [&str; 8] = [
    "This unit is about {t}.",
    "Learners investigate {t} with guided questions.",
    "Examples of {t} appear in the activity box.",
    "The class discusses {t} in small groups.",
    "A worked example shows {t} in practice.",
    "Key words for {t} are listed in the glossary.",
    "The summary revises {t} before the exercise.",
    "Learners write notes on {t} in their books.",
];

const FILLER: [&str; 6] = [
    "Read the passage carefully before answering.",
    "Check your answers with a partner.",
    "Use a ruler and pencil where needed.",
    "Ask your teacher when something is unclear.",
    "Keep your exercise book neat and dated.",
    "Share one new idea with the class.",
];

const KENYA_PAGE: &str = "Kenya lies to the east of Uganda. \
Kenya gained independence in 1963 and Nairobi is its capital. \
Traders from Kenya reached the lake along the railway.";

/// Roughly one printed page of text about `title`.
fn topic_page(title: &str, seed: usize) -> String {
    let lower = title.to_lowercase();
    let mut out = String::new();
    let mut i = 0;
    while out.len() < 1400 {
        let s = if i % 4 == 3 {
            FILLER[(seed + i) % FILLER.len()].to_string()
        } else {
            TOPIC_SENTENCES[(seed + i) % TOPIC_SENTENCES.len()].replace("{t}", &lower)
        };
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&s);
        i += 1;
    }
    out
}

pub struct SubjectFixture {
    pub subject: &'static str,
    pub level: Level,
    pub edition: Edition,
    pub corpus: String,
    pub toc: TableOfContents,
}

struct Builder {
    pages: Vec<String>,
}

impl Builder {
    fn next_page(&self) -> u32 {
        self.pages.len() as u32 + 1
    }

    fn add(&mut self, text: String) {
        self.pages.push(text);
    }

    fn topic(&mut self, title: &str, count: usize) -> TopicEntry {
        let start = self.next_page();
        for p in 0..count {
            self.add(topic_page(title, start as usize + p));
        }
        TopicEntry {
            title: title.to_string(),
            page_start: start,
            page_end: self.next_page() - 1,
            subtopics: vec![],
        }
    }

    fn corpus(&self) -> String {
        self.pages
            .iter()
            .enumerate()
            .map(|(i, text)| format!("===PAGE {}===\n{}\n", i + 1, text))
            .collect()
    }
}

fn build(subject: &'static str, edition: Edition, titles: &[&str; 16]) -> SubjectFixture {
    let mut b = Builder { pages: vec![] };
    let mut entries = Vec::new();
    for (i, title) in titles.iter().enumerate() {
        let entry = if subject == "History" && i == SHORT_TOPIC_INDEX {
            let page = b.next_page();
            b.add(KENYA_PAGE.to_string());
            TopicEntry {
                title: title.to_string(),
                page_start: page,
                page_end: page,
                subtopics: vec![],
            }
        } else if subject == "Mathematics" && i == 2 {
            let start = b.next_page();
            let subtopics: Vec<TopicEntry> = FRACTION_SUBTOPICS
                .iter()
                .enumerate()
                .map(|(j, s)| b.topic(s, if j == 0 { 2 } else { 8 }))
                .collect();
            TopicEntry {
                title: title.to_string(),
                page_start: start,
                page_end: b.next_page() - 1,
                subtopics,
            }
        } else {
            b.topic(title, 2)
        };
        entries.push(entry);
    }
    SubjectFixture {
        subject,
        level: Level::S1,
        edition,
        corpus: b.corpus(),
        toc: TableOfContents::new(entries).expect("fixture TOC is valid"),
    }
}

pub fn subjects() -> Vec<SubjectFixture> {
    vec![
        build("History", Edition::Student, &HISTORY),
        build("Mathematics", Edition::Student, &MATHEMATICS),
        build("ICT", Edition::Teacher, &ICT),
    ]
}

impl SubjectFixture {
    pub fn document(&self) -> TextbookDocument {
        parse_textbook(&self.corpus, self.subject, self.level, self.edition)
            .expect("fixture corpus parses")
    }

    pub fn toc_json(&self) -> String {
        serde_json::to_string_pretty(&self.toc).expect("TOC serializes")
    }

    pub async fn store(&self) -> VectorStore {
        ingest_document(
            &self.document(),
            CHUNK_SIZE,
            CHUNK_OVERLAP,
            &OfflineEmbedder::default(),
            fixed_time(),
        )
        .await
        .expect("fixture ingests")
    }
}

/// Timestamp stamped on fixture stores.
pub fn fixed_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 15, 8, 0, 0).unwrap()
}

pub struct WrittenSubject {
    pub subject: &'static str,
    pub level: Level,
    pub edition: Edition,
    pub corpus_path: PathBuf,
    pub toc_path: PathBuf,
}

/// Write `{subject}.txt` and `{subject}.toc.json` for every subject.
pub fn write_corpus(dir: &Path) -> std::io::Result<Vec<WrittenSubject>> {
    std::fs::create_dir_all(dir)?;
    subjects()
        .into_iter()
        .map(|s| {
            let corpus_path = dir.join(format!("{}.txt", s.subject));
            let toc_path = dir.join(format!("{}.toc.json", s.subject));
            std::fs::write(&corpus_path, &s.corpus)?;
            std::fs::write(&toc_path, s.toc_json())?;
            Ok(WrittenSubject {
                subject: s.subject,
                level: s.level,
                edition: s.edition,
                corpus_path,
                toc_path,
            })
        })
        .collect()
}

/// All three stores, in memory.
pub async fn store_set() -> StoreSet {
    let mut set = StoreSet::new();
    for s in subjects() {
        set.insert(s.store().await).expect("distinct subjects");
    }
    set
}

/// All three stores persisted under `root/{subject}`.
pub async fn write_stores(root: &Path) -> StoreSet {
    let set = store_set().await;
    for store in set.iter() {
        persist_store(store, &root.join(store.subject())).expect("fixture store persists");
    }
    set
}
