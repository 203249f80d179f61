//! Rubric-driven lesson plan scoring: rubrics, rater scores, per-plan
//! averaging, percentages and quality bands.

pub mod report;
pub mod stats;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{self, LessonPlan, Phase};

pub use report::{evaluation_report, EvaluationReport};
pub use stats::{cohen_kappa, percent_agreement, spearman_correlation, wilcoxon_signed_rank, Wilcoxon};

#[derive(Debug, Error, PartialEq)]
pub enum LpapError {
    #[error("invalid rubric: {0}")]
    InvalidRubric(String),
    #[error("rubric has no quality items")]
    NoQualityItems,
    #[error("total {total} outside [0, {max}]")]
    OutOfRange { total: f64, max: f64 },
    #[error("no rater scores")]
    NoRaters,
    #[error("coverage mismatch: {0}")]
    Coverage(String),
    #[error("invalid score: {0}")]
    InvalidScore(String),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("kappa undefined: chance agreement is 1")]
    DegenerateKappa,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ratings line {line}: {reason}")]
    Ratings { line: u64, reason: String },
    #[error("unknown plan_id {0:?}")]
    UnknownPlan(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Presence,
    Quality,
}

fn default_max_points() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricItem {
    pub item_id: String,
    pub text: String,
    pub kind: ItemKind,
    #[serde(default = "default_max_points")]
    pub max_points: u32,
    /// Plan element a presence item checks, e.g. `preparation.learning_objective`
    /// or `procedure.introduction`. Without one, a presence item is satisfied
    /// by any plan that passes format validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rubric {
    items: Vec<RubricItem>,
    max_total: u32,
}

const DEFAULT_PRESENCE: [(&str, &str); 8] = [
    ("General Information section is present", "general_information"),
    ("Topic is stated", "general_information.topic"),
    ("Class size is stated", "general_information.class_size"),
    ("Preparation section is present", "preparation"),
    ("Learning Objective is stated", "preparation.learning_objective"),
    ("Teaching and learning materials are listed", "preparation.materials"),
    ("Procedure section is present", "procedure"),
    ("Wrap-up and Assessment step is present", "procedure.wrap_up_and_assessment"),
];

const DEFAULT_QUALITY: [&str; 14] = [
    "Topic matches the requested textbook topic",
    "Learning Objective is phrased as a learner competence",
    "Learning Objective is achievable within the periods",
    "Content is accurate with respect to the textbook",
    "Materials suit the activities",
    "Introduction activates prior knowledge",
    "Development builds the competence step by step",
    "Learner activities are active and varied",
    "Activities suit the class size",
    "Teacher and learner activities are aligned",
    "Time allocation is realistic",
    "Wrap-up and Assessment checks the Learning Objective",
    "Assessment gives evidence of the competence",
    "Plan is coherent from Introduction to Wrap-up and Assessment",
];

impl Rubric {
    pub fn new(items: Vec<RubricItem>) -> Result<Self, LpapError> {
        if items.is_empty() {
            return Err(LpapError::InvalidRubric("no items".into()));
        }
        let mut seen = HashSet::new();
        for item in &items {
            if item.item_id.trim().is_empty() {
                return Err(LpapError::InvalidRubric("empty item_id".into()));
            }
            if !seen.insert(item.item_id.as_str()) {
                return Err(LpapError::InvalidRubric(format!(
                    "duplicate item_id {:?}",
                    item.item_id
                )));
            }
            if item.max_points < 1 {
                return Err(LpapError::InvalidRubric(format!(
                    "item {:?} has max_points 0",
                    item.item_id
                )));
            }
        }
        let max_total = items.iter().map(|i| i.max_points).sum();
        Ok(Self { items, max_total })
    }

    pub fn from_json(json: &str) -> Result<Self, LpapError> {
        let items: Vec<RubricItem> =
            serde_json::from_str(json).map_err(|e| LpapError::InvalidRubric(e.to_string()))?;
        Self::new(items)
    }

    pub fn load(path: &Path) -> Result<Self, LpapError> {
        let json = std::fs::read_to_string(path).map_err(|e| LpapError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&json)
    }

    pub fn items(&self) -> &[RubricItem] {
        &self.items
    }

    pub fn max_total(&self) -> u32 {
        self.max_total
    }

    pub fn item(&self, item_id: &str) -> Option<&RubricItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.items).expect("rubric serializes")
    }
}

impl Default for Rubric {
    /// 22 placeholder items: 8 presence and 14 quality, 2 points each.
    fn default() -> Self {
        let presence = DEFAULT_PRESENCE
            .iter()
            .enumerate()
            .map(|(i, (text, element))| RubricItem {
                item_id: format!("P{:02}", i + 1),
                text: text.to_string(),
                kind: ItemKind::Presence,
                max_points: 2,
                element: Some(element.to_string()),
            });
        let quality = DEFAULT_QUALITY.iter().enumerate().map(|(i, text)| RubricItem {
            item_id: format!("Q{:02}", i + 1),
            text: text.to_string(),
            kind: ItemKind::Quality,
            max_points: 2,
            element: None,
        });
        Self::new(presence.chain(quality).collect()).expect("default rubric is valid")
    }
}

/// One rater's integer scores for one plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterScore {
    pub plan_id: String,
    pub rater_id: String,
    pub scores: BTreeMap<String, u32>,
}

impl RaterScore {
    /// Checks full rubric coverage and score ranges.
    pub fn validate(&self, rubric: &Rubric) -> Result<(), LpapError> {
        for item in rubric.items() {
            match self.scores.get(&item.item_id) {
                None => {
                    return Err(LpapError::Coverage(format!(
                        "plan {} rater {} has no score for {}",
                        self.plan_id, self.rater_id, item.item_id
                    )))
                }
                Some(&s) if s > item.max_points => {
                    return Err(LpapError::InvalidScore(format!(
                        "plan {} rater {} item {}: {} exceeds {}",
                        self.plan_id, self.rater_id, item.item_id, s, item.max_points
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.scores.keys().find(|k| rubric.item(k).is_none()) {
            return Err(LpapError::Coverage(format!("unknown item_id {extra:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityBand {
    Inadequate,
    Fair,
    Good,
    VeryGood,
    Excellent,
}

impl QualityBand {
    pub const ALL: [QualityBand; 5] = [
        QualityBand::Inadequate,
        QualityBand::Fair,
        QualityBand::Good,
        QualityBand::VeryGood,
        QualityBand::Excellent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QualityBand::Inadequate => "inadequate",
            QualityBand::Fair => "fair",
            QualityBand::Good => "good",
            QualityBand::VeryGood => "very_good",
            QualityBand::Excellent => "excellent",
        }
    }
}

impl fmt::Display for QualityBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Band boundaries. Fair and good are closed below; very good and excellent
/// are open below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandTable {
    pub fair_from: f64,
    pub good_from: f64,
    pub very_good_above: f64,
    pub excellent_above: f64,
}

impl Default for BandTable {
    fn default() -> Self {
        Self {
            fair_from: 50.0,
            good_from: 65.0,
            very_good_above: 80.0,
            excellent_above: 90.0,
        }
    }
}

pub fn classify_band(percentage: f64, bands: &BandTable) -> QualityBand {
    if percentage > bands.excellent_above {
        QualityBand::Excellent
    } else if percentage > bands.very_good_above {
        QualityBand::VeryGood
    } else if percentage >= bands.good_from {
        QualityBand::Good
    } else if percentage >= bands.fair_from {
        QualityBand::Fair
    } else {
        QualityBand::Inadequate
    }
}

pub fn score_percentage(total_points: f64, rubric: &Rubric) -> Result<f64, LpapError> {
    let max = rubric.max_total() as f64;
    if !(0.0..=max).contains(&total_points) {
        return Err(LpapError::OutOfRange {
            total: total_points,
            max,
        });
    }
    Ok(100.0 * total_points / max)
}

/// Percentage over quality items only; presence items are ignored.
pub fn quality_only_percentage(
    scores: &BTreeMap<String, f64>,
    rubric: &Rubric,
) -> Result<f64, LpapError> {
    let mut total = 0.0;
    let mut max = 0u32;
    for item in rubric.items().iter().filter(|i| i.kind == ItemKind::Quality) {
        total += scores.get(&item.item_id).copied().ok_or_else(|| {
            LpapError::Coverage(format!("no score for {}", item.item_id))
        })?;
        max += item.max_points;
    }
    if max == 0 {
        return Err(LpapError::NoQualityItems);
    }
    Ok(100.0 * total / max as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub plan_id: String,
    pub averaged_scores: BTreeMap<String, f64>,
    pub total_points: f64,
    pub percentage: f64,
    pub quality_only_percentage: f64,
    pub band: QualityBand,
}

/// Per-item mean over raters of one plan.
pub fn average_raters(
    scores: &[RaterScore],
    rubric: &Rubric,
    bands: &BandTable,
) -> Result<EvaluationRecord, LpapError> {
    let first = scores.first().ok_or(LpapError::NoRaters)?;
    for s in scores {
        if s.plan_id != first.plan_id {
            return Err(LpapError::Coverage(format!(
                "scores for plans {} and {} mixed",
                first.plan_id, s.plan_id
            )));
        }
        s.validate(rubric)?;
    }
    let n = scores.len() as f64;
    let averaged_scores: BTreeMap<String, f64> = rubric
        .items()
        .iter()
        .map(|item| {
            let sum: u32 = scores.iter().map(|s| s.scores[&item.item_id]).sum();
            (item.item_id.clone(), sum as f64 / n)
        })
        .collect();
    let total_points: f64 = rubric
        .items()
        .iter()
        .map(|i| averaged_scores[&i.item_id])
        .sum();
    let percentage = score_percentage(total_points, rubric)?;
    let quality_only_percentage = quality_only_percentage(&averaged_scores, rubric)?;
    Ok(EvaluationRecord {
        plan_id: first.plan_id.clone(),
        averaged_scores,
        total_points,
        percentage,
        band: classify_band(percentage, bands),
        quality_only_percentage,
    })
}

fn element_present(plan: &LessonPlan, element: &str) -> bool {
    let (section, key) = match element.split_once('.') {
        Some((s, k)) => (s, Some(k)),
        None => (element, None),
    };
    let filled = |map: &BTreeMap<String, String>| match key {
        None => !map.is_empty(),
        Some(k) => map.get(k).is_some_and(|v| !v.trim().is_empty()),
    };
    match section {
        plan::SECTION_GENERAL_INFORMATION => filled(&plan.general_information),
        plan::SECTION_PREPARATION => filled(&plan.preparation),
        plan::SECTION_PROCEDURE => match key {
            None => !plan.procedure.is_empty(),
            Some(k) => k
                .parse::<Phase>()
                .is_ok_and(|phase| plan.procedure.iter().any(|s| s.phase == phase)),
        },
        _ => false,
    }
}

/// Scores for the presence items that can be read off the plan itself.
/// Quality items are left to human raters.
pub fn score_presence_items(plan: &LessonPlan, rubric: &Rubric) -> BTreeMap<String, u32> {
    let valid = plan::validate_format(plan).valid;
    rubric
        .items()
        .iter()
        .filter(|i| i.kind == ItemKind::Presence)
        .map(|item| {
            let ok = match &item.element {
                Some(e) => element_present(plan, e),
                None => valid,
            };
            (item.item_id.clone(), if ok { item.max_points } else { 0 })
        })
        .collect()
}

/// Load `plan_id,rater_id,item_id,score` rows into one [`RaterScore`] per
/// plan and rater, ordered by plan then rater.
pub fn parse_ratings_csv(data: &str, rubric: &Rubric) -> Result<Vec<RaterScore>, LpapError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(data.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| LpapError::Ratings {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let expected = ["plan_id", "rater_id", "item_id", "score"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(LpapError::Ratings {
            line: 1,
            reason: format!("header must be {}", expected.join(",")),
        });
    }
    let mut grouped: BTreeMap<(String, String), BTreeMap<String, u32>> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| LpapError::Ratings {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |reason: String| LpapError::Ratings { line, reason };
        let (plan_id, rater_id, item_id, score) = (&row[0], &row[1], &row[2], &row[3]);
        if plan_id.is_empty() || rater_id.is_empty() {
            return Err(bad("empty plan_id or rater_id".into()));
        }
        let item = rubric
            .item(item_id)
            .ok_or_else(|| bad(format!("unknown item_id {item_id:?}")))?;
        let score: u32 = score
            .parse()
            .map_err(|_| bad(format!("score {score:?} is not a non-negative integer")))?;
        if score > item.max_points {
            return Err(bad(format!(
                "score {score} exceeds {} for {item_id}",
                item.max_points
            )));
        }
        let entry = grouped
            .entry((plan_id.to_string(), rater_id.to_string()))
            .or_default();
        if entry.insert(item_id.to_string(), score).is_some() {
            return Err(bad(format!(
                "duplicate score for plan {plan_id} rater {rater_id} item {item_id}"
            )));
        }
    }
    let scores: Vec<RaterScore> = grouped
        .into_iter()
        .map(|((plan_id, rater_id), scores)| RaterScore {
            plan_id,
            rater_id,
            scores,
        })
        .collect();
    for s in &scores {
        s.validate(rubric)?;
    }
    Ok(scores)
}

pub fn load_ratings_csv(path: &Path, rubric: &Rubric) -> Result<Vec<RaterScore>, LpapError> {
    let data = std::fs::read_to_string(path).map_err(|e| LpapError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_ratings_csv(&data, rubric)
}

/// Subject part of a plan id such as `History07`.
pub fn subject_of(plan_id: &str) -> &str {
    plan_id.trim_end_matches(|c: char| c.is_ascii_digit())
}

/// Distinct plan ids, in order.
pub fn plan_ids(scores: &[RaterScore]) -> BTreeSet<&str> {
    scores.iter().map(|s| s.plan_id.as_str()).collect()
}
