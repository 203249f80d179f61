//! The three-section lesson-plan document and its line-oriented markup.
//!
//! Model output is expected in this shape:
//!
//! ```text
//! ## GENERAL INFORMATION
//! Topic: Early settlement in the Great Lakes region
//! Subject: History
//! Level: S1
//! Class size: >60
//! Periods: 1
//! Date: ____
//! ## PREPARATION
//! Learning Objective: Learners explain why early settlers chose the lake shores.
//! Materials: Textbook pp. 10-12, wall map
//! References: Learner's book
//! ## PROCEDURE
//! - [introduction|5] teacher: Asks ... | learners: Answer ...
//! - [development|25] teacher: Guides ... | learners: Discuss ...
//! - [wrap_up_and_assessment|10] teacher: Sets a quiz | learners: Write answers
//! ```
//!
//! A `# PERIOD n` line, or a repeated `## PREPARATION` / `## PROCEDURE`
//! heading, opens a further period. Unknown `Key: value` lines are kept in
//! an auxiliary map rather than rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GENERAL_INFORMATION_KEYS: [&str; 6] = [
    "topic",
    "subject",
    "level",
    "class_size",
    "periods",
    "date_placeholder",
];
pub const PREPARATION_KEYS: [&str; 3] = ["learning_objective", "materials", "references"];

pub const SECTION_GENERAL_INFORMATION: &str = "general_information";
pub const SECTION_PREPARATION: &str = "preparation";
pub const SECTION_PROCEDURE: &str = "procedure";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Introduction,
    Development,
    WrapUpAndAssessment,
}

impl Phase {
    pub const ALL: [Phase; 3] = [
        Phase::Introduction,
        Phase::Development,
        Phase::WrapUpAndAssessment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Introduction => "introduction",
            Phase::Development => "development",
            Phase::WrapUpAndAssessment => "wrap_up_and_assessment",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::Introduction => "Introduction",
            Phase::Development => "Development",
            Phase::WrapUpAndAssessment => "Wrap-up and Assessment",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_key(s).as_str() {
            "introduction" | "intro" => Ok(Phase::Introduction),
            "development" | "lesson_development" => Ok(Phase::Development),
            "wrap_up_and_assessment" | "wrap_up" | "conclusion" | "assessment" => {
                Ok(Phase::WrapUpAndAssessment)
            }
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcedureStep {
    pub phase: Phase,
    pub minutes: u32,
    pub teacher_activity: String,
    pub learner_activity: String,
}

/// A period after the first one.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Period {
    pub preparation: BTreeMap<String, String>,
    pub procedure: Vec<ProcedureStep>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub auxiliary: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LessonPlan {
    pub general_information: BTreeMap<String, String>,
    pub preparation: BTreeMap<String, String>,
    pub procedure: Vec<ProcedureStep>,
    #[serde(default)]
    pub extra_periods: Vec<Period>,
    /// Keys outside the known field set, as `section.key`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub auxiliary: BTreeMap<String, String>,
}

impl LessonPlan {
    pub fn topic(&self) -> &str {
        self.general_information
            .get("topic")
            .map(String::as_str)
            .unwrap_or("")
    }

    pub fn learning_objective(&self) -> &str {
        self.preparation
            .get("learning_objective")
            .map(String::as_str)
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanParseError {
    #[error("empty output")]
    Empty,
    #[error("no recognizable sections")]
    NoSections,
    #[error("missing section {0}")]
    MissingSection(&'static str),
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("invalid archival json: {0}")]
    Json(String),
}

impl PlanParseError {
    fn at(line: usize, reason: impl Into<String>) -> Self {
        PlanParseError::Line {
            line,
            reason: reason.into(),
        }
    }
}

fn normalize_key(key: &str) -> String {
    let mut out = String::new();
    for word in key
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        if !out.is_empty() {
            out.push('_');
        }
        out.push_str(&word.to_lowercase());
    }
    out
}

fn canonical_general_key(key: &str) -> Option<&'static str> {
    Some(match key {
        "topic" | "title" | "lesson_topic" => "topic",
        "subject" => "subject",
        "level" | "class_level" | "student_level" => "level",
        "class_size" | "number_of_learners" | "number_of_students" => "class_size",
        "periods" | "number_of_periods" | "period" | "duration_periods" => "periods",
        "date" | "date_placeholder" => "date_placeholder",
        _ => return None,
    })
}

fn canonical_preparation_key(key: &str) -> Option<&'static str> {
    Some(match key {
        "learning_objective" | "learning_objectives" | "key_unit_competence" => {
            "learning_objective"
        }
        "materials" | "teaching_materials" | "teaching_learning_materials" | "materials_needed" => {
            "materials"
        }
        "references" | "reference" => "references",
        _ => return None,
    })
}

fn key_label(key: &str) -> String {
    match key {
        "topic" => "Topic".into(),
        "subject" => "Subject".into(),
        "level" => "Level".into(),
        "class_size" => "Class size".into(),
        "periods" => "Periods".into(),
        "date_placeholder" => "Date".into(),
        "learning_objective" => "Learning Objective".into(),
        "materials" => "Materials".into(),
        "references" => "References".into(),
        other => {
            let spaced = other.replace('_', " ");
            let mut chars = spaced.chars();
            match chars.next() {
                Some(c) => c.to_uppercase().chain(chars).collect(),
                None => String::new(),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    General,
    Preparation,
    Procedure,
}

fn parse_minutes(raw: &str) -> Option<u32> {
    let digits = raw
        .trim()
        .trim_end_matches("minutes")
        .trim_end_matches("mins")
        .trim_end_matches("min")
        .trim();
    digits.parse().ok()
}

fn parse_step(line: &str, line_no: usize) -> Result<ProcedureStep, PlanParseError> {
    let body = line
        .strip_prefix('-')
        .map(str::trim_start)
        .and_then(|l| l.strip_prefix('['))
        .ok_or_else(|| PlanParseError::at(line_no, "procedure row must start with `- [`"))?;
    let (tag, rest) = body
        .split_once(']')
        .ok_or_else(|| PlanParseError::at(line_no, "unterminated `[phase|minutes]` tag"))?;
    let (phase, minutes) = tag
        .split_once('|')
        .ok_or_else(|| PlanParseError::at(line_no, "tag must be `[phase|minutes]`"))?;
    let phase = phase
        .parse::<Phase>()
        .map_err(|e| PlanParseError::at(line_no, e))?;
    let minutes = parse_minutes(minutes)
        .ok_or_else(|| PlanParseError::at(line_no, format!("bad minutes {minutes:?}")))?;

    let rest = rest.trim();
    let teacher_part = rest
        .get(..8)
        .filter(|p| p.eq_ignore_ascii_case("teacher:"))
        .map(|_| &rest[8..])
        .ok_or_else(|| PlanParseError::at(line_no, "expected `teacher:` after tag"))?;
    let split = teacher_part
        .match_indices('|')
        .map(|(i, _)| i)
        .find_map(|i| {
            let after = teacher_part[i + 1..].trim_start();
            ["learners:", "learner:"].iter().find_map(|label| {
                after
                    .get(..label.len())
                    .filter(|p| p.eq_ignore_ascii_case(label))
                    .map(|_| (i, after[label.len()..].trim().to_string()))
            })
        })
        .ok_or_else(|| PlanParseError::at(line_no, "expected `| learners:` column"))?;
    Ok(ProcedureStep {
        phase,
        minutes,
        teacher_activity: teacher_part[..split.0].trim().to_string(),
        learner_activity: split.1,
    })
}

struct PeriodBuilder {
    preparation: BTreeMap<String, String>,
    procedure: Vec<ProcedureStep>,
    auxiliary: BTreeMap<String, String>,
    saw_preparation: bool,
    saw_procedure: bool,
}

impl PeriodBuilder {
    fn new() -> Self {
        Self {
            preparation: BTreeMap::new(),
            procedure: Vec::new(),
            auxiliary: BTreeMap::new(),
            saw_preparation: false,
            saw_procedure: false,
        }
    }

    fn is_started(&self) -> bool {
        self.saw_preparation || self.saw_procedure
    }
}

/// Parse raw model output into a [`LessonPlan`].
///
/// Text before the first heading is ignored. A structural error here is what
/// makes the generator ask the model again.
pub fn parse_lesson_plan(raw: &str) -> Result<LessonPlan, PlanParseError> {
    if raw.trim().is_empty() {
        return Err(PlanParseError::Empty);
    }
    let mut general = BTreeMap::new();
    let mut general_aux = BTreeMap::new();
    let mut saw_general = false;
    let mut periods = vec![PeriodBuilder::new()];
    let mut section: Option<Section> = None;
    let mut other_section: Option<String> = None;
    let mut last_key: Option<(Section, String)> = None;

    for (idx, raw_line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(heading) = line.strip_prefix("##") {
            let name = normalize_key(heading.trim_start_matches('#'));
            last_key = None;
            other_section = None;
            let current = periods.last_mut().expect("at least one period");
            section = match name.as_str() {
                "general_information" => {
                    if saw_general {
                        return Err(PlanParseError::at(line_no, "repeated GENERAL INFORMATION"));
                    }
                    saw_general = true;
                    Some(Section::General)
                }
                "preparation" => {
                    if current.saw_preparation || current.saw_procedure {
                        periods.push(PeriodBuilder::new());
                    }
                    periods.last_mut().expect("period").saw_preparation = true;
                    Some(Section::Preparation)
                }
                "procedure" => {
                    if current.saw_procedure {
                        periods.push(PeriodBuilder::new());
                    }
                    periods.last_mut().expect("period").saw_procedure = true;
                    Some(Section::Procedure)
                }
                _ => {
                    other_section = Some(name);
                    None
                }
            };
            continue;
        }
        if let Some(heading) = line.strip_prefix('#') {
            // `# PERIOD n` opens a period; other top-level titles are ignored.
            if normalize_key(heading).starts_with("period") {
                if periods.last().expect("period").is_started() {
                    periods.push(PeriodBuilder::new());
                }
                section = None;
                last_key = None;
            }
            continue;
        }

        match section {
            Some(Section::Procedure) => {
                let step = parse_step(line, line_no)?;
                periods.last_mut().expect("period").procedure.push(step);
            }
            Some(sec) => {
                let Some((key, value)) = line.split_once(':') else {
                    // Continuation of a wrapped value.
                    let (last_sec, key) = last_key
                        .as_ref()
                        .filter(|(s, _)| *s == sec)
                        .ok_or_else(|| PlanParseError::at(line_no, "text outside a `Key: value` line"))?;
                    let target = match last_sec {
                        Section::General => general
                            .get_mut(key.as_str())
                            .or_else(|| general_aux.get_mut(key.as_str())),
                        _ => {
                            let p = periods.last_mut().expect("period");
                            p.preparation
                                .get_mut(key.as_str())
                                .or_else(|| p.auxiliary.get_mut(key.as_str()))
                        }
                    };
                    if let Some(value) = target {
                        value.push(' ');
                        value.push_str(line);
                    }
                    continue;
                };
                let norm = normalize_key(key);
                if norm.is_empty() {
                    return Err(PlanParseError::at(line_no, "empty key"));
                }
                let value = value.trim().to_string();
                match sec {
                    Section::General => match canonical_general_key(&norm) {
                        Some(k) => {
                            general.insert(k.to_string(), value);
                            last_key = Some((sec, k.to_string()));
                        }
                        None => {
                            let k = format!("{SECTION_GENERAL_INFORMATION}.{norm}");
                            general_aux.insert(k.clone(), value);
                            last_key = Some((sec, k));
                        }
                    },
                    _ => {
                        let p = periods.last_mut().expect("period");
                        match canonical_preparation_key(&norm) {
                            Some(k) => {
                                p.preparation.insert(k.to_string(), value);
                                last_key = Some((sec, k.to_string()));
                            }
                            None => {
                                let k = format!("{SECTION_PREPARATION}.{norm}");
                                p.auxiliary.insert(k.clone(), value);
                                last_key = Some((sec, k));
                            }
                        }
                    }
                }
            }
            None => {
                if let Some(name) = &other_section {
                    if let Some((key, value)) = line.split_once(':') {
                        let k = format!("{name}.{}", normalize_key(key));
                        periods
                            .last_mut()
                            .expect("period")
                            .auxiliary
                            .insert(k, value.trim().to_string());
                    }
                }
                // Preamble and free text under unknown headings are dropped.
            }
        }
    }

    let first = periods.remove(0);
    if !saw_general && !first.saw_preparation && !first.saw_procedure {
        return Err(PlanParseError::NoSections);
    }
    if !saw_general {
        return Err(PlanParseError::MissingSection(SECTION_GENERAL_INFORMATION));
    }
    if !first.saw_preparation {
        return Err(PlanParseError::MissingSection(SECTION_PREPARATION));
    }
    if !first.saw_procedure {
        return Err(PlanParseError::MissingSection(SECTION_PROCEDURE));
    }
    let mut auxiliary = general_aux;
    auxiliary.extend(first.auxiliary);
    Ok(LessonPlan {
        general_information: general,
        preparation: first.preparation,
        procedure: first.procedure,
        extra_periods: periods
            .into_iter()
            .map(|p| Period {
                preparation: p.preparation,
                procedure: p.procedure,
                auxiliary: p.auxiliary,
            })
            .collect(),
        auxiliary,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub missing_sections: Vec<String>,
    pub missing_keys: Vec<String>,
    pub structural_errors: Vec<String>,
}

fn blank(map: &BTreeMap<String, String>, key: &str) -> bool {
    map.get(key).is_none_or(|v| v.trim().is_empty())
}

/// List every missing mandatory section and key and every structural
/// problem of the first period.
pub fn validate_format(plan: &LessonPlan) -> ValidationReport {
    let mut report = ValidationReport::default();
    if plan.general_information.is_empty() {
        report
            .missing_sections
            .push(SECTION_GENERAL_INFORMATION.to_string());
    }
    if plan.preparation.is_empty() {
        report.missing_sections.push(SECTION_PREPARATION.to_string());
    }
    if plan.procedure.is_empty() {
        report.missing_sections.push(SECTION_PROCEDURE.to_string());
    }
    for key in GENERAL_INFORMATION_KEYS {
        if blank(&plan.general_information, key) {
            report.missing_keys.push(key.to_string());
        }
    }
    for key in PREPARATION_KEYS {
        if blank(&plan.preparation, key) {
            report.missing_keys.push(key.to_string());
        }
    }
    if plan.procedure.is_empty() {
        report
            .structural_errors
            .push("procedure has no steps".to_string());
    } else {
        for phase in Phase::ALL {
            if !plan.procedure.iter().any(|s| s.phase == phase) {
                report
                    .structural_errors
                    .push(format!("procedure has no {} step", phase.as_str()));
            }
        }
    }
    for (i, step) in plan.procedure.iter().enumerate() {
        if step.minutes == 0 {
            report
                .structural_errors
                .push(format!("step {} has zero minutes", i + 1));
        }
        if step.teacher_activity.trim().is_empty() {
            report
                .structural_errors
                .push(format!("step {} has no teacher activity", i + 1));
        }
        if step.learner_activity.trim().is_empty() {
            report
                .structural_errors
                .push(format!("step {} has no learner activity", i + 1));
        }
    }
    report.valid = report.missing_sections.is_empty()
        && report.missing_keys.is_empty()
        && report.structural_errors.is_empty();
    report
}

/// Keep only the first period.
pub fn truncate_to_first_period(plan: &LessonPlan) -> LessonPlan {
    LessonPlan {
        extra_periods: Vec::new(),
        ..plan.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    DisplayMarkup,
    PlainText,
    ArchivalJson,
}

pub fn render_plan(plan: &LessonPlan, mode: RenderMode) -> String {
    match mode {
        RenderMode::DisplayMarkup => render_html(plan),
        RenderMode::PlainText => render_text(plan),
        RenderMode::ArchivalJson => {
            serde_json::to_string_pretty(plan).expect("plan serializes") + "\n"
        }
    }
}

/// Reader for [`RenderMode::ArchivalJson`] output (`.plan.json` files).
pub fn from_archival_json(json: &str) -> Result<LessonPlan, PlanParseError> {
    serde_json::from_str(json).map_err(|e| PlanParseError::Json(e.to_string()))
}

fn ordered_entries<'a>(
    map: &'a BTreeMap<String, String>,
    order: &[&str],
) -> Vec<(&'a str, &'a str)> {
    let mut out: Vec<(&str, &str)> = order
        .iter()
        .filter_map(|k| map.get_key_value(*k))
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    out.extend(
        map.iter()
            .filter(|(k, _)| !order.contains(&k.as_str()))
            .map(|(k, v)| (k.as_str(), v.as_str())),
    );
    out
}

fn aux_in<'a>(
    aux: &'a BTreeMap<String, String>,
    section: &str,
) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
    let prefix = format!("{section}.");
    aux.iter().filter_map(move |(k, v)| {
        k.strip_prefix(prefix.as_str()).map(|k| (k, v.as_str()))
    })
}

/// HTML-escape text so it can never become active markup.
pub fn escape_html(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn html_fields(out: &mut String, entries: impl IntoIterator<Item = (String, String)>) {
    out.push_str("<dl>\n");
    for (k, v) in entries {
        out.push_str(&format!(
            "<dt>{}</dt><dd>{}</dd>\n",
            escape_html(&k),
            escape_html(&v)
        ));
    }
    out.push_str("</dl>\n");
}

fn html_steps(out: &mut String, steps: &[ProcedureStep]) {
    out.push_str("<table>\n<thead><tr><th>Phase</th><th>Minutes</th><th>Teacher activity</th><th>Learner activity</th></tr></thead>\n<tbody>\n");
    for s in steps {
        out.push_str(&format!(
            "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>\n",
            s.phase.label(),
            s.minutes,
            escape_html(&s.teacher_activity),
            escape_html(&s.learner_activity)
        ));
    }
    out.push_str("</tbody>\n</table>\n");
}

fn labelled<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Vec<(String, String)> {
    entries
        .into_iter()
        .map(|(k, v)| (key_label(k), v.to_string()))
        .collect()
}

fn render_html(plan: &LessonPlan) -> String {
    let mut out = String::from("<article class=\"lesson-plan\">\n");
    out.push_str("<section class=\"general-information\">\n<h2>General Information</h2>\n");
    html_fields(
        &mut out,
        labelled(
            ordered_entries(&plan.general_information, &GENERAL_INFORMATION_KEYS)
                .into_iter()
                .chain(aux_in(&plan.auxiliary, SECTION_GENERAL_INFORMATION)),
        ),
    );
    out.push_str("</section>\n<section class=\"preparation\">\n<h2>Preparation</h2>\n");
    html_fields(
        &mut out,
        labelled(
            ordered_entries(&plan.preparation, &PREPARATION_KEYS)
                .into_iter()
                .chain(aux_in(&plan.auxiliary, SECTION_PREPARATION)),
        ),
    );
    out.push_str("</section>\n<section class=\"procedure\">\n<h2>Procedure</h2>\n");
    html_steps(&mut out, &plan.procedure);
    out.push_str("</section>\n");
    for (i, period) in plan.extra_periods.iter().enumerate() {
        out.push_str(&format!(
            "<section class=\"extra-period\">\n<h2>Period {}</h2>\n<h3>Preparation</h3>\n",
            i + 2
        ));
        html_fields(
            &mut out,
            labelled(ordered_entries(&period.preparation, &PREPARATION_KEYS)),
        );
        out.push_str("<h3>Procedure</h3>\n");
        html_steps(&mut out, &period.procedure);
        out.push_str("</section>\n");
    }
    out.push_str("</article>\n");
    out
}

fn text_steps(out: &mut String, steps: &[ProcedureStep]) {
    for s in steps {
        out.push_str(&format!(
            "  {} ({} min)\n    Teacher: {}\n    Learners: {}\n",
            s.phase.label(),
            s.minutes,
            s.teacher_activity,
            s.learner_activity
        ));
    }
}

fn render_text(plan: &LessonPlan) -> String {
    let mut out = String::from("GENERAL INFORMATION\n");
    for (k, v) in labelled(
        ordered_entries(&plan.general_information, &GENERAL_INFORMATION_KEYS)
            .into_iter()
            .chain(aux_in(&plan.auxiliary, SECTION_GENERAL_INFORMATION)),
    ) {
        out.push_str(&format!("  {k}: {v}\n"));
    }
    out.push_str("\nPREPARATION\n");
    for (k, v) in labelled(
        ordered_entries(&plan.preparation, &PREPARATION_KEYS)
            .into_iter()
            .chain(aux_in(&plan.auxiliary, SECTION_PREPARATION)),
    ) {
        out.push_str(&format!("  {k}: {v}\n"));
    }
    out.push_str("\nPROCEDURE\n");
    text_steps(&mut out, &plan.procedure);
    for (i, period) in plan.extra_periods.iter().enumerate() {
        out.push_str(&format!("\nPERIOD {}\n", i + 2));
        for (k, v) in labelled(ordered_entries(&period.preparation, &PREPARATION_KEYS)) {
            out.push_str(&format!("  {k}: {v}\n"));
        }
        text_steps(&mut out, &period.procedure);
    }
    out
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn markup_fields<'a>(out: &mut String, entries: impl IntoIterator<Item = (&'a str, &'a str)>) {
    for (k, v) in entries {
        out.push_str(&format!("{}: {}\n", key_label(k), one_line(v)));
    }
}

fn markup_steps(out: &mut String, steps: &[ProcedureStep]) {
    for s in steps {
        out.push_str(&format!(
            "- [{}|{}] teacher: {} | learners: {}\n",
            s.phase.as_str(),
            s.minutes,
            one_line(&s.teacher_activity).replace('|', "/"),
            one_line(&s.learner_activity)
        ));
    }
}

/// Write a plan in the raw markup understood by [`parse_lesson_plan`].
/// Values are flattened to one line and `|` in teacher activities becomes `/`.
pub fn to_markup(plan: &LessonPlan) -> String {
    let mut out = String::from("## GENERAL INFORMATION\n");
    markup_fields(
        &mut out,
        ordered_entries(&plan.general_information, &GENERAL_INFORMATION_KEYS)
            .into_iter()
            .chain(aux_in(&plan.auxiliary, SECTION_GENERAL_INFORMATION)),
    );
    out.push_str("## PREPARATION\n");
    markup_fields(
        &mut out,
        ordered_entries(&plan.preparation, &PREPARATION_KEYS)
            .into_iter()
            .chain(aux_in(&plan.auxiliary, SECTION_PREPARATION)),
    );
    out.push_str("## PROCEDURE\n");
    markup_steps(&mut out, &plan.procedure);
    for (i, period) in plan.extra_periods.iter().enumerate() {
        out.push_str(&format!("# PERIOD {}\n## PREPARATION\n", i + 2));
        markup_fields(
            &mut out,
            ordered_entries(&period.preparation, &PREPARATION_KEYS)
                .into_iter()
                .chain(aux_in(&period.auxiliary, SECTION_PREPARATION)),
        );
        out.push_str("## PROCEDURE\n");
        markup_steps(&mut out, &period.procedure);
    }
    out
}
