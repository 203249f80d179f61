//! Stand-in text generators for offline runs and tests.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;

use crate::plan::{to_markup, LessonPlan, Phase, ProcedureStep};
use crate::provider::{ProviderError, TextGenerator};

/// Request fields and context entries recovered from an assembled prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptFields {
    pub topic: String,
    pub subject: String,
    pub level: String,
    pub class_size: String,
    pub periods: u32,
    /// `(citation, text)` per context entry.
    pub context: Vec<(String, String)>,
}

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let rest = line.strip_prefix(key)?.strip_prefix(':')?.trim();
    (!(rest.starts_with('<') && rest.ends_with('>'))).then_some(rest)
}

/// Reads the first occurrence of each request line, so the schema's
/// `<placeholder>` lines further down never win.
pub fn parse_prompt(prompt: &str) -> PromptFields {
    let mut f = PromptFields {
        periods: 1,
        ..Default::default()
    };
    let mut periods_seen = false;
    for line in prompt.lines() {
        let line = line.trim_end();
        if f.topic.is_empty() {
            if let Some(v) = field(line, "Topic") {
                f.topic = v.to_string();
                continue;
            }
        }
        if f.subject.is_empty() {
            if let Some(v) = field(line, "Subject") {
                f.subject = v.to_string();
                continue;
            }
        }
        if f.level.is_empty() {
            if let Some(v) = field(line, "Level") {
                f.level = v.to_string();
                continue;
            }
        }
        if f.class_size.is_empty() {
            if let Some(v) = field(line, "Class size") {
                f.class_size = v.to_string();
                continue;
            }
        }
        if !periods_seen {
            if let Some(n) = field(line, "Periods").and_then(|v| v.parse().ok()) {
                f.periods = n;
                periods_seen = true;
                continue;
            }
        }
        if let Some(entry) = parse_context_entry(line) {
            f.context.push(entry);
        }
    }
    f
}

fn parse_context_entry(line: &str) -> Option<(String, String)> {
    let rest = line.strip_prefix('[')?;
    let (num, rest) = rest.split_once("] (")?;
    num.parse::<u32>().ok()?;
    let (cite, text) = rest.split_once(") ")?;
    Some((cite.to_string(), text.to_string()))
}

fn first_sentence(text: &str) -> String {
    let end = text
        .char_indices()
        .find(|&(_, c)| c == '.' || c == '?' || c == '!')
        .map(|(i, _)| i + 1)
        .unwrap_or(text.len());
    let sentence: String = text[..end].chars().take(160).collect();
    sentence.trim().to_string()
}

/// Deterministic generator that turns the prompt's request lines and context
/// into a well-formed plan. It never invents facts beyond the first sentence
/// of each cited chunk.
#[derive(Debug, Default)]
pub struct MockLlm {
    delay: Option<Duration>,
    calls: AtomicUsize,
}

impl MockLlm {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sleep before every answer; used to hold a request in flight.
    pub fn with_delay(delay: Duration) -> Self {
        Self {
            delay: Some(delay),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn plan_for(fields: &PromptFields) -> LessonPlan {
        let topic = if fields.topic.is_empty() {
            "the topic"
        } else {
            fields.topic.as_str()
        };
        let mut plan = LessonPlan::default();
        let gi = &mut plan.general_information;
        gi.insert("topic".into(), topic.to_string());
        gi.insert("subject".into(), fields.subject.clone());
        gi.insert("level".into(), fields.level.clone());
        gi.insert("class_size".into(), fields.class_size.clone());
        gi.insert("periods".into(), fields.periods.max(1).to_string());
        gi.insert("date_placeholder".into(), "____".into());

        let cites: Vec<&str> = fields.context.iter().map(|(c, _)| c.as_str()).collect();
        let references = if cites.is_empty() {
            "No textbook pages were found for this topic".to_string()
        } else {
            format!("Learner's textbook {}", cites.join(", "))
        };
        let key_fact = fields
            .context
            .first()
            .map(|(_, t)| first_sentence(t))
            .unwrap_or_else(|| format!("the main ideas of {topic}"));
        let group_work = if fields.class_size.contains('>') {
            "in groups of eight with a group leader"
        } else {
            "in pairs"
        };

        let prep = &mut plan.preparation;
        prep.insert(
            "learning_objective".into(),
            format!("By the end of the lesson learners should be able to explain {topic} using the textbook"),
        );
        prep.insert("materials".into(), "Learner's textbook, chalkboard, exercise books".into());
        prep.insert("references".into(), references);

        plan.procedure = procedure(topic, &key_fact, group_work);
        for n in 2..=fields.periods.max(1) {
            let mut period = crate::plan::Period::default();
            period.preparation.insert(
                "learning_objective".into(),
                format!("Learners should be able to apply what they learnt about {topic} in period {n}"),
            );
            period.procedure = procedure(topic, &key_fact, group_work);
            plan.extra_periods.push(period);
        }
        plan
    }
}

fn procedure(topic: &str, key_fact: &str, group_work: &str) -> Vec<ProcedureStep> {
    vec![
        ProcedureStep {
            phase: Phase::Introduction,
            minutes: 5,
            teacher_activity: format!("Asks learners what they already know about {topic}"),
            learner_activity: "Share ideas with the class".into(),
        },
        ProcedureStep {
            phase: Phase::Development,
            minutes: 25,
            teacher_activity: format!("Guides a reading of the textbook passage: {key_fact}"),
            learner_activity: format!("Read the passage and discuss it {group_work}"),
        },
        ProcedureStep {
            phase: Phase::WrapUpAndAssessment,
            minutes: 10,
            teacher_activity: format!("Asks short questions about {topic}"),
            learner_activity: "Answer the questions in exercise books".into(),
        },
    ]
}

#[async_trait]
impl TextGenerator for MockLlm {
    fn id(&self) -> String {
        "mock-llm".into()
    }

    async fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(d) = self.delay {
            tokio::time::sleep(d).await;
        }
        Ok(to_markup(&Self::plan_for(&parse_prompt(prompt))))
    }
}

#[derive(Debug, Clone)]
pub enum Step {
    Reply(String),
    Fail(String),
}

/// Replays a fixed sequence of replies or provider failures. Once the queue
/// is empty every call fails.
#[derive(Debug)]
pub struct ScriptedLlm {
    steps: Mutex<VecDeque<Step>>,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedLlm {
    pub fn new(steps: impl IntoIterator<Item = Step>) -> Self {
        Self {
            steps: Mutex::new(steps.into_iter().collect()),
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn replies<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(|r| Step::Reply(r.into())))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log").clone()
    }
}

#[async_trait]
impl TextGenerator for ScriptedLlm {
    fn id(&self) -> String {
        "scripted-llm".into()
    }

    async fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().expect("prompt log").push(prompt.to_string());
        let step = self.steps.lock().expect("script").pop_front();
        match step {
            Some(Step::Reply(text)) => Ok(text),
            Some(Step::Fail(message)) => Err(ProviderError::Exhausted {
                attempts: 1,
                message,
            }),
            None => Err(ProviderError::Exhausted {
                attempts: 1,
                message: "script exhausted".into(),
            }),
        }
    }
}
