//! Few-shot Q/A and multiple-choice riddle prompt suites with phase spans.
//!
//! Spans are character ranges counted in Unicode scalar values, matching the
//! offset mapping of common tokenizers. Few-shot shots decompose into
//! question (`Q: Latvia`), transition (`\nA:`) and answer (` Riga`); riddle
//! shots into question, choice (the five option lines) and answer
//! (`A: (E)`). Each decomposition covers every non-whitespace character of
//! its shot. The final test item has no answer span.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::store::SpanLabel;

pub const DEFAULT_TEMPLATE: &str = include_str!("../data/prompt_template.json");
pub const TEMPLATE_VERSION: u32 = 1;
pub const RIDDLE_CHOICES: usize = 5;
/// Independent shot draws per riddle when shots are prepended.
pub const RIDDLE_REPEATS: usize = 2;

#[derive(Debug, Error)]
pub enum FewShotError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("pool `{0}` is empty")]
    EmptyPool(String),
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate inputs: {}", .0.join(", "))]
    DuplicateInputs(Vec<String>),
    #[error("pool has {available} items, {needed} needed")]
    InsufficientPool { needed: usize, available: usize },
    #[error("template version {found} is not supported (expected {expected})")]
    TemplateVersion { found: u32, expected: u32 },
    #[error("invalid template: {0}")]
    Template(String),
    #[error("rendered text of `{id}` departs from the template at character {offset}")]
    TemplateMismatch { id: String, offset: usize },
}

pub type Result<T, E = FewShotError> = std::result::Result<T, E>;

/// Fixed formatting strings. Rendering is byte-for-byte reproducible from this
/// record, so it is stored alongside every suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub version: u32,
    pub question_prefix: String,
    pub transition: String,
    pub answer_prefix: String,
    pub shot_separator: String,
    /// One option line; `{label}` and `{text}` are substituted.
    pub choice_line: String,
    pub choice_labels: Vec<String>,
    pub riddle_answer_line: String,
    /// `{label}` is substituted with the correct choice label.
    pub riddle_answer: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::from_json(DEFAULT_TEMPLATE).expect("bundled template parses")
    }
}

impl PromptTemplate {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text).map_err(|e| FewShotError::Template(e.to_string()))?;
        if t.version != TEMPLATE_VERSION {
            return Err(FewShotError::TemplateVersion { found: t.version, expected: TEMPLATE_VERSION });
        }
        if t.choice_labels.len() != RIDDLE_CHOICES {
            return Err(FewShotError::Template(format!("{} choice labels", t.choice_labels.len())));
        }
        if !t.choice_line.contains("{text}") {
            return Err(FewShotError::Template("choice line lacks {text}".into()));
        }
        Ok(t)
    }

    fn choice(&self, label: &str, text: &str) -> String {
        self.choice_line.replace("{label}", label).replace("{text}", text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskItem {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotTask {
    pub name: String,
    pub items: Vec<TaskItem>,
    pub template: PromptTemplate,
}

/// Reads a pool file named after its task (`country-capital.tsv` gives task
/// `country-capital`).
pub fn load_task_pool(path: &Path) -> Result<FewShotTask> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| FewShotError::Io { path: path.display().to_string(), source })?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_task_pool(&name, &text)
}

/// One `input<TAB>output` row per line; `input → output` is also accepted.
/// Blank lines are skipped.
pub fn parse_task_pool(name: &str, text: &str) -> Result<FewShotTask> {
    let mut items = Vec::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (input, output) = raw
            .split_once('\t')
            .or_else(|| raw.split_once(" → "))
            .ok_or_else(|| FewShotError::MalformedRow { line, reason: "expected input<TAB>output".into() })?;
        let (input, output) = (input.trim(), output.trim());
        if input.is_empty() {
            return Err(FewShotError::MalformedRow { line, reason: "empty input".into() });
        }
        if output.is_empty() {
            return Err(FewShotError::MalformedRow { line, reason: "empty output".into() });
        }
        if input.contains('\n') || output.contains('\t') {
            return Err(FewShotError::MalformedRow { line, reason: "extra field".into() });
        }
        *counts.entry(input.to_string()).or_default() += 1;
        items.push(TaskItem { input: input.to_string(), output: output.to_string() });
    }
    if items.is_empty() {
        return Err(FewShotError::EmptyPool(name.to_string()));
    }
    let mut dups: Vec<String> = counts.into_iter().filter(|&(_, n)| n > 1).map(|(k, _)| k).collect();
    if !dups.is_empty() {
        dups.sort();
        return Err(FewShotError::DuplicateInputs(dups));
    }
    Ok(FewShotTask { name: name.to_string(), items, template: PromptTemplate::default() })
}

/// Character span tagged with the shot it belongs to; the test item has
/// index `k_shots`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub shot: usize,
    pub start: usize,
    pub end: usize,
    pub label: SpanLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotPrompt {
    pub id: String,
    pub task: String,
    pub shots: Vec<TaskItem>,
    pub test_input: String,
    pub expected: String,
    pub text: String,
    /// Phase spans in text order, followed by one shot-boundary span per shot.
    pub spans: Vec<PhaseSpan>,
    pub seed: u64,
}

impl FewShotPrompt {
    pub fn k_shots(&self) -> usize {
        self.shots.len()
    }
}

/// Text builder that tracks its length in characters.
#[derive(Default)]
struct Builder {
    text: String,
    chars: usize,
    spans: Vec<PhaseSpan>,
}

impl Builder {
    fn push(&mut self, s: &str) -> (usize, usize) {
        let start = self.chars;
        self.text.push_str(s);
        self.chars += s.chars().count();
        (start, self.chars)
    }

    fn span(&mut self, shot: usize, s: &str, label: SpanLabel) -> (usize, usize) {
        let (start, end) = self.push(s);
        self.spans.push(PhaseSpan { shot, start, end, label });
        (start, end)
    }

    fn finish(mut self, boundaries: Vec<(usize, usize)>) -> (String, Vec<PhaseSpan>) {
        for (shot, (start, end)) in boundaries.into_iter().enumerate() {
            self.spans.push(PhaseSpan { shot, start, end, label: SpanLabel::ShotBoundary });
        }
        (self.text, self.spans)
    }
}

fn render_fewshot(template: &PromptTemplate, shots: &[TaskItem], test_input: &str) -> (String, Vec<PhaseSpan>) {
    let mut b = Builder::default();
    let mut boundaries = Vec::with_capacity(shots.len());
    for (k, item) in shots.iter().enumerate() {
        let (start, _) = b.span(k, &format!("{}{}", template.question_prefix, item.input), SpanLabel::Question);
        b.span(k, &template.transition, SpanLabel::Transition);
        let (_, end) = b.span(k, &format!("{}{}", template.answer_prefix, item.output), SpanLabel::Answer);
        boundaries.push((start, end));
        b.push(&template.shot_separator);
    }
    let k = shots.len();
    b.span(k, &format!("{}{}", template.question_prefix, test_input), SpanLabel::Question);
    b.span(k, &template.transition, SpanLabel::Transition);
    b.finish(boundaries)
}

/// `n_prompts` prompts of `k_shots` shots plus one test item, sampled without
/// replacement within a prompt and independently across prompts.
pub fn build_fewshot_suite(task: &FewShotTask, n_prompts: usize, k_shots: usize, seed: u64) -> Result<Vec<FewShotPrompt>> {
    if task.items.len() < k_shots + 1 {
        return Err(FewShotError::InsufficientPool { needed: k_shots + 1, available: task.items.len() });
    }
    let stream = format!("fewshot/{}/k{}", task.name, k_shots);
    Ok((0..n_prompts)
        .map(|i| {
            let prompt_seed = seed::derive_seed(seed, &stream, i as u64);
            let mut rng = seed::Rng::seed_from_u64(prompt_seed);
            let picks = index::sample(&mut rng, task.items.len(), k_shots + 1).into_vec();
            let shots: Vec<TaskItem> = picks[..k_shots].iter().map(|&j| task.items[j].clone()).collect();
            let test = &task.items[picks[k_shots]];
            let (text, spans) = render_fewshot(&task.template, &shots, &test.input);
            FewShotPrompt {
                id: format!("{}-k{}-{:04}", task.name, k_shots, i),
                task: task.name.clone(),
                shots,
                test_input: test.input.clone(),
                expected: test.output.clone(),
                text,
                spans,
                seed: prompt_seed,
            }
        })
        .collect())
}

fn first_difference(a: &str, b: &str) -> usize {
    a.chars().zip(b.chars()).take_while(|(x, y)| x == y).count()
}

/// Phase spans of a few-shot prompt, after checking that its text is exactly
/// the template rendering of its items.
pub fn phase_spans(prompt: &FewShotPrompt, template: &PromptTemplate) -> Result<Vec<PhaseSpan>> {
    let (text, spans) = render_fewshot(template, &prompt.shots, &prompt.test_input);
    if text != prompt.text {
        return Err(FewShotError::TemplateMismatch { id: prompt.id.clone(), offset: first_difference(&text, &prompt.text) });
    }
    Ok(spans)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Riddle {
    pub question: String,
    pub choices: Vec<String>,
    /// Label of the correct choice, `A` through `E`.
    pub answer: String,
}

/// JSON lines, one riddle per line: `{"question", "choices": [5], "answer"}`.
pub fn parse_riddle_pool(text: &str) -> Result<Vec<Riddle>> {
    let labels = PromptTemplate::default().choice_labels;
    let mut riddles = Vec::new();
    let mut seen = HashSet::new();
    let mut dups = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let r: Riddle = serde_json::from_str(raw)
            .map_err(|e| FewShotError::MalformedRow { line, reason: e.to_string() })?;
        if r.choices.len() != RIDDLE_CHOICES {
            return Err(FewShotError::MalformedRow { line, reason: format!("{} choices, expected 5", r.choices.len()) });
        }
        if !labels.contains(&r.answer) {
            return Err(FewShotError::MalformedRow { line, reason: format!("answer label `{}`", r.answer) });
        }
        if r.question.trim().is_empty() || r.choices.iter().any(|c| c.trim().is_empty()) {
            return Err(FewShotError::MalformedRow { line, reason: "empty question or choice".into() });
        }
        if !seen.insert(r.question.clone()) {
            dups.push(r.question.clone());
        }
        riddles.push(r);
    }
    if riddles.is_empty() {
        return Err(FewShotError::EmptyPool("riddles".into()));
    }
    if !dups.is_empty() {
        return Err(FewShotError::DuplicateInputs(dups));
    }
    Ok(riddles)
}

pub fn load_riddle_pool(path: &Path) -> Result<Vec<Riddle>> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| FewShotError::Io { path: path.display().to_string(), source })?;
    parse_riddle_pool(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiddlePrompt {
    pub id: String,
    /// Index of the target in the pool.
    pub target: usize,
    /// Pool indices of the prepended solved riddles, in rendered order.
    pub shots: Vec<usize>,
    pub expected: String,
    pub text: String,
    pub spans: Vec<PhaseSpan>,
    pub seed: u64,
}

fn render_riddle(template: &PromptTemplate, pool: &[Riddle], shots: &[usize], target: usize) -> (String, Vec<PhaseSpan>) {
    let mut b = Builder::default();
    let mut boundaries = Vec::with_capacity(shots.len());
    let riddle = |b: &mut Builder, k: usize, r: &Riddle, solved: bool| {
        let (start, _) = b.span(k, &format!("{}{}", template.question_prefix, r.question), SpanLabel::Question);
        // The choice span runs from the first option's first visible character
        // to the end of the last option.
        let lines: Vec<String> =
            template.choice_labels.iter().zip(&r.choices).map(|(l, c)| template.choice(l, c)).collect();
        let joined = lines.concat();
        let lead = joined.chars().take_while(|c| c.is_whitespace()).count();
        let lead_str: String = joined.chars().take(lead).collect();
        b.push(&lead_str);
        b.span(k, &joined[lead_str.len()..], SpanLabel::Choice);
        let answer_line = &template.riddle_answer_line;
        let lead_a = answer_line.chars().take_while(|c| c.is_whitespace()).count();
        let lead_a_str: String = answer_line.chars().take(lead_a).collect();
        b.push(&lead_a_str);
        let mut answer = answer_line[lead_a_str.len()..].to_string();
        if solved {
            answer.push_str(&template.riddle_answer.replace("{label}", &r.answer));
        }
        let (_, end) = b.span(k, &answer, SpanLabel::Answer);
        (start, end)
    };
    for (k, &s) in shots.iter().enumerate() {
        boundaries.push(riddle(&mut b, k, &pool[s], true));
        b.push(&template.shot_separator);
    }
    riddle(&mut b, shots.len(), &pool[target], false);
    b.finish(boundaries)
}

/// One prompt per riddle at `k_shots = 0`; otherwise [`RIDDLE_REPEATS`]
/// prompts per riddle, each with its own draw of `k_shots` other riddles.
pub fn build_riddle_suite(pool: &[Riddle], k_shots: usize, seed: u64) -> Result<Vec<RiddlePrompt>> {
    let repeats = if k_shots == 0 { 1 } else { RIDDLE_REPEATS };
    build_riddle_suite_with(pool, k_shots, repeats, seed, &PromptTemplate::default())
}

pub fn build_riddle_suite_with(
    pool: &[Riddle],
    k_shots: usize,
    repeats: usize,
    seed: u64,
    template: &PromptTemplate,
) -> Result<Vec<RiddlePrompt>> {
    if pool.is_empty() {
        return Err(FewShotError::EmptyPool("riddles".into()));
    }
    if k_shots > 0 && pool.len() < k_shots + 1 {
        return Err(FewShotError::InsufficientPool { needed: k_shots + 1, available: pool.len() });
    }
    let stream = format!("riddle/k{k_shots}");
    let mut out = Vec::with_capacity(pool.len() * repeats);
    for target in 0..pool.len() {
        for rep in 0..repeats {
            let prompt_seed = seed::derive_seed(seed, &stream, (target * repeats + rep) as u64);
            let mut rng = seed::Rng::seed_from_u64(prompt_seed);
            let mut others: Vec<usize> = index::sample(&mut rng, pool.len() - 1, k_shots)
                .into_iter()
                .map(|j| if j >= target { j + 1 } else { j })
                .collect();
            others.shuffle(&mut rng);
            let (text, spans) = render_riddle(template, pool, &others, target);
            out.push(RiddlePrompt {
                id: format!("riddle-k{}-{:03}-{}", k_shots, target, rep),
                target,
                shots: others,
                expected: pool[target].answer.clone(),
                text,
                spans,
                seed: prompt_seed,
            });
        }
    }
    Ok(out)
}

/// Riddle counterpart of [`phase_spans`].
pub fn riddle_phase_spans(prompt: &RiddlePrompt, pool: &[Riddle], template: &PromptTemplate) -> Result<Vec<PhaseSpan>> {
    let (text, spans) = render_riddle(template, pool, &prompt.shots, prompt.target);
    if text != prompt.text {
        return Err(FewShotError::TemplateMismatch { id: prompt.id.clone(), offset: first_difference(&text, &prompt.text) });
    }
    Ok(spans)
}

/// Free-text prompt (natural passages), one per non-blank line of a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPrompt {
    pub id: String,
    pub text: String,
}

pub fn parse_text_prompts(prefix: &str, text: &str) -> Vec<TextPrompt> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| TextPrompt { id: format!("{prefix}-{i:04}"), text: l.trim().to_string() })
        .collect()
}

/// Random-text control: the whitespace-separated words of `text` in a seeded
/// random order, joined by single spaces.
pub fn shuffle_words(text: &str, seed: u64) -> String {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    words.shuffle(&mut seed::Rng::seed_from_u64(seed));
    words.join(" ")
}

/// Ground truth attached to few-shot and riddle sequences in a bundle.
/// `generated` is recorded by the extraction harness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerTruth {
    pub task: String,
    pub k_shots: usize,
    pub expected: String,
    #[serde(default)]
    pub generated: Option<String>,
}
