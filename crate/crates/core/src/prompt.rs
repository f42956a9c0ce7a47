//! Prompt rendering and completion parsing.
//!
//! A prompt is a mode-specific template with two slots, `{examples}` and
//! `{test}`. Exemplar blocks are rendered in selection order. Decomposition
//! blocks use `[QuestionN]: ... / [AnswerN]: ...` markers closed by
//! `[Final Answer]: ...`; the parser accepts both `[Question1]` and
//! `[Question 0]` spellings.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::data::{
    extract_number, format_number, serialize_table, AbilityPayload, AnswerType, DecompositionStep, Exemplar,
    TableStyle, TargetItem,
};
use crate::select::SelectionResult;

pub const ZERO_SHOT_SUFFIX: &str = "Let's think step by step";
pub const CHARS_PER_TOKEN: usize = 4;
/// Context window minus the completion cap.
pub const DEFAULT_TOKEN_BUDGET: usize = 4096 - 900;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("exemplar '{id}' carries a {got} payload but {mode} needs {expected}")]
    PayloadMismatch {
        id: String,
        mode: PromptMode,
        expected: &'static str,
        got: &'static str,
    },
    #[error("prompt for '{test_id}' needs ~{estimated} tokens, budget is {budget}")]
    TokenBudgetExceeded {
        test_id: String,
        estimated: usize,
        budget: usize,
    },
    #[error("selected exemplar '{0}' is not in the pool")]
    UnknownExemplarId(String),
    #[error("template for {mode} lacks the {{{slot}}} slot")]
    MissingSlot { mode: PromptMode, slot: &'static str },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown prompt mode '{0}'")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    IcatQd,
    IcatRg,
    FewShot,
    FewShotCot,
    ZeroShotCot,
}

impl PromptMode {
    pub const ALL: [PromptMode; 5] = [
        PromptMode::IcatQd,
        PromptMode::IcatRg,
        PromptMode::FewShot,
        PromptMode::FewShotCot,
        PromptMode::ZeroShotCot,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptMode::IcatQd => "icat_qd",
            PromptMode::IcatRg => "icat_rg",
            PromptMode::FewShot => "few_shot",
            PromptMode::FewShotCot => "few_shot_cot",
            PromptMode::ZeroShotCot => "zero_shot_cot",
        }
    }

    /// Payload kind the exemplars must carry, if any.
    fn required_payload(&self) -> Option<&'static str> {
        match self {
            PromptMode::IcatQd => Some("decomposition"),
            PromptMode::IcatRg | PromptMode::FewShotCot => Some("rationale"),
            PromptMode::FewShot | PromptMode::ZeroShotCot => None,
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptMode {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| PromptError::UnknownMode(s.to_owned()))
    }
}

/// How decomposition steps inside exemplar blocks are numbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Numbering {
    /// Index of the first step.
    pub base: usize,
    /// `[Question 1]` rather than `[Question1]`.
    pub spaced: bool,
}

impl Default for Numbering {
    fn default() -> Self {
        Self { base: 1, spaced: false }
    }
}

impl Numbering {
    fn label(&self, kind: &str, i: usize) -> String {
        let n = self.base + i;
        if self.spaced {
            format!("[{kind} {n}]")
        } else {
            format!("[{kind}{n}]")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub version: String,
    templates: BTreeMap<PromptMode, String>,
    pub numbering: Numbering,
    pub token_budget: usize,
}

impl TemplateSet {
    /// The templates shipped with the crate.
    pub fn builtin() -> Self {
        let templates = BTreeMap::from([
            (PromptMode::IcatQd, include_str!("../templates/v1/icat_qd.txt").to_owned()),
            (PromptMode::IcatRg, include_str!("../templates/v1/icat_rg.txt").to_owned()),
            (PromptMode::FewShot, include_str!("../templates/v1/few_shot.txt").to_owned()),
            (PromptMode::FewShotCot, include_str!("../templates/v1/few_shot_cot.txt").to_owned()),
            (PromptMode::ZeroShotCot, include_str!("../templates/v1/zero_shot_cot.txt").to_owned()),
        ]);
        Self {
            version: "v1".into(),
            templates,
            numbering: Numbering::default(),
            token_budget: DEFAULT_TOKEN_BUDGET,
        }
    }

    /// Load `<mode>.txt` for every mode from `dir`; the directory name is
    /// the version.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let mut templates = BTreeMap::new();
        for mode in PromptMode::ALL {
            let path = dir.join(format!("{}.txt", mode.as_str()));
            let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            templates.insert(mode, text);
        }
        let set = Self {
            version: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            templates,
            numbering: Numbering::default(),
            token_budget: DEFAULT_TOKEN_BUDGET,
        };
        set.check()?;
        Ok(set)
    }

    fn check(&self) -> Result<(), PromptError> {
        for (&mode, t) in &self.templates {
            if !t.contains("{test}") {
                return Err(PromptError::MissingSlot { mode, slot: "test" });
            }
            if mode != PromptMode::ZeroShotCot && !t.contains("{examples}") {
                return Err(PromptError::MissingSlot { mode, slot: "examples" });
            }
        }
        Ok(())
    }

    pub fn template(&self, mode: PromptMode) -> &str {
        &self.templates[&mode]
    }

    /// Template text before the first slot.
    pub fn instructions(&self, mode: PromptMode) -> &str {
        let t = self.template(mode);
        let cut = ["{examples}", "{test}"]
            .iter()
            .filter_map(|s| t.find(s))
            .min()
            .unwrap_or(t.len());
        t[..cut].trim_end()
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub mode: PromptMode,
    pub template_version: String,
    pub instructions: String,
    pub rendered: String,
    pub exemplar_ids: Vec<String>,
    pub test_id: String,
    pub content_hash: String,
}

impl PromptRecord {
    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.rendered)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(CHARS_PER_TOKEN)
}

/// Single-pass slot substitution; slot markers inside substituted values
/// are left alone.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + slots.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = slots.iter().find(|(name, _)| {
            after.starts_with(name) && after[name.len()..].starts_with('}')
        });
        match hit {
            Some((name, value)) => {
                out.push_str(value);
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn with_context(context: Option<&str>, body: String) -> String {
    match context {
        Some(c) if !c.trim().is_empty() => format!("{c}\n{body}"),
        _ => body,
    }
}

fn check_payload(mode: PromptMode, exemplar: &Exemplar) -> Result<(), PromptError> {
    match mode.required_payload() {
        Some(expected) if exemplar.payload.kind() != expected => Err(PromptError::PayloadMismatch {
            id: exemplar.id.clone(),
            mode,
            expected,
            got: exemplar.payload.kind(),
        }),
        _ => Ok(()),
    }
}

/// Render one demonstration block.
pub fn render_exemplar(mode: PromptMode, exemplar: &Exemplar, numbering: Numbering) -> Result<String, PromptError> {
    check_payload(mode, exemplar)?;
    let q = &exemplar.question;
    let a = &exemplar.answer;
    let body = match (&exemplar.payload, mode) {
        (AbilityPayload::Decomposition(steps), PromptMode::IcatQd) => {
            let mut lines = vec![format!("Q: {q}"), format!("A: {a}"), "Decomposition:".to_owned()];
            for (i, s) in steps.iter().enumerate() {
                lines.push(format!("{}: {}", numbering.label("Question", i), s.sub_question));
                lines.push(format!("{}: {}", numbering.label("Answer", i), s.sub_answer));
            }
            lines.push(format!("[Final Answer]: {a}"));
            lines.join("\n")
        }
        (AbilityPayload::Rationale(r), PromptMode::IcatRg) => format!("Q: {q}\nRationale: {r}\nAnswer: {a}"),
        (AbilityPayload::Rationale(r), PromptMode::FewShotCot) => format!("Q: {q}\nA: {r} The answer is {a}"),
        _ => format!("Q: {q}\nA: {a}"),
    };
    Ok(with_context(exemplar.context.as_deref(), body))
}

fn render_test(mode: PromptMode, test: &TargetItem) -> String {
    let context = test
        .context
        .as_ref()
        .map(|t| serialize_table(t, TableStyle::PipeRows));
    let q = &test.question;
    let body = match mode {
        PromptMode::IcatQd => format!("Test Q: {q}\nDecomposition:"),
        PromptMode::IcatRg => format!("Test Q: {q}\nRationale:"),
        PromptMode::FewShot | PromptMode::FewShotCot => format!("Q: {q}\nA:"),
        PromptMode::ZeroShotCot => format!("{q}\n{ZERO_SHOT_SUFFIX}"),
    };
    with_context(context.as_deref(), body)
}

/// Render a prompt from already-resolved exemplars.
pub fn render_prompt(
    mode: PromptMode,
    exemplars: &[&Exemplar],
    test: &TargetItem,
    templates: &TemplateSet,
) -> Result<PromptRecord, PromptError> {
    let exemplars: &[&Exemplar] = if mode == PromptMode::ZeroShotCot { &[] } else { exemplars };
    let blocks = exemplars
        .iter()
        .map(|e| render_exemplar(mode, e, templates.numbering))
        .collect::<Result<Vec<_>, _>>()?;
    let examples = blocks.join("\n\n");
    let test_block = render_test(mode, test);
    let rendered = fill(templates.template(mode), &[("examples", &examples), ("test", &test_block)]);
    let estimated = estimate_tokens(&rendered);
    if estimated > templates.token_budget {
        return Err(PromptError::TokenBudgetExceeded {
            test_id: test.id.clone(),
            estimated,
            budget: templates.token_budget,
        });
    }
    Ok(PromptRecord {
        mode,
        template_version: templates.version.clone(),
        instructions: templates.instructions(mode).to_owned(),
        content_hash: crate::sha256_hex(&rendered),
        rendered,
        exemplar_ids: exemplars.iter().map(|e| e.id.clone()).collect(),
        test_id: test.id.clone(),
    })
}

/// Render a prompt for `test` from a selection over `pool`.
pub fn build_prompt(
    mode: PromptMode,
    selection: &SelectionResult,
    pool: &[Exemplar],
    test: &TargetItem,
    templates: &TemplateSet,
) -> Result<PromptRecord, PromptError> {
    let by_id: HashMap<&str, &Exemplar> = pool.iter().map(|e| (e.id.as_str(), e)).collect();
    let chosen = selection
        .chosen
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| PromptError::UnknownExemplarId(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    render_prompt(mode, &chosen, test, templates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Clean,
    Fallback,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCompletion {
    /// Decomposition steps, for decomposition-style output.
    pub steps: Vec<DecompositionStep>,
    /// Free-text reasoning preceding the answer, for rationale-style output.
    pub rationale: Option<String>,
    pub final_answer: String,
    pub parse_status: ParseStatus,
}

impl ParsedCompletion {
    fn failed() -> Self {
        Self {
            steps: Vec::new(),
            rationale: None,
            final_answer: String::new(),
            parse_status: ParseStatus::Failed,
        }
    }
}

static MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\[(question|answer)\s*(\d+)\]\s*:|\[final answer\]\s*:").unwrap());
static ANSWER_CUE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:the answer is|answer\s*:)[ \t]*([^\n]*)").unwrap());
static RATIONALE_CUE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?im)^\s*(?:rationale\s*:|a\s*:)").unwrap());

fn first_line(s: &str) -> &str {
    s.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("")
}

fn clean_segment(s: &str) -> String {
    s.trim().trim_end_matches(',').trim_end().to_owned()
}

/// Steps and `[Final Answer]` from marker-delimited text.
fn parse_markers(raw: &str) -> (Vec<DecompositionStep>, Option<String>) {
    let marks: Vec<_> = MARKER.captures_iter(raw).collect();
    let mut steps = Vec::new();
    let mut pending: Option<String> = None;
    let mut last_final = None;
    for (i, cap) in marks.iter().enumerate() {
        let whole = cap.get(0).expect("match");
        let end = marks.get(i + 1).map_or(raw.len(), |n| n.get(0).expect("match").start());
        let segment = &raw[whole.end()..end];
        match cap.get(1).map(|m| m.as_str().to_ascii_lowercase()) {
            Some(kind) if kind == "question" => pending = Some(clean_segment(segment)),
            Some(_) => {
                if let Some(q) = pending.take() {
                    steps.push(DecompositionStep::new(q, clean_segment(segment)));
                }
            }
            None => last_final = Some(first_line(segment).to_owned()),
        }
    }
    (steps, last_final.filter(|f| !f.is_empty()))
}

/// Last answer cue ("Answer: x" / "The answer is x") with a non-empty value,
/// and the byte offset where it starts.
fn last_answer_cue(raw: &str) -> Option<(usize, String)> {
    ANSWER_CUE
        .captures_iter(raw)
        .filter_map(|c| {
            let v = c.get(1)?.as_str().trim();
            (!v.is_empty()).then(|| (c.get(0).expect("match").start(), v.to_owned()))
        })
        .last()
}

fn rationale_before(raw: &str, cut: usize) -> Option<String> {
    let head = &raw[..cut];
    let start = RATIONALE_CUE.find_iter(head).last().map_or(0, |m| m.end());
    let text = head[start..].trim();
    (!text.is_empty()).then(|| text.to_owned())
}

fn numeric_fallback(raw: &str, answer_type: AnswerType) -> Option<String> {
    match answer_type {
        AnswerType::Numeric => extract_number(raw).map(format_number),
        AnswerType::Span => None,
    }
}

/// Extract steps and the final answer from a completion.
pub fn parse_completion(raw: &str, mode: PromptMode, answer_type: AnswerType) -> ParsedCompletion {
    if raw.trim().is_empty() {
        return ParsedCompletion::failed();
    }
    let mut parsed = ParsedCompletion::failed();

    if mode == PromptMode::IcatQd {
        let (steps, final_answer) = parse_markers(raw);
        parsed.steps = steps;
        if let Some(f) = final_answer {
            parsed.final_answer = f;
            parsed.parse_status = ParseStatus::Clean;
            return parsed;
        }
        if let Some(last) = parsed.steps.last().filter(|s| !s.sub_answer.is_empty()) {
            parsed.final_answer = first_line(&last.sub_answer).to_owned();
            parsed.parse_status = ParseStatus::Fallback;
            return parsed;
        }
        // no markers at all: fall through to answer cues, flagged as fallback
    }

    if mode == PromptMode::FewShot {
        parsed.final_answer = match last_answer_cue(raw) {
            Some((_, v)) => v,
            None => first_line(raw).to_owned(),
        };
        parsed.parse_status = ParseStatus::Clean;
        return parsed;
    }

    let clean_status = if mode == PromptMode::IcatQd {
        ParseStatus::Fallback
    } else {
        ParseStatus::Clean
    };
    if let Some((at, value)) = last_answer_cue(raw) {
        parsed.rationale = rationale_before(raw, at);
        parsed.final_answer = value;
        parsed.parse_status = clean_status;
        return parsed;
    }
    if let Some(v) = numeric_fallback(raw, answer_type) {
        parsed.rationale = Some(raw.trim().to_owned());
        parsed.final_answer = v;
        parsed.parse_status = ParseStatus::Fallback;
    }
    parsed
}
