//! Adapters from the native layouts of the supported datasets.
//!
//! | format       | layout | yields |
//! |--------------|--------|--------|
//! | `aqua_rat`   | JSON-lines `{question, options, rationale, correct}` | rationale exemplars |
//! | `tabmwp`     | JSON object `{id: {question, answer, solution, table, table_title, ...}}` | rationale exemplars |
//! | `subqa`      | JSON-lines `{id, question, answer, decomposition \| sub_questions \| q1,a1,q2,a2..}` | decomposition exemplars |
//! | `strategyqa` | JSON array `{qid, question, answer: bool, facts, decomposition}` | decomposition exemplars |
//! | `multiarith` | JSON array `{iIndex, sQuestion, lSolutions}` | numeric targets |
//! | `svamp`      | JSON array `{ID, Body, Question, Answer}` | numeric targets |
//! | `wqa`        | JSON array `{_id, question, answer}` (2WikiMultihopQA) | span targets |
//! | `musique`    | JSON-lines `{id, question, answer, answerable}` | span targets |
//! | `finqa`      | JSON array `{id, pre_text, post_text, table, qa: {question, answer, exe_ans}}` | numeric targets with tables |

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde_json::{Map, Value};

use super::{
    format_number, parse_number, read_file, AbilityPayload, AnswerType, Category, DataError,
    Dataset, DatasetFormat, DecompositionStep, Exemplar, TableContext, TargetItem,
};

struct Ctx<'a> {
    path: &'a Path,
    dataset: &'static str,
}

impl Ctx<'_> {
    fn schema(&self, record: impl Into<String>, message: impl Into<String>) -> DataError {
        DataError::Schema {
            path: self.path.to_owned(),
            record: record.into(),
            message: message.into(),
        }
    }

    fn parse(&self, line: usize, message: impl Into<String>) -> DataError {
        DataError::Parse {
            path: self.path.to_owned(),
            line,
            message: message.into(),
        }
    }
}

/// A JSON record with its position label ("line 3" or "record 3").
struct Rec<'a> {
    label: String,
    obj: &'a Map<String, Value>,
}

impl Rec<'_> {
    fn get(&self, ctx: &Ctx, key: &str) -> Result<&Value, DataError> {
        self.obj
            .get(key)
            .filter(|v| !v.is_null())
            .ok_or_else(|| ctx.schema(&self.label, format!("missing field '{key}'")))
    }

    fn str(&self, ctx: &Ctx, key: &str) -> Result<String, DataError> {
        scalar_string(self.get(ctx, key)?)
            .ok_or_else(|| ctx.schema(&self.label, format!("field '{key}' is not a string")))
    }

    fn opt_str(&self, key: &str) -> Option<String> {
        self.obj.get(key).and_then(scalar_string)
    }

    fn id_or(&self, ctx: &Ctx, keys: &[&str], ordinal: usize) -> String {
        keys.iter()
            .find_map(|k| self.opt_str(k))
            .unwrap_or_else(|| format!("{}-{}", ctx.dataset, ordinal))
    }
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => n.as_f64().map(format_number),
        Value::Bool(b) => Some(if *b { "Yes" } else { "No" }.to_owned()),
        _ => None,
    }
}

fn string_list(v: &Value) -> Option<Vec<String>> {
    v.as_array()?.iter().map(scalar_string).collect()
}

fn jsonl_records(ctx: &Ctx, text: &str) -> Result<Vec<(usize, Map<String, Value>)>, DataError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| match serde_json::from_str::<Value>(line) {
            Ok(Value::Object(m)) => Ok((i + 1, m)),
            Ok(_) => Err(ctx.parse(i + 1, "expected a JSON object")),
            Err(e) => Err(ctx.parse(i + 1, e.to_string())),
        })
        .collect()
}

fn json_array(ctx: &Ctx, text: &str) -> Result<Vec<Map<String, Value>>, DataError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ctx.parse(e.line(), e.to_string()))?;
    let items = match value {
        Value::Array(items) => items,
        // some releases wrap the list: {"data": [...]}
        Value::Object(mut m) if m.get("data").is_some_and(Value::is_array) => {
            match m.remove("data") {
                Some(Value::Array(items)) => items,
                _ => unreachable!(),
            }
        }
        _ => return Err(ctx.parse(1, "expected a JSON array of records")),
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, v)| match v {
            Value::Object(m) => Ok(m),
            _ => Err(ctx.schema(format!("record {}", i + 1), "expected a JSON object")),
        })
        .collect()
}

pub fn load(path: &Path, format: DatasetFormat) -> Result<Dataset, DataError> {
    let text = read_file(path)?;
    let dataset = format.as_str();
    let ctx = Ctx { path, dataset };
    match format {
        DatasetFormat::AquaRat => aqua_rat(&ctx, &text).map(Dataset::Exemplars),
        DatasetFormat::Tabmwp => tabmwp(&ctx, &text).map(Dataset::Exemplars),
        DatasetFormat::Subqa => subqa(&ctx, &text).map(Dataset::Exemplars),
        DatasetFormat::Strategyqa => strategyqa(&ctx, &text).map(Dataset::Exemplars),
        DatasetFormat::Multiarith => multiarith(&ctx, &text).map(Dataset::Targets),
        DatasetFormat::Svamp => svamp(&ctx, &text).map(Dataset::Targets),
        DatasetFormat::Wqa => wqa(&ctx, &text).map(Dataset::Targets),
        DatasetFormat::Musique => musique(&ctx, &text).map(Dataset::Targets),
        DatasetFormat::Finqa => finqa(&ctx, &text).map(Dataset::Targets),
        DatasetFormat::Unified => super::unified::load(path),
    }
}

static OPTION_PREFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\(?([A-Ea-e])\s*\)\s*").unwrap());

fn aqua_rat(ctx: &Ctx, text: &str) -> Result<Vec<Exemplar>, DataError> {
    jsonl_records(ctx, text)?
        .into_iter()
        .enumerate()
        .map(|(ordinal, (line, obj))| {
            let rec = Rec {
                label: format!("line {line}"),
                obj: &obj,
            };
            let question = rec.str(ctx, "question")?;
            let rationale = rec.str(ctx, "rationale")?;
            let correct = rec.str(ctx, "correct")?.trim().to_uppercase();
            let options = rec
                .obj
                .get("options")
                .and_then(string_list)
                .ok_or_else(|| ctx.schema(&rec.label, "missing field 'options'"))?;
            let answer = options
                .iter()
                .find_map(|o| {
                    let caps = OPTION_PREFIX.captures(o)?;
                    (caps[1].to_uppercase() == correct).then(|| o[caps[0].len()..].trim().to_owned())
                })
                .filter(|value| parse_number(value).is_some())
                .map(|value| format_number(parse_number(&value).expect("checked")))
                .unwrap_or(correct);
            Ok(Exemplar {
                id: rec.id_or(ctx, &["id"], ordinal),
                question: format!("{}\nOptions: {}", question.trim(), options.join(" ")),
                answer,
                payload: AbilityPayload::Rationale(rationale.trim().to_owned()),
                categories: BTreeSet::new(),
                source_dataset: ctx.dataset.to_owned(),
                context: None,
            })
        })
        .collect()
}

fn tabmwp(ctx: &Ctx, text: &str) -> Result<Vec<Exemplar>, DataError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ctx.parse(e.line(), e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(ctx.parse(1, "expected a JSON object keyed by problem id"));
    };
    map.iter()
        .map(|(id, v)| {
            let obj = v
                .as_object()
                .ok_or_else(|| ctx.schema(id.clone(), "expected a JSON object"))?;
            let rec = Rec {
                label: id.clone(),
                obj,
            };
            let table = rec.opt_str("table").unwrap_or_default();
            let context = match rec.opt_str("table_title") {
                Some(title) if !title.trim().is_empty() => format!("{}\n{}", title.trim(), table.trim()),
                _ => table.trim().to_owned(),
            };
            let mut categories = BTreeSet::from([Category::Table]);
            if rec.opt_str("ques_type").is_some_and(|t| t.contains("free_text")) {
                categories.insert(Category::MultiStep);
            }
            Ok(Exemplar {
                id: id.clone(),
                question: rec.str(ctx, "question")?.trim().to_owned(),
                answer: rec.str(ctx, "answer")?.trim().to_owned(),
                payload: AbilityPayload::Rationale(rec.str(ctx, "solution")?.trim().to_owned()),
                categories,
                source_dataset: ctx.dataset.to_owned(),
                context: (!context.is_empty()).then_some(context),
            })
        })
        .collect()
}

fn step_list(ctx: &Ctx, rec: &Rec, v: &Value) -> Result<Vec<DecompositionStep>, DataError> {
    let items = v
        .as_array()
        .ok_or_else(|| ctx.schema(&rec.label, "decomposition is not a list"))?;
    items
        .iter()
        .map(|step| {
            let q = step.get("question").or_else(|| step.get("sub_question")).and_then(scalar_string);
            let a = step.get("answer").or_else(|| step.get("sub_answer")).and_then(scalar_string);
            match (q, a) {
                (Some(q), Some(a)) => Ok(DecompositionStep::new(q.trim(), a.trim())),
                _ => Err(ctx.schema(&rec.label, "decomposition step needs 'question' and 'answer'")),
            }
        })
        .collect()
}

fn subqa(ctx: &Ctx, text: &str) -> Result<Vec<Exemplar>, DataError> {
    jsonl_records(ctx, text)?
        .into_iter()
        .enumerate()
        .map(|(ordinal, (line, obj))| {
            let rec = Rec {
                label: format!("line {line}"),
                obj: &obj,
            };
            let steps = match rec.obj.get("decomposition").or_else(|| rec.obj.get("sub_questions")) {
                Some(v) => step_list(ctx, &rec, v)?,
                None => {
                    let mut steps = Vec::new();
                    for n in 1.. {
                        match (rec.opt_str(&format!("q{n}")), rec.opt_str(&format!("a{n}"))) {
                            (Some(q), Some(a)) => steps.push(DecompositionStep::new(q.trim(), a.trim())),
                            _ => break,
                        }
                    }
                    if steps.is_empty() {
                        return Err(ctx.schema(&rec.label, "missing field 'decomposition'"));
                    }
                    steps
                }
            };
            Ok(Exemplar {
                id: rec.id_or(ctx, &["id", "_id"], ordinal),
                question: rec.str(ctx, "question")?.trim().to_owned(),
                answer: rec.str(ctx, "answer")?.trim().to_owned(),
                payload: AbilityPayload::Decomposition(steps),
                categories: BTreeSet::from([Category::Compositional]),
                source_dataset: ctx.dataset.to_owned(),
                context: None,
            })
        })
        .collect()
}

static COMPARISON: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(\w+er|more|less|fewer)\s+than\b|\bexceeds?\b|\b(older|younger|earlier|later|longer|shorter|bigger|smaller|larger|higher|lower)\b|\bsame\b|\b(first|last)\b.*\bor\b|\bboth\b",
    )
    .unwrap()
});

/// Whether a question compares two entities or quantities.
pub fn is_comparison(question: &str) -> bool {
    COMPARISON.is_match(question)
}

fn strategyqa(ctx: &Ctx, text: &str) -> Result<Vec<Exemplar>, DataError> {
    json_array(ctx, text)?
        .iter()
        .enumerate()
        .map(|(ordinal, obj)| {
            let rec = Rec {
                label: format!("record {}", ordinal + 1),
                obj,
            };
            let question = rec.str(ctx, "question")?.trim().to_owned();
            let answer = rec.str(ctx, "answer")?;
            let decomposition = rec.get(ctx, "decomposition")?;
            let steps = if decomposition.as_array().is_some_and(|a| a.iter().all(Value::is_object)) {
                step_list(ctx, &rec, decomposition)?
            } else {
                let subs = string_list(decomposition)
                    .ok_or_else(|| ctx.schema(&rec.label, "decomposition is not a list of strings"))?;
                let facts = rec.obj.get("facts").and_then(string_list).unwrap_or_default();
                let n = subs.len();
                subs.into_iter()
                    .enumerate()
                    .map(|(i, q)| {
                        let a = match facts.get(i) {
                            Some(f) if !f.trim().is_empty() => f.trim().to_owned(),
                            _ if i + 1 == n => answer.clone(),
                            _ => return Err(ctx.schema(&rec.label, format!("no fact to answer step {}", i + 1))),
                        };
                        Ok(DecompositionStep::new(q.trim(), a))
                    })
                    .collect::<Result<Vec<_>, _>>()?
            };
            let tag = if is_comparison(&question) {
                Category::Comparison
            } else {
                Category::Inference
            };
            Ok(Exemplar {
                id: rec.id_or(ctx, &["qid", "id"], ordinal),
                question,
                answer,
                payload: AbilityPayload::Decomposition(steps),
                categories: BTreeSet::from([tag]),
                source_dataset: ctx.dataset.to_owned(),
                context: None,
            })
        })
        .collect()
}

fn numeric_target(
    ctx: &Ctx,
    id: String,
    question: String,
    gold: String,
    context: Option<TableContext>,
) -> TargetItem {
    let answer_type = if parse_number(&gold).is_some() {
        AnswerType::Numeric
    } else {
        AnswerType::Span
    };
    TargetItem {
        id,
        question,
        gold_answer: gold,
        context,
        answer_type,
        dataset: ctx.dataset.to_owned(),
    }
}

fn multiarith(ctx: &Ctx, text: &str) -> Result<Vec<TargetItem>, DataError> {
    json_array(ctx, text)?
        .iter()
        .enumerate()
        .map(|(ordinal, obj)| {
            let rec = Rec {
                label: format!("record {}", ordinal + 1),
                obj,
            };
            let gold = rec
                .get(ctx, "lSolutions")?
                .as_array()
                .and_then(|a| a.first())
                .and_then(scalar_string)
                .ok_or_else(|| ctx.schema(&rec.label, "lSolutions is empty"))?;
            Ok(numeric_target(
                ctx,
                rec.id_or(ctx, &["iIndex"], ordinal),
                rec.str(ctx, "sQuestion")?.trim().to_owned(),
                gold,
                None,
            ))
        })
        .collect()
}

fn svamp(ctx: &Ctx, text: &str) -> Result<Vec<TargetItem>, DataError> {
    json_array(ctx, text)?
        .iter()
        .enumerate()
        .map(|(ordinal, obj)| {
            let rec = Rec {
                label: format!("record {}", ordinal + 1),
                obj,
            };
            let body = rec.str(ctx, "Body")?;
            let question = rec.str(ctx, "Question")?;
            let joined = if body.trim_end().ends_with(['.', '?', '!']) {
                format!("{} {}", body.trim(), question.trim())
            } else {
                format!("{}. {}", body.trim(), question.trim())
            };
            Ok(numeric_target(
                ctx,
                rec.id_or(ctx, &["ID", "id"], ordinal),
                joined,
                rec.str(ctx, "Answer")?,
                None,
            ))
        })
        .collect()
}

fn span_target(ctx: &Ctx, id: String, question: String, gold: String) -> TargetItem {
    TargetItem {
        id,
        question,
        gold_answer: gold,
        context: None,
        answer_type: AnswerType::Span,
        dataset: ctx.dataset.to_owned(),
    }
}

fn wqa(ctx: &Ctx, text: &str) -> Result<Vec<TargetItem>, DataError> {
    json_array(ctx, text)?
        .iter()
        .enumerate()
        .map(|(ordinal, obj)| {
            let rec = Rec {
                label: format!("record {}", ordinal + 1),
                obj,
            };
            Ok(span_target(
                ctx,
                rec.id_or(ctx, &["_id", "id"], ordinal),
                rec.str(ctx, "question")?.trim().to_owned(),
                rec.str(ctx, "answer")?.trim().to_owned(),
            ))
        })
        .collect()
}

fn musique(ctx: &Ctx, text: &str) -> Result<Vec<TargetItem>, DataError> {
    let mut out = Vec::new();
    for (ordinal, (line, obj)) in jsonl_records(ctx, text)?.into_iter().enumerate() {
        let rec = Rec {
            label: format!("line {line}"),
            obj: &obj,
        };
        if rec.obj.get("answerable").and_then(Value::as_bool) == Some(false) {
            continue;
        }
        out.push(span_target(
            ctx,
            rec.id_or(ctx, &["id"], ordinal),
            rec.str(ctx, "question")?.trim().to_owned(),
            rec.str(ctx, "answer")?.trim().to_owned(),
        ));
    }
    Ok(out)
}

fn join_text(v: Option<&Value>) -> String {
    match v {
        Some(Value::String(s)) => s.trim().to_owned(),
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(scalar_string)
            .map(|s| s.trim().to_owned())
            .filter(|s| !s.is_empty() && s != ".")
            .collect::<Vec<_>>()
            .join(" "),
        _ => String::new(),
    }
}

fn finqa(ctx: &Ctx, text: &str) -> Result<Vec<TargetItem>, DataError> {
    json_array(ctx, text)?
        .iter()
        .enumerate()
        .map(|(ordinal, obj)| {
            let rec = Rec {
                label: format!("record {}", ordinal + 1),
                obj,
            };
            let qa = rec
                .get(ctx, "qa")?
                .as_object()
                .ok_or_else(|| ctx.schema(&rec.label, "field 'qa' is not an object"))?;
            let qa_rec = Rec {
                label: rec.label.clone(),
                obj: qa,
            };
            let question = qa_rec.str(ctx, "question")?.trim().to_owned();
            let answer = qa_rec.opt_str("answer").filter(|a| parse_number(a).is_some());
            let gold = answer
                .or_else(|| qa_rec.opt_str("exe_ans"))
                .ok_or_else(|| ctx.schema(&rec.label, "missing field 'answer'"))?;
            let rows = rec
                .get(ctx, "table")?
                .as_array()
                .ok_or_else(|| ctx.schema(&rec.label, "field 'table' is not a list"))?
                .iter()
                .map(|row| string_list(row).ok_or_else(|| ctx.schema(&rec.label, "table row is not a list of strings")))
                .collect::<Result<Vec<_>, _>>()?;
            let (header, body) = match rows.split_first() {
                Some((h, b)) => (h.clone(), b.to_vec()),
                None => (Vec::new(), Vec::new()),
            };
            let table = TableContext::new(
                header,
                body,
                join_text(rec.obj.get("pre_text")),
                join_text(rec.obj.get("post_text")),
            )
            .map_err(|e| ctx.schema(&rec.label, e.to_string()))?;
            Ok(numeric_target(
                ctx,
                rec.id_or(ctx, &["id"], ordinal),
                question,
                gold,
                Some(table),
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_text(format: DatasetFormat, text: &str) -> Result<Dataset, DataError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.json");
        std::fs::write(&path, text).unwrap();
        super::super::load_dataset(&path, format)
    }

    #[test]
    fn aqua_rat_folds_options() {
        let line = r#"{"question":"A trader sold an article at a profit of 20% for Rs.360. What is the cost price of the article?","options":["A)270","B)300","C)280","D)320","E)315"],"rationale":"Cost Price = 100/120 * 360 = 300\nANSWER:B","correct":"B"}"#;
        let ex = load_text(DatasetFormat::AquaRat, line).unwrap().into_exemplars().unwrap();
        assert_eq!(ex[0].id, "aqua_rat-0");
        assert_eq!(ex[0].answer, "300");
        assert!(ex[0].question.ends_with("Options: A)270 B)300 C)280 D)320 E)315"));
        assert!(matches!(ex[0].payload, AbilityPayload::Rationale(_)));
    }

    #[test]
    fn aqua_rat_non_numeric_option_keeps_letter() {
        let line = r#"{"question":"Which is prime?","options":["A)four","B)five"],"rationale":"five is prime","correct":"B"}"#;
        let ex = load_text(DatasetFormat::AquaRat, line).unwrap().into_exemplars().unwrap();
        assert_eq!(ex[0].answer, "B");
    }

    #[test]
    fn strategyqa_comparison_tag_and_steps() {
        let text = r#"[{"qid":"s1","question":"Does Andrew Johnson's presidential number exceed Elagabalus's Emperor number?","answer":false,
            "facts":["Andrew Johnson was the 17th president.","Elagabalus was the 25th Roman emperor."],
            "decomposition":["What number president was Andrew Johnson?","What number emperor was Elagabalus?","Is #1 greater than #2?"]},
            {"qid":"s2","question":"Could a llama birth twice during the War in Vietnam?","answer":false,
            "facts":["The war lasted 20 years.","A llama gestation is 11 months."],
            "decomposition":["How long was the Vietnam war?","How long is llama gestation?"]}]"#;
        let ex = load_text(DatasetFormat::Strategyqa, text).unwrap().into_exemplars().unwrap();
        assert_eq!(ex[0].id, "s1");
        assert!(ex[0].categories.contains(&Category::Comparison));
        assert!(ex[1].categories.contains(&Category::Inference));
        let AbilityPayload::Decomposition(steps) = &ex[0].payload else { panic!() };
        assert_eq!(steps.len(), 3);
        assert_eq!(steps[0].sub_question, "What number president was Andrew Johnson?");
        assert_eq!(steps[0].sub_answer, "Andrew Johnson was the 17th president.");
        assert_eq!(steps[2].sub_answer, "No");
    }

    #[test]
    fn strategyqa_missing_fact_mid_chain_is_schema_error() {
        let text = r#"[{"qid":"s","question":"q?","answer":true,"facts":[],"decomposition":["a?","b?"]}]"#;
        assert!(matches!(load_text(DatasetFormat::Strategyqa, text), Err(DataError::Schema { .. })));
    }

    #[test]
    fn subqa_variants() {
        let text = concat!(
            r#"{"id":"a","question":"What award did the writer of Never Let Me Go novel win in 1989?","answer":"Booker Prize","q1":"Who wrote Never Let Me Go?","a1":"Kazuo Ishiguro","q2":"What award did Kazuo Ishiguro win in 1989?","a2":"Booker Prize"}"#,
            "\n",
            r#"{"id":"b","question":"q?","answer":"x","decomposition":[{"question":"s?","answer":"x"}]}"#
        );
        let ex = load_text(DatasetFormat::Subqa, text).unwrap().into_exemplars().unwrap();
        let AbilityPayload::Decomposition(steps) = &ex[0].payload else { panic!() };
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[1].sub_answer, "Booker Prize");
        assert!(ex[0].categories.contains(&Category::Compositional));
        assert_eq!(ex[1].id, "b");

        let missing = r#"{"id":"c","question":"q?","answer":"x"}"#;
        assert!(matches!(load_text(DatasetFormat::Subqa, missing), Err(DataError::Schema { .. })));
    }

    #[test]
    fn tabmwp_keeps_order_and_table() {
        let text = r#"{"9":{"question":"What is the range of the numbers?","answer":"5","solution":"Max 9, min 4. 9 - 4 = 5.","table":"Day | km\nMonday | 4\nTuesday | 9","table_title":"Kilometers walked","ques_type":"free_text"},
                      "2":{"question":"q2?","answer":"1","solution":"s","table":"a | b"}}"#;
        let ex = load_text(DatasetFormat::Tabmwp, text).unwrap().into_exemplars().unwrap();
        assert_eq!(ex[0].id, "9");
        assert_eq!(ex[1].id, "2");
        assert_eq!(ex[0].context.as_deref(), Some("Kilometers walked\nDay | km\nMonday | 4\nTuesday | 9"));
        assert!(ex[0].categories.contains(&Category::Table));
    }

    #[test]
    fn numeric_targets() {
        let ma = r#"[{"iIndex":7,"sQuestion":" In fourth grade there were 10 students at the start of the year. During the year 4 students left and 42 new students came to school. How many students were in fourth grade at the end? ","lSolutions":[48.0]}]"#;
        let t = load_text(DatasetFormat::Multiarith, ma).unwrap().into_targets().unwrap();
        assert_eq!(t[0].id, "7");
        assert_eq!(t[0].gold_answer, "48");
        assert_eq!(t[0].answer_type, AnswerType::Numeric);

        let sv = r#"[{"ID":"chal-1","Body":"Each pack of dvds costs 76 dollars. If there is a discount of 25 dollars on each pack","Question":"How much do you have to pay to buy each pack?","Answer":51.0}]"#;
        let t = load_text(DatasetFormat::Svamp, sv).unwrap().into_targets().unwrap();
        assert_eq!(
            t[0].question,
            "Each pack of dvds costs 76 dollars. If there is a discount of 25 dollars on each pack. How much do you have to pay to buy each pack?"
        );
        assert_eq!(t[0].gold_answer, "51");
    }

    #[test]
    fn span_targets() {
        let w = r#"[{"_id":"w1","type":"comparison","question":"Who was born later, Gideon Johnson Pillow or Holm Jølsen?","answer":"Holm Jølsen"}]"#;
        let t = load_text(DatasetFormat::Wqa, w).unwrap().into_targets().unwrap();
        assert_eq!(t[0].id, "w1");
        assert_eq!(t[0].answer_type, AnswerType::Span);

        let m = concat!(
            r#"{"id":"m1","question":"What did the actress in My Fair Lady win a Tony for?","answer":"Best Actress in a Musical Ondine","answerable":true}"#,
            "\n",
            r#"{"id":"m2","question":"x?","answer":"y","answerable":false}"#
        );
        let t = load_text(DatasetFormat::Musique, m).unwrap().into_targets().unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn finqa_table_verbatim() {
        let f = r#"[{"id":"GS/2010/page_1.pdf-1","pre_text":["the firm segregates assets .","amounts are in billions ."],"post_text":["see note 29 ."],
            "table":[["in billions","2010","2009"],["segregated cash","$ 25.0","$ 24.0"],["securities","9.7","10.2"]],
            "qa":{"question":"In 2010 and 2009 , what was the total fair value in billions of assets segregated for the benefit of securities and futures brokerage customers?","answer":"68.9","exe_ans":68.9}}]"#;
        let t = load_text(DatasetFormat::Finqa, f).unwrap().into_targets().unwrap();
        let table = t[0].context.as_ref().unwrap();
        assert_eq!(table.header, vec!["in billions", "2010", "2009"]);
        assert_eq!(table.rows[0], vec!["segregated cash", "$ 25.0", "$ 24.0"]);
        assert_eq!(table.pre_text, "the firm segregates assets . amounts are in billions .");
        assert_eq!(t[0].gold_answer, "68.9");
        assert_eq!(t[0].answer_type, AnswerType::Numeric);
    }

    #[test]
    fn missing_field_names_field() {
        let err = load_text(DatasetFormat::Wqa, r#"[{"_id":"w1","answer":"x"}]"#).unwrap_err();
        assert!(err.to_string().contains("'question'"), "{err}");
        let err = load_text(DatasetFormat::Musique, "{\"id\":1}\nnot json").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn comparison_heuristic() {
        assert!(is_comparison("Who was born later, Gideon Johnson Pillow or Holm Jølsen?"));
        assert!(is_comparison("Is Mount Everest taller than K2?"));
        assert!(!is_comparison("Who is the spouse of the person who voices Jarvis in Iron Man?"));
    }
}
