//! Transfer and target datasets.
//!
//! Every dataset is normalized into one of two record shapes: [`Exemplar`]
//! (a transfer record carrying a rationale or a decomposition) or
//! [`TargetItem`] (a test question with its gold answer). The unified
//! JSON-lines schema in [`unified`] is the interchange hub; the native
//! adapters in [`native`] are thin front-ends onto it.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::TokenScheme;

pub mod native;
mod numeric;
mod table;
pub mod unified;

pub use numeric::{extract_number, format_number, parse_number};
pub use table::{serialize_table, TableStyle};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: cannot read: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: record {record}: {message}")]
    Schema {
        path: PathBuf,
        record: String,
        message: String,
    },
    #[error("invalid record {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("unknown dataset format '{0}'")]
    UnknownFormat(String),
    #[error(transparent)]
    Divergence(#[from] crate::select::SelectError),
}

/// Question-type and operator tags used for coverage accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Compositional,
    Comparison,
    Inference,
    Addition,
    Multiplication,
    Division,
    MultiStep,
    Table,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Compositional,
        Category::Comparison,
        Category::Inference,
        Category::Addition,
        Category::Multiplication,
        Category::Division,
        Category::MultiStep,
        Category::Table,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Compositional => "compositional",
            Category::Comparison => "comparison",
            Category::Inference => "inference",
            Category::Addition => "addition",
            Category::Multiplication => "multiplication",
            Category::Division => "division",
            Category::MultiStep => "multi-step",
            Category::Table => "table",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionStep {
    pub sub_question: String,
    pub sub_answer: String,
}

impl DecompositionStep {
    pub fn new(sub_question: impl Into<String>, sub_answer: impl Into<String>) -> Self {
        Self {
            sub_question: sub_question.into(),
            sub_answer: sub_answer.into(),
        }
    }
}

/// The reasoning a transfer record demonstrates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbilityPayload {
    Decomposition(Vec<DecompositionStep>),
    Rationale(String),
}

impl AbilityPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            AbilityPayload::Decomposition(_) => "decomposition",
            AbilityPayload::Rationale(_) => "rationale",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub payload: AbilityPayload,
    pub categories: BTreeSet<Category>,
    pub source_dataset: String,
    /// Serialized table or passage shown before the question (TabMWP).
    pub context: Option<String>,
}

impl Exemplar {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |message: &str| {
            Err(DataError::Invalid {
                id: self.id.clone(),
                message: message.to_owned(),
            })
        };
        if self.id.trim().is_empty() {
            return bad("empty id");
        }
        if self.question.trim().is_empty() {
            return bad("empty question");
        }
        match &self.payload {
            AbilityPayload::Rationale(r) if r.trim().is_empty() => bad("empty rationale"),
            AbilityPayload::Decomposition(steps) if steps.is_empty() => bad("empty decomposition"),
            AbilityPayload::Decomposition(steps)
                if steps
                    .iter()
                    .any(|s| s.sub_question.trim().is_empty() || s.sub_answer.trim().is_empty()) =>
            {
                bad("decomposition step with empty sub-question or sub-answer")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    Numeric,
    Span,
}

/// Table plus surrounding text, as in FinQA.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableContext {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub pre_text: String,
    pub post_text: String,
}

impl TableContext {
    pub fn new(
        header: Vec<String>,
        rows: Vec<Vec<String>>,
        pre_text: impl Into<String>,
        post_text: impl Into<String>,
    ) -> Result<Self, DataError> {
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != header.len()) {
            return Err(DataError::Invalid {
                id: format!("table row {i}"),
                message: format!("row has {} cells, header has {}", r.len(), header.len()),
            });
        }
        Ok(Self {
            header,
            rows,
            pre_text: pre_text.into(),
            post_text: post_text.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetItem {
    pub id: String,
    pub question: String,
    pub gold_answer: String,
    pub context: Option<TableContext>,
    pub answer_type: AnswerType,
    pub dataset: String,
}

impl TargetItem {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.question.trim().is_empty() {
            return Err(DataError::Invalid {
                id: self.id.clone(),
                message: "empty question".into(),
            });
        }
        if self.answer_type == AnswerType::Numeric && parse_number(&self.gold_answer).is_none() {
            return Err(DataError::Invalid {
                id: self.id.clone(),
                message: format!("numeric gold '{}' does not parse", self.gold_answer),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Exemplars(Vec<Exemplar>),
    Targets(Vec<TargetItem>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Exemplars(v) => v.len(),
            Dataset::Targets(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn questions(&self) -> Vec<String> {
        match self {
            Dataset::Exemplars(v) => v.iter().map(|e| e.question.clone()).collect(),
            Dataset::Targets(v) => v.iter().map(|t| t.question.clone()).collect(),
        }
    }

    pub fn into_exemplars(self) -> Option<Vec<Exemplar>> {
        match self {
            Dataset::Exemplars(v) => Some(v),
            Dataset::Targets(_) => None,
        }
    }

    pub fn into_targets(self) -> Option<Vec<TargetItem>> {
        match self {
            Dataset::Targets(v) => Some(v),
            Dataset::Exemplars(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    AquaRat,
    Tabmwp,
    Subqa,
    Strategyqa,
    Multiarith,
    Svamp,
    Wqa,
    Musique,
    Finqa,
    Unified,
}

impl DatasetFormat {
    pub const ALL: [DatasetFormat; 10] = [
        DatasetFormat::AquaRat,
        DatasetFormat::Tabmwp,
        DatasetFormat::Subqa,
        DatasetFormat::Strategyqa,
        DatasetFormat::Multiarith,
        DatasetFormat::Svamp,
        DatasetFormat::Wqa,
        DatasetFormat::Musique,
        DatasetFormat::Finqa,
        DatasetFormat::Unified,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetFormat::AquaRat => "aqua_rat",
            DatasetFormat::Tabmwp => "tabmwp",
            DatasetFormat::Subqa => "subqa",
            DatasetFormat::Strategyqa => "strategyqa",
            DatasetFormat::Multiarith => "multiarith",
            DatasetFormat::Svamp => "svamp",
            DatasetFormat::Wqa => "wqa",
            DatasetFormat::Musique => "musique",
            DatasetFormat::Finqa => "finqa",
            DatasetFormat::Unified => "unified",
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetFormat {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetFormat::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| DataError::UnknownFormat(s.to_owned()))
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Load and normalize a dataset file. Record order follows the file.
pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let dataset = match format {
        DatasetFormat::Unified => unified::load(path)?,
        other => native::load(path, other)?,
    };
    match &dataset {
        Dataset::Exemplars(v) => v.iter().try_for_each(Exemplar::validate)?,
        Dataset::Targets(v) => v.iter().try_for_each(TargetItem::validate)?,
    }
    Ok(dataset)
}

/// Seeded uniform sample of `n` items without replacement, preserving the
/// original order. Returns everything when `n >= items.len()`.
pub fn sample_subset<T: Clone>(items: &[T], n: usize, seed: u64) -> Vec<T> {
    if n >= items.len() {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, items.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatednessRow {
    pub transfer: String,
    pub target: String,
    pub js_divergence: f64,
    pub scheme: TokenScheme,
}

/// JS divergence between the concatenated question texts of each
/// (transfer, target) pair, sorted ascending.
pub fn relatedness_report(
    pairs: &[(&str, &Dataset, &str, &Dataset)],
    scheme: TokenScheme,
) -> Result<Vec<RelatednessRow>, DataError> {
    let mut rows = pairs
        .iter()
        .map(|(tn, transfer, gn, target)| {
            let js = crate::select::js_divergence(&transfer.questions(), &target.questions(), scheme)?;
            Ok(RelatednessRow {
                transfer: (*tn).to_owned(),
                target: (*gn).to_owned(),
                js_divergence: js,
                scheme,
            })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    rows.sort_by(|a, b| {
        a.js_divergence
            .total_cmp(&b.js_divergence)
            .then_with(|| a.transfer.cmp(&b.transfer))
            .then_with(|| a.target.cmp(&b.target))
    });
    Ok(rows)
}

pub fn relatedness_csv(rows: &[RelatednessRow]) -> String {
    let mut out = String::from("transfer,target,js_divergence,scheme\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{}\n",
            r.transfer, r.target, r.js_divergence, r.scheme
        ));
    }
    out
}

pub fn relatedness_table(rows: &[RelatednessRow]) -> String {
    let pair = |r: &RelatednessRow| format!("{} -> {}", r.transfer, r.target);
    let width = rows.iter().map(|r| pair(r).len()).max().unwrap_or(4).max(4);
    let mut out = format!("{:<width$}  {:>8}\n", "pair", "JS");
    out.push_str(&format!("{}  {}\n", "-".repeat(width), "-".repeat(8)));
    for r in rows {
        out.push_str(&format!("{:<width$}  {:>8.4}\n", pair(r), r.js_divergence));
    }
    if let Some(r) = rows.first() {
        out.push_str(&format!("(tokenization: {}, base-2 logs)\n", r.scheme));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exemplar(id: &str, payload: AbilityPayload) -> Exemplar {
        Exemplar {
            id: id.into(),
            question: "q?".into(),
            answer: "a".into(),
            payload,
            categories: BTreeSet::new(),
            source_dataset: "t".into(),
            context: None,
        }
    }

    #[test]
    fn exemplar_invariants() {
        assert!(exemplar("x", AbilityPayload::Rationale("r".into())).validate().is_ok());
        assert!(exemplar("x", AbilityPayload::Rationale(" ".into())).validate().is_err());
        assert!(exemplar("x", AbilityPayload::Decomposition(vec![])).validate().is_err());
        let hollow = AbilityPayload::Decomposition(vec![DecompositionStep::new("q", "")]);
        assert!(exemplar("x", hollow).validate().is_err());
    }

    #[test]
    fn table_arity_checked() {
        let ok = TableContext::new(vec!["a".into(), "b".into()], vec![vec!["1".into(), "2".into()]], "", "");
        assert!(ok.is_ok());
        let bad = TableContext::new(vec!["a".into(), "b".into()], vec![vec!["1".into()]], "", "");
        assert!(bad.is_err());
    }

    #[test]
    fn category_names_round_trip() {
        for c in Category::ALL {
            assert_eq!(c.as_str().parse::<Category>().unwrap(), c);
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(json, format!("\"{}\"", c.as_str()));
        }
    }

    #[test]
    fn sampling_is_seeded_and_ordered() {
        let items: Vec<u32> = (0..100).collect();
        let a = sample_subset(&items, 10, 42);
        assert_eq!(a, sample_subset(&items, 10, 42));
        assert_ne!(a, sample_subset(&items, 10, 43));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_subset(&items[..5], 10, 1), items[..5].to_vec());
    }

    #[test]
    fn relatedness_identical_and_disjoint() {
        let a = Dataset::Targets(vec![TargetItem {
            id: "1".into(),
            question: "how many apples".into(),
            gold_answer: "3".into(),
            context: None,
            answer_type: AnswerType::Numeric,
            dataset: "a".into(),
        }]);
        let mut b = a.clone();
        if let Dataset::Targets(v) = &mut b {
            v[0].question = "who wrote hamlet".into();
        }
        let rows = relatedness_report(&[("a", &a, "a", &a), ("a", &a, "b", &b)], TokenScheme::Simple).unwrap();
        assert_eq!(rows[0].js_divergence, 0.0);
        assert!((rows[1].js_divergence - 1.0).abs() < 1e-12);
        assert!(relatedness_table(&rows).contains("a -> b"));
        assert!(relatedness_csv(&rows).starts_with("transfer,target"));
    }
}
