//! Answer scoring and result tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::data::{extract_number, parse_number, AnswerType};
use crate::prompt::ParsedCompletion;

/// Relative tolerance for numeric exact match.
pub const NUMERIC_RTOL: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("method '{a}' and '{b}' were scored on different test items ({detail})")]
    TestSetMismatch { a: String, b: String, detail: String },
    #[error("duplicate outcome for test item '{0}'")]
    DuplicateTestId(String),
}

/// Lowercase, punctuation to spaces, whitespace collapsed.
pub fn normalize(text: &str) -> String {
    let mapped: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_lowercase().next().unwrap_or(c) } else { ' ' })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn numeric_value(text: &str) -> Option<f64> {
    parse_number(text).or_else(|| extract_number(text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub correct: bool,
    /// Numeric mode only: the prediction held no number.
    pub unparseable: bool,
}

pub fn exact_match(pred: &str, gold: &str, numeric: bool) -> Verdict {
    if !numeric {
        let (p, g) = (normalize(pred), normalize(gold));
        let correct = if g.is_empty() { pred.trim() == gold.trim() } else { p == g };
        return Verdict { correct, unparseable: false };
    }
    let Some(p) = numeric_value(pred) else {
        return Verdict {
            correct: false,
            unparseable: true,
        };
    };
    let correct = numeric_value(gold).is_some_and(|g| {
        let scale = g.abs().max(p.abs());
        (p - g).abs() <= NUMERIC_RTOL * scale
    });
    Verdict {
        correct,
        unparseable: false,
    }
}

/// True when the normalized gold answer occurs in the normalized prediction
/// on token boundaries.
pub fn cover_em(pred: &str, gold: &str) -> bool {
    let g = normalize(gold);
    if g.is_empty() {
        return pred.trim() == gold.trim() && !gold.trim().is_empty();
    }
    let p = normalize(pred);
    let gt: Vec<&str> = g.split(' ').collect();
    let pt: Vec<&str> = p.split(' ').collect();
    pt.windows(gt.len()).any(|w| w == gt.as_slice())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Em,
    CoverEm,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Em => "em",
            Metric::CoverEm => "cover_em",
        }
    }

    /// The official metric of a target dataset: cover-EM for open multi-hop
    /// QA, EM elsewhere.
    pub fn for_dataset(dataset: &str) -> Metric {
        match dataset {
            "wqa" | "musique" => Metric::CoverEm,
            _ => Metric::Em,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "em" => Ok(Metric::Em),
            "cover_em" | "cover-em" => Ok(Metric::CoverEm),
            other => Err(format!("unknown metric '{other}'")),
        }
    }
}

pub fn score(pred: &str, gold: &str, metric: Metric, answer_type: AnswerType) -> Verdict {
    match metric {
        Metric::Em => exact_match(pred, gold, answer_type == AnswerType::Numeric),
        Metric::CoverEm => Verdict {
            correct: cover_em(pred, gold),
            unparseable: false,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub test_id: String,
    pub method: String,
    pub dataset: String,
    pub prompt_hash: String,
    pub parsed: ParsedCompletion,
    pub gold: String,
    pub correct: bool,
    pub metric: Metric,
    #[serde(default)]
    pub unparseable: bool,
}

impl RunOutcome {
    pub fn new(
        test_id: impl Into<String>,
        method: impl Into<String>,
        dataset: impl Into<String>,
        prompt_hash: impl Into<String>,
        parsed: ParsedCompletion,
        gold: impl Into<String>,
        metric: Metric,
        answer_type: AnswerType,
    ) -> Self {
        let gold = gold.into();
        let verdict = score(&parsed.final_answer, &gold, metric, answer_type);
        Self {
            test_id: test_id.into(),
            method: method.into(),
            dataset: dataset.into(),
            prompt_hash: prompt_hash.into(),
            parsed,
            gold,
            correct: verdict.correct,
            metric,
            unparseable: verdict.unparseable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub method: String,
    pub dataset: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl Accuracy {
    pub fn formatted(&self) -> String {
        format!("{:.2}", self.accuracy)
    }
}

/// Accuracy per (method, dataset), sorted by method then dataset.
pub fn aggregate(outcomes: &[RunOutcome]) -> Vec<Accuracy> {
    let mut counts: BTreeMap<(&str, &str), (usize, usize)> = BTreeMap::new();
    for o in outcomes {
        let c = counts.entry((o.method.as_str(), o.dataset.as_str())).or_default();
        c.0 += usize::from(o.correct);
        c.1 += 1;
    }
    counts
        .into_iter()
        .map(|((method, dataset), (correct, total))| Accuracy {
            method: method.to_owned(),
            dataset: dataset.to_owned(),
            correct,
            total,
            accuracy: 100.0 * correct as f64 / total as f64,
        })
        .collect()
}

/// Paired outcome counts for two methods on the same items.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub both: usize,
    pub a_only: usize,
    pub b_only: usize,
    pub neither: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.both + self.a_only + self.b_only + self.neither
    }

    pub fn table(&self, a: &str, b: &str) -> String {
        let w = a.len() + 8;
        let c = b.len() + 8;
        let mut s = String::new();
        let _ = writeln!(s, "{:w$}{:>c$}{:>c$}", "", format!("{b} ok"), format!("{b} wrong"));
        let _ = writeln!(s, "{:w$}{:>c$}{:>c$}", format!("{a} ok"), self.both, self.a_only);
        let _ = writeln!(s, "{:w$}{:>c$}{:>c$}", format!("{a} wrong"), self.b_only, self.neither);
        s
    }

    pub fn csv(&self, a: &str, b: &str) -> String {
        format!(
            "method_a,method_b,both_correct,a_only,b_only,both_wrong\n{a},{b},{},{},{},{}\n",
            self.both, self.a_only, self.b_only, self.neither
        )
    }
}

fn by_test_id(outcomes: &[RunOutcome]) -> Result<HashMap<&str, bool>, EvalError> {
    let mut map = HashMap::with_capacity(outcomes.len());
    for o in outcomes {
        if map.insert(o.test_id.as_str(), o.correct).is_some() {
            return Err(EvalError::DuplicateTestId(o.test_id.clone()));
        }
    }
    Ok(map)
}

pub fn confusion(method_a: &[RunOutcome], method_b: &[RunOutcome]) -> Result<Confusion, EvalError> {
    let name = |v: &[RunOutcome]| v.first().map(|o| o.method.clone()).unwrap_or_default();
    let a = by_test_id(method_a)?;
    let b = by_test_id(method_b)?;
    let ka: BTreeSet<&str> = a.keys().copied().collect();
    let kb: BTreeSet<&str> = b.keys().copied().collect();
    if ka != kb {
        let only_a = ka.difference(&kb).count();
        let only_b = kb.difference(&ka).count();
        return Err(EvalError::TestSetMismatch {
            a: name(method_a),
            b: name(method_b),
            detail: format!("{only_a} items only in a, {only_b} only in b"),
        });
    }
    let mut c = Confusion::default();
    for (id, &ok_a) in &a {
        match (ok_a, b[id]) {
            (true, true) => c.both += 1,
            (true, false) => c.a_only += 1,
            (false, true) => c.b_only += 1,
            (false, false) => c.neither += 1,
        }
    }
    Ok(c)
}

/// Two-sided exact McNemar p-value on the discordant cells.
pub fn mcnemar(c: &Confusion) -> f64 {
    let n = (c.a_only + c.b_only) as u64;
    if n == 0 {
        return 1.0;
    }
    let k = c.a_only.min(c.b_only) as u64;
    let binom = Binomial::new(0.5, n).expect("valid binomial");
    (2.0 * binom.cdf(k)).min(1.0)
}

/// `‡` below 0.01, `†` below 0.1, else empty.
pub fn significance_mark(p: f64) -> &'static str {
    if p < 0.01 {
        "\u{2021}"
    } else if p < 0.1 {
        "\u{2020}"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultCell {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// McNemar p-value against the baseline, when paired outcomes exist.
    pub p_value: Option<f64>,
    /// Set only when the method beats the baseline significantly.
    pub mark: String,
}

/// Methods × datasets accuracy grid with significance marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub baseline: Option<String>,
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    /// Keyed by method, then dataset.
    pub cells: BTreeMap<String, BTreeMap<String, ResultCell>>,
}

impl ResultsTable {
    pub fn build(outcomes: &[RunOutcome], baseline: Option<&str>) -> Self {
        let mut grouped: BTreeMap<(&str, &str), Vec<RunOutcome>> = BTreeMap::new();
        for o in outcomes {
            grouped.entry((o.method.as_str(), o.dataset.as_str())).or_default().push(o.clone());
        }
        let mut methods: Vec<String> = Vec::new();
        let mut datasets: BTreeSet<String> = BTreeSet::new();
        let mut cells: BTreeMap<String, BTreeMap<String, ResultCell>> = BTreeMap::new();
        for acc in aggregate(outcomes) {
            if !methods.contains(&acc.method) {
                methods.push(acc.method.clone());
            }
            datasets.insert(acc.dataset.clone());
            let mut cell = ResultCell {
                correct: acc.correct,
                total: acc.total,
                accuracy: acc.accuracy,
                p_value: None,
                mark: String::new(),
            };
            if let Some(base) = baseline.filter(|b| *b != acc.method) {
                let mine = &grouped[&(acc.method.as_str(), acc.dataset.as_str())];
                if let Some(theirs) = grouped.get(&(base, acc.dataset.as_str())) {
                    if let Ok(c) = confusion(mine, theirs) {
                        let p = mcnemar(&c);
                        cell.p_value = Some(p);
                        if c.a_only > c.b_only {
                            cell.mark = significance_mark(p).to_owned();
                        }
                    }
                }
            }
            cells.entry(acc.method).or_default().insert(acc.dataset, cell);
        }
        Self {
            baseline: baseline.map(str::to_owned),
            methods,
            datasets: datasets.into_iter().collect(),
            cells,
        }
    }

    pub fn cell(&self, method: &str, dataset: &str) -> Option<&ResultCell> {
        self.cells.get(method)?.get(dataset)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("method,dataset,correct,total,accuracy,p_value,mark\n");
        for m in &self.methods {
            for d in &self.datasets {
                if let Some(c) = self.cell(m, d) {
                    let p = c.p_value.map(|p| format!("{p:.6}")).unwrap_or_default();
                    let _ = writeln!(s, "{m},{d},{},{},{:.2},{p},{}", c.correct, c.total, c.accuracy, c.mark);
                }
            }
        }
        s
    }

    pub fn json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    /// Fixed-width grid, one row per method.
    pub fn pretty(&self) -> String {
        let mw = self.methods.iter().map(String::len).max().unwrap_or(6).max(6);
        let cw = self.datasets.iter().map(String::len).max().unwrap_or(8).max(9);
        let mut s = format!("{:mw$}", "method");
        for d in &self.datasets {
            let _ = write!(s, "  {d:>cw$}");
        }
        s.push('\n');
        let _ = writeln!(s, "{}", "-".repeat(mw + (cw + 2) * self.datasets.len()));
        for m in &self.methods {
            let _ = write!(s, "{m:mw$}");
            for d in &self.datasets {
                let text = self
                    .cell(m, d)
                    .map(|c| format!("{:.2}{}", c.accuracy, c.mark))
                    .unwrap_or_else(|| "-".into());
                let _ = write!(s, "  {text:>cw$}");
            }
            s.push('\n');
        }
        if let Some(b) = &self.baseline {
            let _ = writeln!(
                s,
                "\u{2020} / \u{2021}: better than {b}, exact McNemar p < 0.1 / p < 0.01"
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::ParseStatus;
    use proptest::prelude::*;

    fn outcome(id: &str, method: &str, correct: bool) -> RunOutcome {
        RunOutcome {
            test_id: id.into(),
            method: method.into(),
            dataset: "d".into(),
            prompt_hash: String::new(),
            parsed: ParsedCompletion {
                steps: vec![],
                rationale: None,
                final_answer: String::new(),
                parse_status: ParseStatus::Clean,
            },
            gold: String::new(),
            correct,
            metric: Metric::Em,
            unparseable: false,
        }
    }

    #[test]
    fn exact_match_examples() {
        assert!(exact_match("68.9 (billion)", "68.9", true).correct);
        assert!(!exact_match("9", "5", true).correct);
        let empty = exact_match("", "5", true);
        assert!(!empty.correct && empty.unparseable);
        assert!(exact_match("$1,200", "1200", true).correct);
        assert!(exact_match("so 14 - 9 = 5", "5", true).correct);
        assert!(exact_match("100.005", "100", true).correct);
        assert!(!exact_match("100.02", "100", true).correct);
        assert!(exact_match("Yakima  river.", "yakima River", false).correct);
        assert!(!exact_match("The Yakima River", "Yakima River", false).correct);
    }

    #[test]
    fn cover_em_examples() {
        assert!(cover_em("The mouth is the Yakima River", "Yakima River"));
        assert!(!cover_em("Audrey Hepburn did not win a Tony award", "Best Actress in a Musical Ondine"));
        assert!(!cover_em("Humphrey Bogart", "art"));
        assert!(cover_em("x", "x"));
        assert!(cover_em("?!", "?!"));
    }

    #[test]
    fn aggregate_counts() {
        let zero: Vec<_> = (0..10).map(|i| outcome(&i.to_string(), "m", false)).collect();
        assert_eq!(aggregate(&zero)[0].formatted(), "0.00");
        let most: Vec<_> = (0..100).map(|i| outcome(&i.to_string(), "m", i < 96)).collect();
        let acc = &aggregate(&most)[0];
        assert_eq!((acc.correct, acc.total, acc.formatted().as_str()), (96, 100, "96.00"));
    }

    #[test]
    fn confusion_hand_counted() {
        // a: 1 1 0 0 1 0 ; b: 1 0 1 0 0 0
        let a: Vec<_> = [true, true, false, false, true, false]
            .iter()
            .enumerate()
            .map(|(i, &c)| outcome(&i.to_string(), "a", c))
            .collect();
        let b: Vec<_> = [true, false, true, false, false, false]
            .iter()
            .enumerate()
            .map(|(i, &c)| outcome(&i.to_string(), "b", c))
            .collect();
        let c = confusion(&a, &b).unwrap();
        assert_eq!(c, Confusion { both: 1, a_only: 2, b_only: 1, neither: 2 });
        assert_eq!(confusion(&a, &a).unwrap().a_only, 0);
        assert!(matches!(confusion(&a, &b[..5]), Err(EvalError::TestSetMismatch { .. })));
    }

    #[test]
    fn mcnemar_values() {
        let c = |a_only, b_only| Confusion { both: 0, a_only, b_only, neither: 0 };
        assert!((mcnemar(&c(10, 0)) - 2.0 * 0.5f64.powi(10)).abs() < 1e-12);
        assert_eq!(mcnemar(&c(0, 0)), 1.0);
        assert_eq!(mcnemar(&c(5, 5)), 1.0);
        assert_eq!(significance_mark(0.001953125), "\u{2021}");
        assert_eq!(significance_mark(0.05), "\u{2020}");
        assert_eq!(significance_mark(0.5), "");
    }

    #[test]
    fn table_marks_only_improvements() {
        let mut all = Vec::new();
        for i in 0..12 {
            all.push(outcome(&i.to_string(), "few_shot_cot", i < 2));
            all.push(outcome(&i.to_string(), "ftd", true));
            all.push(outcome(&i.to_string(), "worse", false));
        }
        let t = ResultsTable::build(&all, Some("few_shot_cot"));
        assert_eq!(t.cell("ftd", "d").unwrap().mark, "\u{2021}");
        assert_eq!(t.cell("worse", "d").unwrap().mark, "");
        assert!(t.cell("few_shot_cot", "d").unwrap().p_value.is_none());
        assert!(t.pretty().contains("100.00\u{2021}"));
        assert!(t.csv().contains("ftd,d,12,12,100.00,"));
    }

    proptest! {
        #[test]
        fn normalize_idempotent(s in ".{0,40}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }

        #[test]
        fn cover_em_reflexive(s in ".{0,40}") {
            prop_assume!(!s.trim().is_empty());
            prop_assert!(cover_em(&s, &s));
        }

        #[test]
        fn aggregate_permutation_invariant(flags in prop::collection::vec(any::<bool>(), 1..40), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let outcomes: Vec<_> = flags.iter().enumerate()
                .map(|(i, &c)| outcome(&i.to_string(), if i % 2 == 0 { "a" } else { "b" }, c)).collect();
            let mut shuffled = outcomes.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(aggregate(&outcomes), aggregate(&shuffled));
        }

        #[test]
        fn confusion_sums_to_size(a in prop::collection::vec(any::<bool>(), 0..30), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<_> = a.iter().enumerate().map(|(i, &c)| outcome(&i.to_string(), "a", c)).collect();
            let ys: Vec<_> = (0..a.len()).map(|i| outcome(&i.to_string(), "b", rng.random())).collect();
            prop_assert_eq!(confusion(&xs, &ys).unwrap().total(), a.len());
        }
    }
}
