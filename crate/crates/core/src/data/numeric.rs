//! Numeric answer normalization.
//!
//! Currency symbols, thousands separators, percent signs, parentheses and
//! unit words are stripped before parsing, so `"$1,200"`, `"68.9 (billion)"`
//! and `"Rs.360"` parse as 1200, 68.9 and 360.

use std::sync::LazyLock;

use regex::Regex;

static CURRENCY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(\brs\.?|\busd\b|\binr\b|[$€£¥₹])\s*").unwrap());
static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").unwrap());

fn clean(text: &str) -> String {
    let text = text.replace(['\u{2212}', '\u{2013}'], "-");
    let text = CURRENCY.replace_all(&text, "");
    // thousands separators only: "1,200" but not "3, 4"
    let mut out = String::with_capacity(text.len());
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let between_digits = i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_ascii_digit()
            && chars[i + 1].is_ascii_digit();
        if c == ',' && between_digits {
            continue;
        }
        out.push(c);
    }
    out
}

fn numbers(text: &str) -> Vec<f64> {
    NUMBER
        .find_iter(text)
        .filter_map(|m| m.as_str().trim_end_matches('.').parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .collect()
}

/// Parse a string holding exactly one number, ignoring currency, unit words
/// and punctuation around it. `None` for zero or several numbers.
pub fn parse_number(text: &str) -> Option<f64> {
    match numbers(&clean(text)).as_slice() {
        [v] => Some(*v),
        _ => None,
    }
}

/// Lenient extraction for model output: the single number if there is
/// one, otherwise the last number in the text.
pub fn extract_number(text: &str) -> Option<f64> {
    numbers(&clean(text)).last().copied()
}

/// Shortest decimal rendering: `14.0 -> "14"`, `0.5 -> "0.5"`.
pub fn format_number(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
