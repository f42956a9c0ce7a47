use serde::{Deserialize, Serialize};

use super::TableContext;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableStyle {
    /// One line per row: `header_i: cell_i | header_j: cell_j | ...`.
    #[default]
    PipeRows,
}

/// Linearize a table for prompting: pre-text, one line per row, post-text.
/// Empty sections are omitted; sections are joined with newlines.
pub fn serialize_table(table: &TableContext, style: TableStyle) -> String {
    match style {
        TableStyle::PipeRows => {
            let mut sections: Vec<String> = Vec::new();
            if !table.pre_text.trim().is_empty() {
                sections.push(table.pre_text.trim().to_owned());
            }
            for row in &table.rows {
                let line = table
                    .header
                    .iter()
                    .zip(row)
                    .map(|(h, c)| format!("{}: {}", h.trim(), c.trim()))
                    .collect::<Vec<_>>()
                    .join(" | ");
                sections.push(line);
            }
            if !table.post_text.trim().is_empty() {
                sections.push(table.post_text.trim().to_owned());
            }
            sections.join("\n")
        }
    }
}
