//! Terminal adaptation of tabular display data.
//!
//! A [`DisplayPayload`] describes what to show in device-independent terms.
//! [`render`] reduces it to a [`TerminalCapability`]:
//!
//! 1. columns are taken in priority order (smaller number first) up to
//!    `max_columns`, so a shown column implies every more important column
//!    is shown too;
//! 2. rows past `max_rows` are dropped;
//! 3. cell values the user has a personal name for are shown under that
//!    name, then cut to `max_cell_width` characters, the last one becoming
//!    `…` when something was cut;
//! 4. alert rows are highlighted on rich terminals and prefixed with `!`
//!    elsewhere.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ELLIPSIS: char = '…';

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    Pc,
    Pda,
    Phone,
}

impl fmt::Display for TerminalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminalKind::Pc => "pc",
            TerminalKind::Pda => "pda",
            TerminalKind::Phone => "phone",
        })
    }
}

impl std::str::FromStr for TerminalKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pc" => Ok(TerminalKind::Pc),
            "pda" => Ok(TerminalKind::Pda),
            "phone" => Ok(TerminalKind::Phone),
            other => Err(format!("unknown terminal kind {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TerminalCapability {
    pub kind: TerminalKind,
    pub max_columns: usize,
    pub max_rows: usize,
    pub max_cell_width: usize,
    /// Supports highlight markup.
    pub rich: bool,
}

impl TerminalCapability {
    pub const PC: Self = Self {
        kind: TerminalKind::Pc,
        max_columns: 12,
        max_rows: 40,
        max_cell_width: 24,
        rich: true,
    };
    pub const PDA: Self = Self {
        kind: TerminalKind::Pda,
        max_columns: 6,
        max_rows: 24,
        max_cell_width: 16,
        rich: true,
    };
    pub const PHONE: Self = Self {
        kind: TerminalKind::Phone,
        max_columns: 3,
        max_rows: 12,
        max_cell_width: 10,
        rich: false,
    };

    pub fn is_valid(&self) -> bool {
        self.max_columns > 0 && self.max_rows > 0 && self.max_cell_width > 0
    }
}

/// Per-kind defaults, overridable from the daemon configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityPresets {
    pub pc: TerminalCapability,
    pub pda: TerminalCapability,
    pub phone: TerminalCapability,
}

impl Default for CapabilityPresets {
    fn default() -> Self {
        Self {
            pc: TerminalCapability::PC,
            pda: TerminalCapability::PDA,
            phone: TerminalCapability::PHONE,
        }
    }
}

impl CapabilityPresets {
    pub fn get(&self, kind: TerminalKind) -> TerminalCapability {
        match kind {
            TerminalKind::Pc => self.pc,
            TerminalKind::Pda => self.pda,
            TerminalKind::Phone => self.phone,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub id: String,
    pub label: String,
    /// Smaller is more important.
    pub priority: i64,
    pub width: usize,
}

impl Column {
    pub fn new(id: &str, label: &str, priority: i64, width: usize) -> Self {
        Self {
            id: id.to_owned(),
            label: label.to_owned(),
            priority,
            width,
        }
    }
}

pub type Row = BTreeMap<String, String>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayPayload {
    pub title: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
    #[serde(default)]
    pub alert_rows: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("column {0} declared twice")]
    DuplicateColumn(String),
    #[error("priority {0} used by more than one column")]
    DuplicatePriority(i64),
    #[error("row {row} has a value for undeclared column {column}")]
    UnknownCell { row: usize, column: String },
    #[error("alert row {0} does not exist")]
    AlertOutOfRange(usize),
}

impl DisplayPayload {
    pub fn check(&self) -> Result<(), PayloadError> {
        let mut ids = BTreeSet::new();
        let mut priorities = BTreeSet::new();
        for c in &self.columns {
            if !ids.insert(c.id.as_str()) {
                return Err(PayloadError::DuplicateColumn(c.id.clone()));
            }
            if !priorities.insert(c.priority) {
                return Err(PayloadError::DuplicatePriority(c.priority));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if let Some(k) = row.keys().find(|k| !ids.contains(k.as_str())) {
                return Err(PayloadError::UnknownCell {
                    row: i,
                    column: k.clone(),
                });
            }
        }
        if let Some(&r) = self.alert_rows.iter().find(|&&r| r >= self.rows.len()) {
            return Err(PayloadError::AlertOutOfRange(r));
        }
        Ok(())
    }

    /// Columns sorted by priority, most important first.
    pub fn columns_by_priority(&self) -> Vec<&Column> {
        let mut cols: Vec<&Column> = self.columns.iter().collect();
        cols.sort_by_key(|c| c.priority);
        cols
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlight {
    pub line: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedView {
    pub terminal: TerminalKind,
    /// Chosen column ids, most important first.
    pub columns: Vec<String>,
    /// Payload row indices that were kept, in display order.
    pub rows: Vec<usize>,
    /// Payload row indices shown as alerts.
    pub alerts: Vec<usize>,
    /// Title, header, then one line per kept row.
    pub lines: Vec<String>,
    /// Character spans to highlight; only produced for rich terminals.
    pub highlights: Vec<Highlight>,
}

/// Cuts `text` to at most `limit` characters, ending in [`ELLIPSIS`] when
/// anything was removed.
pub fn truncate(text: &str, limit: usize) -> String {
    if text.chars().count() <= limit {
        return text.to_owned();
    }
    let mut out: String = text.chars().take(limit.saturating_sub(1)).collect();
    if limit > 0 {
        out.push(ELLIPSIS);
    }
    out
}

fn pad(text: &str, width: usize) -> String {
    let n = text.chars().count();
    let mut s = text.to_owned();
    s.extend(std::iter::repeat_n(' ', width.saturating_sub(n)));
    s
}

/// Adapts `payload` to `capability`. `display_names` maps canonical values
/// to the viewer's personal names.
pub fn render(
    payload: &DisplayPayload,
    capability: &TerminalCapability,
    display_names: &BTreeMap<String, String>,
) -> Result<RenderedView, PayloadError> {
    payload.check()?;
    let limit = capability.max_cell_width.max(1);
    let chosen: Vec<&Column> = payload
        .columns_by_priority()
        .into_iter()
        .take(capability.max_columns)
        .collect();
    let kept: Vec<usize> = (0..payload.rows.len()).take(capability.max_rows).collect();

    let cells: Vec<Vec<String>> = kept
        .iter()
        .map(|&r| {
            chosen
                .iter()
                .map(|c| {
                    let raw = payload.rows[r].get(&c.id).map(String::as_str).unwrap_or("");
                    let shown = display_names.get(raw).map(String::as_str).unwrap_or(raw);
                    truncate(shown, limit)
                })
                .collect()
        })
        .collect();
    let headers: Vec<String> = chosen.iter().map(|c| truncate(&c.label, limit)).collect();
    let widths: Vec<usize> = chosen
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let widest = cells
                .iter()
                .map(|row| row[i].chars().count())
                .chain([headers[i].chars().count(), c.width])
                .max()
                .unwrap_or(0);
            widest.min(limit)
        })
        .collect();
    let join = |row: &[String]| -> String {
        row.iter()
            .zip(&widths)
            .map(|(cell, &w)| pad(cell, w))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_owned()
    };

    let prefix = |alert: bool| match (capability.rich, alert) {
        (true, _) => "",
        (false, true) => "! ",
        (false, false) => "  ",
    };
    let mut lines = vec![payload.title.clone(), format!("{}{}", prefix(false), join(&headers))];
    let mut highlights = Vec::new();
    let mut alerts = Vec::new();
    for (row_cells, &r) in cells.iter().zip(&kept) {
        let alert = payload.alert_rows.contains(&r);
        let line = format!("{}{}", prefix(alert), join(row_cells));
        if alert {
            alerts.push(r);
            if capability.rich {
                highlights.push(Highlight {
                    line: lines.len(),
                    start: 0,
                    end: line.chars().count(),
                });
            }
        }
        lines.push(line);
    }
    Ok(RenderedView {
        terminal: capability.kind,
        columns: chosen.iter().map(|c| c.id.clone()).collect(),
        rows: kept,
        alerts,
        lines,
        highlights,
    })
}
