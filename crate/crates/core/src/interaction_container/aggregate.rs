//! Building one display payload out of several model snapshots.
//!
//! Sources are joined on a shared key column (inner join). Output rows are
//! sorted by key; rows with equal keys keep source order. The first source's
//! columns keep their priorities and later sources' columns rank after them.
//! A joined row is an alert when any of its source rows was.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adapt::{Column, DisplayPayload, Row};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinSpec {
    pub key: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JoinError {
    #[error("source {source_index} has no column {key}")]
    JoinKeyMissing { source_index: usize, key: String },
    #[error("row {row} of source {source_index} has no value for {key}")]
    JoinValueMissing {
        source_index: usize,
        row: usize,
        key: String,
    },
}

pub fn aggregate(sources: &[DisplayPayload], rule: &JoinSpec) -> Result<DisplayPayload, JoinError> {
    let mut out = DisplayPayload {
        title: rule.title.clone(),
        ..DisplayPayload::default()
    };
    if sources.is_empty() {
        return Ok(out);
    }

    // key value -> row indices, per source
    let mut groups: Vec<BTreeMap<&str, Vec<usize>>> = Vec::with_capacity(sources.len());
    for (s, src) in sources.iter().enumerate() {
        if !src.columns.iter().any(|c| c.id == rule.key) {
            return Err(JoinError::JoinKeyMissing {
                source_index: s,
                key: rule.key.clone(),
            });
        }
        let mut g: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (r, row) in src.rows.iter().enumerate() {
            let k = row.get(&rule.key).ok_or_else(|| JoinError::JoinValueMissing {
                source_index: s,
                row: r,
                key: rule.key.clone(),
            })?;
            g.entry(k.as_str()).or_default().push(r);
        }
        groups.push(g);
    }

    let mut seen = BTreeSet::new();
    let mut next_priority = i64::MIN;
    for (s, src) in sources.iter().enumerate() {
        for col in src.columns_by_priority() {
            if !seen.insert(col.id.clone()) {
                continue;
            }
            let priority = if s == 0 { col.priority } else { next_priority };
            next_priority = priority.saturating_add(1).max(next_priority);
            out.columns.push(Column {
                priority,
                ..col.clone()
            });
        }
    }
    // keep declaration order of the first source
    if let Some(first) = sources.first() {
        let order: BTreeMap<&str, usize> = first
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.as_str(), i))
            .collect();
        out.columns
            .sort_by_key(|c| order.get(c.id.as_str()).copied().unwrap_or(usize::MAX));
    }

    for (key, first_rows) in &groups[0] {
        let per_source: Option<Vec<&Vec<usize>>> = std::iter::once(Some(first_rows))
            .chain(groups[1..].iter().map(|g| g.get(key)))
            .collect();
        let Some(per_source) = per_source else { continue };
        // cartesian product in source order
        let mut combos: Vec<Vec<usize>> = vec![Vec::new()];
        for rows in &per_source {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    rows.iter().map(move |&r| {
                        let mut p = prefix.clone();
                        p.push(r);
                        p
                    })
                })
                .collect();
        }
        for combo in combos {
            let mut row = Row::new();
            let mut alert = false;
            for (s, &r) in combo.iter().enumerate() {
                for (k, v) in &sources[s].rows[r] {
                    row.entry(k.clone()).or_insert_with(|| v.clone());
                }
                alert |= sources[s].alert_rows.contains(&r);
            }
            if alert {
                out.alert_rows.insert(out.rows.len());
            }
            out.rows.push(row);
        }
    }
    Ok(out)
}
