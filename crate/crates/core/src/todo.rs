//! ID-matched task tracking.
//!
//! Models tend to rephrase task descriptions between updates. When an update
//! only mentions known ids it is applied as a *subset update*: states change,
//! descriptions stay exactly as first registered. Any unknown id turns the
//! update into a full replacement.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TodoState {
    Pending,
    Active,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TodoItem {
    pub id: String,
    pub content: String,
    pub state: TodoState,
}

impl TodoItem {
    pub fn new(id: impl Into<String>, content: impl Into<String>, state: TodoState) -> Self {
        Self {
            id: id.into(),
            content: content.into(),
            state,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Subset,
    Replace,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TodoViolation {
    #[error("duplicate todo id {0:?}")]
    UniqueId(String),
    #[error("{0} items are active; at most one may be active at a time")]
    MutualExclusion(usize),
}

impl TodoViolation {
    pub fn rule(&self) -> &'static str {
        match self {
            TodoViolation::UniqueId(_) => "unique-id",
            TodoViolation::MutualExclusion(_) => "mutual-exclusion",
        }
    }
}

pub fn validate_todos(list: &[TodoItem]) -> Result<(), TodoViolation> {
    let mut seen = HashSet::new();
    for item in list {
        if !seen.insert(item.id.as_str()) {
            return Err(TodoViolation::UniqueId(item.id.clone()));
        }
    }
    let active = list.iter().filter(|i| i.state == TodoState::Active).count();
    if active > 1 {
        return Err(TodoViolation::MutualExclusion(active));
    }
    Ok(())
}

/// Applies `incoming` on top of `current`.
///
/// Items of `current` that a subset update does not mention keep their state.
/// That can leave two active items (one untouched, one newly activated), so
/// the merged list is validated as well.
pub fn apply_todo_update(
    current: &[TodoItem],
    incoming: &[TodoItem],
) -> Result<(Vec<TodoItem>, UpdateKind), TodoViolation> {
    validate_todos(incoming)?;

    let known: HashSet<&str> = current.iter().map(|i| i.id.as_str()).collect();
    if !incoming.iter().all(|i| known.contains(i.id.as_str())) {
        return Ok((incoming.to_vec(), UpdateKind::Replace));
    }

    let states: HashMap<&str, TodoState> =
        incoming.iter().map(|i| (i.id.as_str(), i.state)).collect();
    let merged: Vec<TodoItem> = current
        .iter()
        .map(|item| match states.get(item.id.as_str()) {
            Some(state) => TodoItem {
                state: *state,
                ..item.clone()
            },
            None => item.clone(),
        })
        .collect();
    validate_todos(&merged)?;
    Ok((merged, UpdateKind::Subset))
}
