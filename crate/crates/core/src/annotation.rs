//! Judgment records written by the annotation service and read back by
//! [`crate::results`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stimuli::{Condition, System, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Yes,
    No,
    /// can't tell
    Ct,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Yes, Label::No, Label::Ct];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Yes => "yes",
            Label::No => "no",
            Label::Ct => "ct",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown label {s:?}"))
    }
}

/// A subject's answer. A ranking gives, for each display position, the
/// rank (1 = most natural) assigned to the text shown there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Ranking(Vec<u8>),
    Label(Label),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResponseError {
    #[error("ranking {0:?} is not a permutation of 1, 2, 3")]
    NotAPermutation(Vec<u8>),
    #[error("a {task} item needs a {expected} response")]
    WrongKind { task: Task, expected: &'static str },
}

impl Response {
    pub fn validate(&self, task: Task) -> Result<(), ResponseError> {
        match (task, self) {
            (Task::Ranking, Response::Ranking(r)) => {
                let mut sorted = r.clone();
                sorted.sort_unstable();
                if sorted != [1, 2, 3] {
                    return Err(ResponseError::NotAPermutation(r.clone()));
                }
                Ok(())
            }
            (Task::Classification, Response::Label(_)) => Ok(()),
            (Task::Ranking, _) => Err(ResponseError::WrongKind {
                task,
                expected: "ranking",
            }),
            (Task::Classification, _) => Err(ResponseError::WrongKind {
                task,
                expected: "label",
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub record_id: u64,
    pub task: Task,
    pub subject_id: String,
    pub session_id: String,
    pub item_index: usize,
    /// Stimuli in display order.
    pub stimulus_ids: Vec<String>,
    pub response: Response,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_order: Option<[usize; 3]>,
    /// RFC 3339 UTC timestamp.
    pub received_at: String,
}

/// An annotation joined with the blinding map. `systems[i]` is the system
/// behind `record.stimulus_ids[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRecord {
    #[serde(flatten)]
    pub record: AnnotationRecord,
    pub systems: Vec<System>,
    pub condition: Condition,
}
