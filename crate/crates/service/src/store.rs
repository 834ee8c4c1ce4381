//! Session state and the append-only judgment log.
//!
//! Every acknowledged response is one JSON line in the log, written and
//! fsynced before the acknowledgement is returned. On startup the log is
//! replayed to rebuild session cursors. A torn final line (a crash during
//! the write) is truncated away; any other damage is an error.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use evalbench_core::annotation::{AnnotationRecord, ExportRecord, Response, ResponseError};
use evalbench_core::stimuli::{PlanItem, SessionPlan, Stimulus, StimulusSet, System, Task};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no {task} plan for subject {subject:?}")]
    UnknownSubject { subject: String, task: Task },
    #[error("session {session_id} is complete ({n_items} items)")]
    PlanExhausted { session_id: String, n_items: usize },
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("item {got} submitted but the current item is {expected}")]
    OutOfOrder { expected: usize, got: usize },
    #[error("item {0} was already answered")]
    DuplicateSubmission(usize),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid setup: {0}")]
    Setup(String),
    #[error("log {path}:{line}: {reason}")]
    CorruptLog { path: PathBuf, line: usize, reason: String },
    #[error("log {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl From<ResponseError> for StoreError {
    fn from(e: ResponseError) -> Self {
        StoreError::MalformedResponse(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub task: Task,
    pub n_items: usize,
    pub next: usize,
}

/// What an annotator sees: texts only, in display order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum NextItem {
    Item {
        done: bool,
        session_id: String,
        task: Task,
        item_index: usize,
        n_items: usize,
        texts: Vec<String>,
    },
    Done {
        done: bool,
        session_id: String,
        n_items: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ack {
    pub record_id: u64,
    pub item_index: usize,
    pub next: usize,
    pub done: bool,
}

struct Session {
    id: String,
    plan: SessionPlan,
    cursor: usize,
}

struct State {
    sessions: Vec<Session>,
    records: Vec<AnnotationRecord>,
}

pub struct Store {
    stimuli: HashMap<String, Stimulus>,
    blinding: BTreeMap<String, System>,
    by_subject: HashMap<(String, Task), usize>,
    by_id: HashMap<String, usize>,
    state: RwLock<State>,
    log: Mutex<File>,
    log_path: PathBuf,
}

fn session_ids(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(4);
    (0..n).map(|i| format!("S{i:0width$}")).collect()
}

impl Store {
    /// Validate plans against the stimulus set, then replay `log_path`
    /// (created if missing).
    pub fn open(set: StimulusSet, plans: Vec<SessionPlan>, log_path: &Path) -> Result<Self, StoreError> {
        let setup = |m: String| StoreError::Setup(m);
        set.validate().map_err(|e| setup(e.to_string()))?;
        let stimuli: HashMap<String, Stimulus> = set.stimuli.into_iter().map(|s| (s.stimulus_id.clone(), s)).collect();

        let ids = session_ids(plans.len());
        let mut by_subject = HashMap::new();
        let mut by_id = HashMap::new();
        let mut sessions = Vec::with_capacity(plans.len());
        for (i, (plan, id)) in plans.into_iter().zip(ids).enumerate() {
            for item in &plan.items {
                let kind_ok = matches!(
                    (plan.task, item),
                    (Task::Ranking, PlanItem::Ranking { .. }) | (Task::Classification, PlanItem::Classification { .. })
                );
                if !kind_ok {
                    return Err(setup(format!("plan for {} mixes task kinds", plan.subject_id)));
                }
                if let Some(missing) = item.stimulus_ids().into_iter().find(|s| !stimuli.contains_key(*s)) {
                    return Err(setup(format!(
                        "plan for {} names unknown stimulus {missing}",
                        plan.subject_id
                    )));
                }
            }
            if by_subject.insert((plan.subject_id.clone(), plan.task), i).is_some() {
                return Err(setup(format!(
                    "two {} plans for subject {}",
                    plan.task, plan.subject_id
                )));
            }
            by_id.insert(id.clone(), i);
            sessions.push(Session { id, plan, cursor: 0 });
        }

        let mut state = State {
            sessions,
            records: Vec::new(),
        };
        let file = replay(log_path, &mut state, &by_id)?;
        tracing::info!(
            sessions = state.sessions.len(),
            records = state.records.len(),
            log = %log_path.display(),
            "store opened"
        );
        Ok(Self {
            stimuli,
            blinding: set.blinding,
            by_subject,
            by_id,
            state: RwLock::new(state),
            log: Mutex::new(file),
            log_path: log_path.to_path_buf(),
        })
    }

    fn session_index(&self, session_id: &str) -> Result<usize, StoreError> {
        self.by_id
            .get(session_id)
            .copied()
            .ok_or_else(|| StoreError::UnknownSession(session_id.to_string()))
    }

    /// Idempotent: the same subject and task always map to the same session.
    pub fn create_session(&self, subject: &str, task: Task) -> Result<SessionDescriptor, StoreError> {
        let &i = self
            .by_subject
            .get(&(subject.to_string(), task))
            .ok_or_else(|| StoreError::UnknownSubject {
                subject: subject.to_string(),
                task,
            })?;
        let state = self.state.read().expect("state lock");
        let s = &state.sessions[i];
        if s.cursor == s.plan.items.len() {
            return Err(StoreError::PlanExhausted {
                session_id: s.id.clone(),
                n_items: s.plan.items.len(),
            });
        }
        Ok(SessionDescriptor {
            session_id: s.id.clone(),
            task,
            n_items: s.plan.items.len(),
            next: s.cursor,
        })
    }

    pub fn next_item(&self, session_id: &str) -> Result<NextItem, StoreError> {
        let i = self.session_index(session_id)?;
        let state = self.state.read().expect("state lock");
        let s = &state.sessions[i];
        let n_items = s.plan.items.len();
        let Some(item) = s.plan.items.get(s.cursor) else {
            return Ok(NextItem::Done {
                done: true,
                session_id: s.id.clone(),
                n_items,
            });
        };
        let texts = item
            .stimulus_ids()
            .into_iter()
            .map(|id| self.stimuli[id].text.join(" "))
            .collect();
        Ok(NextItem::Item {
            done: false,
            session_id: s.id.clone(),
            task: s.plan.task,
            item_index: s.cursor,
            n_items,
            texts,
        })
    }

    /// The record is on disk before this returns `Ok`.
    pub fn submit_response(&self, session_id: &str, item_index: usize, response: Response) -> Result<Ack, StoreError> {
        let i = self.session_index(session_id)?;
        let mut log = self.log.lock().expect("log lock");
        let (record, n_items) = {
            let state = self.state.read().expect("state lock");
            let s = &state.sessions[i];
            if item_index < s.cursor {
                return Err(StoreError::DuplicateSubmission(item_index));
            }
            if item_index > s.cursor || item_index >= s.plan.items.len() {
                return Err(StoreError::OutOfOrder {
                    expected: s.cursor,
                    got: item_index,
                });
            }
            response.validate(s.plan.task)?;
            let item = &s.plan.items[item_index];
            let display_order = match item {
                PlanItem::Ranking { display_order, .. } => Some(*display_order),
                PlanItem::Classification { .. } => None,
            };
            let record = AnnotationRecord {
                record_id: state.records.len() as u64 + 1,
                task: s.plan.task,
                subject_id: s.plan.subject_id.clone(),
                session_id: s.id.clone(),
                item_index,
                stimulus_ids: item.stimulus_ids().into_iter().map(String::from).collect(),
                response,
                display_order,
                received_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            };
            (record, s.plan.items.len())
        };

        let mut line = serde_json::to_vec(&record).expect("record serializes");
        line.push(b'\n');
        log.write_all(&line)
            .and_then(|()| log.sync_data())
            .map_err(|source| StoreError::Io {
                path: self.log_path.clone(),
                source,
            })?;

        let mut state = self.state.write().expect("state lock");
        state.sessions[i].cursor += 1;
        let next = state.sessions[i].cursor;
        let record_id = record.record_id;
        state.records.push(record);
        Ok(Ack {
            record_id,
            item_index,
            next,
            done: next == n_items,
        })
    }

    /// Records joined with the blinding map, ordered by session then item.
    pub fn export(&self, task: Option<Task>) -> Vec<ExportRecord> {
        let state = self.state.read().expect("state lock");
        let mut out: Vec<ExportRecord> = state
            .records
            .iter()
            .filter(|r| task.is_none_or(|t| r.task == t))
            .map(|r| {
                let first = &self.stimuli[&r.stimulus_ids[0]];
                ExportRecord {
                    systems: r.stimulus_ids.iter().map(|id| self.blinding[id]).collect(),
                    condition: first.condition,
                    record: r.clone(),
                }
            })
            .collect();
        out.sort_by(|a, b| {
            (&a.record.session_id, a.record.item_index).cmp(&(&b.record.session_id, b.record.item_index))
        });
        out
    }

    pub fn export_jsonl(&self, task: Option<Task>) -> String {
        let mut out = String::new();
        for r in self.export(task) {
            out.push_str(&serde_json::to_string(&r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn record_count(&self) -> usize {
        self.state.read().expect("state lock").records.len()
    }
}

fn replay(path: &Path, state: &mut State, by_id: &HashMap<String, usize>) -> Result<File, StoreError> {
    let io_err = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = OpenOptions::new()
        .read(true)
        .append(true)
        .create(true)
        .open(path)
        .map_err(io_err)?;
    let mut reader = BufReader::new(&mut file);
    let mut good_len = 0u64;
    let mut buf = String::new();
    let mut line_no = 0;
    let mut torn = false;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io_err)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if !buf.ends_with('\n') {
            torn = true;
            break;
        }
        let corrupt = |reason: String| StoreError::CorruptLog {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        let rec: AnnotationRecord = match serde_json::from_str(buf.trim_end()) {
            Ok(r) => r,
            Err(e) => {
                // only the last line may be damaged
                let mut rest = String::new();
                reader.read_line(&mut rest).map_err(io_err)?;
                if rest.is_empty() {
                    torn = true;
                    break;
                }
                return Err(corrupt(e.to_string()));
            }
        };
        let &i = by_id
            .get(&rec.session_id)
            .ok_or_else(|| corrupt(format!("unknown session {}", rec.session_id)))?;
        let s = &mut state.sessions[i];
        if rec.item_index != s.cursor || rec.item_index >= s.plan.items.len() {
            return Err(corrupt(format!(
                "session {} item {} out of sequence (expected {})",
                rec.session_id, rec.item_index, s.cursor
            )));
        }
        let planned = s.plan.items[rec.item_index].stimulus_ids();
        if rec.task != s.plan.task || rec.stimulus_ids != planned {
            return Err(corrupt(format!(
                "record does not match the plan of session {}",
                rec.session_id
            )));
        }
        if rec.record_id != state.records.len() as u64 + 1 {
            return Err(corrupt(format!("record id {} out of sequence", rec.record_id)));
        }
        s.cursor += 1;
        state.records.push(rec);
        good_len += n as u64;
    }
    drop(reader);
    if torn {
        tracing::warn!(path = %path.display(), offset = good_len, "truncating torn final log line");
        file.set_len(good_len).map_err(io_err)?;
        file.sync_data().map_err(io_err)?;
    }
    file.seek(SeekFrom::End(0)).map_err(io_err)?;
    Ok(file)
}
