//! Human-evaluation material: prompts, the 4x3 stimulus set and subject
//! session plans.
//!
//! Every prompt yields twelve stimuli, one per (system, condition), where a
//! condition is a prompt length (5 or 10 tokens) plus a completion length
//! (5 or 10 tokens). Each generated completion is produced once per prompt
//! length and cut at 5 and at 10 tokens, so the short completion is always
//! a prefix of the long one.
//!
//! Served payloads never carry the system label: [`StimulusSet::blinding`]
//! is the only map from stimulus id back to system.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand_xoshiro::rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Sentence};
use crate::rng::{sample_indices, seeded, shuffle, uniform_below};

/// Shortest gold sentence that covers the 10+10 condition.
pub const MIN_PROMPT_SENTENCE: usize = 20;
pub const PROMPT_LENGTHS: [usize; 2] = [5, 10];
pub const MAX_COMPLETION: usize = 10;

#[derive(Debug, Error)]
pub enum StimuliError {
    #[error("only {found} sentences with at least {MIN_PROMPT_SENTENCE} tokens, {wanted} requested")]
    NotEnoughEligible { found: usize, wanted: usize },
    #[error("missing {system} completion for prompt {prompt_id} at prompt length {prompt_len}")]
    MissingCompletion {
        prompt_id: String,
        prompt_len: usize,
        system: System,
    },
    #[error("{system} completion for prompt {prompt_id} at prompt length {prompt_len} has {len} tokens, need {MAX_COMPLETION}")]
    CompletionTooShort {
        prompt_id: String,
        prompt_len: usize,
        system: System,
        len: usize,
    },
    #[error("completion line {line}: {reason}")]
    BadCompletion { line: usize, reason: String },
    #[error("{0} subjects cannot be split into groups of {1}")]
    BadSubjectCount(usize, usize),
    #[error("duplicate subject id {0:?}")]
    DuplicateSubject(String),
    #[error("stimulus set is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Gold,
    Model,
    Baseline,
}

impl System {
    pub const ALL: [System; 3] = [System::Gold, System::Model, System::Baseline];

    pub fn as_str(self) -> &'static str {
        match self {
            System::Gold => "gold",
            System::Model => "model",
            System::Baseline => "baseline",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for System {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        System::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown system {s:?}"))
    }
}

/// Prompt + completion length combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "5+5")]
    P5C5,
    #[serde(rename = "5+10")]
    P5C10,
    #[serde(rename = "10+5")]
    P10C5,
    #[serde(rename = "10+10")]
    P10C10,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::P5C5, Condition::P5C10, Condition::P10C5, Condition::P10C10];

    pub fn prompt_len(self) -> usize {
        match self {
            Condition::P5C5 | Condition::P5C10 => 5,
            Condition::P10C5 | Condition::P10C10 => 10,
        }
    }

    pub fn completion_len(self) -> usize {
        match self {
            Condition::P5C5 | Condition::P10C5 => 5,
            Condition::P5C10 | Condition::P10C10 => 10,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::P5C5 => "5+5",
            Condition::P5C10 => "5+10",
            Condition::P10C5 => "10+5",
            Condition::P10C10 => "10+10",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The twelve (system, condition) cells of the design, system-major.
pub fn design_cells() -> Vec<(System, Condition)> {
    System::ALL
        .iter()
        .flat_map(|&s| Condition::ALL.iter().map(move |&c| (s, c)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ranking,
    Classification,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ranking => "ranking",
            Task::Classification => "classification",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ranking" => Ok(Task::Ranking),
            "classification" => Ok(Task::Classification),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub prompt_id: String,
    pub gold_sentence: Vec<String>,
    pub p5: Vec<String>,
    pub p10: Vec<String>,
    /// Where the sentence came from (`<doc id>#<sentence index>`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl PromptPair {
    pub fn new(prompt_id: impl Into<String>, gold_sentence: Vec<String>) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            p5: gold_sentence[..5.min(gold_sentence.len())].to_vec(),
            p10: gold_sentence[..10.min(gold_sentence.len())].to_vec(),
            gold_sentence,
            source: None,
        }
    }

    pub fn prompt(&self, len: usize) -> &[String] {
        if len == 5 {
            &self.p5
        } else {
            &self.p10
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.gold_sentence.len() >= MIN_PROMPT_SENTENCE
            && self.p5.len() == 5
            && self.p10.len() == 10
            && self.p10.starts_with(&self.p5)
            && self.gold_sentence.starts_with(&self.p10)
    }
}

/// Sample `n` prompts uniformly without replacement from sentences with at
/// least [`MIN_PROMPT_SENTENCE`] tokens.
pub fn select_prompts(corpus: &Corpus, n: usize, seed: u64) -> Result<Vec<PromptPair>, StimuliError> {
    let mut eligible: Vec<(String, &Sentence)> = Vec::new();
    for (d, doc) in corpus.documents().iter().enumerate() {
        let doc_id = doc.meta.get("id").cloned().unwrap_or_else(|| d.to_string());
        for (i, s) in doc.sentences.iter().enumerate() {
            if s.len() >= MIN_PROMPT_SENTENCE {
                eligible.push((format!("{doc_id}#{i}"), s));
            }
        }
    }
    if eligible.len() < n {
        return Err(StimuliError::NotEnoughEligible {
            found: eligible.len(),
            wanted: n,
        });
    }
    let mut rng = seeded(seed);
    let width = n.to_string().len().max(3);
    Ok(sample_indices(&mut rng, eligible.len(), n)
        .into_iter()
        .enumerate()
        .map(|(k, idx)| {
            let (source, s) = &eligible[idx];
            let mut p = PromptPair::new(format!("p{:0width$}", k + 1), s.forms().map(String::from).collect());
            p.source = Some(source.clone());
            p
        })
        .collect())
}

/// One line of a completion file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub prompt_id: String,
    pub prompt_len: usize,
    pub system: System,
    pub tokens: Vec<String>,
}

pub type CompletionKey = (String, usize, System);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Completions(pub HashMap<CompletionKey, Vec<String>>);

impl Completions {
    pub fn insert(&mut self, rec: CompletionRecord) {
        self.0.insert((rec.prompt_id, rec.prompt_len, rec.system), rec.tokens);
    }

    /// Read JSON-lines completion records. Gold completions are implicit
    /// and rejected here, as are prompt lengths other than 5 and 10.
    pub fn read_jsonl<R: BufRead>(&mut self, r: R) -> Result<(), StimuliError> {
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| StimuliError::BadCompletion { line: i + 1, reason };
            let rec: CompletionRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            if rec.system == System::Gold {
                return Err(bad("gold completions come from the source sentence".into()));
            }
            if !PROMPT_LENGTHS.contains(&rec.prompt_len) {
                return Err(bad(format!("prompt_len must be 5 or 10, got {}", rec.prompt_len)));
            }
            self.insert(rec);
        }
        Ok(())
    }
}

impl FromIterator<CompletionRecord> for Completions {
    fn from_iter<I: IntoIterator<Item = CompletionRecord>>(iter: I) -> Self {
        let mut c = Completions::default();
        for r in iter {
            c.insert(r);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stimulus {
    pub stimulus_id: String,
    pub prompt_id: String,
    pub system: System,
    pub condition: Condition,
    pub text: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusSet {
    pub prompts: Vec<PromptPair>,
    pub stimuli: Vec<Stimulus>,
    pub blinding: BTreeMap<String, System>,
}

impl StimulusSet {
    pub fn get(&self, prompt_id: &str, system: System, condition: Condition) -> Option<&Stimulus> {
        self.stimuli
            .iter()
            .find(|s| s.prompt_id == prompt_id && s.system == system && s.condition == condition)
    }

    pub fn by_id(&self) -> HashMap<&str, &Stimulus> {
        self.stimuli.iter().map(|s| (s.stimulus_id.as_str(), s)).collect()
    }

    /// `cells[prompt][system][condition]` stimulus indices.
    fn cell_index(&self) -> Result<Vec<[[usize; 4]; 3]>, StimuliError> {
        let pos: HashMap<&str, usize> = self
            .prompts
            .iter()
            .enumerate()
            .map(|(i, p)| (p.prompt_id.as_str(), i))
            .collect();
        let mut cells = vec![[[usize::MAX; 4]; 3]; self.prompts.len()];
        for (k, s) in self.stimuli.iter().enumerate() {
            let p = *pos
                .get(s.prompt_id.as_str())
                .ok_or_else(|| StimuliError::Inconsistent(format!("unknown prompt {}", s.prompt_id)))?;
            let slot = &mut cells[p][s.system.index()][s.condition.index()];
            if *slot != usize::MAX {
                return Err(StimuliError::Inconsistent(format!(
                    "two stimuli for ({}, {}, {})",
                    s.prompt_id, s.system, s.condition
                )));
            }
            *slot = k;
        }
        if cells.iter().flatten().flatten().any(|&k| k == usize::MAX) {
            return Err(StimuliError::Inconsistent(
                "missing (prompt, system, condition) cell".into(),
            ));
        }
        Ok(cells)
    }

    /// Check every structural invariant; returns the first violation.
    pub fn validate(&self) -> Result<(), StimuliError> {
        let inconsistent = |m: String| Err(StimuliError::Inconsistent(m));
        if self.stimuli.len() != self.prompts.len() * 12 {
            return inconsistent(format!(
                "{} stimuli for {} prompts",
                self.stimuli.len(),
                self.prompts.len()
            ));
        }
        self.cell_index()?;
        let prompts: HashMap<&str, &PromptPair> = self.prompts.iter().map(|p| (p.prompt_id.as_str(), p)).collect();
        for s in &self.stimuli {
            let p = prompts[s.prompt_id.as_str()];
            if !p.is_consistent() {
                return inconsistent(format!("prompt {} prefixes are inconsistent", p.prompt_id));
            }
            let (pl, cl) = (s.condition.prompt_len(), s.condition.completion_len());
            if s.text.len() != pl + cl || !s.text.starts_with(p.prompt(pl)) {
                return inconsistent(format!("stimulus {} does not extend its prompt", s.stimulus_id));
            }
            if s.system == System::Gold && s.text[..] != p.gold_sentence[..pl + cl] {
                return inconsistent(format!("gold stimulus {} differs from its sentence", s.stimulus_id));
            }
            if self.blinding.get(&s.stimulus_id) != Some(&s.system) {
                return inconsistent(format!("blinding map disagrees on {}", s.stimulus_id));
            }
        }
        Ok(())
    }
}

/// Assemble the 12 stimuli of every prompt.
pub fn build_stimulus_set(prompts: &[PromptPair], completions: &Completions) -> Result<StimulusSet, StimuliError> {
    let mut stimuli = Vec::with_capacity(prompts.len() * 12);
    for p in prompts {
        if !p.is_consistent() {
            return Err(StimuliError::Inconsistent(format!(
                "prompt {} is not a {MIN_PROMPT_SENTENCE}+ token sentence with 5/10-token prefixes",
                p.prompt_id
            )));
        }
        for system in System::ALL {
            for condition in Condition::ALL {
                let (pl, cl) = (condition.prompt_len(), condition.completion_len());
                let text = match system {
                    System::Gold => p.gold_sentence[..pl + cl].to_vec(),
                    _ => {
                        let key = (p.prompt_id.clone(), pl, system);
                        let completion = completions.0.get(&key).ok_or_else(|| StimuliError::MissingCompletion {
                            prompt_id: p.prompt_id.clone(),
                            prompt_len: pl,
                            system,
                        })?;
                        if completion.len() < MAX_COMPLETION {
                            return Err(StimuliError::CompletionTooShort {
                                prompt_id: p.prompt_id.clone(),
                                prompt_len: pl,
                                system,
                                len: completion.len(),
                            });
                        }
                        p.prompt(pl).iter().chain(&completion[..cl]).cloned().collect()
                    }
                };
                stimuli.push(Stimulus {
                    stimulus_id: format!("s{:05}", stimuli.len() + 1),
                    prompt_id: p.prompt_id.clone(),
                    system,
                    condition,
                    text,
                });
            }
        }
    }
    let blinding = stimuli.iter().map(|s| (s.stimulus_id.clone(), s.system)).collect();
    Ok(StimulusSet {
        prompts: prompts.to_vec(),
        stimuli,
        blinding,
    })
}

/// One unit of work for a subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlanItem {
    /// Three stimuli in display order. `display_order[p]` is the position,
    /// in the canonical gold/model/baseline order, of the text shown at
    /// display position `p`.
    Ranking {
        prompt_id: String,
        stimulus_ids: [String; 3],
        display_order: [usize; 3],
    },
    Classification {
        prompt_id: String,
        stimulus_id: String,
    },
}

impl PlanItem {
    pub fn prompt_id(&self) -> &str {
        match self {
            PlanItem::Ranking { prompt_id, .. } | PlanItem::Classification { prompt_id, .. } => prompt_id,
        }
    }

    pub fn stimulus_ids(&self) -> Vec<&str> {
        match self {
            PlanItem::Ranking { stimulus_ids, .. } => stimulus_ids.iter().map(String::as_str).collect(),
            PlanItem::Classification { stimulus_id, .. } => vec![stimulus_id.as_str()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub task: Task,
    pub subject_id: String,
    pub rng_seed: u64,
    /// The condition of every item (ranking plans only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    pub items: Vec<PlanItem>,
}

fn check_subjects(subjects: &[String], group: usize) -> Result<(), StimuliError> {
    if subjects.is_empty() || !subjects.len().is_multiple_of(group) {
        return Err(StimuliError::BadSubjectCount(subjects.len(), group));
    }
    let mut seen = std::collections::HashSet::new();
    for s in subjects {
        if !seen.insert(s.as_str()) {
            return Err(StimuliError::DuplicateSubject(s.clone()));
        }
    }
    Ok(())
}

/// Between-subject ranking plans: subjects are spread evenly over the four
/// conditions (seeded), each sees every prompt once in a shuffled order,
/// and each item shows the three systems in a fresh random order.
pub fn assign_ranking(set: &StimulusSet, subjects: &[String], seed: u64) -> Result<Vec<SessionPlan>, StimuliError> {
    check_subjects(subjects, 4)?;
    let cells = set.cell_index()?;
    let mut rng = seeded(seed);
    let mut slots: Vec<usize> = (0..subjects.len()).collect();
    shuffle(&mut rng, &mut slots);

    let mut plans = Vec::with_capacity(subjects.len());
    for (k, subject) in subjects.iter().enumerate() {
        let condition = Condition::ALL[slots[k] % 4];
        let subject_seed = rng.next_u64();
        let mut srng = seeded(subject_seed);
        let mut order: Vec<usize> = (0..set.prompts.len()).collect();
        shuffle(&mut srng, &mut order);
        let items = order
            .into_iter()
            .map(|p| {
                let mut display = [0usize, 1, 2];
                shuffle(&mut srng, &mut display);
                let ids = display.map(|sys| set.stimuli[cells[p][sys][condition.index()]].stimulus_id.clone());
                PlanItem::Ranking {
                    prompt_id: set.prompts[p].prompt_id.clone(),
                    stimulus_ids: ids,
                    display_order: display,
                }
            })
            .collect();
        plans.push(SessionPlan {
            task: Task::Ranking,
            subject_id: subject.clone(),
            rng_seed: subject_seed,
            condition: Some(condition),
            items,
        });
    }
    Ok(plans)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignMode {
    /// Latin-square blocks of twelve subjects.
    #[default]
    Balanced,
    /// Independent uniform cell per (subject, prompt).
    Random,
}

impl FromStr for AssignMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "balanced" => Ok(AssignMode::Balanced),
            "random" => Ok(AssignMode::Random),
            other => Err(format!("unknown assignment mode {other:?}")),
        }
    }
}

/// Classification plans: every subject sees every prompt exactly once, in
/// one of the twelve design cells.
///
/// In balanced mode subjects form blocks of twelve. Within a block, with a
/// seeded relabeling `cell_perm` of the twelve cells and `prompt_perm` of
/// the prompts, subject `s` sees prompt `i` in cell
/// `cell_perm[(prompt_perm[i] + s) mod 12]`, so the block covers every
/// (prompt, cell) pair exactly once.
pub fn assign_classification(
    set: &StimulusSet,
    subjects: &[String],
    seed: u64,
    mode: AssignMode,
) -> Result<Vec<SessionPlan>, StimuliError> {
    check_subjects(subjects, 12)?;
    let cells = set.cell_index()?;
    let design = design_cells();
    let n_prompts = set.prompts.len();
    let mut rng = seeded(seed);

    let mut plans = Vec::with_capacity(subjects.len());
    for block in subjects.chunks(12) {
        let mut cell_perm: Vec<usize> = (0..12).collect();
        shuffle(&mut rng, &mut cell_perm);
        let mut prompt_perm: Vec<usize> = (0..n_prompts).collect();
        shuffle(&mut rng, &mut prompt_perm);
        for (s, subject) in block.iter().enumerate() {
            let subject_seed = rng.next_u64();
            let mut srng = seeded(subject_seed);
            let mut items: Vec<PlanItem> = (0..n_prompts)
                .map(|i| {
                    let cell = match mode {
                        AssignMode::Balanced => cell_perm[(prompt_perm[i] + s) % 12],
                        AssignMode::Random => uniform_below(&mut srng, 12) as usize,
                    };
                    let (system, condition) = design[cell];
                    PlanItem::Classification {
                        prompt_id: set.prompts[i].prompt_id.clone(),
                        stimulus_id: set.stimuli[cells[i][system.index()][condition.index()]]
                            .stimulus_id
                            .clone(),
                    }
                })
                .collect();
            shuffle(&mut srng, &mut items);
            plans.push(SessionPlan {
                task: Task::Classification,
                subject_id: subject.clone(),
                rng_seed: subject_seed,
                condition: None,
                items,
            });
        }
    }
    Ok(plans)
}

/// Subject ids `prefix01..prefixNN`.
pub fn numbered_subjects(prefix: &str, n: usize) -> Vec<String> {
    let width = n.to_string().len().max(2);
    (1..=n).map(|i| format!("{prefix}{i:0width$}")).collect()
}
