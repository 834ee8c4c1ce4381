//! Markov chain text generator.
//!
//! A state is the tuple of the previous `state_size` symbols. Each sentence
//! is padded as `BEGIN^k w1 .. wn END` and every transition is counted.
//!
//! Sampling draws `r` uniformly in `0..total` (see [`crate::rng`]) and walks
//! the next-symbols in (count descending, symbol ascending) order, where
//! `END` sorts before every word, until the cumulative count exceeds `r`.
//!
//! The on-disk form is JSON lines, one state per line in state order:
//!
//! ```text
//! {"state":[null,null],"next":[["a",2]]}
//! {"state":[null,"a"],"next":[["b",2]]}
//! {"state":["b","c"],"next":[[null,1]]}
//! ```
//!
//! `null` stands for `BEGIN` inside a state and for `END` among the next
//! symbols.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sentence;
use crate::numeric::ExactSum;
use crate::rng::{derive_seed, seeded, uniform_below};

pub const DEFAULT_STATE_SIZE: usize = 2;
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Error)]
pub enum MarkovError {
    #[error("state size must be at least 1")]
    BadStateSize,
    #[error("no training sentences")]
    EmptyInput,
    #[error("prompt has {len} tokens, the model needs at least {state_size}")]
    PromptTooShort { len: usize, state_size: usize },
    #[error("state {state:?} never occurred in training")]
    UnseenState { state: Vec<String> },
    #[error("smoothing alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("model line {line}: {reason}")]
    BadModel { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateToken {
    Begin,
    Word(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Next {
    End,
    Word(String),
}

pub type State = Vec<StateToken>;

/// Successor counts of one state, in sampling order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NextCounts {
    entries: Vec<(Next, u64)>,
    total: u64,
}

impl NextCounts {
    fn from_map(map: HashMap<Next, u64>) -> Self {
        let mut entries: Vec<(Next, u64)> = map.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let total = entries.iter().map(|(_, c)| c).sum();
        Self { entries, total }
    }

    pub fn entries(&self) -> &[(Next, u64)] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, next: &Next) -> u64 {
        self.entries.iter().find(|(n, _)| n == next).map_or(0, |(_, c)| *c)
    }

    fn sample(&self, draw: u64) -> &Next {
        let mut r = draw;
        for (next, c) in &self.entries {
            if r < *c {
                return next;
            }
            r -= c;
        }
        unreachable!("draw {draw} outside total {}", self.total)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkovModel {
    state_size: usize,
    transitions: BTreeMap<State, NextCounts>,
    vocab: BTreeSet<String>,
}

/// Output of [`MarkovModel::continue_from`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Continuation {
    pub tokens: Vec<String>,
    /// The chain reached END before the requested length.
    pub ended_early: bool,
}

fn word_state<S: AsRef<str>>(words: &[S]) -> State {
    words.iter().map(|w| StateToken::Word(w.as_ref().to_string())).collect()
}

fn shift(state: &mut State, word: &str) {
    state.remove(0);
    state.push(StateToken::Word(word.to_string()));
}

impl MarkovModel {
    /// Count transitions over token sequences. Shards are counted in
    /// parallel and merged; counts are exact.
    pub fn train<S: AsRef<str> + Sync>(sentences: &[Vec<S>], state_size: usize) -> Result<Self, MarkovError> {
        if state_size == 0 {
            return Err(MarkovError::BadStateSize);
        }
        if sentences.is_empty() {
            return Err(MarkovError::EmptyInput);
        }
        type Counts = HashMap<State, HashMap<Next, u64>>;
        let counts: Counts = sentences
            .par_chunks(1024)
            .map(|chunk| {
                let mut local: Counts = HashMap::new();
                for sentence in chunk {
                    let mut state = vec![StateToken::Begin; state_size];
                    for w in sentence {
                        let w = w.as_ref();
                        *local
                            .entry(state.clone())
                            .or_default()
                            .entry(Next::Word(w.to_string()))
                            .or_default() += 1;
                        shift(&mut state, w);
                    }
                    *local.entry(state).or_default().entry(Next::End).or_default() += 1;
                }
                local
            })
            .reduce(HashMap::new, |mut a, b| {
                for (state, nexts) in b {
                    let slot = a.entry(state).or_default();
                    for (n, c) in nexts {
                        *slot.entry(n).or_default() += c;
                    }
                }
                a
            });
        let vocab = sentences
            .iter()
            .flat_map(|s| s.iter().map(|w| w.as_ref().to_string()))
            .collect();
        let transitions = counts.into_iter().map(|(s, n)| (s, NextCounts::from_map(n))).collect();
        Ok(Self {
            state_size,
            transitions,
            vocab,
        })
    }

    pub fn train_sentences(sentences: &[Sentence], state_size: usize) -> Result<Self, MarkovError> {
        let seqs: Vec<Vec<&str>> = sentences.iter().map(|s| s.forms().collect()).collect();
        Self::train(&seqs, state_size)
    }

    pub fn state_size(&self) -> usize {
        self.state_size
    }

    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    pub fn transitions(&self) -> &BTreeMap<State, NextCounts> {
        &self.transitions
    }

    pub fn begin_state(&self) -> State {
        vec![StateToken::Begin; self.state_size]
    }

    fn walk(&self, mut state: State, max_tokens: usize, seed: u64) -> (Vec<String>, bool) {
        let mut rng = seeded(seed);
        let mut out = Vec::new();
        while out.len() < max_tokens {
            let Some(nexts) = self.transitions.get(&state) else {
                // every state reachable by a counted transition is stored
                unreachable!("walk reached an unstored state");
            };
            match nexts.sample(uniform_below(&mut rng, nexts.total)) {
                Next::End => return (out, true),
                Next::Word(w) => {
                    out.push(w.clone());
                    shift(&mut state, w);
                }
            }
        }
        (out, false)
    }

    /// Sample a sentence from the BEGIN state, stopping at END or after
    /// `max_tokens` tokens.
    pub fn generate(&self, max_tokens: usize, seed: u64) -> Vec<String> {
        self.walk(self.begin_state(), max_tokens, seed).0
    }

    /// Continue a prompt from its last `state_size` tokens. Unseen states
    /// are an error; there is no back-off.
    pub fn continue_from<S: AsRef<str>>(
        &self,
        prompt: &[S],
        n_tokens: usize,
        seed: u64,
    ) -> Result<Continuation, MarkovError> {
        if prompt.len() < self.state_size {
            return Err(MarkovError::PromptTooShort {
                len: prompt.len(),
                state_size: self.state_size,
            });
        }
        let tail = &prompt[prompt.len() - self.state_size..];
        let state = word_state(tail);
        if !self.transitions.contains_key(&state) {
            return Err(MarkovError::UnseenState {
                state: tail.iter().map(|s| s.as_ref().to_string()).collect(),
            });
        }
        let (tokens, ended_early) = self.walk(state, n_tokens, seed);
        Ok(Continuation { tokens, ended_early })
    }

    /// Exactly `n_tokens` tokens following `prompt`, for building
    /// fixed-length stimuli. A walk that reaches END early is redrawn with
    /// a derived seed up to `attempts` times; the longest draw is then
    /// padded with fresh sentences from the BEGIN state. A prompt too short
    /// for a state, or ending in an unseen state, starts from BEGIN.
    pub fn complete<S: AsRef<str>>(&self, prompt: &[S], n_tokens: usize, seed: u64, attempts: u32) -> Vec<String> {
        let start = if prompt.len() >= self.state_size {
            let state = word_state(&prompt[prompt.len() - self.state_size..]);
            if self.transitions.contains_key(&state) {
                state
            } else {
                self.begin_state()
            }
        } else {
            self.begin_state()
        };
        let mut best = Vec::new();
        for attempt in 0..attempts.max(1) {
            let (tokens, ended_early) = self.walk(start.clone(), n_tokens, derive_seed(seed, &attempt.to_string()));
            if !ended_early {
                return tokens;
            }
            if tokens.len() > best.len() {
                best = tokens;
            }
        }
        let mut round = 0u64;
        while best.len() < n_tokens {
            let more = self.generate(n_tokens - best.len(), derive_seed(seed, &format!("pad{round}")));
            best.extend(more);
            round += 1;
        }
        best
    }

    /// Natural-log probability of each transition of `sentence`, END
    /// included, with add-alpha smoothing over `vocab ∪ {END}`. States never
    /// seen in training score uniformly.
    pub fn score_steps<S: AsRef<str>>(&self, sentence: &[S], alpha: f64) -> Result<Vec<f64>, MarkovError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(MarkovError::BadAlpha(alpha));
        }
        let outcomes = (self.vocab.len() + 1) as f64;
        let mut state = self.begin_state();
        let mut steps = Vec::with_capacity(sentence.len() + 1);
        let mut step = |state: &State, next: Next| {
            let p = match self.transitions.get(state) {
                Some(nc) => (nc.count(&next) as f64 + alpha) / (nc.total as f64 + alpha * outcomes),
                None => 1.0 / outcomes,
            };
            steps.push(p.ln());
        };
        for w in sentence {
            let w = w.as_ref();
            step(&state, Next::Word(w.to_string()));
            shift(&mut state, w);
        }
        step(&state, Next::End);
        Ok(steps)
    }

    /// Total natural-log probability of `sentence` including the END step.
    pub fn score<S: AsRef<str>>(&self, sentence: &[S], alpha: f64) -> Result<f64, MarkovError> {
        Ok(self
            .score_steps(sentence, alpha)?
            .into_iter()
            .collect::<ExactSum>()
            .value())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), MarkovError> {
        for (state, nexts) in &self.transitions {
            let rec = StateRecord {
                state: state
                    .iter()
                    .map(|t| match t {
                        StateToken::Begin => None,
                        StateToken::Word(s) => Some(s.clone()),
                    })
                    .collect(),
                next: nexts.entries.iter().map(|(n, c)| (next_label(n), *c)).collect(),
            };
            serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Load and re-validate a model written by [`Self::write_jsonl`].
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, MarkovError> {
        let mut transitions = BTreeMap::new();
        let mut state_size = None;
        let mut state_words: Vec<(usize, String)> = Vec::new();
        let mut vocab = BTreeSet::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| MarkovError::BadModel { line: line_no, reason };
            let rec: StateRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            let k = *state_size.get_or_insert(rec.state.len());
            if k == 0 || rec.state.len() != k {
                return Err(bad(format!("state has {} symbols, expected {k}", rec.state.len())));
            }
            let begins = rec.state.iter().take_while(|s| s.is_none()).count();
            if rec.state[begins..].iter().any(Option::is_none) {
                return Err(bad("BEGIN may only lead a state".into()));
            }
            if rec.next.is_empty() {
                return Err(bad("state without successors".into()));
            }
            let mut map = HashMap::new();
            for (n, c) in &rec.next {
                if *c == 0 {
                    return Err(bad("zero count".into()));
                }
                let n = match n {
                    None => Next::End,
                    Some(w) => {
                        vocab.insert(w.clone());
                        Next::Word(w.clone())
                    }
                };
                if map.insert(n, *c).is_some() {
                    return Err(bad("duplicate successor".into()));
                }
            }
            let nexts = NextCounts::from_map(map);
            let canonical: Vec<(Option<String>, u64)> =
                nexts.entries.iter().map(|(n, c)| (next_label(n), *c)).collect();
            if canonical != rec.next {
                return Err(bad("successors are not in (count desc, symbol asc) order".into()));
            }
            let state: State = rec
                .state
                .into_iter()
                .map(|s| match s {
                    None => StateToken::Begin,
                    Some(w) => {
                        state_words.push((line_no, w.clone()));
                        StateToken::Word(w)
                    }
                })
                .collect();
            if transitions.insert(state, nexts).is_some() {
                return Err(bad("duplicate state".into()));
            }
        }
        let state_size = state_size.ok_or(MarkovError::EmptyInput)?;
        if let Some((line, w)) = state_words.into_iter().find(|(_, w)| !vocab.contains(w)) {
            return Err(MarkovError::BadModel {
                line,
                reason: format!("state word {w:?} is never emitted"),
            });
        }
        let model = Self {
            state_size,
            transitions,
            vocab,
        };
        if !model.transitions.contains_key(&model.begin_state()) {
            return Err(MarkovError::BadModel {
                line: 0,
                reason: "missing BEGIN state".into(),
            });
        }
        Ok(model)
    }
}

fn next_label(next: &Next) -> Option<String> {
    match next {
        Next::End => None,
        Next::Word(w) => Some(w.clone()),
    }
}

#[derive(Serialize, Deserialize)]
struct StateRecord {
    state: Vec<Option<String>>,
    next: Vec<(Option<String>, u64)>,
}
