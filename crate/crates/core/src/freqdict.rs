//! Reference token-frequency dictionaries and top-rank hit rates.
//!
//! Types are ranked by (count descending, form ascending). The top set at
//! `permille` is the first `ceil(permille * types / 1000)` ranked types, so
//! 5‰ of a 1000-type dictionary is exactly 5 types.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Corpus, Upos, DETACHED_PUNCT};

#[derive(Debug, Error)]
pub enum FreqDictError {
    #[error("empty input")]
    EmptyInput,
    #[error("permille must be in 1..=1000, got {0}")]
    BadPermille(u32),
    #[error("line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("line {line}: entries are not in (count desc, form asc) order")]
    NotSorted { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DictOptions {
    pub lowercase: bool,
    pub include_punct: bool,
}

impl Default for DictOptions {
    fn default() -> Self {
        Self {
            lowercase: false,
            include_punct: true,
        }
    }
}

/// True for tokens tagged PUNCT, or made only of punctuation characters.
pub fn is_punct_form(form: &str) -> bool {
    !form.is_empty()
        && form
            .chars()
            .all(|c| c.is_ascii_punctuation() || DETACHED_PUNCT.contains(&c))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreqDict {
    options: DictOptions,
    counts: HashMap<String, u64>,
    ranked: Vec<(String, u64)>,
    total: u64,
}

impl FreqDict {
    pub fn from_counts(counts: HashMap<String, u64>, options: DictOptions) -> Self {
        let mut ranked: Vec<(String, u64)> = counts.iter().map(|(f, &c)| (f.clone(), c)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let total = ranked.iter().map(|(_, c)| c).sum();
        Self {
            options,
            counts,
            ranked,
            total,
        }
    }

    pub fn options(&self) -> DictOptions {
        self.options
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn types(&self) -> usize {
        self.ranked.len()
    }

    pub fn count(&self, form: &str) -> u64 {
        self.counts.get(form).copied().unwrap_or(0)
    }

    /// Entries in rank order.
    pub fn ranked(&self) -> &[(String, u64)] {
        &self.ranked
    }

    pub fn top_size(&self, permille: u32) -> usize {
        (permille as usize * self.ranked.len()).div_ceil(1000)
    }

    pub fn top_set(&self, permille: u32) -> HashSet<&str> {
        self.ranked[..self.top_size(permille)]
            .iter()
            .map(|(f, _)| f.as_str())
            .collect()
    }

    /// Apply the dictionary's normalization to a text token; `None` when the
    /// token is outside the dictionary's scope (punctuation when excluded).
    pub fn normalize<'a>(&self, form: &'a str) -> Option<std::borrow::Cow<'a, str>> {
        if !self.options.include_punct && is_punct_form(form) {
            return None;
        }
        Some(if self.options.lowercase {
            form.to_lowercase().into()
        } else {
            form.into()
        })
    }

    /// Two-column TSV (`form<TAB>count`) in rank order. Options go in a
    /// leading `#` line.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# lowercase={} include_punct={}",
            self.options.lowercase, self.options.include_punct
        )?;
        for (form, count) in &self.ranked {
            writeln!(w, "{form}\t{count}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self, FreqDictError> {
        let mut options = DictOptions::default();
        let mut counts = HashMap::new();
        let mut prev: Option<(String, u64)> = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if let Some(comment) = line.strip_prefix('#') {
                for kv in comment.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("lowercase", v)) => options.lowercase = v == "true",
                        Some(("include_punct", v)) => options.include_punct = v == "true",
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| FreqDictError::BadLine {
                line: line_no,
                reason: reason.to_string(),
            };
            let (form, count) = line.split_once('\t').ok_or_else(|| bad("expected form<TAB>count"))?;
            let count: u64 = count.parse().map_err(|_| bad("count is not an integer"))?;
            if form.is_empty() || count == 0 {
                return Err(bad("empty form or zero count"));
            }
            if let Some((pf, pc)) = &prev {
                if count > *pc || (count == *pc && form <= pf.as_str()) {
                    return Err(FreqDictError::NotSorted { line: line_no });
                }
            }
            counts.insert(form.to_string(), count);
            prev = Some((form.to_string(), count));
        }
        Ok(Self::from_counts(counts, options))
    }
}

/// Count token forms over the corpus. Documents are counted in parallel and
/// merged; counts are exact so the result does not depend on scheduling.
pub fn build_freq_dict(corpus: &Corpus, options: DictOptions) -> Result<FreqDict, FreqDictError> {
    if corpus.token_count() == 0 {
        return Err(FreqDictError::EmptyInput);
    }
    let counts = corpus
        .documents()
        .par_iter()
        .map(|doc| {
            let mut local: HashMap<String, u64> = HashMap::new();
            for t in doc.sentences.iter().flat_map(|s| &s.tokens) {
                if !options.include_punct && (t.upos == Upos::Punct || is_punct_form(&t.form)) {
                    continue;
                }
                let form = if options.lowercase {
                    t.form.to_lowercase()
                } else {
                    t.form.clone()
                };
                *local.entry(form).or_default() += 1;
            }
            local
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });
    if counts.is_empty() {
        return Err(FreqDictError::EmptyInput);
    }
    Ok(FreqDict::from_counts(counts, options))
}

/// Share of text tokens whose (normalized) form is in the top `permille`
/// of dictionary types. Tokens missing from the dictionary are misses;
/// tokens outside the dictionary's scope are skipped.
pub fn top_hit_rate<S: AsRef<str>>(text_tokens: &[S], dict: &FreqDict, permille: u32) -> Result<f64, FreqDictError> {
    if !(1..=1000).contains(&permille) {
        return Err(FreqDictError::BadPermille(permille));
    }
    if dict.types() == 0 {
        return Err(FreqDictError::EmptyInput);
    }
    let top = dict.top_set(permille);
    let mut seen = 0usize;
    let mut hits = 0usize;
    for tok in text_tokens {
        if let Some(form) = dict.normalize(tok.as_ref()) {
            seen += 1;
            if top.contains(form.as_ref()) {
                hits += 1;
            }
        }
    }
    if seen == 0 {
        return Err(FreqDictError::EmptyInput);
    }
    Ok(hits as f64 / seen as f64)
}
