//! Per-domain perplexity.
//!
//! `PPL = exp(-(Σ logprob) / N)` with natural logs, where `N` counts the
//! scored units in a domain. Sums are exact ([`ExactSum`]), so record order
//! and sharding do not change the result.
//!
//! External log-probabilities come as JSON lines. The first line declares
//! the log base and the unit being scored:
//!
//! ```text
//! {"log_base": "2", "unit": "subword"}
//! {"doc_id": "news/001", "token": "Il", "logprob": -3.1}
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::markov::{MarkovError, MarkovModel};
use crate::numeric::ExactSum;

/// Domain used for records without a domain mapping.
pub const DEFAULT_DOMAIN: &str = "all";

#[derive(Debug, Error)]
pub enum PerplexityError {
    #[error("no records")]
    EmptyInput,
    #[error("record {index}: log-probability {value} is not finite")]
    NonFiniteLogProb { index: usize, value: f64 },
    #[error("record {index}: log-probability {value} is positive")]
    PositiveLogProb { index: usize, value: f64 },
    #[error("line {line}: {reason}")]
    BadInput { line: usize, reason: String },
    #[error("domain {domain}: perplexity {perplexity} disagrees with exp(mean) {expected}")]
    Inconsistent {
        domain: String,
        perplexity: f64,
        expected: f64,
    },
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbRecord {
    pub doc_id: String,
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogBase {
    #[serde(rename = "e")]
    E,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "10")]
    Ten,
}

impl LogBase {
    /// Factor converting a log in this base to a natural log.
    pub fn to_natural(self) -> f64 {
        match self {
            LogBase::E => 1.0,
            LogBase::Two => std::f64::consts::LN_2,
            LogBase::Ten => std::f64::consts::LN_10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogProbHeader {
    pub log_base: LogBase,
    pub unit: String,
}

/// Running totals for one domain.
#[derive(Debug, Clone, Default)]
pub struct DomainSum {
    logprob: ExactSum,
    tokens: u64,
}

impl DomainSum {
    pub fn add(&mut self, logprob: f64) {
        self.logprob.add(logprob);
        self.tokens += 1;
    }

    pub fn merge(&mut self, other: &DomainSum) {
        self.logprob.merge(&other.logprob);
        self.tokens += other.tokens;
    }

    fn row(&self, domain: &str) -> DomainPerplexity {
        let mean_neg_logprob = -self.logprob.value() / self.tokens as f64;
        DomainPerplexity {
            domain: domain.to_string(),
            token_count: self.tokens,
            mean_neg_logprob,
            perplexity: mean_neg_logprob.exp(),
        }
    }
}

/// Streaming accumulator; shards can be merged exactly.
#[derive(Debug, Clone, Default)]
pub struct PerplexityAccumulator {
    domains: BTreeMap<String, DomainSum>,
    records: usize,
}

impl PerplexityAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add one natural-log probability. Rejects non-finite and positive
    /// values, reporting the running record index.
    pub fn add(&mut self, domain: &str, logprob: f64) -> Result<(), PerplexityError> {
        let index = self.records;
        if !logprob.is_finite() {
            return Err(PerplexityError::NonFiniteLogProb { index, value: logprob });
        }
        if logprob > 0.0 {
            return Err(PerplexityError::PositiveLogProb { index, value: logprob });
        }
        self.records += 1;
        match self.domains.get_mut(domain) {
            Some(sum) => sum.add(logprob),
            None => self.domains.entry(domain.to_string()).or_default().add(logprob),
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &PerplexityAccumulator) {
        for (d, s) in &other.domains {
            self.domains.entry(d.clone()).or_default().merge(s);
        }
        self.records += other.records;
    }

    pub fn finish(&self, unit: &str) -> Result<PerplexityReport, PerplexityError> {
        if self.records == 0 {
            return Err(PerplexityError::EmptyInput);
        }
        let mut overall = DomainSum::default();
        for s in self.domains.values() {
            overall.merge(s);
        }
        Ok(PerplexityReport {
            unit: unit.to_string(),
            domains: self.domains.iter().map(|(d, s)| s.row(d)).collect(),
            overall: overall.row("overall"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPerplexity {
    pub domain: String,
    pub token_count: u64,
    pub mean_neg_logprob: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    /// What the scored units are (`word`, `subword`, ...).
    pub unit: String,
    pub domains: Vec<DomainPerplexity>,
    pub overall: DomainPerplexity,
}

impl PerplexityReport {
    pub fn domain(&self, name: &str) -> Option<&DomainPerplexity> {
        self.domains.iter().find(|d| d.domain == name)
    }

    /// Put `first` domains at the top in the given order; the rest keep
    /// alphabetical order.
    pub fn order_domains(&mut self, first: &[String]) {
        let rank = |d: &DomainPerplexity| first.iter().position(|f| *f == d.domain).unwrap_or(first.len());
        self.domains
            .sort_by(|a, b| rank(a).cmp(&rank(b)).then_with(|| a.domain.cmp(&b.domain)));
    }

    /// Every row satisfies perplexity = exp(mean_neg_logprob).
    pub fn check(&self) -> Result<(), PerplexityError> {
        for row in self.domains.iter().chain(std::iter::once(&self.overall)) {
            let expected = row.mean_neg_logprob.exp();
            if (row.perplexity - expected).abs() > 1e-9 * expected.abs().max(1.0) {
                return Err(PerplexityError::Inconsistent {
                    domain: row.domain.clone(),
                    perplexity: row.perplexity,
                    expected,
                });
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String, PerplexityError> {
        self.check()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["domain", "unit", "token_count", "mean_neg_logprob", "perplexity"])
            .expect("in-memory write");
        for row in self.domains.iter().chain(std::iter::once(&self.overall)) {
            w.write_record([
                row.domain.clone(),
                self.unit.clone(),
                row.token_count.to_string(),
                format!("{:.6}", row.mean_neg_logprob),
                format!("{:.4}", row.perplexity),
            ])
            .expect("in-memory write");
        }
        Ok(String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"))
    }

    pub fn to_text(&self) -> Result<String, PerplexityError> {
        self.check()?;
        Ok(render_table(
            &self.unit,
            self.domains
                .iter()
                .map(|r| (r.domain.as_str(), Some(r.token_count), r.perplexity))
                .chain(std::iter::once((
                    self.overall.domain.as_str(),
                    Some(self.overall.token_count),
                    self.overall.perplexity,
                ))),
        ))
    }
}

/// Aligned `domain / tokens / perplexity` table.
pub fn render_table<'a>(unit: &str, rows: impl Iterator<Item = (&'a str, Option<u64>, f64)>) -> String {
    let rows: Vec<(String, String, String)> = rows
        .map(|(d, n, p)| {
            (
                d.to_string(),
                n.map(|n| n.to_string()).unwrap_or_else(|| "—".into()),
                format!("{p:.4}"),
            )
        })
        .collect();
    let head = ("domain".to_string(), format!("{unit}s"), "perplexity".to_string());
    let w0 = rows
        .iter()
        .map(|r| r.0.chars().count())
        .chain([head.0.len()])
        .max()
        .unwrap_or(0);
    let w1 = rows
        .iter()
        .map(|r| r.1.chars().count())
        .chain([head.1.len()])
        .max()
        .unwrap_or(0);
    let w2 = rows.iter().map(|r| r.2.len()).chain([head.2.len()]).max().unwrap_or(0);
    let mut out = String::new();
    for (a, b, c) in std::iter::once(&head).chain(rows.iter()) {
        let pad0 = w0 - a.chars().count();
        let pad1 = w1 - b.chars().count();
        let _ = writeln!(out, "{a}{}  {}{b}  {c:>w2$}", " ".repeat(pad0), " ".repeat(pad1));
    }
    out
}

/// Perplexity over a stream of natural-log records.
pub fn perplexity_from_logprobs<I, F>(records: I, domain_of: F, unit: &str) -> Result<PerplexityReport, PerplexityError>
where
    I: IntoIterator<Item = LogProbRecord>,
    F: Fn(&str) -> String,
{
    let mut acc = PerplexityAccumulator::new();
    for rec in records {
        acc.add(&domain_of(&rec.doc_id), rec.logprob)?;
    }
    acc.finish(unit)
}

/// Read a header-prefixed JSON-lines log-probability file in one pass,
/// converting to natural logs.
pub fn perplexity_from_jsonl<R, F>(reader: R, domain_of: F) -> Result<PerplexityReport, PerplexityError>
where
    R: BufRead,
    F: Fn(&str) -> String,
{
    let mut lines = reader.lines().enumerate().filter(|(_, l)| match l {
        Ok(l) => !l.trim().is_empty(),
        Err(_) => true,
    });
    let (_, first) = lines.next().ok_or(PerplexityError::EmptyInput)?;
    let header: LogProbHeader = serde_json::from_str(&first?).map_err(|e| PerplexityError::BadInput {
        line: 1,
        reason: format!("bad header: {e}"),
    })?;
    let factor = header.log_base.to_natural();
    let mut acc = PerplexityAccumulator::new();
    for (i, line) in lines {
        let rec: LogProbRecord = serde_json::from_str(&line?).map_err(|e| PerplexityError::BadInput {
            line: i + 1,
            reason: e.to_string(),
        })?;
        acc.add(&domain_of(&rec.doc_id), rec.logprob * factor)?;
    }
    acc.finish(&header.unit)
}

/// Perplexity of the Markov model over a corpus with add-alpha smoothing.
/// Each sentence contributes its tokens plus the END transition.
pub fn perplexity_of_markov(
    model: &MarkovModel,
    corpus: &Corpus,
    alpha: f64,
) -> Result<PerplexityReport, PerplexityError> {
    let mut acc = PerplexityAccumulator::new();
    for doc in corpus.documents() {
        let domain = doc.domain().unwrap_or(DEFAULT_DOMAIN);
        for s in &doc.sentences {
            let forms: Vec<&str> = s.forms().collect();
            for lp in model.score_steps(&forms, alpha)? {
                acc.add(domain, lp)?;
            }
        }
    }
    acc.finish("word")
}
