//! Linguistic profile features.
//!
//! Per sentence:
//!
//! | feature       | definition                                                  |
//! |---------------|-------------------------------------------------------------|
//! | `cpt`         | mean characters per token, PUNCT tokens excluded            |
//! | `tps`         | tokens in the sentence (PUNCT included)                     |
//! | `tpc`         | `tps / clauses`                                             |
//! | `ll_max`      | longest dependency link                                     |
//! | `ll_avg`      | mean dependency link                                        |
//! | `ll_max_norm` | `ll_max / tps`                                              |
//! | `pos_dist`    | share of each UPOS tag among all tokens                     |
//!
//! A link is every non-root arc whose relation is not `punct`; its length is
//! `|dependent - head|` in token positions. A clause is a token that is
//! either a VERB not attached as `aux`, `aux:pass` or `cop`, or the head of
//! a `cop` dependent. A feature whose denominator is zero is absent. Only
//! `cpt`, `tps` and `pos_dist` are produced for sentences without syntax.
//!
//! Corpus aggregates are sentence-level means with population standard
//! deviations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Sentence, Upos};
use crate::numeric::FeatureStats;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProfilingError {
    #[error("cannot aggregate an empty list of profiles")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceProfile {
    pub cpt: Option<f64>,
    pub tps: usize,
    pub tpc: Option<f64>,
    pub ll_max: Option<usize>,
    pub ll_avg: Option<f64>,
    pub ll_max_norm: Option<f64>,
    pub pos_dist: BTreeMap<Upos, f64>,
}

/// Scalar features in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Feature {
    Cpt,
    Tps,
    Tpc,
    LlMax,
    LlAvg,
    LlMaxNorm,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Cpt,
        Feature::Tps,
        Feature::Tpc,
        Feature::LlMax,
        Feature::LlAvg,
        Feature::LlMaxNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Cpt => "cpt",
            Feature::Tps => "tps",
            Feature::Tpc => "tpc",
            Feature::LlMax => "ll_max",
            Feature::LlAvg => "ll_avg",
            Feature::LlMaxNorm => "ll_max_norm",
        }
    }
}

impl SentenceProfile {
    pub fn get(&self, feature: Feature) -> Option<f64> {
        match feature {
            Feature::Cpt => self.cpt,
            Feature::Tps => Some(self.tps as f64),
            Feature::Tpc => self.tpc,
            Feature::LlMax => self.ll_max.map(|v| v as f64),
            Feature::LlAvg => self.ll_avg,
            Feature::LlMaxNorm => self.ll_max_norm,
        }
    }
}

/// POS rows in the order of the reference comparison table.
pub const REPORT_POS: [Upos; 13] = [
    Upos::Aux,
    Upos::Propn,
    Upos::Punct,
    Upos::Det,
    Upos::Num,
    Upos::Adp,
    Upos::Pron,
    Upos::Sconj,
    Upos::Noun,
    Upos::Verb,
    Upos::Adv,
    Upos::Cconj,
    Upos::Adj,
];

fn is_clause_head_verb(upos: Upos, deprel: &str) -> bool {
    upos == Upos::Verb && !matches!(deprel, "aux" | "aux:pass" | "cop")
}

pub fn profile_sentence(s: &Sentence) -> SentenceProfile {
    let tps = s.len();

    let mut chars = 0usize;
    let mut words = 0usize;
    let mut pos_counts: BTreeMap<Upos, usize> = BTreeMap::new();
    for t in &s.tokens {
        *pos_counts.entry(t.upos).or_default() += 1;
        if t.upos != Upos::Punct {
            chars += t.form.chars().count();
            words += 1;
        }
    }
    let pos_dist = pos_counts
        .into_iter()
        .map(|(u, c)| (u, c as f64 / tps as f64))
        .collect();
    let cpt = (words > 0).then(|| chars as f64 / words as f64);

    let mut profile = SentenceProfile {
        cpt,
        tps,
        tpc: None,
        ll_max: None,
        ll_avg: None,
        ll_max_norm: None,
        pos_dist,
    };
    if !s.has_syntax() {
        return profile;
    }

    let mut link_sum = 0usize;
    let mut link_count = 0usize;
    let mut link_max = 0usize;
    for t in &s.tokens {
        if t.head == 0 || t.deprel == "punct" {
            continue;
        }
        let len = t.index.abs_diff(t.head);
        link_sum += len;
        link_count += 1;
        link_max = link_max.max(len);
    }
    if link_count > 0 {
        profile.ll_max = Some(link_max);
        profile.ll_avg = Some(link_sum as f64 / link_count as f64);
        profile.ll_max_norm = Some(link_max as f64 / tps as f64);
    }

    let cop_heads: BTreeSet<usize> = s.tokens.iter().filter(|t| t.deprel == "cop").map(|t| t.head).collect();
    let clauses = s
        .tokens
        .iter()
        .filter(|t| is_clause_head_verb(t.upos, &t.deprel) || cop_heads.contains(&t.index))
        .count();
    if clauses > 0 {
        profile.tpc = Some(tps as f64 / clauses as f64);
    }
    profile
}

/// Profiles of every sentence in corpus order. Work is spread over the
/// current rayon pool; the output order does not depend on it.
pub fn profile_corpus(corpus: &Corpus) -> Vec<SentenceProfile> {
    let sentences: Vec<&Sentence> = corpus.sentences().collect();
    sentences.par_iter().map(|s| profile_sentence(s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusProfile {
    pub sentences: usize,
    pub cpt: Option<FeatureStats>,
    pub tps: FeatureStats,
    pub tpc: Option<FeatureStats>,
    pub ll_max: Option<FeatureStats>,
    pub ll_avg: Option<FeatureStats>,
    pub ll_max_norm: Option<FeatureStats>,
    /// Per-tag statistics of sentence proportions, over all sentences
    /// (a tag missing from a sentence counts as 0).
    pub pos_stats: BTreeMap<Upos, FeatureStats>,
    /// mean(ll_max) / mean(tps).
    pub ll_max_over_tps: Option<f64>,
}

impl CorpusProfile {
    pub fn get(&self, feature: Feature) -> Option<FeatureStats> {
        match feature {
            Feature::Cpt => self.cpt,
            Feature::Tps => Some(self.tps),
            Feature::Tpc => self.tpc,
            Feature::LlMax => self.ll_max,
            Feature::LlAvg => self.ll_avg,
            Feature::LlMaxNorm => self.ll_max_norm,
        }
    }
}

pub fn aggregate_profiles(profiles: &[SentenceProfile]) -> Result<CorpusProfile, ProfilingError> {
    if profiles.is_empty() {
        return Err(ProfilingError::EmptyInput);
    }
    let stats = |f: Feature| {
        let values: Vec<f64> = profiles.iter().filter_map(|p| p.get(f)).collect();
        FeatureStats::from_values(&values)
    };
    let pos_stats = Upos::ALL
        .iter()
        .map(|&u| {
            let values: Vec<f64> = profiles
                .iter()
                .map(|p| p.pos_dist.get(&u).copied().unwrap_or(0.0))
                .collect();
            (u, FeatureStats::from_values(&values).expect("non-empty"))
        })
        .collect();
    let tps = stats(Feature::Tps).expect("tps is always present");
    let ll_max = stats(Feature::LlMax);
    Ok(CorpusProfile {
        sentences: profiles.len(),
        cpt: stats(Feature::Cpt),
        tps,
        tpc: stats(Feature::Tpc),
        ll_avg: stats(Feature::LlAvg),
        ll_max_norm: stats(Feature::LlMaxNorm),
        ll_max_over_tps: ll_max.map(|s| s.mean / tps.mean),
        ll_max,
        pos_stats,
    })
}

/// One side of a comparison row. `n` is unknown for published figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub mean: f64,
    pub std: f64,
    pub n: Option<usize>,
}

impl From<FeatureStats> for ReportCell {
    fn from(s: FeatureStats) -> Self {
        Self {
            mean: s.mean,
            std: s.std,
            n: Some(s.n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub feature: String,
    pub a: Option<ReportCell>,
    pub b: Option<ReportCell>,
    /// mean(b) - mean(a)
    pub diff: Option<f64>,
}

impl ComparisonRow {
    pub fn new(feature: impl Into<String>, a: Option<ReportCell>, b: Option<ReportCell>) -> Self {
        let diff = match (a, b) {
            (Some(a), Some(b)) => Some(b.mean - a.mean),
            _ => None,
        };
        Self {
            feature: feature.into(),
            a,
            b,
            diff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_profiles(a: &CorpusProfile, b: &CorpusProfile, label_a: &str, label_b: &str) -> ComparisonReport {
    let mut rows: Vec<ComparisonRow> = Feature::ALL
        .iter()
        .map(|&f| ComparisonRow::new(f.name(), a.get(f).map(Into::into), b.get(f).map(Into::into)))
        .collect();
    rows.extend(REPORT_POS.iter().map(|u| {
        ComparisonRow::new(
            u.as_str(),
            a.pos_stats.get(u).copied().map(Into::into),
            b.pos_stats.get(u).copied().map(Into::into),
        )
    }));
    ComparisonReport {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        rows,
    }
}

const EMPTY_CELL: &str = "—";

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = [
            "feature".to_string(),
            format!("{}_mean", self.label_a),
            format!("{}_std", self.label_a),
            format!("{}_n", self.label_a),
            format!("{}_mean", self.label_b),
            format!("{}_std", self.label_b),
            format!("{}_n", self.label_b),
            "diff".to_string(),
        ];
        w.write_record(&header).expect("in-memory write");
        let num = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        let count = |c: Option<ReportCell>| c.and_then(|c| c.n).map(|n| n.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.feature.clone(),
                num(r.a.map(|c| c.mean)),
                num(r.a.map(|c| c.std)),
                count(r.a),
                num(r.b.map(|c| c.mean)),
                num(r.b.map(|c| c.std)),
                count(r.b),
                num(r.diff),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| EMPTY_CELL.into());
        let mut lines: Vec<[String; 6]> = vec![[
            "feature".into(),
            format!("{} μ", self.label_a),
            "std".into(),
            format!("{} μ", self.label_b),
            "std".into(),
            "diff".into(),
        ]];
        for r in &self.rows {
            lines.push([
                r.feature.clone(),
                fmt(r.a.map(|c| c.mean)),
                fmt(r.a.map(|c| c.std)),
                fmt(r.b.map(|c| c.mean)),
                fmt(r.b.map(|c| c.std)),
                r.diff.map(|d| format!("{d:+.3}")).unwrap_or_else(|| EMPTY_CELL.into()),
            ]);
        }
        let widths: Vec<usize> = (0..6)
            .map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            for (i, cell) in l.iter().enumerate() {
                let pad = widths[i] - cell.chars().count();
                if i == 0 {
                    let _ = write!(out, "{cell}{}", " ".repeat(pad));
                } else {
                    let _ = write!(out, "  {}{cell}", " ".repeat(pad));
                }
            }
            out.push('\n');
        }
        out
    }
}
