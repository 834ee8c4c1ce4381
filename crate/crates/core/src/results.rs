//! Ranking and classification percentage tables.
//!
//! Counts are kept per (system, condition, category), where the category is
//! the rank (1st/2nd/3rd) or the label (yes/no/ct). Percentages are
//! `100 * count / n` rounded half away from zero; raw counts and `n` are
//! always emitted next to them.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::annotation::{ExportRecord, Response};
use crate::stimuli::{Condition, System, Task};

/// Decimals used for computed percentages.
pub const DECIMALS: usize = 1;
const EMPTY_CELL: &str = "—";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ResultsError {
    #[error("no records")]
    EmptyInput,
    #[error("record {record_id} is a {found} record, expected {expected}")]
    MixedTask {
        record_id: u64,
        expected: Task,
        found: Task,
    },
    #[error("record {record_id}: {reason}")]
    Malformed { record_id: u64, reason: String },
    #[error("{0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Format {
    Csv,
    Json,
    Text,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "text" => Ok(Format::Text),
            other => Err(format!("unknown format {other:?} (csv, json, text)")),
        }
    }
}

pub fn round_half_away(x: f64, decimals: usize) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (x * scale).round() / scale
}

/// Counts for one task over the 3 systems x 4 conditions x 3 categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PercentTable {
    task: Task,
    counts: [[[u64; 3]; 4]; 3],
}

pub type RankingTable = PercentTable;
pub type ClassificationTable = PercentTable;

impl PercentTable {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            counts: [[[0; 3]; 4]; 3],
        }
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn categories(&self) -> [&'static str; 3] {
        match self.task {
            Task::Ranking => ["1st", "2nd", "3rd"],
            Task::Classification => ["yes", "no", "ct"],
        }
    }

    pub fn counts(&self, system: System, condition: Condition) -> [u64; 3] {
        self.counts[system.index()][condition.index()]
    }

    pub fn n(&self, system: System, condition: Condition) -> u64 {
        self.counts(system, condition).iter().sum()
    }

    /// Counts pooled over conditions.
    pub fn overall_counts(&self, system: System) -> [u64; 3] {
        let mut out = [0; 3];
        for c in &self.counts[system.index()] {
            for k in 0..3 {
                out[k] += c[k];
            }
        }
        out
    }

    pub fn percentages(&self, system: System, condition: Condition) -> Option<[f64; 3]> {
        percent(self.counts(system, condition))
    }

    pub fn overall_percentages(&self, system: System) -> Option<[f64; 3]> {
        percent(self.overall_counts(system))
    }

    /// Pool the counts of another table of the same task.
    pub fn merge(&mut self, other: &PercentTable) {
        assert_eq!(self.task, other.task);
        for s in 0..3 {
            for c in 0..4 {
                for k in 0..3 {
                    self.counts[s][c][k] += other.counts[s][c][k];
                }
            }
        }
    }

    /// Rounded rows sum to 100 ± 0.5; for rankings, each rank position also
    /// sums to 100 ± 0.5 across systems within a condition.
    pub fn check_invariants(&self) -> Result<(), ResultsError> {
        let off = |v: f64| (v - 100.0).abs() > 0.5;
        let rounded = |p: [f64; 3]| p.map(|v| round_half_away(v, DECIMALS));
        for s in System::ALL {
            let rows = Condition::ALL
                .iter()
                .filter_map(|&c| self.percentages(s, c).map(|p| (c.label(), p)))
                .chain(self.overall_percentages(s).map(|p| ("all", p)));
            for (label, p) in rows {
                let sum: f64 = rounded(p).iter().sum();
                if off(sum) {
                    return Err(ResultsError::Invariant(format!("{s} {label}: row sums to {sum}")));
                }
            }
        }
        if self.task == Task::Ranking {
            for c in Condition::ALL {
                let cols: Vec<[f64; 3]> = System::ALL
                    .iter()
                    .filter_map(|&s| self.percentages(s, c).map(rounded))
                    .collect();
                if cols.is_empty() {
                    continue;
                }
                if cols.len() != 3 {
                    return Err(ResultsError::Invariant(format!("{c}: systems with no observations")));
                }
                for k in 0..3 {
                    let sum: f64 = cols.iter().map(|p| p[k]).sum();
                    if off(sum) {
                        return Err(ResultsError::Invariant(format!(
                            "{c} rank {}: column sums to {sum}",
                            k + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn percent(counts: [u64; 3]) -> Option<[f64; 3]> {
    let n: u64 = counts.iter().sum();
    (n > 0).then(|| counts.map(|c| 100.0 * c as f64 / n as f64))
}

fn check_task(records: &[ExportRecord], task: Task) -> Result<(), ResultsError> {
    if records.is_empty() {
        return Err(ResultsError::EmptyInput);
    }
    if let Some(r) = records.iter().find(|r| r.record.task != task) {
        return Err(ResultsError::MixedTask {
            record_id: r.record.record_id,
            expected: task,
            found: r.record.task,
        });
    }
    Ok(())
}

/// Each ranking record adds one observation per system: the rank given to
/// the display position that showed it.
pub fn aggregate_ranking(records: &[ExportRecord]) -> Result<RankingTable, ResultsError> {
    check_task(records, Task::Ranking)?;
    let mut table = PercentTable::new(Task::Ranking);
    for r in records {
        let malformed = |reason: &str| ResultsError::Malformed {
            record_id: r.record.record_id,
            reason: reason.to_string(),
        };
        let Response::Ranking(ranks) = &r.record.response else {
            return Err(malformed("ranking record without a ranking"));
        };
        r.record
            .response
            .validate(Task::Ranking)
            .map_err(|e| malformed(&e.to_string()))?;
        if r.systems.len() != 3 {
            return Err(malformed("ranking record must name three systems"));
        }
        let mut systems = r.systems.clone();
        systems.sort_unstable();
        if systems != System::ALL {
            return Err(malformed("ranking record must cover each system once"));
        }
        for (pos, &rank) in ranks.iter().enumerate() {
            table.counts[r.systems[pos].index()][r.condition.index()][rank as usize - 1] += 1;
        }
    }
    Ok(table)
}

pub fn aggregate_classification(records: &[ExportRecord]) -> Result<ClassificationTable, ResultsError> {
    check_task(records, Task::Classification)?;
    let mut table = PercentTable::new(Task::Classification);
    for r in records {
        let (Response::Label(label), [system]) = (&r.record.response, r.systems.as_slice()) else {
            return Err(ResultsError::Malformed {
                record_id: r.record.record_id,
                reason: "classification record needs one system and a label".into(),
            });
        };
        table.counts[system.index()][r.condition.index()][label.index()] += 1;
    }
    Ok(table)
}

/// Split a mixed export by task and aggregate each part.
pub fn aggregate_all(records: &[ExportRecord]) -> Result<ResultTables, ResultsError> {
    if records.is_empty() {
        return Err(ResultsError::EmptyInput);
    }
    let (rank, class): (Vec<ExportRecord>, Vec<ExportRecord>) =
        records.iter().cloned().partition(|r| r.record.task == Task::Ranking);
    Ok(ResultTables {
        ranking: (!rank.is_empty()).then(|| aggregate_ranking(&rank)).transpose()?,
        classification: (!class.is_empty())
            .then(|| aggregate_classification(&class))
            .transpose()?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResultTables {
    pub ranking: Option<RankingTable>,
    pub classification: Option<ClassificationTable>,
}

impl ResultTables {
    fn tables(&self) -> impl Iterator<Item = &PercentTable> {
        self.ranking.iter().chain(self.classification.iter())
    }
}

#[derive(Serialize)]
struct JsonCell {
    system: System,
    condition: String,
    n: u64,
    counts: [u64; 3],
    percent: Option<[f64; 3]>,
}

#[derive(Serialize)]
struct JsonTable {
    task: Task,
    categories: [&'static str; 3],
    cells: Vec<JsonCell>,
}

fn json_table(t: &PercentTable) -> JsonTable {
    let mut cells = Vec::new();
    for s in System::ALL {
        for c in Condition::ALL {
            let counts = t.counts(s, c);
            cells.push(JsonCell {
                system: s,
                condition: c.label().to_string(),
                n: counts.iter().sum(),
                counts,
                percent: percent(counts).map(|p| p.map(|v| round_half_away(v, DECIMALS))),
            });
        }
        let counts = t.overall_counts(s);
        cells.push(JsonCell {
            system: s,
            condition: "all".into(),
            n: counts.iter().sum(),
            counts,
            percent: percent(counts).map(|p| p.map(|v| round_half_away(v, DECIMALS))),
        });
    }
    JsonTable {
        task: t.task,
        categories: t.categories(),
        cells,
    }
}

fn fmt_pct(v: f64, decimals: usize) -> String {
    format!("{:.*}", decimals, round_half_away(v, decimals))
}

/// Render every populated table. Invariants are checked first.
pub fn render_report(tables: &ResultTables, format: Format) -> Result<String, ResultsError> {
    for t in tables.tables() {
        t.check_invariants()?;
    }
    Ok(match format {
        Format::Json => {
            let v: Vec<JsonTable> = tables.tables().map(json_table).collect();
            serde_json::to_string_pretty(&v).expect("serializable") + "\n"
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["task", "system", "condition", "category", "count", "n", "percent"])
                .expect("in-memory write");
            for t in tables.tables() {
                for s in System::ALL {
                    let rows = Condition::ALL
                        .iter()
                        .map(|&c| (c.label(), t.counts(s, c)))
                        .chain(std::iter::once(("all", t.overall_counts(s))));
                    for (label, counts) in rows {
                        let n: u64 = counts.iter().sum();
                        let pct = percent(counts);
                        for (k, cat) in t.categories().iter().enumerate() {
                            w.write_record([
                                t.task.as_str(),
                                s.as_str(),
                                label,
                                cat,
                                &counts[k].to_string(),
                                &n.to_string(),
                                &pct.map(|p| fmt_pct(p[k], DECIMALS))
                                    .unwrap_or_else(|| EMPTY_CELL.into()),
                            ])
                            .expect("in-memory write");
                        }
                    }
                }
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
        }
        Format::Text => {
            let mut out = String::new();
            for t in tables.tables() {
                let rows: Vec<GridRow> = System::ALL
                    .iter()
                    .map(|&s| GridRow {
                        label: s.as_str().to_string(),
                        cells: Condition::ALL
                            .iter()
                            .map(|&c| (t.percentages(s, c), Some(t.n(s, c))))
                            .chain(std::iter::once((
                                t.overall_percentages(s),
                                Some(t.overall_counts(s).iter().sum()),
                            )))
                            .collect(),
                    })
                    .collect();
                let mut groups: Vec<&str> = Condition::ALL.iter().map(|c| c.label()).collect();
                groups.push("all");
                out.push_str(&render_grid(t.task.as_str(), &groups, t.categories(), &rows, DECIMALS));
                out.push('\n');
            }
            out
        }
    })
}

/// Per-system distributions pooled over conditions, one row per category.
pub fn render_figure_data(tables: &ResultTables) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "system", "category", "count", "n", "percent"])
        .expect("in-memory write");
    for t in tables.tables() {
        for s in System::ALL {
            let counts = t.overall_counts(s);
            let n: u64 = counts.iter().sum();
            let pct = percent(counts);
            for (k, cat) in t.categories().iter().enumerate() {
                w.write_record([
                    t.task.as_str(),
                    s.as_str(),
                    cat,
                    &counts[k].to_string(),
                    &n.to_string(),
                    &pct.map(|p| fmt_pct(p[k], DECIMALS))
                        .unwrap_or_else(|| EMPTY_CELL.into()),
                ])
                .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// One table row: per column group, percentages and `n` (`None` = unknown).
pub struct GridRow {
    pub label: String,
    pub cells: Vec<(Option<[f64; 3]>, Option<u64>)>,
}

/// Aligned text grid with a header line of groups and one of categories.
pub fn render_grid(title: &str, groups: &[&str], categories: [&str; 3], rows: &[GridRow], decimals: usize) -> String {
    let show_n = rows.iter().any(|r| r.cells.iter().any(|c| c.1.is_some()));
    let mut table: Vec<Vec<String>> = Vec::new();
    let mut header = vec![title.to_string()];
    let mut sub = vec![String::new()];
    for g in groups {
        header.push(g.to_string());
        header.extend(std::iter::repeat_n(String::new(), if show_n { 3 } else { 2 }));
        sub.extend(categories.iter().map(|c| c.to_string()));
        if show_n {
            sub.push("n".into());
        }
    }
    table.push(header);
    table.push(sub);
    for r in rows {
        let mut line = vec![r.label.clone()];
        for (pct, n) in &r.cells {
            match pct {
                Some(p) => line.extend(p.iter().map(|v| fmt_pct(*v, decimals))),
                None => line.extend(std::iter::repeat_n(EMPTY_CELL.to_string(), 3)),
            }
            if show_n {
                line.push(n.map(|n| n.to_string()).unwrap_or_else(|| EMPTY_CELL.into()));
            }
        }
        table.push(line);
    }
    let cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|i| {
            table
                .iter()
                .skip(if i == 0 { 0 } else { 1 })
                .filter_map(|l| l.get(i))
                .map(|c| c.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (li, l) in table.iter().enumerate() {
        let mut line = String::new();
        for (i, cell) in l.iter().enumerate() {
            let pad = widths[i].saturating_sub(cell.chars().count());
            if i == 0 {
                let _ = write!(line, "{cell}{}", " ".repeat(pad));
            } else if li == 0 {
                // group labels sit left-aligned over their first column
                let _ = write!(line, "  {cell}{}", " ".repeat(pad));
            } else {
                let _ = write!(line, "  {}{cell}", " ".repeat(pad));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
