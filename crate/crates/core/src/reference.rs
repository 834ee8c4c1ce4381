//! Published reference figures, rendered with the same code paths as
//! computed reports so that output layouts can be compared side by side.
//!
//! Published tables carry no cell sizes; `n` renders as "—".

use crate::perplexity::render_table;
use crate::profiling::{ComparisonReport, ComparisonRow, ReportCell};
use crate::results::{render_grid, GridRow};
use crate::stimuli::{Condition, System};

/// Perplexity per domain, own domains first.
pub const PERPLEXITY: [(&str, f64); 5] = [
    ("Wikipedia", 26.1052),
    ("ItWac", 30.3965),
    ("Legal", 37.2197),
    ("News", 45.3859),
    ("Social Media", 84.6408),
];

/// `(feature, original mean, original std, generated mean, generated std)`.
pub const PROFILE_FEATURES: [(&str, f64, f64, f64, f64); 5] = [
    ("cpt", 4.809, 0.959, 4.750, 1.127),
    ("tps", 32.302, 28.322, 20.382, 11.127),
    ("tpc", 12.393, 11.504, 10.711, 8.529),
    ("ll_max", 13.290, 13.370, 8.922, 6.112),
    ("ll_avg", 2.555, 1.002, 2.373, 0.676),
];

pub const PROFILE_POS: [(&str, f64, f64, f64, f64); 13] = [
    ("AUX", 0.032, 0.041, 0.040, 0.051),
    ("PROPN", 0.070, 0.105, 0.081, 0.125),
    ("PUNCT", 0.148, 0.103, 0.153, 0.105),
    ("DET", 0.140, 0.071, 0.143, 0.078),
    ("NUM", 0.031, 0.072, 0.032, 0.064),
    ("ADP", 0.139, 0.070, 0.138, 0.077),
    ("PRON", 0.037, 0.053, 0.036, 0.058),
    ("SCONJ", 0.008, 0.020, 0.008, 0.023),
    ("NOUN", 0.179, 0.082, 0.172, 0.087),
    ("VERB", 0.079, 0.059, 0.075, 0.065),
    ("ADV", 0.042, 0.060, 0.039, 0.063),
    ("CCONJ", 0.027, 0.034, 0.024, 0.037),
    ("ADJ", 0.063, 0.058, 0.055, 0.062),
];

/// `(original, generated)` longest link over sentence length.
pub const LL_MAX_OVER_TPS: (f64, f64) = (0.411, 0.438);

/// `(original, generated)` share of tokens in the top 5 permille.
pub const TOP_5_PERMILLE_HIT_RATE: (f64, f64) = (0.912, 0.935);

/// Rank percentages, `[system][condition] = [1st, 2nd, 3rd]`, in
/// [`System::ALL`] and [`Condition::ALL`] order.
pub const RANKING: [[[u8; 3]; 4]; 3] = [
    [[54, 30, 16], [62, 31, 7], [60, 27, 13], [70, 21, 9]],
    [[34, 43, 23], [30, 46, 24], [33, 43, 24], [23, 59, 18]],
    [[12, 27, 61], [8, 23, 69], [7, 30, 63], [7, 20, 73]],
];

/// Label percentages, `[system][condition] = [yes, no, ct]`.
pub const CLASSIFICATION: [[[u8; 3]; 4]; 3] = [
    [[26, 66, 8], [27, 68, 5], [32, 63, 5], [28, 71, 1]],
    [[32, 55, 13], [48, 46, 6], [32, 62, 6], [42, 50, 8]],
    [[62, 33, 5], [80, 13, 7], [61, 33, 6], [71, 19, 10]],
];

pub fn ranking(system: System, condition: Condition) -> [u8; 3] {
    RANKING[system.index()][condition.index()]
}

pub fn classification(system: System, condition: Condition) -> [u8; 3] {
    CLASSIFICATION[system.index()][condition.index()]
}

pub fn perplexity_table() -> String {
    render_table("subword", PERPLEXITY.iter().map(|&(d, p)| (d, None, p)))
}

pub fn profile_comparison() -> ComparisonReport {
    let cell = |mean, std| Some(ReportCell { mean, std, n: None });
    ComparisonReport {
        label_a: "original".into(),
        label_b: "generated".into(),
        rows: PROFILE_FEATURES
            .iter()
            .chain(PROFILE_POS.iter())
            .map(|&(f, am, astd, bm, bstd)| ComparisonRow::new(f, cell(am, astd), cell(bm, bstd)))
            .collect(),
    }
}

fn grid(title: &str, categories: [&str; 3], table: &[[[u8; 3]; 4]; 3]) -> String {
    let rows: Vec<GridRow> = System::ALL
        .iter()
        .map(|&s| GridRow {
            label: s.as_str().to_string(),
            cells: table[s.index()]
                .iter()
                .map(|p| (Some(p.map(f64::from)), None))
                .collect(),
        })
        .collect();
    let groups: Vec<&str> = Condition::ALL.iter().map(|c| c.label()).collect();
    render_grid(title, &groups, categories, &rows, 0)
}

pub fn ranking_table() -> String {
    grid("ranking", ["1st", "2nd", "3rd"], &RANKING)
}

pub fn classification_table() -> String {
    grid("classification", ["yes", "no", "ct"], &CLASSIFICATION)
}
