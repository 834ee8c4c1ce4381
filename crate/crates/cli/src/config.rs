//! `key = value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! seed = 42
//! threads = 4
//! alpha = 0.1
//! permille = 5
//! lowercase = false
//! include_punct = true
//! state_size = 2
//! assign_mode = balanced
//! ```
//!
//! Command-line flags take precedence over the file.

use std::path::Path;
use std::str::FromStr;

use evalbench_core::stimuli::AssignMode;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub threads: Option<usize>,
    pub alpha: f64,
    pub permille: u32,
    pub lowercase: bool,
    pub include_punct: bool,
    pub state_size: usize,
    pub assign_mode: AssignMode,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            alpha: evalbench_core::markov::DEFAULT_ALPHA,
            permille: 5,
            lowercase: false,
            include_punct: true,
            state_size: evalbench_core::markov::DEFAULT_STATE_SIZE,
            assign_mode: AssignMode::Balanced,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("line {line}: bad value {value:?} for {key}"))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| format!("line {line}: expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "seed" => cfg.seed = parse(key, value, line)?,
                "threads" => cfg.threads = Some(parse(key, value, line)?),
                "alpha" => cfg.alpha = parse(key, value, line)?,
                "permille" => cfg.permille = parse(key, value, line)?,
                "lowercase" => cfg.lowercase = parse(key, value, line)?,
                "include_punct" => cfg.include_punct = parse(key, value, line)?,
                "state_size" => cfg.state_size = parse(key, value, line)?,
                "assign_mode" => cfg.assign_mode = parse(key, value, line)?,
                other => return Err(format!("line {line}: unknown key {other:?}")),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
