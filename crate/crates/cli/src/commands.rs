use std::collections::HashMap;
use std::fmt::Display;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use evalbench_core::annotation::ExportRecord;
use evalbench_core::corpus::{read_corpus, Corpus};
use evalbench_core::freqdict::{build_freq_dict, top_hit_rate, DictOptions, FreqDict};
use evalbench_core::markov::MarkovModel;
use evalbench_core::perplexity::{perplexity_from_jsonl, perplexity_of_markov, PerplexityReport, DEFAULT_DOMAIN};
use evalbench_core::profiling::{aggregate_profiles, compare_profiles, profile_corpus, CorpusProfile};
use evalbench_core::reference;
use evalbench_core::results::{aggregate_all, render_figure_data, render_report, Format};
use evalbench_core::rng::derive_seed;
use evalbench_core::stimuli::{
    assign_classification, assign_ranking, build_stimulus_set, numbered_subjects, select_prompts, CompletionRecord,
    Completions, PromptPair, SessionPlan, StimulusSet, Task, MAX_COMPLETION, PROMPT_LENGTHS,
};
use rayon::prelude::*;

use crate::config::Config;
use crate::{Cli, Command, CorpusIn, UsageError};

/// Prefix a module error with the module name.
fn tag<E: Display>(module: &'static str) -> impl Fn(E) -> anyhow::Error {
    move |e| anyhow!("{module}: {e}")
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("io: {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("io: {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).context("io: stdout")?;
            stdout.flush().context("io: stdout")
        }
    }
}

fn load_corpus(c: &CorpusIn) -> Result<Corpus> {
    read_corpus(&c.input, c.input_format).map_err(tag("corpusio"))
}

fn load_model(path: &Path) -> Result<MarkovModel> {
    MarkovModel::read_jsonl(open(path)?).map_err(tag("markov"))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path, module: &'static str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(|| format!("io: {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| anyhow!("{module}: {}:{}: {e}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn to_jsonl<T: serde::Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item).expect("serializable"));
        s.push('\n');
    }
    s
}

fn load_stimuli(path: &Path) -> Result<StimulusSet> {
    let set: StimulusSet =
        serde_json::from_reader(open(path)?).map_err(|e| anyhow!("stimuli: {}: {e}", path.display()))?;
    set.validate().map_err(tag("stimuli"))?;
    Ok(set)
}

fn profile_of(path: &Path, input_format: evalbench_core::corpus::InputFormat) -> Result<CorpusProfile> {
    if path.extension().is_some_and(|e| e == "json") {
        return serde_json::from_reader(open(path)?).map_err(|e| anyhow!("profiling: {}: {e}", path.display()));
    }
    let corpus = read_corpus(path, input_format).map_err(tag("corpusio"))?;
    aggregate_profiles(&profile_corpus(&corpus)).map_err(tag("profiling"))
}

fn domain_map(path: Option<&PathBuf>) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    let Some(path) = path else { return Ok(map) };
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(|| format!("io: {}", path.display()))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (doc, domain) = line
            .split_once('\t')
            .ok_or_else(|| anyhow!("perplexity: {}:{}: expected doc_id<TAB>domain", path.display(), i + 1))?;
        map.insert(doc.to_string(), domain.trim().to_string());
    }
    Ok(map)
}

fn render_ppl(mut report: PerplexityReport, first: &[String], format: Format) -> Result<String> {
    report.order_domains(first);
    let ppl = tag("perplexity");
    Ok(match format {
        Format::Text => report.to_text().map_err(ppl)?,
        Format::Csv => report.to_csv().map_err(ppl)?,
        Format::Json => {
            report.check().map_err(ppl)?;
            serde_json::to_string_pretty(&report).expect("serializable") + "\n"
        }
    })
}

fn header(cmd: &str, cfg: &Config, stage: Option<&str>) {
    let threads = rayon::current_num_threads();
    match stage {
        Some(stage) => eprintln!(
            "# evalbench {cmd} seed={} stage={stage} stage_seed={} threads={threads}",
            cfg.seed,
            derive_seed(cfg.seed, stage)
        ),
        None => eprintln!("# evalbench {cmd} seed={} threads={threads}", cfg.seed),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path).map_err(|e| usage(format!("config: {e}")))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| anyhow!("{e}"))?;
    }

    let name = cli.command.name();
    let stage = match &cli.command {
        Command::MarkovGenerate { .. } | Command::MarkovContinue { .. } | Command::Prompts { .. } => {
            Some(name.to_string())
        }
        Command::Assign { task, .. } => Some(format!("assign-{task}")),
        _ => None,
    };
    header(name, &cfg, stage.as_deref());
    let stage_seed = stage.as_deref().map(|s| derive_seed(cfg.seed, s)).unwrap_or(cfg.seed);

    match cli.command {
        Command::Profile { corpus, out } => {
            let profile = aggregate_profiles(&profile_corpus(&load_corpus(&corpus)?)).map_err(tag("profiling"))?;
            emit(out.as_deref(), &(serde_json::to_string_pretty(&profile)? + "\n"))
        }
        Command::Compare {
            a,
            b,
            input_format,
            label_a,
            label_b,
            format,
            reference,
        } => {
            let report = if reference {
                reference::profile_comparison()
            } else {
                let (a, b) = (a.expect("required by clap"), b.expect("required by clap"));
                compare_profiles(
                    &profile_of(&a, input_format)?,
                    &profile_of(&b, input_format)?,
                    &label_a,
                    &label_b,
                )
            };
            let text = match format {
                Format::Text => report.to_text(),
                Format::Csv => report.to_csv(),
                Format::Json => serde_json::to_string_pretty(&report)? + "\n",
            };
            emit(None, &text)
        }
        Command::Freqdict {
            corpus,
            lowercase,
            no_punct,
            out,
        } => {
            let opts = DictOptions {
                lowercase: lowercase || cfg.lowercase,
                include_punct: !no_punct && cfg.include_punct,
            };
            let dict = build_freq_dict(&load_corpus(&corpus)?, opts).map_err(tag("freqdict"))?;
            let mut buf = Vec::new();
            dict.write_tsv(&mut buf)?;
            emit(out.as_deref(), std::str::from_utf8(&buf)?)
        }
        Command::Hitrate { dict, corpus, permille } => {
            let permille = permille.unwrap_or(cfg.permille);
            let dict = FreqDict::read_tsv(open(&dict)?).map_err(tag("freqdict"))?;
            let corpus = load_corpus(&corpus)?;
            let tokens: Vec<&str> = corpus.sentences().flat_map(|s| s.forms()).collect();
            let rate = top_hit_rate(&tokens, &dict, permille).map_err(tag("freqdict"))?;
            let out = serde_json::json!({
                "permille": permille,
                "top_size": dict.top_size(permille),
                "tokens": tokens.len(),
                "hit_rate": rate,
            });
            emit(None, &format!("{out}\n"))
        }
        Command::MarkovTrain {
            corpus,
            state_size,
            out,
        } => {
            let corpus = load_corpus(&corpus)?;
            let sentences: Vec<_> = corpus.sentences().cloned().collect();
            let model = MarkovModel::train_sentences(&sentences, state_size.unwrap_or(cfg.state_size))
                .map_err(tag("markov"))?;
            let mut buf = Vec::new();
            model.write_jsonl(&mut buf).map_err(tag("markov"))?;
            emit(out.as_deref(), std::str::from_utf8(&buf)?)
        }
        Command::MarkovGenerate {
            model,
            count,
            max_tokens,
        } => {
            let model = load_model(&model)?;
            let lines: Vec<String> = (0..count)
                .into_par_iter()
                .map(|i| {
                    model
                        .generate(max_tokens, derive_seed(stage_seed, &i.to_string()))
                        .join(" ")
                })
                .collect();
            emit(None, &lines.iter().map(|l| format!("{l}\n")).collect::<String>())
        }
        Command::MarkovContinue {
            model,
            prompts,
            system,
            attempts,
            out,
        } => {
            let model = load_model(&model)?;
            let prompts: Vec<PromptPair> = read_jsonl(&prompts, "stimuli")?;
            let jobs: Vec<(&PromptPair, usize)> = prompts
                .iter()
                .flat_map(|p| PROMPT_LENGTHS.map(|len| (p, len)))
                .collect();
            let records: Vec<CompletionRecord> = jobs
                .par_iter()
                .map(|&(p, len)| CompletionRecord {
                    prompt_id: p.prompt_id.clone(),
                    prompt_len: len,
                    system,
                    tokens: model.complete(
                        p.prompt(len),
                        MAX_COMPLETION,
                        derive_seed(stage_seed, &format!("{system}/{}/{len}", p.prompt_id)),
                        attempts,
                    ),
                })
                .collect();
            emit(out.as_deref(), &to_jsonl(&records))
        }
        Command::PplLogprobs {
            input,
            domains,
            first,
            format,
            reference,
        } => {
            if reference {
                return emit(None, &reference::perplexity_table());
            }
            let input = input.expect("required by clap");
            let map = domain_map(domains.as_ref())?;
            let report = perplexity_from_jsonl(open(&input)?, |doc| {
                map.get(doc).cloned().unwrap_or_else(|| DEFAULT_DOMAIN.to_string())
            })
            .map_err(tag("perplexity"))?;
            emit(None, &render_ppl(report, &first, format)?)
        }
        Command::PplMarkov {
            model,
            corpus,
            alpha,
            first,
            format,
        } => {
            let model = load_model(&model)?;
            let report = perplexity_of_markov(&model, &load_corpus(&corpus)?, alpha.unwrap_or(cfg.alpha))
                .map_err(tag("perplexity"))?;
            emit(None, &render_ppl(report, &first, format)?)
        }
        Command::Prompts { corpus, n, out } => {
            let prompts = select_prompts(&load_corpus(&corpus)?, n, stage_seed).map_err(tag("stimuli"))?;
            emit(out.as_deref(), &to_jsonl(&prompts))
        }
        Command::Stimuli {
            prompts,
            completions,
            out,
        } => {
            let prompts: Vec<PromptPair> = read_jsonl(&prompts, "stimuli")?;
            let mut all = Completions::default();
            for path in &completions {
                all.read_jsonl(open(path)?)
                    .map_err(|e| anyhow!("stimuli: {}: {e}", path.display()))?;
            }
            let set = build_stimulus_set(&prompts, &all).map_err(tag("stimuli"))?;
            emit(out.as_deref(), &(serde_json::to_string_pretty(&set)? + "\n"))
        }
        Command::Assign {
            stimuli,
            task,
            subjects,
            prefix,
            mode,
            out,
        } => {
            let set = load_stimuli(&stimuli)?;
            let prefix = prefix.unwrap_or_else(|| match task {
                Task::Ranking => "r".into(),
                Task::Classification => "c".into(),
            });
            let ids = numbered_subjects(&prefix, subjects);
            let plans = match task {
                Task::Ranking => assign_ranking(&set, &ids, stage_seed),
                Task::Classification => assign_classification(&set, &ids, stage_seed, mode.unwrap_or(cfg.assign_mode)),
            }
            .map_err(tag("stimuli"))?;
            emit(out.as_deref(), &to_jsonl(&plans))
        }
        Command::Serve {
            stimuli,
            plans,
            log,
            addr,
            ui,
        } => serve(&stimuli, &plans, &log, &addr, ui),
        Command::Aggregate {
            input,
            format,
            figures,
            out,
            reference,
        } => {
            if reference {
                let text = format!("{}\n{}", reference::ranking_table(), reference::classification_table());
                return emit(out.as_deref(), &text);
            }
            let input = input.expect("required by clap");
            let records: Vec<ExportRecord> = read_jsonl(&input, "results")?;
            let tables = aggregate_all(&records).map_err(tag("results"))?;
            if let Some(path) = figures {
                emit(Some(&path), &render_figure_data(&tables))?;
            }
            emit(out.as_deref(), &render_report(&tables, format).map_err(tag("results"))?)
        }
    }
}

fn serve(stimuli: &Path, plan_files: &[PathBuf], log: &Path, addr: &str, ui: Option<PathBuf>) -> Result<()> {
    let set = load_stimuli(stimuli)?;
    let mut plans: Vec<SessionPlan> = Vec::new();
    for path in plan_files {
        plans.extend(read_jsonl::<SessionPlan>(path, "evalservice")?);
    }
    let store = evalbench_service::Store::open(set, plans, log).map_err(tag("evalservice"))?;
    let token = std::env::var(evalbench_service::ADMIN_TOKEN_ENV).ok();
    if token.as_deref().is_none_or(str::is_empty) {
        tracing::warn!("{} is not set; export is disabled", evalbench_service::ADMIN_TOKEN_ENV);
    }
    let router = evalbench_service::router(Arc::new(store), token, ui);
    let rt = tokio::runtime::Runtime::new().context("evalservice: runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("evalservice: cannot bind {addr}"))?;
        let local = listener.local_addr()?;
        {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "listening on http://{local}")?;
            stdout.flush()?;
        }
        evalbench_service::serve(listener, router)
            .await
            .map_err(tag("evalservice"))
    })
}
