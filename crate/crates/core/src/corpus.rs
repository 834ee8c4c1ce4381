//! Document model plus CoNLL-U and plain-text readers.
//!
//! Everything downstream works on [`Corpus`] / [`Document`] / [`Sentence`] /
//! [`Token`]. CoNLL-U multiword-token ranges (`1-2`) and empty nodes (`1.1`)
//! are dropped, so token counts are counts of syntactic words.
//!
//! Plain text gets a degenerate tree: token 1 is the root and every other
//! token attaches to it, with relation `_`. [`Sentence::has_syntax`] is false
//! for such sentences and syntactic features are not computed on them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Universal POS tags (UD v2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Upos {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

impl Upos {
    pub const ALL: [Upos; 17] = [
        Upos::Adj,
        Upos::Adp,
        Upos::Adv,
        Upos::Aux,
        Upos::Cconj,
        Upos::Det,
        Upos::Intj,
        Upos::Noun,
        Upos::Num,
        Upos::Part,
        Upos::Pron,
        Upos::Propn,
        Upos::Punct,
        Upos::Sconj,
        Upos::Sym,
        Upos::Verb,
        Upos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Upos::Adj => "ADJ",
            Upos::Adp => "ADP",
            Upos::Adv => "ADV",
            Upos::Aux => "AUX",
            Upos::Cconj => "CCONJ",
            Upos::Det => "DET",
            Upos::Intj => "INTJ",
            Upos::Noun => "NOUN",
            Upos::Num => "NUM",
            Upos::Part => "PART",
            Upos::Pron => "PRON",
            Upos::Propn => "PROPN",
            Upos::Punct => "PUNCT",
            Upos::Sconj => "SCONJ",
            Upos::Sym => "SYM",
            Upos::Verb => "VERB",
            Upos::X => "X",
        }
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown UPOS tag {0:?}")]
pub struct UnknownUpos(pub String);

impl FromStr for Upos {
    type Err = UnknownUpos;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Upos::ALL
            .iter()
            .copied()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| UnknownUpos(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    pub lemma: Option<String>,
    pub upos: Upos,
    /// Index of the head token, 0 for the root.
    pub head: usize,
    pub deprel: String,
}

/// Relation label used for tokens that carry no syntactic annotation.
pub const NO_DEPREL: &str = "_";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub source_id: Option<String>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.form.as_str())
    }

    /// True when every token has a real dependency relation.
    pub fn has_syntax(&self) -> bool {
        self.tokens
            .iter()
            .all(|t| !t.deprel.is_empty() && t.deprel != NO_DEPREL)
    }

    /// Check the single-tree invariant. On failure returns the 0-based
    /// position of the offending token.
    pub fn validate(&self) -> Result<(), TreeViolation> {
        validate_tree(&self.tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeViolation {
    pub position: usize,
    pub reason: String,
}

fn validate_tree(tokens: &[Token]) -> Result<(), TreeViolation> {
    let n = tokens.len();
    let fail = |position: usize, reason: String| Err(TreeViolation { position, reason });
    if n == 0 {
        return fail(0, "empty sentence".into());
    }
    let mut root = None;
    for (pos, t) in tokens.iter().enumerate() {
        if t.index != pos + 1 {
            return fail(
                pos,
                format!("token id {} out of sequence, expected {}", t.index, pos + 1),
            );
        }
        if t.head == t.index {
            return fail(pos, format!("token {} is its own head", t.index));
        }
        if t.head > n {
            return fail(pos, format!("head {} of token {} does not exist", t.head, t.index));
        }
        if t.head == 0 {
            if let Some(first) = root {
                return fail(pos, format!("second root (first root is token {first})"));
            }
            root = Some(t.index);
        }
    }
    if root.is_none() {
        // no root with every head in range means some walk never terminates
        let pos = tokens
            .iter()
            .position(|t| walk_reaches_root(tokens, t.index).is_none())
            .unwrap_or(0);
        return fail(pos, "no root: head cycle".into());
    }
    for (pos, t) in tokens.iter().enumerate() {
        if walk_reaches_root(tokens, t.index).is_none() {
            return fail(pos, format!("token {} is on a head cycle", t.index));
        }
    }
    Ok(())
}

/// Follows heads from `index`; returns the number of steps to the root or
/// `None` if the walk cycles.
fn walk_reaches_root(tokens: &[Token], index: usize) -> Option<usize> {
    let mut cur = index;
    for steps in 0..=tokens.len() {
        if cur == 0 {
            return Some(steps);
        }
        cur = tokens[cur - 1].head;
    }
    None
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub sentences: Vec<Sentence>,
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub const DOMAIN: &'static str = "domain";
    pub const ID: &'static str = "id";

    pub fn domain(&self) -> Option<&str> {
        self.meta.get(Self::DOMAIN).map(String::as_str)
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

/// A set of documents with cached totals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Corpus {
    documents: Vec<Document>,
    token_count: usize,
    sentence_count: usize,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Self {
        let sentence_count = documents.iter().map(|d| d.sentences.len()).sum();
        let token_count = documents.iter().map(Document::token_count).sum();
        Self {
            documents,
            token_count,
            sentence_count,
        }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.documents
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_count
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.documents.iter().flat_map(|d| d.sentences.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: malformed line: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: invalid tree: {reason}")]
    InvalidTree { line: usize, reason: String },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::MalformedLine { line, .. } | ParseError::InvalidTree { line, .. } => *line,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Conllu,
    Plain,
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conllu" => Ok(InputFormat::Conllu),
            "plain" => Ok(InputFormat::Plain),
            other => Err(format!("unknown input format {other:?} (expected conllu or plain)")),
        }
    }
}

/// Parse CoNLL-U text into a single document.
pub fn parse_conllu(text: &str) -> Result<Document, ParseError> {
    let mut doc = Document::default();
    let mut tokens: Vec<Token> = Vec::new();
    let mut lines: Vec<usize> = Vec::new();
    let mut source_id: Option<String> = None;

    let flush = |tokens: &mut Vec<Token>,
                 lines: &mut Vec<usize>,
                 source_id: &mut Option<String>,
                 doc: &mut Document|
     -> Result<(), ParseError> {
        if tokens.is_empty() {
            *source_id = None;
            return Ok(());
        }
        validate_tree(tokens).map_err(|v| ParseError::InvalidTree {
            line: lines[v.position],
            reason: v.reason,
        })?;
        doc.sentences.push(Sentence {
            tokens: std::mem::take(tokens),
            source_id: source_id.take(),
        });
        lines.clear();
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut lines, &mut source_id, &mut doc)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    source_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        if let Some(tok) = parse_token_line(line, line_no)? {
            tokens.push(tok);
            lines.push(line_no);
        }
    }
    flush(&mut tokens, &mut lines, &mut source_id, &mut doc)?;
    Ok(doc)
}

fn parse_token_line(line: &str, line_no: usize) -> Result<Option<Token>, ParseError> {
    let malformed = |reason: String| ParseError::MalformedLine { line: line_no, reason };
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 10 {
        return Err(malformed(format!(
            "expected 10 tab-separated columns, found {}",
            cols.len()
        )));
    }
    let id = cols[0];
    if id.contains('-') || id.contains('.') {
        return Ok(None);
    }
    let index: usize = id
        .parse()
        .ok()
        .filter(|&i| i >= 1)
        .ok_or_else(|| malformed(format!("non-numeric ID {id:?}")))?;
    let head: usize = cols[6]
        .parse()
        .map_err(|_| malformed(format!("non-numeric HEAD {:?}", cols[6])))?;
    let upos: Upos = cols[3].parse().map_err(|e: UnknownUpos| malformed(e.to_string()))?;
    if cols[1].is_empty() {
        return Err(malformed("empty FORM".into()));
    }
    if cols[7].is_empty() {
        return Err(malformed("empty DEPREL".into()));
    }
    Ok(Some(Token {
        index,
        form: cols[1].to_string(),
        lemma: (cols[2] != "_").then(|| cols[2].to_string()),
        upos,
        head,
        deprel: cols[7].to_string(),
    }))
}

/// Serialize a document as CoNLL-U. Columns the model does not keep are
/// written as `_`.
pub fn to_conllu(doc: &Document) -> String {
    let mut out = String::new();
    for s in &doc.sentences {
        if let Some(id) = &s.source_id {
            out.push_str("# sent_id = ");
            out.push_str(id);
            out.push('\n');
        }
        for t in &s.tokens {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t_\t_\t{}\t{}\t_\t_\n",
                t.index,
                t.form,
                t.lemma.as_deref().unwrap_or("_"),
                t.upos,
                t.head,
                t.deprel
            ));
        }
        out.push('\n');
    }
    out
}

/// Characters split off the edges of whitespace tokens.
pub const DETACHED_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '(', ')', '"', '\'', '«', '»'];

const SENTENCE_FINAL: &[char] = &['.', '!', '?'];

/// Whitespace tokenization with edge punctuation detached; sentences end at
/// newlines and after a whitespace chunk ending in `.`, `!` or `?`.
pub fn tokenize_plain(text: &str) -> Vec<Sentence> {
    let mut sentences = Vec::new();
    for line in text.lines() {
        let mut forms: Vec<String> = Vec::new();
        for chunk in line.split_whitespace() {
            split_chunk(chunk, &mut forms);
            if chunk.ends_with(SENTENCE_FINAL) {
                sentences.push(plain_sentence(std::mem::take(&mut forms)));
            }
        }
        if !forms.is_empty() {
            sentences.push(plain_sentence(forms));
        }
    }
    sentences
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let mut rest = chunk;
    while let Some(c) = rest.chars().next().filter(|c| DETACHED_PUNCT.contains(c)) {
        out.push(c.to_string());
        rest = &rest[c.len_utf8()..];
    }
    let mut trailing = Vec::new();
    while let Some(c) = rest.chars().next_back().filter(|c| DETACHED_PUNCT.contains(c)) {
        trailing.push(c.to_string());
        rest = &rest[..rest.len() - c.len_utf8()];
    }
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out.extend(trailing.into_iter().rev());
}

/// Build a sentence with the degenerate plain-text tree.
pub fn plain_sentence<S: Into<String>>(forms: impl IntoIterator<Item = S>) -> Sentence {
    let tokens = forms
        .into_iter()
        .enumerate()
        .map(|(i, form)| Token {
            index: i + 1,
            form: form.into(),
            lemma: None,
            upos: Upos::X,
            head: if i == 0 { 0 } else { 1 },
            deprel: NO_DEPREL.to_string(),
        })
        .collect();
    Sentence {
        tokens,
        source_id: None,
    }
}

/// Parse a single file's contents in the given format.
pub fn parse_text(text: &str, format: InputFormat) -> Result<Document, ParseError> {
    match format {
        InputFormat::Conllu => parse_conllu(text),
        InputFormat::Plain => Ok(Document {
            sentences: tokenize_plain(text),
            meta: BTreeMap::new(),
        }),
    }
}

/// Read a file, or every regular file below a directory, as a corpus.
///
/// Files directly under `path` have no domain; files under
/// `path/<domain>/...` get `meta["domain"] = <domain>`. Hidden entries are
/// skipped and files are read in path order.
pub fn read_corpus(path: &Path, format: InputFormat) -> Result<Corpus, CorpusError> {
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| CorpusError::Io { path: p, source }
    };
    let meta = std::fs::metadata(path).map_err(io_err(path))?;
    let mut files = Vec::new();
    if meta.is_dir() {
        collect_files(path, &mut files).map_err(io_err(path))?;
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }

    let mut documents = Vec::with_capacity(files.len());
    for file in files {
        let text = std::fs::read_to_string(&file).map_err(io_err(&file))?;
        let mut doc = parse_text(&text, format).map_err(|source| CorpusError::Parse {
            path: file.clone(),
            source,
        })?;
        let rel = if meta.is_dir() {
            file.strip_prefix(path).unwrap_or(&file).to_path_buf()
        } else {
            PathBuf::from(file.file_name().unwrap_or_default())
        };
        let parts: Vec<String> = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        if parts.len() > 1 && !parts[0].is_empty() {
            doc.meta.insert(Document::DOMAIN.into(), parts[0].clone());
        }
        doc.meta.insert(Document::ID.into(), parts.join("/"));
        documents.push(doc);
    }
    Ok(Corpus::new(documents))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_name().to_string_lossy().starts_with('.') {
            continue;
        }
        let ty = entry.file_type()?;
        if ty.is_dir() {
            collect_files(&entry.path(), out)?;
        } else if ty.is_file() {
            out.push(entry.path());
        }
    }
    Ok(())
}
