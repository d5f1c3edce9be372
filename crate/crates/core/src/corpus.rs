//! Treebank and raw-text ingestion, vocabularies and unknown-word classes.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpyp::Symbol;
use crate::transition::{DepTree, LabelId, Position};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub form: String,
    pub tag: String,
    /// `None` when the head column is `_`.
    pub head: Option<Position>,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub tokens: Vec<TokenRecord>,
    pub source: String,
    /// 1-based line numbers of the first and last token.
    pub lines: (usize, usize),
}

impl SentenceRecord {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    pub fn has_tags(&self) -> bool {
        self.tokens.iter().all(|t| t.tag != "_" && !t.tag.is_empty())
    }

    /// The unlabelled-structure tree, if every head is present and valid.
    pub fn heads(&self) -> Option<Vec<Position>> {
        self.tokens.iter().map(|t| t.head).collect()
    }
}

fn parse_error(source: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        line,
        message: message.into(),
    }
}

/// Reads CoNLL-X: ten tab-separated columns, blank lines between sentences.
/// Comment lines and multiword or empty-node rows are skipped.
pub fn read_conll<R: BufRead>(reader: R, source: &str) -> Result<Vec<SentenceRecord>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut first = 0;
    let mut last = 0;
    let mut flush = |tokens: &mut Vec<TokenRecord>, first: usize, last: usize| {
        if !tokens.is_empty() {
            out.push(SentenceRecord {
                tokens: std::mem::take(tokens),
                source: source.to_string(),
                lines: (first, last),
            });
        }
    };
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            flush(&mut tokens, first, last);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(parse_error(
                source,
                lineno,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| parse_error(source, lineno, format!("bad token id {:?}", cols[0])))?;
        if id != tokens.len() + 1 {
            return Err(parse_error(
                source,
                lineno,
                format!("token id {id} out of sequence"),
            ));
        }
        let head = match cols[6] {
            "_" => None,
            h => Some(
                h.parse()
                    .map_err(|_| parse_error(source, lineno, format!("non-integer head {h:?}")))?,
            ),
        };
        let tag = if cols[4] != "_" { cols[4] } else { cols[3] };
        if tokens.is_empty() {
            first = lineno;
        }
        last = lineno;
        tokens.push(TokenRecord {
            form: cols[1].to_string(),
            tag: tag.to_string(),
            head,
            label: cols[7].to_string(),
        });
    }
    flush(&mut tokens, first, last);
    for s in &out {
        let n = s.len();
        if let Some((i, t)) = s
            .tokens
            .iter()
            .enumerate()
            .find(|(_, t)| t.head.is_some_and(|h| h > n))
        {
            return Err(parse_error(
                source,
                s.lines.0 + i,
                format!("head {} outside sentence of length {n}", t.head.unwrap_or(0)),
            ));
        }
    }
    Ok(out)
}

pub fn read_conll_file(path: &Path) -> Result<Vec<SentenceRecord>> {
    let file = File::open(path)?;
    read_conll(BufReader::new(file), &path.display().to_string())
}

/// Writes the columns that [`read_conll`] consumes; the rest are `_`.
pub fn write_conll<W: Write>(records: &[SentenceRecord], mut w: W) -> Result<()> {
    for s in records {
        for (i, t) in s.tokens.iter().enumerate() {
            let head = t.head.map_or_else(|| "_".to_string(), |h| h.to_string());
            writeln!(
                w,
                "{}\t{}\t_\t{}\t{}\t_\t{}\t{}\t_\t_",
                i + 1,
                t.form,
                t.tag,
                t.tag,
                head,
                t.label
            )?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// One sentence per line, whitespace-separated tokens.
pub fn read_raw_text<R: BufRead>(reader: R) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if !tokens.is_empty() {
            out.push(tokens);
        }
    }
    Ok(out)
}

/// True iff no two arcs (the root arc included) cross.
pub fn is_projective(tree: &DepTree) -> bool {
    let spans: Vec<(usize, usize)> = tree
        .arcs()
        .iter()
        .map(|a| (a.head.min(a.dependent), a.head.max(a.dependent)))
        .collect();
    for (i, &(a, b)) in spans.iter().enumerate() {
        for &(c, d) in &spans[i + 1..] {
            if (a < c && c < b && b < d) || (c < a && a < d && d < b) {
                return false;
            }
        }
    }
    true
}

const SUFFIXES: [&str; 10] = ["ing", "ed", "s", "ly", "ion", "er", "est", "ity", "al", "able"];

/// Every class [`classify_unknown`] can return.
pub fn unknown_classes() -> Vec<String> {
    let mut classes: Vec<String> = ["UNK", "UNK-num", "UNK-hasdigit", "UNK-punc", "UNK-cap", "UNK-cap-init"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    classes.extend(SUFFIXES.iter().map(|s| format!("UNK-{s}")));
    classes
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Unknown-word class from surface features, tested in order: numbers,
/// punctuation, capitalisation, longest known suffix.
pub fn classify_unknown(form: &str, sentence_initial: bool) -> String {
    let has_digit = form.chars().any(|c| c.is_ascii_digit());
    if has_digit {
        let numeric = form
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | ',' | '-' | '/' | ':'));
        return if numeric { "UNK-num" } else { "UNK-hasdigit" }.to_string();
    }
    if !form.is_empty() && form.chars().all(is_punct) {
        return "UNK-punc".to_string();
    }
    if form.chars().next().is_some_and(char::is_uppercase) {
        return if sentence_initial { "UNK-cap-init" } else { "UNK-cap" }.to_string();
    }
    let lower = form.to_lowercase();
    let len = lower.chars().count();
    SUFFIXES
        .iter()
        .filter(|s| lower.ends_with(*s) && len >= s.len() + 2)
        .max_by_key(|s| s.len())
        .map_or_else(|| "UNK".to_string(), |s| format!("UNK-{s}"))
}

/// A string inventory with dense ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Inventory {
    symbols: Vec<String>,
    index: HashMap<String, Symbol>,
}

impl From<Vec<String>> for Inventory {
    fn from(symbols: Vec<String>) -> Self {
        let mut inv = Inventory::default();
        for s in symbols {
            inv.insert(&s);
        }
        inv
    }
}

impl From<Inventory> for Vec<String> {
    fn from(inv: Inventory) -> Self {
        inv.symbols
    }
}

impl Inventory {
    pub fn insert(&mut self, s: &str) -> Symbol {
        if let Some(&id) = self.index.get(s) {
            return id;
        }
        let id = self.symbols.len() as Symbol;
        self.symbols.push(s.to_string());
        self.index.insert(s.to_string(), id);
        id
    }

    pub fn get(&self, s: &str) -> Option<Symbol> {
        self.index.get(s).copied()
    }

    pub fn name(&self, id: Symbol) -> &str {
        &self.symbols[id as usize]
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabOptions {
    /// Forms seen fewer times are mapped to their unknown class.
    pub min_count: u32,
    /// Keep at most this many forms, most frequent first.
    pub max_size: Option<usize>,
}

impl Default for VocabOptions {
    fn default() -> Self {
        VocabOptions {
            min_count: 2,
            max_size: None,
        }
    }
}

/// Word, tag and label inventories. Word ids `0..C` are the unknown classes;
/// retained forms follow.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    classes: Inventory,
    forms: Inventory,
    counts: Vec<u32>,
    pub options: VocabOptions,
    pub tags: Inventory,
    pub labels: Inventory,
}

impl Vocabulary {
    pub fn size(&self) -> u32 {
        (self.classes.len() + self.forms.len()) as u32
    }

    pub fn num_classes(&self) -> u32 {
        self.classes.len() as u32
    }

    /// Id of `form`; forms outside the vocabulary get their class id.
    pub fn word_id(&self, form: &str, sentence_initial: bool) -> Symbol {
        match self.forms.get(form) {
            Some(id) => self.num_classes() + id,
            None => self
                .classes
                .get(&classify_unknown(form, sentence_initial))
                .expect("every class is in the inventory"),
        }
    }

    pub fn is_known(&self, form: &str) -> bool {
        self.forms.get(form).is_some()
    }

    pub fn word_name(&self, id: Symbol) -> &str {
        let c = self.num_classes();
        if id < c {
            self.classes.name(id)
        } else {
            self.forms.name(id - c)
        }
    }

    /// Training count of a retained form.
    pub fn count(&self, form: &str) -> u32 {
        self.forms.get(form).map_or(0, |id| self.counts[id as usize])
    }

    pub fn words(&self, forms: &[&str]) -> Vec<Symbol> {
        forms
            .iter()
            .enumerate()
            .map(|(i, f)| self.word_id(f, i == 0))
            .collect()
    }

    pub fn tag_ids(&self, record: &SentenceRecord) -> Result<Vec<Symbol>> {
        record
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                self.tags.get(&t.tag).ok_or_else(|| {
                    parse_error(&record.source, record.lines.0 + i, format!("unknown tag {:?}", t.tag))
                })
            })
            .collect()
    }

    /// The gold tree of `record`; unknown labels map to label 0.
    pub fn tree(&self, record: &SentenceRecord) -> Result<DepTree> {
        let heads = record.heads().ok_or_else(|| {
            parse_error(&record.source, record.lines.0, "sentence has missing heads")
        })?;
        let labels: Vec<LabelId> = record
            .tokens
            .iter()
            .map(|t| self.labels.get(&t.label).unwrap_or(0))
            .collect();
        DepTree::new(heads, labels)
    }
}

/// Builds inventories from training records.
pub fn build_vocab(records: &[SentenceRecord], options: VocabOptions) -> Vocabulary {
    let mut counts: HashMap<&str, u32> = HashMap::new();
    let mut first_seen: Vec<&str> = Vec::new();
    let mut tags = Inventory::default();
    let mut labels = Inventory::default();
    for s in records {
        for t in &s.tokens {
            let c = counts.entry(t.form.as_str()).or_insert(0);
            if *c == 0 {
                first_seen.push(t.form.as_str());
            }
            *c += 1;
            tags.insert(&t.tag);
            labels.insert(&t.label);
        }
    }
    let min_count = options.min_count.max(1);
    let mut kept: Vec<&str> = first_seen
        .into_iter()
        .filter(|f| counts[f] >= min_count)
        .collect();
    // Stable sort keeps first-seen order among equal counts.
    kept.sort_by(|a, b| counts[b].cmp(&counts[a]));
    if let Some(max) = options.max_size {
        kept.truncate(max);
    }
    let mut forms = Inventory::default();
    let mut form_counts = Vec::with_capacity(kept.len());
    for f in kept {
        forms.insert(f);
        form_counts.push(counts[f]);
    }
    Vocabulary {
        classes: Inventory::from(unknown_classes()),
        forms,
        counts: form_counts,
        options,
        tags,
        labels,
    }
}

/// A sentence in model symbols with its gold tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreebankSentence {
    pub words: Vec<Symbol>,
    pub tags: Vec<Symbol>,
    pub tree: DepTree,
}

/// Encodes the projective sentences of `records`; returns them with the
/// number skipped as non-projective or malformed.
pub fn encode_treebank(records: &[SentenceRecord], vocab: &Vocabulary) -> (Vec<TreebankSentence>, usize) {
    let mut out = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for r in records {
        let encoded = vocab.tree(r).and_then(|tree| Ok((tree, vocab.tag_ids(r)?)));
        match encoded {
            Ok((tree, tags)) if is_projective(&tree) => out.push(TreebankSentence {
                words: vocab.words(&r.forms()),
                tags,
                tree,
            }),
            Ok(_) => {
                log::warn!("{}:{}: skipping non-projective sentence", r.source, r.lines.0);
                skipped += 1;
            }
            Err(e) => {
                log::warn!("skipping sentence: {e}");
                skipped += 1;
            }
        }
    }
    (out, skipped)
}

/// Optional preprocessing for language modelling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmTransform {
    pub remove_punctuation: bool,
    pub collapse_numbers: bool,
}

pub const NUMBER_SYMBOL: &str = "<num>";

pub fn is_number(form: &str) -> bool {
    form.chars().any(|c| c.is_ascii_digit())
        && form
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | ',' | '-' | '/' | ':'))
}

impl LmTransform {
    pub fn apply_tokens(&self, tokens: &[String]) -> Vec<String> {
        tokens
            .iter()
            .filter(|t| !(self.remove_punctuation && t.chars().all(is_punct)))
            .map(|t| {
                if self.collapse_numbers && is_number(t) {
                    NUMBER_SYMBOL.to_string()
                } else {
                    t.clone()
                }
            })
            .collect()
    }

    /// Applies the transform to a treebank sentence. Removed tokens pass
    /// their dependents to their own head; a token is kept if removing it
    /// would give the root a second dependent.
    pub fn apply_record(&self, record: &SentenceRecord, punct_tags: &[&str]) -> SentenceRecord {
        let mut tokens = record.tokens.clone();
        if self.collapse_numbers {
            for t in &mut tokens {
                if is_number(&t.form) {
                    t.form = NUMBER_SYMBOL.to_string();
                }
            }
        }
        if !self.remove_punctuation {
            return SentenceRecord {
                tokens,
                ..record.clone()
            };
        }
        let mut heads: Vec<Option<Position>> = tokens.iter().map(|t| t.head).collect();
        let mut removed = vec![false; tokens.len()];
        for i in 0..tokens.len() {
            let punct = punct_tags.contains(&tokens[i].tag.as_str()) || tokens[i].form.chars().all(is_punct);
            if !punct {
                continue;
            }
            let pos = i + 1;
            let head = heads[i];
            let has_children = heads.contains(&Some(pos));
            if head == Some(0) && has_children {
                continue;
            }
            for h in heads.iter_mut() {
                if *h == Some(pos) {
                    *h = head;
                }
            }
            removed[i] = true;
        }
        let mut new_index = vec![0usize; tokens.len() + 1];
        let mut next = 1;
        for i in 0..tokens.len() {
            if !removed[i] {
                new_index[i + 1] = next;
                next += 1;
            }
        }
        let kept: Vec<TokenRecord> = tokens
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !removed[*i])
            .map(|(i, mut t)| {
                t.head = heads[i].map(|h| new_index[h]);
                t
            })
            .collect();
        SentenceRecord {
            tokens: kept,
            ..record.clone()
        }
    }
}
