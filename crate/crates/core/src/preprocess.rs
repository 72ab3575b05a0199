//! Rule-based text normalization, vocabulary construction and bag-of-words encoding.
//!
//! Rules run in a fixed order on each description:
//!
//! 1. lowercase (optional)
//! 2. split into words on every character that is not a letter, digit or `_`
//! 3. merge declared multi-word phrases, longest match first
//! 4. drop purely numeric tokens (optional)
//! 5. map plural forms to their singular via the declared table
//! 6. drop the delete list and, optionally, the standard stopword list
//!
//! Merging happens before any deletion, so a phrase made of stopwords still merges.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::DocumentSet;
use crate::error::{Error, Result};
use crate::Warning;

/// Join character for merged phrases.
pub const JOIN_CHAR: char = '_';

const DEFAULT_RULES_TOML: &str = include_str!("../data/default_rules.toml");
const STOPWORDS_EN: &str = include_str!("../data/stopwords_en.txt");

/// The fixed English stopword list shipped with the crate.
pub fn standard_stopwords() -> impl Iterator<Item = &'static str> {
    STOPWORDS_EN
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    #[serde(default)]
    pub merge_phrases: Vec<(String, String)>,
    #[serde(default)]
    pub singular_map: Vec<(String, String)>,
    #[serde(default)]
    pub delete_words: BTreeSet<String>,
    #[serde(default = "yes")]
    pub use_standard_stopwords: bool,
    #[serde(default = "yes")]
    pub strip_numbers: bool,
    #[serde(default = "yes")]
    pub lowercase: bool,
    #[serde(default = "one")]
    pub min_doc_freq: usize,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self::default_rules()
    }
}

impl PreprocessConfig {
    /// The shipped rule set: the documented merges, singular forms and deletions.
    pub fn default_rules() -> Self {
        toml::from_str(DEFAULT_RULES_TOML).expect("bundled default_rules.toml is valid")
    }

    /// No rules at all: lowercasing and splitting only.
    pub fn empty() -> Self {
        PreprocessConfig {
            merge_phrases: Vec::new(),
            singular_map: Vec::new(),
            delete_words: BTreeSet::new(),
            use_standard_stopwords: false,
            strip_numbers: false,
            lowercase: true,
            min_doc_freq: 1,
        }
    }

    /// Loads a TOML or JSON file (chosen by extension; anything but `.json` is TOML).
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PreprocessConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.min_doc_freq == 0 {
            return bad("min_doc_freq must be >= 1".into());
        }
        let mut outputs = HashSet::new();
        for (phrase, joined) in &self.merge_phrases {
            if split_words(phrase).len() < 2 {
                return bad(format!("merge phrase {phrase:?} has fewer than two words"));
            }
            if joined.is_empty() || joined.chars().any(char::is_whitespace) {
                return bad(format!("joined token {joined:?} is empty or has whitespace"));
            }
            outputs.insert(joined.as_str());
        }
        for (plural, singular) in &self.singular_map {
            if outputs.contains(plural.as_str()) {
                return bad(format!("singular_map key {plural:?} is also a merge output"));
            }
            if split_words(plural).len() != 1 || split_words(singular).len() != 1 {
                return bad(format!(
                    "singular_map entry {plural:?} -> {singular:?} is not one token"
                ));
            }
        }
        for word in &self.delete_words {
            if split_words(word) != [word.as_str()] {
                return bad(format!("delete word {word:?} is not a single token"));
            }
        }
        Ok(())
    }

    /// Stable digest of the configuration (used to key cached stage outputs).
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == JOIN_CHAR
}

fn split_words(text: &str) -> Vec<&str> {
    text.split(|c: char| !is_word_char(c))
        .filter(|w| !w.is_empty())
        .collect()
}

fn is_numeric_token(token: &str) -> bool {
    token.chars().any(char::is_numeric) && token.chars().all(|c| c.is_numeric() || c == JOIN_CHAR)
}

/// A compiled [`PreprocessConfig`].
#[derive(Debug, Clone)]
pub struct Tokenizer {
    lowercase: bool,
    strip_numbers: bool,
    // first word -> candidate phrases (word sequence, joined token), longest first
    phrases: HashMap<String, Vec<(Vec<String>, String)>>,
    singular: HashMap<String, String>,
    drop: HashSet<String>,
}

impl Tokenizer {
    pub fn new(config: &PreprocessConfig) -> Result<Self> {
        config.validate()?;
        let norm = |s: &str| {
            if config.lowercase {
                s.to_lowercase()
            } else {
                s.to_string()
            }
        };
        let mut phrases: HashMap<String, Vec<(Vec<String>, String)>> = HashMap::new();
        for (phrase, joined) in &config.merge_phrases {
            let words: Vec<String> = split_words(&norm(phrase)).into_iter().map(String::from).collect();
            phrases.entry(words[0].clone()).or_default().push((words, norm(joined)));
        }
        for candidates in phrases.values_mut() {
            // stable: equal-length phrases keep config order
            candidates.sort_by_key(|(words, _)| std::cmp::Reverse(words.len()));
        }
        let singular = config.singular_map.iter().map(|(p, s)| (norm(p), norm(s))).collect();
        let mut drop: HashSet<String> = config.delete_words.iter().map(|w| norm(w)).collect();
        if config.use_standard_stopwords {
            drop.extend(standard_stopwords().map(norm));
        }
        Ok(Tokenizer {
            lowercase: config.lowercase,
            strip_numbers: config.strip_numbers,
            phrases,
            singular,
            drop,
        })
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let text = if self.lowercase {
            text.to_lowercase()
        } else {
            text.to_string()
        };
        let words = split_words(&text);

        let mut merged: Vec<String> = Vec::with_capacity(words.len());
        let mut i = 0;
        while i < words.len() {
            let hit = self.phrases.get(words[i]).and_then(|cands| {
                cands
                    .iter()
                    .find(|(pw, _)| words.len() - i >= pw.len() && pw.iter().zip(&words[i..]).all(|(a, b)| a == b))
            });
            match hit {
                Some((pw, joined)) => {
                    merged.push(joined.clone());
                    i += pw.len();
                }
                None => {
                    merged.push(words[i].to_string());
                    i += 1;
                }
            }
        }

        merged
            .into_iter()
            .filter(|t| !(self.strip_numbers && is_numeric_token(t)))
            .map(|t| self.singular.get(&t).cloned().unwrap_or(t))
            .filter(|t| !self.drop.contains(t))
            .collect()
    }
}

/// One-shot tokenization. Prefer [`Tokenizer`] when processing many documents.
pub fn tokenize(text: &str, config: &PreprocessConfig) -> Result<Vec<String>> {
    Ok(Tokenizer::new(config)?.tokenize(text))
}

/// Term <-> id bijection with document frequencies. Ids follow lexicographic term order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    doc_freq: Vec<usize>,
    total_count: u64,
}

impl Vocabulary {
    /// Builds from terms already in id order. Terms must be strictly increasing.
    pub fn from_parts(terms: Vec<String>, doc_freq: Vec<usize>, total_count: u64) -> Result<Self> {
        if terms.len() != doc_freq.len() {
            return Err(Error::InvalidInput("terms/doc_freq length mismatch".into()));
        }
        if terms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "vocabulary terms must be strictly increasing".into(),
            ));
        }
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocabulary {
            terms,
            index,
            doc_freq,
            total_count,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: usize) -> Option<&str> {
        self.terms.get(id).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_freq(&self, id: usize) -> usize {
        self.doc_freq[id]
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    /// Hex SHA-256 over the newline-joined terms; identifies the id assignment.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.terms {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("term\tid\tdf\n");
        for (i, t) in self.terms.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}\t{}", self.doc_freq[i]);
        }
        out
    }

    /// Parses the output of [`Vocabulary::to_tsv`]. The corpus token total is not
    /// stored in the file; pass it in (or 0 when unknown).
    pub fn from_tsv(text: &str, total_count: u64) -> Result<Self> {
        let mut terms = Vec::new();
        let mut df = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::InvalidInput(format!("vocabulary line {}: {line:?}", n + 1));
            let mut parts = line.split('\t');
            let (Some(term), Some(id), Some(freq), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad());
            };
            let id: usize = id.parse().map_err(|_| bad())?;
            if id != terms.len() {
                return Err(bad());
            }
            terms.push(term.to_string());
            df.push(freq.parse().map_err(|_| bad())?);
        }
        Self::from_parts(terms, df, total_count)
    }
}

pub fn build_vocabulary<S: AsRef<str>>(token_lists: &[Vec<S>], min_doc_freq: usize) -> Result<Vocabulary> {
    if min_doc_freq == 0 {
        return Err(Error::InvalidConfig("min_doc_freq must be >= 1".into()));
    }
    if token_lists.iter().all(|t| t.is_empty()) {
        return Err(Error::InvalidInput("no tokens in any document".into()));
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    let mut tf: HashMap<&str, u64> = HashMap::new();
    for tokens in token_lists {
        let mut seen = HashSet::new();
        for t in tokens {
            let t = t.as_ref();
            *tf.entry(t).or_default() += 1;
            if seen.insert(t) {
                *df.entry(t).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<&str> = df.iter().filter(|(_, &n)| n >= min_doc_freq).map(|(&t, _)| t).collect();
    if kept.is_empty() {
        return Err(Error::InvalidInput(format!(
            "every term has document frequency below {min_doc_freq}"
        )));
    }
    kept.sort_unstable();
    let total = kept.iter().map(|t| tf[t]).sum();
    let freqs = kept.iter().map(|t| df[t]).collect();
    Vocabulary::from_parts(kept.into_iter().map(String::from).collect(), freqs, total)
}

/// Sparse count vector for one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowDocument {
    pub doc_id: String,
    /// (term id, count), ids strictly increasing, counts >= 1.
    pub entries: Vec<(usize, u32)>,
}

impl BowDocument {
    /// Builds from unsorted (id, count) pairs; repeated ids are summed, zero counts dropped.
    pub fn from_counts(doc_id: impl Into<String>, counts: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut entries: Vec<(usize, u32)> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        entries.sort_unstable_by_key(|&(id, _)| id);
        entries.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        BowDocument {
            doc_id: doc_id.into(),
            entries,
        }
    }

    /// Token count N_d.
    pub fn total(&self) -> u32 {
        self.entries.iter().map(|&(_, c)| c).sum()
    }

    pub fn num_terms(&self) -> usize {
        self.entries.len()
    }

    pub fn contains(&self, term: usize) -> bool {
        self.entries.binary_search_by_key(&term, |&(id, _)| id).is_ok()
    }
}

/// Raised when no in-vocabulary token survives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmptyDocument {
    pub doc_id: String,
}

pub fn to_bow<S: AsRef<str>>(
    doc_id: &str,
    tokens: &[S],
    vocab: &Vocabulary,
) -> std::result::Result<BowDocument, EmptyDocument> {
    let doc = BowDocument::from_counts(
        doc_id,
        tokens.iter().filter_map(|t| vocab.id(t.as_ref())).map(|id| (id, 1)),
    );
    if doc.entries.is_empty() {
        Err(EmptyDocument {
            doc_id: doc_id.to_string(),
        })
    } else {
        Ok(doc)
    }
}

/// Documents ready for fitting plus the ones that were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct BowCorpus {
    pub docs: Vec<BowDocument>,
    pub excluded: Vec<Warning>,
}

impl BowCorpus {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// `doc_id term:count ...` per line.
    pub fn to_text(&self) -> Result<String> {
        write_bow(&self.docs)
    }
}

pub fn write_bow(docs: &[BowDocument]) -> Result<String> {
    let mut out = String::new();
    for d in docs {
        if d.doc_id.is_empty() || d.doc_id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidInput(format!(
                "document id {:?} cannot be written to a bag-of-words file",
                d.doc_id
            )));
        }
        out.push_str(&d.doc_id);
        for (id, c) in &d.entries {
            let _ = write!(out, " {id}:{c}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_bow(text: &str) -> Result<Vec<BowDocument>> {
    let mut docs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::InvalidInput(format!("bag-of-words line {}: {line:?}", n + 1));
        let mut parts = line.split_whitespace();
        let id = parts.next().ok_or_else(bad)?;
        let mut entries = Vec::new();
        for p in parts {
            let (t, c) = p.split_once(':').ok_or_else(bad)?;
            entries.push((t.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?));
        }
        if entries.windows(2).any(|w: &[(usize, u32)]| w[0].0 >= w[1].0) || entries.iter().any(|e| e.1 == 0) {
            return Err(bad());
        }
        docs.push(BowDocument {
            doc_id: id.to_string(),
            entries,
        });
    }
    Ok(docs)
}

/// Corpus-wide counts per term, descending, ties broken by term.
pub fn term_frequency_table(docs: &[BowDocument], vocab: &Vocabulary) -> Vec<(String, u64)> {
    let mut counts = vec![0u64; vocab.len()];
    for d in docs {
        for &(id, c) in &d.entries {
            counts[id] += u64::from(c);
        }
    }
    let mut table: Vec<(String, u64)> = counts
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c > 0)
        .map(|(id, c)| (vocab.terms[id].clone(), c))
        .collect();
    table.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    table
}

/// Tokenizes every document (in parallel), builds the vocabulary, and encodes the corpus.
pub fn preprocess(set: &DocumentSet, config: &PreprocessConfig) -> Result<(Vocabulary, BowCorpus)> {
    let tokenizer = Tokenizer::new(config)?;
    let tokens: Vec<Vec<String>> = set
        .documents()
        .par_iter()
        .map(|d| tokenizer.tokenize(&d.text))
        .collect();
    let vocab = build_vocabulary(&tokens, config.min_doc_freq)?;
    let mut docs = Vec::with_capacity(tokens.len());
    let mut excluded = Vec::new();
    for (doc, toks) in set.iter().zip(&tokens) {
        match to_bow(&doc.id, toks, &vocab) {
            Ok(b) => docs.push(b),
            Err(e) => {
                log::warn!("{}: no in-vocabulary tokens, excluded", e.doc_id);
                excluded.push(Warning::new(
                    &e.doc_id,
                    "no in-vocabulary tokens; excluded from fitting",
                ));
            }
        }
    }
    Ok((vocab, BowCorpus { docs, excluded }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tok(text: &str) -> Vec<String> {
        tokenize(text, &PreprocessConfig::default_rules()).unwrap()
    }

    #[test]
    fn shipped_config_is_valid() {
        let cfg = PreprocessConfig::default_rules();
        cfg.validate().unwrap();
        assert_eq!(cfg.merge_phrases.len(), 19);
        assert_eq!(cfg.singular_map.len(), 6);
        assert!(cfg.delete_words.contains("ad") && cfg.delete_words.contains("hoc"));
    }

    #[test]
    fn merge_delete_and_number_rules() {
        assert_eq!(tok("Machine Learning 101 for students"), ["machine_learning"]);
        assert_eq!(tok("models and systems"), ["model", "system"]);
        assert!(tok("").is_empty());
        assert!(tok("Ad hoc ad hoc").is_empty());
    }

    #[test]
    fn ad_hoc_without_merge_rule_still_deleted() {
        let mut cfg = PreprocessConfig::empty();
        cfg.delete_words = ["ad", "hoc"].iter().map(|s| s.to_string()).collect();
        assert!(tokenize("Ad hoc ad hoc", &cfg).unwrap().is_empty());
    }

    #[test]
    fn longest_match_first() {
        let mut cfg = PreprocessConfig::empty();
        cfg.merge_phrases = vec![
            ("natural language".into(), "natural_language".into()),
            ("natural language processing".into(), "nlp".into()),
        ];
        assert_eq!(
            tokenize("natural language processing and natural language", &cfg).unwrap(),
            ["nlp", "and", "natural_language"]
        );
    }

    #[test]
    fn merge_happens_before_stopword_removal() {
        let mut cfg = PreprocessConfig::empty();
        cfg.use_standard_stopwords = true;
        cfg.merge_phrases = vec![("the who".into(), "the_who".into())];
        assert_eq!(tokenize("The Who and the band", &cfg).unwrap(), ["the_who", "band"]);
    }

    #[test]
    fn numbers_only_pure_numeric() {
        assert_eq!(tok("covid19 in 2020, 3.5 ects"), ["covid19", "ects"]);
        let mut cfg = PreprocessConfig::empty();
        cfg.strip_numbers = false;
        assert_eq!(tokenize("week 12", &cfg).unwrap(), ["week", "12"]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = PreprocessConfig::empty();
        cfg.merge_phrases = vec![("single".into(), "single".into())];
        assert!(cfg.validate().is_err());

        let mut cfg = PreprocessConfig::empty();
        cfg.merge_phrases = vec![("a b".into(), "a b".into())];
        assert!(cfg.validate().is_err());

        let mut cfg = PreprocessConfig::empty();
        cfg.merge_phrases = vec![("data sets".into(), "datasets".into())];
        cfg.singular_map = vec![("datasets".into(), "dataset".into())];
        assert!(cfg.validate().is_err());

        let mut cfg = PreprocessConfig::empty();
        cfg.delete_words.insert("two words".into());
        assert!(cfg.validate().is_err());

        let mut cfg = PreprocessConfig::empty();
        cfg.min_doc_freq = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_from_toml_uses_defaults() {
        let cfg: PreprocessConfig = toml::from_str("delete_words = [\"x\"]").unwrap();
        assert!(cfg.lowercase && cfg.strip_numbers && cfg.use_standard_stopwords);
        assert_eq!(cfg.min_doc_freq, 1);
        assert!(toml::from_str::<PreprocessConfig>("bogus = 1").is_err());
    }

    #[test]
    fn vocabulary_examples() {
        let docs = vec![vec!["a", "b"], vec!["b"]];
        let v = build_vocabulary(&docs, 1).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.doc_freq(v.id("a").unwrap()), 1);
        assert_eq!(v.doc_freq(v.id("b").unwrap()), 2);
        assert_eq!(v.total_count(), 3);

        let v = build_vocabulary(&docs, 2).unwrap();
        assert_eq!(v.terms(), ["b"]);

        let same = vec![vec!["x", "y", "x", "z"]; 3];
        assert_eq!(build_vocabulary(&same, 1).unwrap().len(), 3);

        assert!(build_vocabulary(&docs, 3).is_err());
        assert!(build_vocabulary::<&str>(&[vec![], vec![]], 1).is_err());
    }

    #[test]
    fn bow_examples() {
        let v = build_vocabulary(&[vec!["a", "b"]], 1).unwrap();
        let d = to_bow("d", &["b", "a", "b"], &v).unwrap();
        assert_eq!(d.entries, [(0, 1), (1, 2)]);
        assert_eq!(d.total(), 3);

        let only_a = build_vocabulary(&[vec!["a"]], 1).unwrap();
        assert!(to_bow("z", &["z"], &only_a).is_err());
        assert!(to_bow::<&str>("e", &[], &only_a).is_err());
    }

    #[test]
    fn term_frequency_examples() {
        let v = build_vocabulary(&[vec!["a", "b", "c"]], 1).unwrap();
        let docs = [
            BowDocument::from_counts("1", [(0, 1)]),
            BowDocument::from_counts("2", [(0, 2)]),
        ];
        assert_eq!(term_frequency_table(&docs, &v), [("a".to_string(), 3)]);

        let docs = [
            BowDocument::from_counts("1", [(2, 2)]),
            BowDocument::from_counts("2", [(0, 2), (1, 5)]),
        ];
        assert_eq!(
            term_frequency_table(&docs, &v),
            [("b".to_string(), 5), ("a".to_string(), 2), ("c".to_string(), 2)]
        );
    }

    #[test]
    fn vocab_and_bow_text_formats() {
        let v = build_vocabulary(&[vec!["alpha", "beta"], vec!["beta", "gamma"]], 1).unwrap();
        let back = Vocabulary::from_tsv(&v.to_tsv(), v.total_count()).unwrap();
        assert_eq!(back, v);

        let docs = vec![
            BowDocument::from_counts("d1", [(2, 1), (0, 3)]),
            BowDocument::from_counts("d2", [(1, 1)]),
        ];
        let text = write_bow(&docs).unwrap();
        assert_eq!(text, "d1 0:3 2:1\nd2 1:1\n");
        assert_eq!(parse_bow(&text).unwrap(), docs);
        assert!(write_bow(&[BowDocument::from_counts("has space", [(0, 1)])]).is_err());
        assert!(parse_bow("d 1:1 0:1\n").is_err());
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<String>>> {
        let term = prop::sample::select(vec!["ab", "cd", "ef", "gh", "ij", "kl", "mn", "op"]);
        prop::collection::vec(prop::collection::vec(term.prop_map(String::from), 0..12), 1..15)
    }

    proptest! {
        #[test]
        fn vocabulary_is_a_bijection(docs in corpus_strategy(), min_df in 1usize..4) {
            if let Ok(v) = build_vocabulary(&docs, min_df) {
                for i in 0..v.len() {
                    prop_assert_eq!(v.id(v.term(i).unwrap()), Some(i));
                    prop_assert!(v.doc_freq(i) >= min_df);
                }
                for t in v.terms() {
                    prop_assert_eq!(v.term(v.id(t).unwrap()), Some(t.as_str()));
                }
                for doc in &docs {
                    let retained = doc.iter().filter(|t| v.id(t).is_some()).count() as u32;
                    match to_bow("d", doc, &v) {
                        Ok(b) => {
                            prop_assert_eq!(b.total(), retained);
                            prop_assert!(b.entries.windows(2).all(|w| w[0].0 < w[1].0));
                        }
                        Err(_) => prop_assert_eq!(retained, 0),
                    }
                }
            }
        }

        #[test]
        fn tokenize_is_deterministic(text in "[A-Za-z0-9 ,.'-]{0,80}") {
            let cfg = PreprocessConfig::default_rules();
            prop_assert_eq!(tokenize(&text, &cfg).unwrap(), tokenize(&text, &cfg).unwrap());
        }
    }
}
