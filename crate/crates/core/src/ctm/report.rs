use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inference::{infer_from, VariationalState};
use super::{CtmModel, ModelConfig, PosteriorKind};
use crate::error::{Error, Result};
use crate::numeric::{softmax, softmax_in_place};
use crate::preprocess::{BowDocument, Vocabulary};

/// Per-document topic shares, D × K, every row on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentTopicMatrix {
    pub doc_ids: Vec<String>,
    pub k: usize,
    /// Row-major shares.
    pub values: Vec<f64>,
}

impl DocumentTopicMatrix {
    pub fn new(doc_ids: Vec<String>, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != doc_ids.len() * k {
            return Err(Error::InvalidInput("posterior matrix shape mismatch".into()));
        }
        Ok(DocumentTopicMatrix { doc_ids, k, values })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn row(&self, d: usize) -> &[f64] {
        &self.values[d * self.k..(d + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.doc_ids
            .iter()
            .map(String::as_str)
            .zip(self.values.chunks_exact(self.k))
    }

    /// `doc_id,topic_0,...` with full-precision shares.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("doc_id");
        for i in 0..self.k {
            let _ = write!(out, ",topic_{i}");
        }
        out.push('\n');
        for (id, row) in self.rows() {
            out.push_str(id);
            for x in row {
                let _ = write!(out, ",{x:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty posterior file".into()))?;
        let k = header.split(',').count().saturating_sub(1);
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (n, line) in lines.enumerate() {
            let bad = || Error::InvalidInput(format!("posterior line {}", n + 2));
            let mut parts = line.split(',');
            ids.push(parts.next().ok_or_else(bad)?.to_string());
            let row: Vec<f64> = parts.map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
            if row.len() != k {
                return Err(bad());
            }
            values.extend(row);
        }
        Self::new(ids, k, values)
    }
}

fn summarize(state: &VariationalState, kind: PosteriorKind, seed: u64) -> Vec<f64> {
    match kind {
        PosteriorKind::SoftmaxMean => softmax(state.lambda.as_slice()),
        PosteriorKind::ExpectedShare { samples } => {
            let k = state.lambda.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc = vec![0.0; k];
            let mut eta = vec![0.0; k];
            for _ in 0..samples {
                for i in 0..k {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    eta[i] = state.lambda[i] + state.nu2[i].sqrt() * z;
                }
                softmax_in_place(&mut eta);
                for (a, e) in acc.iter_mut().zip(&eta) {
                    *a += e;
                }
            }
            let total: f64 = acc.iter().sum();
            acc.iter().map(|a| a / total).collect()
        }
    }
}

/// Topic shares of every document, from a fresh per-document inference.
pub fn document_posteriors(
    model: &CtmModel,
    corpus: &[BowDocument],
    config: &ModelConfig,
) -> Result<DocumentTopicMatrix> {
    let prep = model.prepare()?;
    let rows = corpus
        .par_iter()
        .enumerate()
        .map(|(d, doc)| {
            let init = VariationalState::initial(&prep, doc);
            let state = infer_from(&prep, doc, config, init)?;
            Ok(summarize(&state, config.posterior, config.seed.wrapping_add(d as u64)))
        })
        .collect::<Result<Vec<_>>>()?;
    DocumentTopicMatrix::new(
        corpus.iter().map(|d| d.doc_id.clone()).collect(),
        model.k(),
        rows.concat(),
    )
}

/// Shares from already-computed states (e.g. the final E-step of a fit).
pub fn posteriors_from_states(
    corpus: &[BowDocument],
    states: &[VariationalState],
    kind: PosteriorKind,
    seed: u64,
) -> Result<DocumentTopicMatrix> {
    let k = states.first().map_or(0, |s| s.lambda.len());
    let rows: Vec<Vec<f64>> = states
        .iter()
        .enumerate()
        .map(|(d, s)| summarize(s, kind, seed.wrapping_add(d as u64)))
        .collect();
    DocumentTopicMatrix::new(corpus.iter().map(|d| d.doc_id.clone()).collect(), k, rows.concat())
}

/// Ranked `(term, weight)` lists, one per topic.
pub type TopicWords = Vec<Vec<(String, f64)>>;

/// Top `n` terms per row of a K × V weight matrix, ties broken lexicographically.
pub(crate) fn top_terms_by(
    weights: &DMatrix<f64>,
    vocab: &Vocabulary,
    n: usize,
    key: impl Fn(f64) -> f64,
) -> Result<TopicWords> {
    if weights.ncols() != vocab.len() {
        return Err(Error::InvalidInput("weights and vocabulary sizes differ".into()));
    }
    if n == 0 || n > vocab.len() {
        return Err(Error::InvalidInput(format!(
            "top-n must be within 1..={}, got {n}",
            vocab.len()
        )));
    }
    let terms = vocab.terms();
    Ok(weights
        .row_iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| {
                key(row[b])
                    .total_cmp(&key(row[a]))
                    .then_with(|| terms[a].cmp(&terms[b]))
            });
            idx.truncate(n);
            idx.into_iter().map(|w| (terms[w].clone(), row[w])).collect()
        })
        .collect())
}

pub fn topic_top_words(model: &CtmModel, vocab: &Vocabulary, n: usize) -> Result<TopicWords> {
    beta_top_words(&model.beta, vocab, n)
}

/// Same as [`topic_top_words`] for any K × V topic-word matrix (e.g. an LDA fit).
pub fn beta_top_words(beta: &DMatrix<f64>, vocab: &Vocabulary, n: usize) -> Result<TopicWords> {
    top_terms_by(beta, vocab, n, |x| x)
}

/// `topic<TAB>rank<TAB>term<TAB>weight`; topics are 0-based, ranks 1-based.
pub fn top_words_tsv(words: &TopicWords) -> String {
    let mut out = String::from("topic\trank\tterm\tweight\n");
    for (t, list) in words.iter().enumerate() {
        for (r, (term, w)) in list.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{}\t{term}\t{w:.8}", r + 1);
        }
    }
    out
}
