//! Skill-topic mining for tagged description corpora.
//!
//! The pipeline runs in this order: ingest descriptions ([`corpus`]), normalize
//! and count words ([`preprocess`]), fit a correlated topic model by variational
//! EM ([`ctm`]), pick the topic count by coherence ([`model_selection`]), and
//! average document posteriors into institution profiles ([`profiles`]).
//! [`baselines`] holds LDA (also used as a warm start) and LSA.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod corpus;
pub mod ctm;
pub mod error;
pub mod model_selection;
pub mod numeric;
pub mod preprocess;
pub mod profiles;
pub mod synthetic;

pub use corpus::{
    corpus_stats, filter_documents, read_documents, CorpusStats, CourseType, Document, DocumentSet, FilterCriteria,
    InputFormat,
};
pub use ctm::{
    document_posteriors, fit_ctm, infer_document, topic_top_words, CtmModel, DocumentTopicMatrix, ModelConfig,
    VariationalState,
};
pub use error::{Error, Result};
pub use model_selection::{detect_elbow, scan_k, umass_coherence, CoherenceCurve, Elbow, ScanOptions};
pub use preprocess::{
    build_vocabulary, term_frequency_table, to_bow, tokenize, BowCorpus, BowDocument, PreprocessConfig, Tokenizer,
    Vocabulary,
};
pub use profiles::{institution_profiles, rank_topics, Aggregation, InstitutionProfile, LabelMap};

use serde::{Deserialize, Serialize};

/// A non-fatal condition attached to a specific record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    /// Document id (or other subject) the warning concerns.
    pub subject: String,
    pub message: String,
}

impl Warning {
    pub fn new(subject: impl Into<String>, message: impl Into<String>) -> Self {
        Warning {
            subject: subject.into(),
            message: message.into(),
        }
    }
}
