//! Reference models over the same bag-of-words corpus: LDA (also the CTM warm
//! start) and LSA.

mod lda;
mod lsa;

pub use lda::{
    fit_lda, fit_lda_with_beta, fit_lda_with_states, lda_document_bound, lda_posteriors, LdaConfig, LdaDiagnostics,
    LdaFit, LdaModel, LdaState,
};
pub use lsa::{
    document_term_matrix, fit_lsa, fit_lsa_weighted, lsa_from_matrix, lsa_top_terms, reconstruction_error, LsaModel,
    TermWeighting,
};
