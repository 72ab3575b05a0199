//! Correlated topic model with a logistic-normal prior over topic proportions,
//! fitted by variational EM.
//!
//! Each document draws topic log-proportions `η ~ N(μ, Σ)`; its topic shares are
//! `softmax(η)`. The variational family factorizes as a diagonal Gaussian over
//! `η` (mean `λ`, variances `ν²`) and per-term categorical responsibilities `φ`.
//! The non-conjugate `E[log Σ exp η]` term is bounded with an auxiliary `ζ`.

mod fit;
mod inference;
mod report;

pub(crate) use fit::{seeded_beta, validate_corpus, BETA_FLOOR};
pub(crate) use report::top_terms_by;

pub use fit::{elbo, fit_ctm, fit_ctm_with_beta, CtmFit};
pub use inference::{
    bound_terms, infer_document, infer_from, lambda_gradient, nu2_gradient, BoundTerms, PreparedModel, VariationalState,
};
pub use report::{
    beta_top_words, document_posteriors, posteriors_from_states, top_words_tsv, topic_top_words, DocumentTopicMatrix,
    TopicWords,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

/// Initialization of the topic-word matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Smoothed counts from randomly chosen documents plus seeded noise.
    SeededRandom,
    /// Topic-word matrix of an LDA fit with the same seed.
    FromLda,
}

/// How a document's topic shares are summarized from its variational state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PosteriorKind {
    /// `softmax(λ)`.
    SoftmaxMean,
    /// Monte-Carlo estimate of `E_q[softmax(η)]`.
    ExpectedShare { samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub k: usize,
    pub seed: u64,
    pub max_em_iters: usize,
    /// Convergence threshold on the relative change of the EM objective.
    pub em_rel_tol: f64,
    pub inner_max_iters: usize,
    /// Per-document convergence threshold on the relative bound change.
    pub inner_tol: f64,
    /// Ridge `ε` added to the covariance diagonal in every M-step.
    pub covariance_ridge: f64,
    pub init: InitKind,
    pub posterior: PosteriorKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 7,
            seed: 42,
            max_em_iters: 100,
            em_rel_tol: 1e-5,
            inner_max_iters: 50,
            inner_tol: 1e-6,
            covariance_ridge: 1e-6,
            init: InitKind::SeededRandom,
            posterior: PosteriorKind::SoftmaxMean,
        }
    }
}

impl ModelConfig {
    pub fn with_k(k: usize, seed: u64) -> Self {
        ModelConfig {
            k,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.k < 2 {
            return bad("K must be at least 2");
        }
        if !(self.em_rel_tol > 0.0 && self.inner_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.covariance_ridge > 0.0) {
            return bad("covariance ridge must be positive");
        }
        if self.max_em_iters == 0 || self.inner_max_iters == 0 {
            return bad("iteration limits must be positive");
        }
        if let PosteriorKind::ExpectedShare { samples: 0 } = self.posterior {
            return bad("posterior sample count must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Sum of per-document bounds under the final model.
    pub final_elbo: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    /// ELBO after every EM iteration.
    pub elbo_trace: Vec<f64>,
    /// Maximized objective (ELBO plus the smoothing/ridge prior terms) per iteration.
    pub objective_trace: Vec<f64>,
}

/// Fitted correlated topic model.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmModel {
    /// Topic-word distributions, K × V, rows sum to one.
    pub beta: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub vocab_digest: String,
    pub diagnostics: FitDiagnostics,
}

impl CtmModel {
    /// Model with the given parameters and empty diagnostics.
    pub fn new(beta: DMatrix<f64>, mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let k = beta.nrows();
        if k == 0 || beta.ncols() == 0 || mu.len() != k || sigma.shape() != (k, k) {
            return Err(Error::InvalidInput("inconsistent model dimensions".into()));
        }
        Ok(CtmModel {
            beta,
            mu,
            sigma,
            vocab_digest: String::new(),
            diagnostics: FitDiagnostics {
                final_elbo: 0.0,
                iterations: 0,
                converged: false,
                seed: 0,
                elbo_trace: Vec::new(),
                objective_trace: Vec::new(),
            },
        })
    }

    pub fn k(&self) -> usize {
        self.beta.nrows()
    }

    pub fn v(&self) -> usize {
        self.beta.ncols()
    }

    /// Correlation matrix implied by `Σ`.
    pub fn correlation(&self) -> DMatrix<f64> {
        let k = self.k();
        DMatrix::from_fn(k, k, |i, j| {
            self.sigma[(i, j)] / (self.sigma[(i, i)] * self.sigma[(j, j)]).sqrt()
        })
    }

    pub fn prepare(&self) -> Result<PreparedModel> {
        PreparedModel::new(self)
    }

    /// Checks the stochastic / positive-definite invariants within the given tolerances.
    pub fn check_invariants(&self, ridge: f64) -> Result<()> {
        for (i, row) in self.beta.row_iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-10 || row.iter().any(|&b| !(b >= 0.0)) {
                return Err(Error::Numerical(format!("beta row {i} is not a distribution")));
            }
        }
        let asym = (&self.sigma - self.sigma.transpose()).abs().max();
        if asym > 1e-12 {
            return Err(Error::Numerical(format!("sigma asymmetric by {asym}")));
        }
        let min_eig = numeric::min_eigenvalue(&self.sigma);
        if min_eig < ridge / 2.0 {
            return Err(Error::Numerical(format!("sigma min eigenvalue {min_eig}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("model file: {e}")))?;
        file.try_into()
    }
}

/// On-disk layout: matrices flattened row-major.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    model: String,
    k: usize,
    v: usize,
    seed: u64,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    beta: Vec<f64>,
    vocab_hash: String,
    diagnostics: FitDiagnostics,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl From<&CtmModel> for ModelFile {
    fn from(m: &CtmModel) -> Self {
        ModelFile {
            model: "ctm".into(),
            k: m.k(),
            v: m.v(),
            seed: m.diagnostics.seed,
            mu: m.mu.as_slice().to_vec(),
            sigma: row_major(&m.sigma),
            beta: row_major(&m.beta),
            vocab_hash: m.vocab_digest.clone(),
            diagnostics: m.diagnostics.clone(),
        }
    }
}

impl TryFrom<ModelFile> for CtmModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.model != "ctm" {
            return Err(Error::InvalidInput(format!(
                "expected a ctm model, found {:?}",
                f.model
            )));
        }
        if f.mu.len() != f.k || f.sigma.len() != f.k * f.k || f.beta.len() != f.k * f.v {
            return Err(Error::InvalidInput("model file dimensions disagree".into()));
        }
        let mut model = CtmModel::new(
            DMatrix::from_row_slice(f.k, f.v, &f.beta),
            DVector::from_vec(f.mu),
            DMatrix::from_row_slice(f.k, f.k, &f.sigma),
        )?;
        model.vocab_digest = f.vocab_hash;
        model.diagnostics = f.diagnostics;
        Ok(model)
    }
}
