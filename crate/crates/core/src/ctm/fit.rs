//! Variational EM driver.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::inference::{bound_terms, infer_from, PreparedModel, VariationalState};
use super::{CtmModel, FitDiagnostics, InitKind, ModelConfig};
use crate::baselines::{fit_lda, LdaConfig};
use crate::error::{Error, Result};
use crate::numeric;
use crate::preprocess::{BowDocument, Vocabulary};

/// Floor added to topic-word statistics before normalization.
pub(crate) const BETA_FLOOR: f64 = 1e-12;

/// A fitted model together with the final per-document variational states.
#[derive(Debug, Clone)]
pub struct CtmFit {
    pub model: CtmModel,
    pub states: Vec<VariationalState>,
}

pub(crate) fn validate_corpus(corpus: &[BowDocument], v: usize, k: usize) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("empty corpus".into()));
    }
    if corpus.len() < 2 {
        return Err(Error::InvalidInput("at least two documents are required".into()));
    }
    if k > v {
        return Err(Error::InvalidConfig(format!("K = {k} exceeds vocabulary size {v}")));
    }
    for d in corpus {
        if d.entries.is_empty() {
            return Err(Error::InvalidInput(format!("document {} is empty", d.doc_id)));
        }
        if d.entries.last().is_some_and(|&(w, _)| w >= v) {
            return Err(Error::InvalidInput(format!(
                "document {} has a term id outside the vocabulary",
                d.doc_id
            )));
        }
    }
    Ok(())
}

/// Seeded initial topics: each topic starts from the counts of one randomly
/// drawn document, plus unit smoothing and uniform noise.
pub(crate) fn seeded_beta(corpus: &[BowDocument], k: usize, v: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut beta = DMatrix::zeros(k, v);
    for i in 0..k {
        let doc = &corpus[rng.random_range(0..corpus.len())];
        for w in 0..v {
            beta[(i, w)] = 1.0 + rng.random::<f64>();
        }
        for &(w, c) in &doc.entries {
            beta[(i, w)] += f64::from(c);
        }
        let s: f64 = beta.row(i).sum();
        beta.row_mut(i).scale_mut(1.0 / s);
    }
    beta
}

/// Fits a correlated topic model.
pub fn fit_ctm(corpus: &[BowDocument], vocab: &Vocabulary, config: &ModelConfig) -> Result<CtmFit> {
    config.validate()?;
    let (k, v) = (config.k, vocab.len());
    validate_corpus(corpus, v, k)?;
    let beta = match config.init {
        InitKind::SeededRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            seeded_beta(corpus, k, v, &mut rng)
        }
        InitKind::FromLda => {
            let lda = fit_lda(corpus, vocab, &LdaConfig::from_model_config(config))?;
            lda.beta
        }
    };
    let mut fit = fit_ctm_with_beta(corpus, v, config, beta)?;
    fit.model.vocab_digest = vocab.digest();
    Ok(fit)
}

/// Fits from an explicit initial topic-word matrix (K × V, rows normalized).
pub fn fit_ctm_with_beta(corpus: &[BowDocument], v: usize, config: &ModelConfig, beta: DMatrix<f64>) -> Result<CtmFit> {
    config.validate()?;
    let k = config.k;
    validate_corpus(corpus, v, k)?;
    if beta.shape() != (k, v) {
        return Err(Error::InvalidInput("initial beta has the wrong shape".into()));
    }

    let mut model = CtmModel::new(beta, DVector::zeros(k), DMatrix::identity(k, k))?;
    let prep = model.prepare()?;
    let mut states: Vec<VariationalState> = corpus.iter().map(|d| VariationalState::initial(&prep, d)).collect();

    let mut elbo_trace = Vec::new();
    let mut objective_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last_elbo = f64::NAN;

    for iteration in 1..=config.max_em_iters {
        iterations = iteration;
        let prep = model.prepare()?;

        // E-step: warm-started from the previous states; collected in document order.
        states = corpus
            .par_iter()
            .zip(states.into_par_iter())
            .map(|(doc, st)| infer_from(&prep, doc, config, st))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                Error::Numerical(_) => Error::NonFinite { iteration },
                other => other,
            })?;

        m_step(&mut model, corpus, &states, config.covariance_ridge)?;

        let prep = model.prepare()?;
        let elbo = total_bound(&prep, corpus, &states);
        let objective = elbo + prior_penalty(&model, corpus.len(), config.covariance_ridge);
        if !elbo.is_finite() || !objective.is_finite() {
            return Err(Error::NonFinite { iteration });
        }
        log::debug!("ctm K={k} iteration {iteration}: elbo {elbo:.6}");
        let previous = objective_trace.last().copied();
        elbo_trace.push(elbo);
        objective_trace.push(objective);
        last_elbo = elbo;
        if let Some(prev) = previous {
            if ((objective - prev) / prev.abs()).abs() < config.em_rel_tol {
                converged = true;
                break;
            }
        }
    }

    model.diagnostics = FitDiagnostics {
        final_elbo: last_elbo,
        iterations,
        converged,
        seed: config.seed,
        elbo_trace,
        objective_trace,
    };
    Ok(CtmFit { model, states })
}

/// Closed-form M-step: `β ∝` responsibility-weighted counts, `μ` = mean λ,
/// `Σ` = mean of `diag(ν²) + (λ−μ)(λ−μ)ᵀ` plus a ridge.
fn m_step(model: &mut CtmModel, corpus: &[BowDocument], states: &[VariationalState], ridge: f64) -> Result<()> {
    let (k, v) = (model.k(), model.v());
    let dn = corpus.len() as f64;

    let mut stats = DMatrix::from_element(k, v, BETA_FLOOR);
    for (doc, st) in corpus.iter().zip(states) {
        for (t, &(w, c)) in doc.entries.iter().enumerate() {
            let c = f64::from(c);
            for i in 0..k {
                stats[(i, w)] += c * st.phi[t * k + i];
            }
        }
    }
    for i in 0..k {
        let s: f64 = stats.row(i).sum();
        stats.row_mut(i).scale_mut(1.0 / s);
    }
    model.beta = stats;

    let mut mu = DVector::zeros(k);
    for st in states {
        mu += &st.lambda;
    }
    mu /= dn;

    let mut sigma = DMatrix::zeros(k, k);
    for st in states {
        let d = &st.lambda - &mu;
        for i in 0..k {
            sigma[(i, i)] += st.nu2[i] + d[i] * d[i];
            for j in (i + 1)..k {
                sigma[(i, j)] += d[i] * d[j];
            }
        }
    }
    for i in 0..k {
        for j in i..k {
            let val = sigma[(i, j)] / dn + if i == j { ridge } else { 0.0 };
            sigma[(i, j)] = val;
            sigma[(j, i)] = val;
        }
    }
    model.mu = mu;
    model.sigma = sigma;
    if numeric::min_eigenvalue(&model.sigma) < ridge / 2.0 {
        return Err(Error::Numerical("covariance lost positive definiteness".into()));
    }
    Ok(())
}

/// Log-density terms of the implicit priors whose MAP estimates the M-step computes:
/// a `Dirichlet(1 + floor)` on each topic and the ridge on `Σ`. Adding these to the
/// ELBO gives the objective that EM increases exactly.
fn prior_penalty(model: &CtmModel, num_docs: usize, ridge: f64) -> f64 {
    let beta_term: f64 = BETA_FLOOR * model.beta.iter().map(|b| b.ln()).sum::<f64>();
    let sigma_term = match numeric::spd_inverse_logdet(&model.sigma) {
        Ok((inv, _)) => -0.5 * num_docs as f64 * ridge * inv.trace(),
        Err(_) => f64::NEG_INFINITY,
    };
    beta_term + sigma_term
}

fn total_bound(prep: &PreparedModel, corpus: &[BowDocument], states: &[VariationalState]) -> f64 {
    corpus
        .iter()
        .zip(states)
        .map(|(d, s)| bound_terms(prep, d, s).total())
        .sum()
}

/// Sum of per-document bounds.
pub fn elbo(model: &CtmModel, corpus: &[BowDocument], states: &[VariationalState]) -> Result<f64> {
    if corpus.len() != states.len() {
        return Err(Error::InvalidInput(format!(
            "{} documents but {} variational states",
            corpus.len(),
            states.len()
        )));
    }
    let k = model.k();
    for (d, s) in corpus.iter().zip(states) {
        if s.lambda.len() != k || s.phi.len() != k * d.num_terms() {
            return Err(Error::InvalidInput(format!(
                "variational state does not match document {}",
                d.doc_id
            )));
        }
    }
    let prep = model.prepare()?;
    let value = total_bound(&prep, corpus, states);
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite bound".into()));
    }
    Ok(value)
}
