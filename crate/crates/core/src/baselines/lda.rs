//! Latent Dirichlet allocation by mean-field variational EM.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::ctm::{seeded_beta, validate_corpus, ModelConfig, BETA_FLOOR};
use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;
use crate::preprocess::{BowDocument, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaConfig {
    pub k: usize,
    pub seed: u64,
    pub max_em_iters: usize,
    pub em_rel_tol: f64,
    pub inner_max_iters: usize,
    pub inner_tol: f64,
    /// Symmetric Dirichlet parameter; `None` means `1/K`.
    pub alpha: Option<f64>,
    /// Re-estimate the symmetric α in each M-step.
    pub estimate_alpha: bool,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            k: 7,
            seed: 42,
            max_em_iters: 100,
            em_rel_tol: 1e-5,
            inner_max_iters: 50,
            inner_tol: 1e-6,
            alpha: None,
            estimate_alpha: false,
        }
    }
}

impl LdaConfig {
    pub fn with_k(k: usize, seed: u64) -> Self {
        LdaConfig {
            k,
            seed,
            ..Default::default()
        }
    }

    pub fn from_model_config(c: &ModelConfig) -> Self {
        LdaConfig {
            k: c.k,
            seed: c.seed,
            max_em_iters: c.max_em_iters,
            em_rel_tol: c.em_rel_tol,
            inner_max_iters: c.inner_max_iters,
            inner_tol: c.inner_tol,
            alpha: None,
            estimate_alpha: false,
        }
    }

    fn initial_alpha(&self) -> f64 {
        self.alpha.unwrap_or(1.0 / self.k as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig("K must be at least 2".into()));
        }
        if !(self.em_rel_tol > 0.0 && self.inner_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.max_em_iters == 0 || self.inner_max_iters == 0 {
            return Err(Error::InvalidConfig("iteration limits must be positive".into()));
        }
        if self.alpha.is_some_and(|a| !(a > 0.0)) {
            return Err(Error::InvalidConfig("alpha must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaDiagnostics {
    pub final_elbo: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    pub elbo_trace: Vec<f64>,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    /// K × V, rows sum to one.
    pub beta: DMatrix<f64>,
    pub alpha: Vec<f64>,
    pub vocab_digest: String,
    pub diagnostics: LdaDiagnostics,
}

/// Per-document Dirichlet surrogate `γ` and responsibilities `φ` (one row per distinct term).
#[derive(Debug, Clone, PartialEq)]
pub struct LdaState {
    pub gamma: Vec<f64>,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LdaFit {
    pub model: LdaModel,
    pub states: Vec<LdaState>,
}

impl LdaModel {
    pub fn k(&self) -> usize {
        self.beta.nrows()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "model": "lda",
            "k": self.k(),
            "v": self.beta.ncols(),
            "seed": self.diagnostics.seed,
            "alpha": self.alpha,
            "beta": self.beta.transpose().as_slice(),
            "vocab_hash": self.vocab_digest,
            "diagnostics": self.diagnostics,
        }))
        .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            model: String,
            k: usize,
            v: usize,
            alpha: Vec<f64>,
            beta: Vec<f64>,
            vocab_hash: String,
            diagnostics: LdaDiagnostics,
        }
        let f: File = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("model file: {e}")))?;
        if f.model != "lda" || f.alpha.len() != f.k || f.beta.len() != f.k * f.v {
            return Err(Error::InvalidInput("not a consistent lda model file".into()));
        }
        Ok(LdaModel {
            beta: DMatrix::from_row_slice(f.k, f.v, &f.beta),
            alpha: f.alpha,
            vocab_digest: f.vocab_hash,
            diagnostics: f.diagnostics,
        })
    }
}

fn expected_log_theta(gamma: &[f64]) -> Vec<f64> {
    let total = digamma(gamma.iter().sum());
    gamma.iter().map(|&g| digamma(g) - total).collect()
}

/// Per-document variational bound.
pub fn lda_document_bound(log_beta_t: &[f64], alpha: &[f64], doc: &BowDocument, state: &LdaState) -> f64 {
    let k = alpha.len();
    let elog = expected_log_theta(&state.gamma);
    let alpha_sum: f64 = alpha.iter().sum();
    let gamma_sum: f64 = state.gamma.iter().sum();

    let mut b = ln_gamma(alpha_sum) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
    b -= ln_gamma(gamma_sum) - state.gamma.iter().map(|&g| ln_gamma(g)).sum::<f64>();
    for i in 0..k {
        b += (alpha[i] - state.gamma[i]) * elog[i];
    }
    for (t, &(w, c)) in doc.entries.iter().enumerate() {
        let lb = &log_beta_t[w * k..(w + 1) * k];
        let mut s = 0.0;
        for i in 0..k {
            let f = state.phi[t * k + i];
            if f > 0.0 {
                s += f * (elog[i] + lb[i] - f.ln());
            }
        }
        b += f64::from(c) * s;
    }
    b
}

fn infer_lda(
    log_beta_t: &[f64],
    alpha: &[f64],
    doc: &BowDocument,
    config: &LdaConfig,
    mut state: LdaState,
) -> Result<LdaState> {
    let k = alpha.len();
    let mut old = lda_document_bound(log_beta_t, alpha, doc, &state);
    let mut buf = vec![0.0; k];
    for _ in 0..config.inner_max_iters {
        let elog = expected_log_theta(&state.gamma);
        for (t, &(w, _)) in doc.entries.iter().enumerate() {
            let lb = &log_beta_t[w * k..(w + 1) * k];
            for i in 0..k {
                buf[i] = elog[i] + lb[i];
            }
            let norm = log_sum_exp(&buf);
            for i in 0..k {
                state.phi[t * k + i] = (buf[i] - norm).exp();
            }
        }
        state.gamma.copy_from_slice(alpha);
        for (t, &(_, c)) in doc.entries.iter().enumerate() {
            for i in 0..k {
                state.gamma[i] += f64::from(c) * state.phi[t * k + i];
            }
        }
        let new = lda_document_bound(log_beta_t, alpha, doc, &state);
        if !new.is_finite() {
            return Err(Error::Numerical(format!("non-finite bound for {}", doc.doc_id)));
        }
        let gain = (new - old) / old.abs().max(f64::MIN_POSITIVE);
        old = new;
        if gain < config.inner_tol {
            break;
        }
    }
    Ok(state)
}

fn log_beta_t(beta: &DMatrix<f64>) -> Vec<f64> {
    let (k, v) = beta.shape();
    let mut out = vec![0.0; k * v];
    for i in 0..k {
        for w in 0..v {
            out[w * k + i] = beta[(i, w)].ln();
        }
    }
    out
}

/// Newton iterations for a symmetric α on the log scale, maximizing
/// `D (lnΓ(Kα) − K lnΓ(α)) + (α − 1) Σ_d Σ_i E[log θ_di]`.
fn estimate_symmetric_alpha(current: f64, k: usize, d: usize, suff: f64) -> f64 {
    let (kf, df) = (k as f64, d as f64);
    let f = |a: f64| df * (ln_gamma(kf * a) - kf * ln_gamma(a)) + (a - 1.0) * suff;
    let mut log_a = current.ln();
    for _ in 0..100 {
        let a = log_a.exp();
        let grad = df * (kf * digamma(kf * a) - kf * digamma(a)) + suff;
        let hess = df * (kf * kf * trigamma(kf * a) - kf * trigamma(a));
        // derivatives with respect to log α
        let g = grad * a;
        let h = hess * a * a + grad * a;
        if g.abs() < 1e-10 {
            break;
        }
        let step = if h < 0.0 { -g / h } else { g.signum() * 0.5 };
        let mut t = 1.0;
        while t > 1e-8 && f((log_a + t * step).exp()) < f(a) {
            t *= 0.5;
        }
        if t <= 1e-8 {
            break;
        }
        log_a += t * step;
    }
    log_a.exp()
}

fn trigamma(x: f64) -> f64 {
    // Recurrence up to x >= 10, then the asymptotic series.
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x + x2 / 2.0 + (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0))) / (x * x * x)
}

pub fn fit_lda(corpus: &[BowDocument], vocab: &Vocabulary, config: &LdaConfig) -> Result<LdaModel> {
    Ok(fit_lda_with_states(corpus, vocab, config)?.model)
}

/// [`fit_lda`] that also returns the final per-document states.
pub fn fit_lda_with_states(corpus: &[BowDocument], vocab: &Vocabulary, config: &LdaConfig) -> Result<LdaFit> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    config.validate()?;
    validate_corpus(corpus, vocab.len(), config.k)?;
    let beta = seeded_beta(corpus, config.k, vocab.len(), &mut rng);
    let mut fit = fit_lda_with_beta(corpus, config, beta)?;
    fit.model.vocab_digest = vocab.digest();
    Ok(fit)
}

pub fn fit_lda_with_beta(corpus: &[BowDocument], config: &LdaConfig, beta: DMatrix<f64>) -> Result<LdaFit> {
    config.validate()?;
    let (k, v) = beta.shape();
    if k != config.k {
        return Err(Error::InvalidInput("initial beta has the wrong shape".into()));
    }
    validate_corpus(corpus, v, k)?;

    let mut alpha = vec![config.initial_alpha(); k];
    let mut beta = beta;
    let mut states: Vec<LdaState> = corpus
        .iter()
        .map(|d| LdaState {
            gamma: vec![alpha[0] + f64::from(d.total()) / k as f64; k],
            phi: vec![1.0 / k as f64; k * d.num_terms()],
        })
        .collect();

    let mut elbo_trace = Vec::new();
    let mut objective_trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 1..=config.max_em_iters {
        iterations = iteration;
        let lbt = log_beta_t(&beta);
        states = corpus
            .par_iter()
            .zip(states.into_par_iter())
            .map(|(doc, st)| infer_lda(&lbt, &alpha, doc, config, st))
            .collect::<Result<Vec<_>>>()
            .map_err(|_| Error::NonFinite { iteration })?;

        let mut stats = DMatrix::from_element(k, v, BETA_FLOOR);
        for (doc, st) in corpus.iter().zip(&states) {
            for (t, &(w, c)) in doc.entries.iter().enumerate() {
                for i in 0..k {
                    stats[(i, w)] += f64::from(c) * st.phi[t * k + i];
                }
            }
        }
        for i in 0..k {
            let s: f64 = stats.row(i).sum();
            stats.row_mut(i).scale_mut(1.0 / s);
        }
        beta = stats;

        if config.estimate_alpha {
            let suff: f64 = states
                .iter()
                .map(|s| expected_log_theta(&s.gamma).iter().sum::<f64>())
                .sum();
            let a = estimate_symmetric_alpha(alpha[0], k, corpus.len(), suff);
            alpha = vec![a; k];
        }

        let lbt = log_beta_t(&beta);
        let elbo: f64 = corpus
            .iter()
            .zip(&states)
            .map(|(d, s)| lda_document_bound(&lbt, &alpha, d, s))
            .sum();
        let objective = elbo + BETA_FLOOR * beta.iter().map(|b| b.ln()).sum::<f64>();
        if !objective.is_finite() {
            return Err(Error::NonFinite { iteration });
        }
        let previous = objective_trace.last().copied();
        elbo_trace.push(elbo);
        objective_trace.push(objective);
        if let Some(prev) = previous {
            if ((objective - prev) / prev.abs()).abs() < config.em_rel_tol {
                converged = true;
                break;
            }
        }
    }

    Ok(LdaFit {
        model: LdaModel {
            beta,
            alpha,
            vocab_digest: String::new(),
            diagnostics: LdaDiagnostics {
                final_elbo: elbo_trace.last().copied().unwrap_or(f64::NAN),
                iterations,
                converged,
                seed: config.seed,
                elbo_trace,
                objective_trace,
            },
        },
        states,
    })
}

/// Document topic shares `γ / Σγ` from a fit's final states.
pub fn lda_posteriors(corpus: &[BowDocument], states: &[LdaState]) -> crate::ctm::DocumentTopicMatrix {
    let k = states.first().map_or(0, |s| s.gamma.len());
    let values = states
        .iter()
        .flat_map(|s| {
            let t: f64 = s.gamma.iter().sum();
            s.gamma.iter().map(move |g| g / t)
        })
        .collect();
    crate::ctm::DocumentTopicMatrix {
        doc_ids: corpus.iter().map(|d| d.doc_id.clone()).collect(),
        k,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::build_vocabulary;

    fn toy() -> (Vec<BowDocument>, Vocabulary) {
        let vocab = build_vocabulary(&[vec!["a", "b", "c", "d", "e", "f"]], 1).unwrap();
        let docs = (0..20)
            .map(|i| {
                if i % 2 == 0 {
                    BowDocument::from_counts(format!("d{i}"), [(0, 3), (1, 2), (2, 1 + i % 3)])
                } else {
                    BowDocument::from_counts(format!("d{i}"), [(3, 2), (4, 3), (5, 1 + i % 2)])
                }
            })
            .collect();
        (docs, vocab)
    }

    #[test]
    fn trigamma_matches_series() {
        // ψ'(1) = π²/6
        assert!((trigamma(1.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-10);
        assert!((trigamma(0.5) - std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-10);
    }

    #[test]
    fn elbo_is_monotone_and_states_valid() {
        let (docs, vocab) = toy();
        let beta = {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            seeded_beta(&docs, 2, vocab.len(), &mut rng)
        };
        let fit = fit_lda_with_beta(&docs, &LdaConfig::with_k(2, 1), beta).unwrap();
        for w in fit.model.diagnostics.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        for s in &fit.states {
            assert!(s.gamma.iter().all(|&g| g > 0.0));
            for row in s.phi.chunks(2) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn separates_two_clusters() {
        let (docs, vocab) = toy();
        let model = fit_lda(&docs, &vocab, &LdaConfig::with_k(2, 3)).unwrap();
        let first: f64 = (0..3).map(|w| model.beta[(0, w)]).sum();
        assert!(first > 0.99 || first < 0.01, "topic 0 mass on a-c: {first}");
    }

    #[test]
    fn single_term_corpus() {
        let vocab = build_vocabulary(&[vec!["only", "zz"]], 1).unwrap();
        let docs: Vec<_> = (0..5)
            .map(|i| BowDocument::from_counts(format!("{i}"), [(0, 4)]))
            .collect();
        let model = fit_lda(&docs, &vocab, &LdaConfig::with_k(2, 0)).unwrap();
        for i in 0..2 {
            assert!(model.beta[(i, 0)] >= 1.0 - 1e-6);
        }
    }

    #[test]
    fn deterministic_and_serializable() {
        let (docs, vocab) = toy();
        let a = fit_lda(&docs, &vocab, &LdaConfig::with_k(3, 9)).unwrap();
        let b = fit_lda(&docs, &vocab, &LdaConfig::with_k(3, 9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(LdaModel::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn alpha_estimation_stays_monotone() {
        let (docs, vocab) = toy();
        let mut cfg = LdaConfig::with_k(2, 4);
        cfg.estimate_alpha = true;
        let model = fit_lda(&docs, &vocab, &cfg).unwrap();
        assert!(model.alpha[0] > 0.0);
        for w in model.diagnostics.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
    }
}
