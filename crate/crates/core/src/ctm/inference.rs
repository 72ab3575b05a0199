//! Per-document coordinate ascent on the variational bound.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{CtmModel, ModelConfig};
use crate::error::{Error, Result};
use crate::numeric::{self, log_sum_exp};
use crate::preprocess::BowDocument;

/// Model quantities reused across documents: `Σ⁻¹`, `log|Σ⁻¹|` and `log β` laid out term-major.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    k: usize,
    v: usize,
    mu: DVector<f64>,
    precision: DMatrix<f64>,
    log_det_precision: f64,
    /// `log_beta_t[w * k + i] = log β[i, w]`
    log_beta_t: Vec<f64>,
}

impl PreparedModel {
    pub fn new(model: &CtmModel) -> Result<Self> {
        let (precision, log_det_sigma) = numeric::spd_inverse_logdet(&model.sigma)?;
        let (k, v) = (model.k(), model.v());
        let mut log_beta_t = vec![0.0; k * v];
        for i in 0..k {
            for w in 0..v {
                log_beta_t[w * k + i] = model.beta[(i, w)].ln();
            }
        }
        Ok(PreparedModel {
            k,
            v,
            mu: model.mu.clone(),
            precision,
            log_det_precision: -log_det_sigma,
            log_beta_t,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    fn log_beta(&self, w: usize) -> &[f64] {
        &self.log_beta_t[w * self.k..(w + 1) * self.k]
    }

    fn check_doc(&self, doc: &BowDocument) -> Result<()> {
        if doc.entries.is_empty() {
            return Err(Error::InvalidInput(format!("document {} is empty", doc.doc_id)));
        }
        if let Some(&(w, _)) = doc.entries.iter().find(|&&(w, _)| w >= self.v) {
            return Err(Error::InvalidInput(format!(
                "document {}: term id {w} outside vocabulary of {}",
                doc.doc_id, self.v
            )));
        }
        Ok(())
    }
}

/// Variational parameters of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    /// Mean of the topic log-proportions.
    pub lambda: DVector<f64>,
    /// Variances of the topic log-proportions, all positive.
    pub nu2: DVector<f64>,
    /// Responsibilities, one length-K row per distinct term of the document (row-major).
    pub phi: Vec<f64>,
    pub zeta: f64,
    /// Bound value after the last full sweep.
    pub bound: f64,
}

/// The four additive parts of a document's bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    /// `E_q[log p(η | μ, Σ)]`
    pub prior: f64,
    /// `Σ_n E_q[log p(z_n | η)]` under the ζ bound.
    pub topic_assignment: f64,
    /// `Σ_n E_q[log p(w_n | z_n, β)]`
    pub word_likelihood: f64,
    /// Entropy of q.
    pub entropy: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.prior + self.topic_assignment + self.word_likelihood + self.entropy
    }
}

impl VariationalState {
    /// Starting point: `λ = μ`, `ν² = 1`, uniform responsibilities.
    pub fn initial(prep: &PreparedModel, doc: &BowDocument) -> Self {
        let k = prep.k;
        let mut s = VariationalState {
            lambda: prep.mu.clone(),
            nu2: DVector::from_element(k, 1.0),
            phi: vec![1.0 / k as f64; k * doc.num_terms()],
            zeta: 1.0,
            bound: f64::NEG_INFINITY,
        };
        s.update_zeta();
        s.bound = bound_terms(prep, doc, &s).total();
        s
    }

    pub fn phi_row(&self, term_index: usize, k: usize) -> &[f64] {
        &self.phi[term_index * k..(term_index + 1) * k]
    }

    /// `ζ = Σ_i exp(λ_i + ν²_i / 2)`, the exact maximizer.
    pub fn update_zeta(&mut self) {
        self.zeta = self
            .lambda
            .iter()
            .zip(self.nu2.iter())
            .map(|(l, n)| (l + 0.5 * n).exp())
            .sum();
    }

    /// `φ_{w,i} ∝ exp(λ_i) β_{i,w}`, the exact maximizer.
    pub fn update_phi(&mut self, prep: &PreparedModel, doc: &BowDocument) {
        let k = prep.k;
        let mut buf = vec![0.0; k];
        for (t, &(w, _)) in doc.entries.iter().enumerate() {
            let lb = prep.log_beta(w);
            for i in 0..k {
                buf[i] = self.lambda[i] + lb[i];
            }
            let norm = log_sum_exp(&buf);
            for (dst, &x) in self.phi[t * k..(t + 1) * k].iter_mut().zip(&buf) {
                *dst = (x - norm).exp();
            }
        }
    }

    fn expected_counts(&self, doc: &BowDocument, k: usize) -> DVector<f64> {
        let mut s = DVector::zeros(k);
        for (t, &(_, c)) in doc.entries.iter().enumerate() {
            let c = f64::from(c);
            for i in 0..k {
                s[i] += c * self.phi[t * k + i];
            }
        }
        s
    }

    /// Damped Newton ascent on the λ-dependent part of the bound (concave in λ).
    /// Steps are accepted only when they increase the bound.
    pub fn update_lambda(&mut self, prep: &PreparedModel, doc: &BowDocument) {
        let k = prep.k;
        let n = f64::from(doc.total());
        let s = self.expected_counts(doc, k);
        let scale = n / self.zeta;
        let objective = |lambda: &DVector<f64>| -> f64 {
            let d = lambda - &prep.mu;
            let quad = d.dot(&(&prep.precision * &d));
            let exp_sum: f64 = lambda
                .iter()
                .zip(self.nu2.iter())
                .map(|(l, v)| (l + 0.5 * v).exp())
                .sum();
            -0.5 * quad + s.dot(lambda) - scale * exp_sum
        };

        let mut current = objective(&self.lambda);
        for _ in 0..50 {
            let e = DVector::from_iterator(
                k,
                self.lambda
                    .iter()
                    .zip(self.nu2.iter())
                    .map(|(l, v)| (l + 0.5 * v).exp()),
            );
            let grad = -(&prep.precision * (&self.lambda - &prep.mu)) + &s - scale * &e;
            let mut neg_hess = prep.precision.clone();
            for i in 0..k {
                neg_hess[(i, i)] += scale * e[i];
            }
            let Some(dir) = numeric::spd_solve(neg_hess, &grad) else {
                break;
            };
            let decrement = grad.dot(&dir);
            if !(decrement > 1e-12 * (1.0 + current.abs())) {
                break;
            }
            let mut step = 1.0;
            let mut accepted = false;
            while step > 1e-12 {
                let cand = &self.lambda + step * &dir;
                let value = objective(&cand);
                if value.is_finite() && value >= current + 1e-4 * step * decrement {
                    self.lambda = cand;
                    current = value;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
    }

    /// Per-coordinate Newton ascent on `log ν²_i`; the objective is concave there,
    /// and working in log space keeps every variance positive.
    pub fn update_nu2(&mut self, prep: &PreparedModel, doc: &BowDocument) {
        let scale = f64::from(doc.total()) / self.zeta;
        for i in 0..prep.k {
            let p = prep.precision[(i, i)];
            let lambda = self.lambda[i];
            let h = |s: f64| -0.5 * p * s.exp() - scale * (lambda + 0.5 * s.exp()).exp() + 0.5 * s;
            let mut s = self.nu2[i].ln();
            let mut current = h(s);
            for _ in 0..50 {
                let es = s.exp();
                let ex = (lambda + 0.5 * es).exp();
                let d1 = -0.5 * p * es - 0.5 * scale * es * ex + 0.5;
                let d2 = -0.5 * p * es - 0.5 * scale * es * ex * (1.0 + 0.5 * es);
                if d1.abs() < 1e-12 || !(d2 < 0.0) {
                    break;
                }
                let full = (-d1 / d2).clamp(-5.0, 5.0);
                let mut step = 1.0;
                let mut moved = false;
                while step > 1e-12 {
                    let cand = s + step * full;
                    let value = h(cand);
                    if value.is_finite() && value >= current {
                        moved = cand != s;
                        s = cand;
                        current = value;
                        break;
                    }
                    step *= 0.5;
                }
                if !moved || (step * full).abs() < 1e-14 {
                    break;
                }
            }
            self.nu2[i] = s.exp();
        }
    }
}

/// Evaluates the bound decomposition for a document at a given state.
pub fn bound_terms(prep: &PreparedModel, doc: &BowDocument, state: &VariationalState) -> BoundTerms {
    let k = prep.k;
    let kf = k as f64;
    let n = f64::from(doc.total());
    let d = &state.lambda - &prep.mu;
    let trace: f64 = (0..k).map(|i| state.nu2[i] * prep.precision[(i, i)]).sum();
    let prior =
        0.5 * prep.log_det_precision - 0.5 * kf * (2.0 * PI).ln() - 0.5 * (trace + d.dot(&(&prep.precision * &d)));

    let exp_sum: f64 = state
        .lambda
        .iter()
        .zip(state.nu2.iter())
        .map(|(l, v)| (l + 0.5 * v).exp())
        .sum();
    let mut lambda_phi = 0.0;
    let mut word = 0.0;
    let mut neg_phi_log_phi = 0.0;
    for (t, &(w, c)) in doc.entries.iter().enumerate() {
        let c = f64::from(c);
        let lb = prep.log_beta(w);
        let row = state.phi_row(t, k);
        let (mut lp, mut wl, mut ent) = (0.0, 0.0, 0.0);
        for i in 0..k {
            let f = row[i];
            if f > 0.0 {
                lp += f * state.lambda[i];
                wl += f * lb[i];
                ent -= f * f.ln();
            }
        }
        lambda_phi += c * lp;
        word += c * wl;
        neg_phi_log_phi += c * ent;
    }
    let topic_assignment = lambda_phi - n * (exp_sum / state.zeta - 1.0 + state.zeta.ln());
    let entropy = 0.5 * state.nu2.iter().map(|v| v.ln() + (2.0 * PI).ln() + 1.0).sum::<f64>() + neg_phi_log_phi;

    BoundTerms {
        prior,
        topic_assignment,
        word_likelihood: word,
        entropy,
    }
}

/// `∂ bound / ∂λ` at fixed `ν², φ, ζ`.
pub fn lambda_gradient(prep: &PreparedModel, doc: &BowDocument, state: &VariationalState) -> DVector<f64> {
    let k = prep.k;
    let scale = f64::from(doc.total()) / state.zeta;
    let e = DVector::from_iterator(
        k,
        state
            .lambda
            .iter()
            .zip(state.nu2.iter())
            .map(|(l, v)| (l + 0.5 * v).exp()),
    );
    -(&prep.precision * (&state.lambda - &prep.mu)) + state.expected_counts(doc, k) - scale * e
}

/// `∂ bound / ∂ν²` at fixed `λ, φ, ζ`.
pub fn nu2_gradient(prep: &PreparedModel, doc: &BowDocument, state: &VariationalState) -> DVector<f64> {
    let scale = f64::from(doc.total()) / state.zeta;
    DVector::from_fn(prep.k, |i, _| {
        let v = state.nu2[i];
        -0.5 * prep.precision[(i, i)] - 0.5 * scale * (state.lambda[i] + 0.5 * v).exp() + 0.5 / v
    })
}

/// Runs coordinate ascent from `init` until the relative bound gain drops below
/// `config.inner_tol` or `config.inner_max_iters` sweeps have run.
pub fn infer_from(
    prep: &PreparedModel,
    doc: &BowDocument,
    config: &ModelConfig,
    init: VariationalState,
) -> Result<VariationalState> {
    prep.check_doc(doc)?;
    if init.lambda.len() != prep.k || init.phi.len() != prep.k * doc.num_terms() {
        return Err(Error::InvalidInput(format!(
            "variational state does not match document {}",
            doc.doc_id
        )));
    }
    let mut state = init;
    let mut old = bound_terms(prep, doc, &state).total();
    for _ in 0..config.inner_max_iters {
        state.update_zeta();
        state.update_phi(prep, doc);
        state.update_lambda(prep, doc);
        state.update_nu2(prep, doc);
        let new = bound_terms(prep, doc, &state).total();
        if !new.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite bound for document {}",
                doc.doc_id
            )));
        }
        let gain = (new - old) / old.abs().max(f64::MIN_POSITIVE);
        old = new;
        if gain < config.inner_tol {
            break;
        }
    }
    state.bound = old;
    Ok(state)
}

/// Infers a document's variational state from the default starting point.
pub fn infer_document(model: &CtmModel, doc: &BowDocument, config: &ModelConfig) -> Result<VariationalState> {
    let prep = model.prepare()?;
    prep.check_doc(doc)?;
    let init = VariationalState::initial(&prep, doc);
    infer_from(&prep, doc, config, init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, k: usize, v: usize) -> CtmModel {
        let mut beta = DMatrix::from_fn(k, v, |_, _| rng.random_range(0.05..1.0));
        for mut row in beta.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-0.5..0.5));
        let sigma = &a * a.transpose() + DMatrix::identity(k, k) * 0.5;
        let mu = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
        CtmModel::new(beta, mu, sigma).unwrap()
    }

    fn random_doc(rng: &mut ChaCha8Rng, v: usize) -> BowDocument {
        let mut counts = vec![(0, 1)];
        for w in 0..v {
            if rng.random_bool(0.4) {
                counts.push((w, rng.random_range(1..5)));
            }
        }
        BowDocument::from_counts("d", counts)
    }

    #[test]
    fn zeta_of_zero_state_is_k() {
        let mut s = VariationalState {
            lambda: DVector::zeros(7),
            nu2: DVector::zeros(7),
            phi: vec![],
            zeta: 0.0,
            bound: 0.0,
        };
        s.update_zeta();
        assert_eq!(s.zeta, 7.0);
    }

    #[test]
    fn identical_columns_give_uniform_phi() {
        let k = 3;
        let beta = DMatrix::from_row_slice(k, 2, &[0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
        let model = CtmModel::new(beta, DVector::zeros(k), DMatrix::identity(k, k)).unwrap();
        let prep = model.prepare().unwrap();
        let doc = BowDocument::from_counts("d", [(0, 2), (1, 1)]);
        let mut s = VariationalState::initial(&prep, &doc);
        s.phi.iter_mut().for_each(|p| *p = 0.0);
        s.update_phi(&prep, &doc);
        for p in &s.phi {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn every_coordinate_update_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let model = random_model(&mut rng, 4, 15);
            let prep = model.prepare().unwrap();
            let doc = random_doc(&mut rng, 15);
            let mut s = VariationalState::initial(&prep, &doc);
            let mut last = bound_terms(&prep, &doc, &s).total();
            for _ in 0..5 {
                let steps: [&dyn Fn(&mut VariationalState); 4] = [
                    &|s| s.update_zeta(),
                    &|s| s.update_phi(&prep, &doc),
                    &|s| s.update_lambda(&prep, &doc),
                    &|s| s.update_nu2(&prep, &doc),
                ];
                for step in steps {
                    step(&mut s);
                    let b = bound_terms(&prep, &doc, &s).total();
                    assert!(b >= last - 1e-10, "bound decreased {last} -> {b}");
                    last = b;
                }
            }
        }
    }

    #[test]
    fn inference_keeps_state_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(&mut rng, 5, 30);
        let doc = random_doc(&mut rng, 30);
        let s = infer_document(&model, &doc, &ModelConfig::with_k(5, 0)).unwrap();
        assert!(s.nu2.iter().all(|&v| v > 0.0));
        assert!(s.zeta > 0.0);
        for t in 0..doc.num_terms() {
            let sum: f64 = s.phi_row(t, 5).iter().sum();
            assert!((sum - 1.0).abs() < 1e-10);
        }
        // stationary point: gradients vanish
        let prep = model.prepare().unwrap();
        assert!(lambda_gradient(&prep, &doc, &s).amax() < 1e-3);
    }

    #[test]
    fn out_of_vocabulary_term_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_model(&mut rng, 2, 4);
        let doc = BowDocument::from_counts("d", [(9, 1)]);
        assert!(infer_document(&model, &doc, &ModelConfig::with_k(2, 0)).is_err());
    }
}
