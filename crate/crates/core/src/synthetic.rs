//! Corpora sampled from a known correlated topic model, for recovery checks.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::numeric::{cosine, softmax};
use crate::preprocess::{BowDocument, Vocabulary};

#[derive(Debug, Clone)]
pub struct PlantedSpec {
    pub v: usize,
    pub d: usize,
    pub mean_doc_len: f64,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Concentration of the symmetric Dirichlet each topic is drawn from.
    pub topic_concentration: f64,
    pub seed: u64,
}

impl PlantedSpec {
    /// Three topics with `Σ₁₂ > 0`, `Σ₁₃ < 0` and `Σ₂₃ = 0`.
    pub fn three_topics(v: usize, d: usize, mean_doc_len: f64, seed: u64) -> Self {
        PlantedSpec {
            v,
            d,
            mean_doc_len,
            mu: DVector::zeros(3),
            sigma: DMatrix::from_row_slice(3, 3, &[1.0, 0.6, -0.6, 0.6, 1.0, 0.0, -0.6, 0.0, 1.0]),
            topic_concentration: 0.1,
            seed,
        }
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub docs: Vec<BowDocument>,
    pub vocab: Vocabulary,
    /// K × V generating topics.
    pub beta: DMatrix<f64>,
    /// Per-document topic proportions, D × K.
    pub theta: DMatrix<f64>,
}

/// Samples `η ~ N(μ, Σ)`, `θ = softmax(η)`, a Poisson length (at least 1),
/// then each token's topic and word.
pub fn planted_corpus(spec: &PlantedSpec) -> Result<PlantedCorpus> {
    let (k, v) = (spec.k(), spec.v);
    let chol = spec
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("planted covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gamma = Gamma::new(spec.topic_concentration, 1.0)
        .map_err(|e| Error::InvalidConfig(format!("topic concentration: {e}")))?;
    let poisson = Poisson::new(spec.mean_doc_len).map_err(|e| Error::InvalidConfig(format!("document length: {e}")))?;

    let mut beta = DMatrix::zeros(k, v);
    for i in 0..k {
        for w in 0..v {
            beta[(i, w)] = gamma.sample(&mut rng).max(1e-300);
        }
        let s: f64 = beta.row(i).sum();
        beta.row_mut(i).scale_mut(1.0 / s);
    }
    let word_dists: Vec<WeightedIndex<f64>> = (0..k)
        .map(|i| WeightedIndex::new(beta.row(i).iter().copied()).expect("positive weights"))
        .collect();

    let width = (v.max(2) - 1).to_string().len();
    let terms: Vec<String> = (0..v).map(|w| format!("w{w:0width$}")).collect();

    let mut theta = DMatrix::zeros(spec.d, k);
    let mut docs = Vec::with_capacity(spec.d);
    let mut doc_freq = vec![0usize; v];
    let mut total = 0u64;
    for d in 0..spec.d {
        let z = DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(&mut rng)));
        let eta = &spec.mu + &l * z;
        let th = softmax(eta.as_slice());
        theta.row_mut(d).copy_from_slice(&th);
        let topic_dist = WeightedIndex::new(th.iter().copied()).expect("simplex weights");
        let len = (poisson.sample(&mut rng) as usize).max(1);
        let mut counts = vec![0u32; v];
        for _ in 0..len {
            let t = topic_dist.sample(&mut rng);
            counts[word_dists[t].sample(&mut rng)] += 1;
        }
        total += len as u64;
        for (w, &c) in counts.iter().enumerate() {
            if c > 0 {
                doc_freq[w] += 1;
            }
        }
        docs.push(BowDocument::from_counts(
            format!("doc{d}"),
            counts.into_iter().enumerate().filter(|&(_, c)| c > 0),
        ));
    }
    let vocab = Vocabulary::from_parts(terms, doc_freq, total)?;
    Ok(PlantedCorpus {
        docs,
        vocab,
        beta,
        theta,
    })
}

/// Greedy one-to-one matching of fitted to true topics: repeatedly takes the
/// unmatched pair with the highest cosine. Returns `(fitted, true, cosine)`
/// sorted by true topic index.
pub fn match_topics(fitted: &DMatrix<f64>, truth: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::new();
    for a in 0..fitted.nrows() {
        for b in 0..truth.nrows() {
            let fa: Vec<f64> = fitted.row(a).iter().copied().collect();
            let tb: Vec<f64> = truth.row(b).iter().copied().collect();
            pairs.push((a, b, cosine(&fa, &tb)));
        }
    }
    pairs.sort_by(|x, y| y.2.total_cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    let mut used_a = vec![false; fitted.nrows()];
    let mut used_b = vec![false; truth.nrows()];
    let mut out = Vec::new();
    for (a, b, c) in pairs {
        if !used_a[a] && !used_b[b] {
            used_a[a] = true;
            used_b[b] = true;
            out.push((a, b, c));
        }
    }
    out.sort_by_key(|p| p.1);
    out
}
