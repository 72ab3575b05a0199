//! Latent semantic analysis: truncated SVD of the document-term count matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ctm::{top_terms_by, TopicWords};
use crate::error::{Error, Result};
use crate::preprocess::{BowDocument, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TermWeighting {
    /// Raw term counts.
    #[default]
    Counts,
    /// Counts scaled by `ln(D / df)`.
    TfIdf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsaModel {
    /// k × V, rows are orthonormal right singular vectors.
    pub loadings: DMatrix<f64>,
    /// Non-increasing.
    pub singular_values: Vec<f64>,
    pub weighting: TermWeighting,
}

impl LsaModel {
    pub fn k(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "model": "lsa",
            "k": self.k(),
            "v": self.loadings.ncols(),
            "weighting": self.weighting,
            "singular_values": self.singular_values,
            "loadings": self.loadings.transpose().as_slice(),
        }))
        .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            model: String,
            k: usize,
            v: usize,
            weighting: TermWeighting,
            singular_values: Vec<f64>,
            loadings: Vec<f64>,
        }
        let f: File = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("model file: {e}")))?;
        if f.model != "lsa" || f.singular_values.len() != f.k || f.loadings.len() != f.k * f.v {
            return Err(Error::InvalidInput("not a consistent lsa model file".into()));
        }
        Ok(LsaModel {
            loadings: DMatrix::from_row_slice(f.k, f.v, &f.loadings),
            singular_values: f.singular_values,
            weighting: f.weighting,
        })
    }
}

/// Dense D × V matrix of (optionally weighted) counts.
pub fn document_term_matrix(corpus: &[BowDocument], v: usize, weighting: TermWeighting) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(corpus.len(), v);
    for (d, doc) in corpus.iter().enumerate() {
        for &(w, c) in &doc.entries {
            x[(d, w)] = f64::from(c);
        }
    }
    if weighting == TermWeighting::TfIdf {
        let dn = corpus.len() as f64;
        for w in 0..v {
            let df = x.column(w).iter().filter(|&&c| c > 0.0).count();
            let idf = if df == 0 { 0.0 } else { (dn / df as f64).ln() };
            x.column_mut(w).scale_mut(idf);
        }
    }
    x
}

pub fn fit_lsa(corpus: &[BowDocument], vocab: &Vocabulary, k: usize) -> Result<LsaModel> {
    fit_lsa_weighted(corpus, vocab.len(), k, TermWeighting::Counts)
}

pub fn fit_lsa_weighted(corpus: &[BowDocument], v: usize, k: usize, weighting: TermWeighting) -> Result<LsaModel> {
    if corpus.iter().any(|d| d.entries.last().is_some_and(|&(w, _)| w >= v)) {
        return Err(Error::InvalidInput("term id outside vocabulary".into()));
    }
    lsa_from_matrix(document_term_matrix(corpus, v, weighting), k, weighting)
}

/// Rank-k decomposition of an arbitrary dense matrix (rows = documents).
pub fn lsa_from_matrix(x: DMatrix<f64>, k: usize, weighting: TermWeighting) -> Result<LsaModel> {
    let (d, v) = x.shape();
    if k == 0 || k > d.min(v) {
        return Err(Error::InvalidInput(format!("k = {k} must be within 1..={}", d.min(v))));
    }
    let svd = x.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    order.truncate(k);

    let mut loadings = DMatrix::zeros(k, v);
    let mut singular_values = Vec::with_capacity(k);
    for (r, &j) in order.iter().enumerate() {
        let mut row = v_t.row(j).clone_owned();
        // sign convention: largest-magnitude entry positive (first one on ties)
        let (mut best, mut best_abs) = (0, -1.0);
        for (w, x) in row.iter().enumerate() {
            if x.abs() > best_abs {
                best = w;
                best_abs = x.abs();
            }
        }
        if row[best] < 0.0 {
            row.neg_mut();
        }
        loadings.set_row(r, &row);
        singular_values.push(svd.singular_values[j].max(0.0));
    }
    Ok(LsaModel {
        loadings,
        singular_values,
        weighting,
    })
}

/// Squared Frobenius error of projecting `x` onto the model's loading subspace.
pub fn reconstruction_error(x: &DMatrix<f64>, model: &LsaModel) -> f64 {
    let proj = x * model.loadings.transpose() * &model.loadings;
    (x - proj).norm_squared()
}

/// Top `n` terms per component by absolute loading, ties lexicographic.
pub fn lsa_top_terms(model: &LsaModel, vocab: &Vocabulary, n: usize) -> Result<TopicWords> {
    top_terms_by(&model.loadings, vocab, n, f64::abs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::build_vocabulary;
    use proptest::prelude::*;

    #[test]
    fn identity_matrix() {
        let m = lsa_from_matrix(DMatrix::identity(2, 2), 2, TermWeighting::Counts).unwrap();
        assert!((m.singular_values[0] - 1.0).abs() < 1e-12);
        assert!((m.singular_values[1] - 1.0).abs() < 1e-12);
        for row in m.loadings.row_iter() {
            let nonzero = row.iter().filter(|x| x.abs() > 1e-12).count();
            assert_eq!(nonzero, 1);
            assert!(row.iter().any(|&x| (x - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn rank_one_matrix() {
        // Independent route: X^T X = [[5,10],[10,20]] has eigenvalues 25 and 0 with
        // top eigenvector (1,2)/sqrt(5), so the singular value is 5.
        let xtx: [[f64; 2]; 2] = [[5.0, 10.0], [10.0, 20.0]];
        let tr = xtx[0][0] + xtx[1][1];
        let det = xtx[0][0] * xtx[1][1] - xtx[0][1] * xtx[1][0];
        let top_eig = 0.5 * (tr + (tr * tr - 4.0 * det).sqrt());
        assert_eq!(top_eig, 25.0);
        let m = lsa_from_matrix(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]),
            1,
            TermWeighting::Counts,
        )
        .unwrap();
        assert!((m.singular_values[0] - top_eig.sqrt()).abs() < 1e-12);
        let s5 = 5f64.sqrt();
        assert!((m.loadings[(0, 0)] - 1.0 / s5).abs() < 1e-12);
        assert!((m.loadings[(0, 1)] - 2.0 / s5).abs() < 1e-12);
    }

    #[test]
    fn k_out_of_range() {
        assert!(lsa_from_matrix(DMatrix::identity(2, 3), 3, TermWeighting::Counts).is_err());
        assert!(lsa_from_matrix(DMatrix::identity(2, 3), 0, TermWeighting::Counts).is_err());
    }

    #[test]
    fn top_terms_by_magnitude() {
        let vocab = build_vocabulary(&[vec!["t0", "t1", "t2"]], 1).unwrap();
        let m = LsaModel {
            loadings: DMatrix::from_row_slice(2, 3, &[0.9, -0.4, 0.1, 0.5, 0.5, 0.5]),
            singular_values: vec![2.0, 1.0],
            weighting: TermWeighting::Counts,
        };
        let top = lsa_top_terms(&m, &vocab, 2).unwrap();
        assert_eq!(top[0][0].0, "t0");
        assert_eq!(top[0][1].0, "t1");
        let names: Vec<_> = top[1].iter().map(|(t, _)| t.as_str()).collect();
        assert_eq!(names, ["t0", "t1"]);
    }

    fn small_matrix() -> impl Strategy<Value = DMatrix<f64>> {
        (2usize..6, 2usize..7).prop_flat_map(|(r, c)| {
            prop::collection::vec(0u8..6, r * c)
                .prop_map(move |v| DMatrix::from_row_slice(r, c, &v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>()))
        })
    }

    proptest! {
        #[test]
        fn eckart_young(x in small_matrix()) {
            let full = x.nrows().min(x.ncols());
            let all = lsa_from_matrix(x.clone(), full, TermWeighting::Counts).unwrap();
            let mut prev = f64::INFINITY;
            for k in 1..=full {
                let m = lsa_from_matrix(x.clone(), k, TermWeighting::Counts).unwrap();
                let orth = &m.loadings * m.loadings.transpose() - DMatrix::identity(k, k);
                prop_assert!(orth.amax() < 1e-8);
                prop_assert!(m.singular_values.windows(2).all(|w| w[0] >= w[1]));
                let err = reconstruction_error(&x, &m);
                let discarded: f64 = all.singular_values[k..].iter().map(|s| s * s).sum();
                prop_assert!((err - discarded).abs() < 1e-8 * (1.0 + x.norm_squared()));
                prop_assert!(err <= prev + 1e-9);
                prev = err;
            }
            prop_assert_eq!(LsaModel::from_json(&all.to_json()).unwrap(), all);
        }
    }
}
