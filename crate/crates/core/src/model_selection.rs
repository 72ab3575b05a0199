//! Choosing the topic count: UMass coherence, K scans and elbow detection.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctm::{fit_ctm, topic_top_words, ModelConfig};
use crate::error::{Error, Result};
use crate::preprocess::{BowDocument, Vocabulary};

/// Per-topic UMass scores and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Coherence {
    pub per_topic: Vec<f64>,
    pub mean: f64,
}

/// UMass coherence of each topic's ranked term ids.
///
/// For a list `w_0, w_1, ...` the score is `Σ_{i>j} ln((D(w_i, w_j) + 1) / D(w_j))`,
/// where `D` counts documents containing all the given terms.
pub fn umass_coherence(topics: &[Vec<usize>], corpus: &[BowDocument]) -> Result<Coherence> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("coherence needs a non-empty corpus".into()));
    }
    if topics.is_empty() {
        return Err(Error::InvalidInput("no topics to score".into()));
    }
    let mut per_topic = Vec::with_capacity(topics.len());
    for words in topics {
        if words.len() < 2 {
            return Err(Error::InvalidInput(
                "coherence needs at least two words per topic".into(),
            ));
        }
        // documents containing each word, as sorted index lists
        let postings: Vec<Vec<u32>> = words
            .iter()
            .map(|&w| {
                corpus
                    .iter()
                    .enumerate()
                    .filter(|(_, d)| d.contains(w))
                    .map(|(i, _)| i as u32)
                    .collect()
            })
            .collect();
        let mut score = 0.0;
        for i in 1..words.len() {
            for j in 0..i {
                let dj = postings[j].len();
                if dj == 0 {
                    return Err(Error::InvalidInput(format!(
                        "term id {} occurs in no document",
                        words[j]
                    )));
                }
                let joint = intersection_size(&postings[i], &postings[j]);
                score += ((joint as f64 + 1.0) / dj as f64).ln();
            }
        }
        per_topic.push(score);
    }
    let mean = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
    Ok(Coherence { per_topic, mean })
}

fn intersection_size(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Settings of a K scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanOptions {
    pub k_min: usize,
    pub k_max: usize,
    /// Words per topic entering the coherence score.
    pub top_n: usize,
    /// Fits per K; the reported mean is averaged over them.
    pub restarts: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            k_min: 2,
            k_max: 30,
            top_n: 10,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointStatus {
    Ok,
    Failed(String),
}

/// One K of a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub k: usize,
    /// `None` when the fit failed.
    pub mean: Option<f64>,
    /// Scores of the first restart's topics.
    pub per_topic: Vec<f64>,
    pub seed: u64,
    pub status: PointStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceCurve {
    pub k_min: usize,
    pub k_max: usize,
    pub config_hash: String,
    pub points: Vec<CurvePoint>,
}

/// Seed of the `restart`-th fit at `k`.
pub fn scan_seed(base: u64, k: usize, restart: usize) -> u64 {
    base.wrapping_add(k as u64)
        .wrapping_add((restart as u64).wrapping_mul(1_000_003))
}

fn score_fit(corpus: &[BowDocument], vocab: &Vocabulary, config: &ModelConfig, top_n: usize) -> Result<Coherence> {
    let fit = fit_ctm(corpus, vocab, config)?;
    let words = topic_top_words(&fit.model, vocab, top_n)?;
    let ids: Vec<Vec<usize>> = words
        .iter()
        .map(|list| {
            list.iter()
                .map(|(t, _)| vocab.id(t).expect("term from vocabulary"))
                .collect()
        })
        .collect();
    umass_coherence(&ids, corpus)
}

/// Fits one model per K in `k_min..=k_max` and scores it. Failed fits are kept
/// as flagged entries and the scan continues.
pub fn scan_k(
    corpus: &[BowDocument],
    vocab: &Vocabulary,
    options: &ScanOptions,
    base: &ModelConfig,
    config_hash: &str,
) -> Result<CoherenceCurve> {
    let v = vocab.len();
    if !(2 <= options.k_min && options.k_min < options.k_max && options.k_max <= v) {
        return Err(Error::InvalidConfig(format!(
            "need 2 <= k_min < k_max <= V = {v}, got {}..{}",
            options.k_min, options.k_max
        )));
    }
    if options.top_n < 2 || options.restarts == 0 {
        return Err(Error::InvalidConfig("top_n must be >= 2 and restarts >= 1".into()));
    }
    let top_n = options.top_n.min(v);
    let points = (options.k_min..=options.k_max)
        .into_par_iter()
        .map(|k| {
            let seed = scan_seed(base.seed, k, 0);
            let mut means = Vec::with_capacity(options.restarts);
            let mut per_topic = Vec::new();
            for r in 0..options.restarts {
                let mut cfg = base.clone();
                cfg.k = k;
                cfg.seed = scan_seed(base.seed, k, r);
                match score_fit(corpus, vocab, &cfg, top_n) {
                    Ok(c) => {
                        if r == 0 {
                            per_topic = c.per_topic;
                        }
                        means.push(c.mean);
                    }
                    Err(e) => {
                        log::warn!("scan: K={k} restart {r} failed: {e}");
                        return CurvePoint {
                            k,
                            mean: None,
                            per_topic: Vec::new(),
                            seed,
                            status: PointStatus::Failed(e.to_string()),
                        };
                    }
                }
            }
            log::info!("scan: K={k} done");
            CurvePoint {
                k,
                mean: Some(means.iter().sum::<f64>() / means.len() as f64),
                per_topic,
                seed,
                status: PointStatus::Ok,
            }
        })
        .collect();
    Ok(CoherenceCurve {
        k_min: options.k_min,
        k_max: options.k_max,
        config_hash: config_hash.to_string(),
        points,
    })
}

impl CoherenceCurve {
    pub fn failures(&self) -> impl Iterator<Item = &CurvePoint> {
        self.points.iter().filter(|p| p.status != PointStatus::Ok)
    }

    /// `k,mean_coherence,seed,status` preceded by `#` metadata lines. Failed
    /// entries have an empty score and a `failed: <reason>` status.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# k_min={}\n# k_max={}\n# config={}\nk,mean_coherence,seed,status\n",
            self.k_min, self.k_max, self.config_hash
        );
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for p in &self.points {
            let mean = p.mean.map(|m| format!("{m:?}")).unwrap_or_default();
            let status = match &p.status {
                PointStatus::Ok => "ok".to_string(),
                PointStatus::Failed(msg) => format!("failed: {msg}"),
            };
            w.write_record([p.k.to_string(), mean, p.seed.to_string(), status])
                .expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8"));
        out
    }

    /// Long-form per-topic scores: `k,topic,score`.
    pub fn topics_csv(&self) -> String {
        let mut out = String::from("k,topic,score\n");
        for p in &self.points {
            for (t, s) in p.per_topic.iter().enumerate() {
                let _ = writeln!(out, "{},{t},{s:?}", p.k);
            }
        }
        out
    }

    /// Inverse of [`to_csv`](Self::to_csv) plus [`topics_csv`](Self::topics_csv).
    pub fn from_csv(curve: &str, topics: &str) -> Result<Self> {
        let bad = |what: String| Error::InvalidInput(format!("coherence curve: {what}"));
        let mut meta = std::collections::BTreeMap::new();
        for line in curve.lines().take_while(|l| l.starts_with('#')) {
            if let Some((key, value)) = line[1..].trim().split_once('=') {
                meta.insert(key.to_string(), value.to_string());
            }
        }
        let get = |key: &str| meta.get(key).cloned().ok_or_else(|| bad(format!("missing {key}")));
        let parse_usize = |s: String| s.parse::<usize>().map_err(|e| bad(e.to_string()));
        let (k_min, k_max) = (parse_usize(get("k_min")?)?, parse_usize(get("k_max")?)?);
        let config_hash = get("config")?;

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(curve.as_bytes());
        let mut points = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| bad(e.to_string()))?;
            if row.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", row.len())));
            }
            let k = parse_usize(row[0].to_string())?;
            let mean = match &row[1] {
                "" => None,
                m => Some(m.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            };
            let seed = row[2].parse::<u64>().map_err(|e| bad(e.to_string()))?;
            let status = match &row[3] {
                "ok" => PointStatus::Ok,
                s => PointStatus::Failed(s.strip_prefix("failed: ").unwrap_or(s).to_string()),
            };
            points.push(CurvePoint {
                k,
                mean,
                per_topic: Vec::new(),
                seed,
                status,
            });
        }
        for (n, line) in topics.lines().enumerate().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            let [k, t, s] = parts[..] else {
                return Err(bad(format!("topic score line {}", n + 1)));
            };
            let k = parse_usize(k.to_string())?;
            let t = parse_usize(t.to_string())?;
            let s = s.parse::<f64>().map_err(|e| bad(e.to_string()))?;
            let point = points
                .iter_mut()
                .find(|p| p.k == k)
                .ok_or_else(|| bad(format!("topic score for unknown K = {k}")))?;
            if point.per_topic.len() != t {
                return Err(bad(format!("topic scores for K = {k} out of order")));
            }
            point.per_topic.push(s);
        }
        Ok(CoherenceCurve {
            k_min,
            k_max,
            config_hash,
            points,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Elbow {
    pub k_elbow: usize,
    pub k_argmax: usize,
}

/// Locates the best-scoring K and the elbow of a coherence curve.
///
/// Scores are smoothed by a centred 3-point moving average (the two end points
/// are kept as they are). The elbow is the interior K, no larger than the
/// argmax, whose smoothed second difference `s(K-1) - 2 s(K) + s(K+1)` is
/// largest in magnitude; ties go to the smaller K. A curve without such a point
/// (or with all second differences numerically zero) gets the second K.
/// Failed entries are skipped; neighbours are the adjacent successful K values.
pub fn detect_elbow(curve: &CoherenceCurve) -> Result<Elbow> {
    let pts: Vec<(usize, f64)> = curve.points.iter().filter_map(|p| p.mean.map(|m| (p.k, m))).collect();
    if pts.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "elbow detection needs at least 4 scored points, found {}",
            pts.len()
        )));
    }
    if pts.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::InvalidInput("curve K values must be strictly increasing".into()));
    }
    if pts.iter().any(|(_, s)| !s.is_finite()) {
        return Err(Error::InvalidInput("curve contains non-finite scores".into()));
    }

    let mut argmax = 0;
    for (i, &(_, s)) in pts.iter().enumerate() {
        if s > pts[argmax].1 {
            argmax = i;
        }
    }

    let n = pts.len();
    let raw: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let mut smooth = raw.clone();
    for i in 1..n - 1 {
        smooth[i] = (raw[i - 1] + raw[i] + raw[i + 1]) / 3.0;
    }
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    let flat = 1e-9 * (hi - lo);

    let mut best: Option<(usize, f64)> = None;
    for i in 1..(n - 1).min(argmax + 1) {
        let d2 = (smooth[i - 1] - 2.0 * smooth[i] + smooth[i + 1]).abs();
        if d2 > flat && best.is_none_or(|(_, b)| d2 > b) {
            best = Some((i, d2));
        }
    }
    Ok(Elbow {
        k_elbow: pts[best.map_or(1, |(i, _)| i)].0,
        k_argmax: pts[argmax].0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(scores: &[(usize, f64)]) -> CoherenceCurve {
        CoherenceCurve {
            k_min: scores[0].0,
            k_max: scores[scores.len() - 1].0,
            config_hash: "h".into(),
            points: scores
                .iter()
                .map(|&(k, s)| CurvePoint {
                    k,
                    mean: Some(s),
                    per_topic: vec![s, s - 1.0],
                    seed: 42 + k as u64,
                    status: PointStatus::Ok,
                })
                .collect(),
        }
    }

    fn doc(terms: &[usize]) -> BowDocument {
        BowDocument::from_counts("d", terms.iter().map(|&t| (t, 1)))
    }

    #[test]
    fn coherence_examples() {
        let all = vec![doc(&[0, 1]); 4];
        let c = umass_coherence(&[vec![0, 1]], &all).unwrap();
        assert_eq!(c.per_topic, [(5.0f64 / 4.0).ln()]);

        let apart = vec![doc(&[0]), doc(&[1]), doc(&[1]), doc(&[0])];
        let c = umass_coherence(&[vec![0, 1]], &apart).unwrap();
        assert_eq!(c.per_topic, [(1.0f64 / 2.0).ln()]);

        // D(w1, w0) + 1 = D(w0)
        let one = vec![doc(&[0, 1]), doc(&[0])];
        assert_eq!(umass_coherence(&[vec![0, 1]], &one).unwrap().per_topic, [0.0]);
    }

    #[test]
    fn coherence_rejects_bad_input() {
        let docs = vec![doc(&[0])];
        assert!(umass_coherence(&[vec![0]], &docs).is_err());
        assert!(umass_coherence(&[vec![0, 1]], &[]).is_err());
        assert!(umass_coherence(&[vec![1, 0]], &docs).is_err());
    }

    #[test]
    fn elbow_fixture() {
        // smoothed: 1, 13/3, 6.5, 22.1/3, 7.6
        // second differences at K=3,4,5: -1.1667, -1.3, -0.6333
        let c = curve(&[(2, 1.0), (3, 5.0), (4, 7.0), (5, 7.5), (6, 7.6)]);
        assert_eq!(
            detect_elbow(&c).unwrap(),
            Elbow {
                k_elbow: 4,
                k_argmax: 6
            }
        );
    }

    #[test]
    fn elbow_degenerate_cases() {
        let linear = curve(&[(2, 1.0), (3, 2.0), (4, 3.0), (5, 4.0), (6, 5.0)]);
        assert_eq!(detect_elbow(&linear).unwrap().k_elbow, 3);
        let peaked = curve(&(2..=20).map(|k| (k, -((k as f64) - 13.0).powi(2))).collect::<Vec<_>>());
        assert_eq!(detect_elbow(&peaked).unwrap().k_argmax, 13);
        assert!(detect_elbow(&curve(&[(2, 1.0), (3, 2.0), (4, 0.0)])).is_err());
        let tied = curve(&[(2, 1.0), (3, 3.0), (4, 3.0), (5, 2.0)]);
        assert_eq!(detect_elbow(&tied).unwrap().k_argmax, 3);
    }

    #[test]
    fn curve_csv_round_trip() {
        let mut c = curve(&[(2, -10.5), (3, -9.25), (4, 0.1 + 0.2)]);
        c.points[1] = CurvePoint {
            k: 3,
            mean: None,
            per_topic: vec![],
            seed: 45,
            status: PointStatus::Failed("non-finite ELBO at EM iteration 4, in, a, list".into()),
        };
        let back = CoherenceCurve::from_csv(&c.to_csv(), &c.topics_csv()).unwrap();
        assert_eq!(back, c);
        assert!(c.to_csv().contains("k,mean_coherence,seed,status\n2,-10.5,44,ok\n"));
        assert_eq!(c.failures().count(), 1);
    }

    #[test]
    fn scan_seeds_are_offset_by_k() {
        assert_eq!(scan_seed(42, 7, 0), 49);
        assert_ne!(scan_seed(42, 7, 1), scan_seed(42, 8, 0));
    }
}
