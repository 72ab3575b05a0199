//! Stage implementations. Each reads its upstream artifacts from the run
//! directory and returns the files it produces; the caller records them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use skillscope::baselines::{
    fit_lda_with_states, fit_lsa_weighted, lda_posteriors, lsa_top_terms, LdaConfig, LdaModel, LsaModel, TermWeighting,
};
use skillscope::corpus::{to_jsonl, CourseType, FilterCriteria};
use skillscope::ctm::{beta_top_words, document_posteriors, fit_ctm, top_words_tsv, CtmModel, DocumentTopicMatrix};
use skillscope::model_selection::{detect_elbow, scan_k, ScanOptions};
use skillscope::preprocess::{parse_bow, preprocess, term_frequency_table, write_bow, BowDocument};
use skillscope::profiles::{
    institution_profiles, parse_profiles_csv, profiles_csv, profiles_svg, rankings_tsv, read_label_map, DISCLAIMER,
};
use skillscope::{
    corpus_stats, filter_documents, read_documents, Aggregation, DocumentSet, InputFormat, ModelConfig,
    PreprocessConfig, Vocabulary,
};

use crate::args::{GroupBy, ModelKind};
use crate::error::{CliError, CliResult};
use crate::manifest::{sha256_hex, RunManifest, Stage};

pub const DOCUMENTS: &str = "ingest/documents.jsonl";
pub const CORPUS_STATS: &str = "ingest/corpus_stats.tsv";
pub const INGEST_SUMMARY: &str = "ingest/summary.json";
pub const VOCAB: &str = "preprocess/vocab.tsv";
pub const BOW: &str = "preprocess/corpus.bow";
pub const TERM_FREQ: &str = "preprocess/term_frequency.tsv";
pub const EXCLUDED: &str = "preprocess/excluded.tsv";
pub const RULES: &str = "preprocess/rules.json";
pub const PREPROCESS_SUMMARY: &str = "preprocess/summary.json";
pub const MODEL: &str = "fit/model.json";
pub const POSTERIORS: &str = "fit/posteriors.csv";
pub const FIT_SUMMARY: &str = "fit/summary.json";
pub const SCAN_CSV: &str = "scan/scan.csv";
pub const SCAN_TOPICS: &str = "scan/scan_topics.csv";
pub const ELBOW: &str = "scan/elbow.json";
pub const TOP_WORDS: &str = "topics/top_words.tsv";
pub const PROFILES_CSV: &str = "profile/profiles.csv";
pub const RANKINGS: &str = "profile/rankings.tsv";
pub const PROFILES_SVG: &str = "profile/profiles.svg";

/// Optional settings shared by all stages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    /// Replaces the shipped rule set entirely when present.
    pub preprocess: Option<PreprocessConfig>,
    pub model: ModelConfig,
    pub scan: ScanOptions,
    /// Term weighting for `fit --model lsa`.
    pub lsa_weighting: TermWeighting,
}

impl PipelineConfig {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// What a stage produced.
pub struct StageOutput {
    pub params: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub files: Vec<(&'static str, Vec<u8>)>,
    pub summary: String,
}

pub struct Context<'a> {
    pub run_dir: &'a Path,
    pub seed: u64,
    pub config: &'a PipelineConfig,
}

impl Context<'_> {
    fn read(&self, rel: &str, inputs: &mut BTreeMap<String, String>) -> CliResult<Vec<u8>> {
        let path = self.run_dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        inputs.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn read_text(&self, rel: &str, inputs: &mut BTreeMap<String, String>) -> CliResult<String> {
        String::from_utf8(self.read(rel, inputs)?).map_err(|_| CliError::Data(format!("{rel}: not UTF-8")))
    }

    fn documents(&self, inputs: &mut BTreeMap<String, String>) -> CliResult<DocumentSet> {
        self.read(DOCUMENTS, inputs)?;
        Ok(read_documents(self.run_dir.join(DOCUMENTS), InputFormat::Jsonl)?)
    }

    fn bow(&self, inputs: &mut BTreeMap<String, String>) -> CliResult<(Vocabulary, Vec<BowDocument>)> {
        let summary: PreprocessSummary = serde_json::from_str(&self.read_text(PREPROCESS_SUMMARY, inputs)?)
            .map_err(|e| CliError::Data(format!("{PREPROCESS_SUMMARY}: {e}")))?;
        let vocab = Vocabulary::from_tsv(&self.read_text(VOCAB, inputs)?, summary.total_tokens)?;
        let docs = parse_bow(&self.read_text(BOW, inputs)?)?;
        Ok((vocab, docs))
    }
}

fn json_bytes(value: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn external_input(path: &Path, inputs: &mut BTreeMap<String, String>) -> CliResult<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let key = fs::canonicalize(path).unwrap_or_else(|_| PathBuf::from(path));
    inputs.insert(key.display().to_string(), sha256_hex(&bytes));
    Ok(bytes)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestSummary {
    pub documents: usize,
    pub programs: usize,
    pub institutions: usize,
    pub warnings: Vec<String>,
}

pub fn ingest(
    input: &Path,
    format: Option<&str>,
    institutions: &[String],
    course_types: &[String],
) -> CliResult<StageOutput> {
    let format = match format {
        Some(f) => f.parse::<InputFormat>().map_err(|e| CliError::Usage(e.to_string()))?,
        None => match input
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("csv") => InputFormat::Csv,
            Some("jsonl" | "ndjson") => InputFormat::Jsonl,
            _ => {
                return Err(CliError::Usage(format!(
                    "cannot tell the format of {}; pass --format csv|jsonl",
                    input.display()
                )))
            }
        },
    };
    let mut inputs = BTreeMap::new();
    external_input(input, &mut inputs)?;
    let mut set = read_documents(input, format)?;
    let types = course_types
        .iter()
        .map(|t| t.parse::<CourseType>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    if !institutions.is_empty() || !types.is_empty() {
        let criteria = FilterCriteria {
            institutions: (!institutions.is_empty()).then(|| institutions.to_vec()),
            course_types: (!types.is_empty()).then_some(types.clone()),
        };
        let warnings = set.warnings.clone();
        set = filter_documents(&set, &criteria)?;
        set.warnings = warnings;
    }
    let stats = corpus_stats(&set)?;
    let summary = IngestSummary {
        documents: stats.total_documents,
        programs: stats.distinct_programs,
        institutions: stats.distinct_institutions,
        warnings: set
            .warnings
            .iter()
            .map(|w| format!("{}: {}", w.subject, w.message))
            .collect(),
    };
    let text = format!(
        "ingested {} documents ({} programs, {} institutions, {} warnings)\n{}",
        summary.documents,
        summary.programs,
        summary.institutions,
        summary.warnings.len(),
        stats.to_tsv()
    );
    Ok(StageOutput {
        params: json!({
            "format": format.as_str(),
            "institutions": institutions,
            "course_types": types.iter().map(|t| t.as_str()).collect::<Vec<_>>(),
        }),
        inputs,
        files: vec![
            (DOCUMENTS, to_jsonl(&set).into_bytes()),
            (CORPUS_STATS, stats.to_tsv().into_bytes()),
            (INGEST_SUMMARY, json_bytes(&summary)),
        ],
        summary: text,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub documents: usize,
    pub excluded: usize,
    pub vocabulary_size: usize,
    pub total_tokens: u64,
    pub vocabulary_hash: String,
    pub rules_digest: String,
}

pub fn preprocess_stage(ctx: &Context, rules: Option<&Path>) -> CliResult<StageOutput> {
    let mut inputs = BTreeMap::new();
    let config = match rules {
        Some(path) => {
            external_input(path, &mut inputs)?;
            PreprocessConfig::from_path(path)?
        }
        None => ctx.config.preprocess.clone().unwrap_or_default(),
    };
    let set = ctx.documents(&mut inputs)?;
    let (vocab, corpus) = preprocess(&set, &config)?;
    let mut tf = String::from("term\tcount\n");
    for (term, count) in term_frequency_table(&corpus.docs, &vocab) {
        let _ = writeln!(tf, "{term}\t{count}");
    }
    let mut excluded = String::from("doc_id\treason\n");
    for w in &corpus.excluded {
        let _ = writeln!(excluded, "{}\t{}", w.subject, w.message);
    }
    let summary = PreprocessSummary {
        documents: corpus.docs.len(),
        excluded: corpus.excluded.len(),
        vocabulary_size: vocab.len(),
        total_tokens: vocab.total_count(),
        vocabulary_hash: vocab.digest(),
        rules_digest: config.digest(),
    };
    let text = format!(
        "{} documents, {} excluded, vocabulary of {} terms ({} tokens)\n",
        summary.documents, summary.excluded, summary.vocabulary_size, summary.total_tokens
    );
    Ok(StageOutput {
        params: json!({ "rules_digest": config.digest() }),
        inputs,
        files: vec![
            (VOCAB, vocab.to_tsv().into_bytes()),
            (BOW, write_bow(&corpus.docs)?.into_bytes()),
            (TERM_FREQ, tf.into_bytes()),
            (EXCLUDED, excluded.into_bytes()),
            (RULES, json_bytes(&config)),
            (PREPROCESS_SUMMARY, json_bytes(&summary)),
        ],
        summary: text,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: String,
    pub k: usize,
    pub seed: u64,
    pub final_elbo: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

pub fn fit_stage(ctx: &Context, kind: ModelKind, k: Option<usize>) -> CliResult<StageOutput> {
    let mut inputs = BTreeMap::new();
    let (vocab, docs) = ctx.bow(&mut inputs)?;
    let mut cfg = ctx.config.model.clone();
    cfg.seed = ctx.seed;
    if let Some(k) = k {
        cfg.k = k;
    }
    cfg.validate()?;

    let (model_json, posteriors, summary) = match kind {
        ModelKind::Ctm => {
            let fit = fit_ctm(&docs, &vocab, &cfg)?;
            let post = document_posteriors(&fit.model, &docs, &cfg)?;
            let d = &fit.model.diagnostics;
            let summary = FitSummary {
                model: "ctm".into(),
                k: cfg.k,
                seed: cfg.seed,
                final_elbo: Some(d.final_elbo),
                iterations: Some(d.iterations),
                converged: Some(d.converged),
            };
            (fit.model.to_json(), Some(post), summary)
        }
        ModelKind::Lda => {
            let fit = fit_lda_with_states(&docs, &vocab, &LdaConfig::from_model_config(&cfg))?;
            let post = lda_posteriors(&docs, &fit.states);
            let d = &fit.model.diagnostics;
            let summary = FitSummary {
                model: "lda".into(),
                k: cfg.k,
                seed: cfg.seed,
                final_elbo: Some(d.final_elbo),
                iterations: Some(d.iterations),
                converged: Some(d.converged),
            };
            (fit.model.to_json(), Some(post), summary)
        }
        ModelKind::Lsa => {
            let model = fit_lsa_weighted(&docs, vocab.len(), cfg.k, ctx.config.lsa_weighting)?;
            let summary = FitSummary {
                model: "lsa".into(),
                k: cfg.k,
                seed: cfg.seed,
                final_elbo: None,
                iterations: None,
                converged: None,
            };
            (model.to_json(), None, summary)
        }
    };
    let mut text = format!("fitted {} with K = {}", summary.model, summary.k);
    if let (Some(e), Some(it)) = (summary.final_elbo, summary.iterations) {
        let _ = write!(text, ": final ELBO {e:.4} after {it} EM iterations");
        if summary.converged == Some(false) {
            text.push_str(" (iteration limit reached)");
        }
    }
    text.push('\n');
    let mut files = vec![(MODEL, format!("{model_json}\n").into_bytes())];
    if let Some(p) = posteriors {
        files.push((POSTERIORS, p.to_csv().into_bytes()));
    }
    files.push((FIT_SUMMARY, json_bytes(&summary)));
    Ok(StageOutput {
        params: json!({ "model": kind.name(), "config": cfg, "lsa_weighting": ctx.config.lsa_weighting }),
        inputs,
        files,
        summary: text,
    })
}

pub fn scan_stage(
    ctx: &Context,
    kmin: Option<usize>,
    kmax: Option<usize>,
    top: Option<usize>,
    restarts: Option<usize>,
) -> CliResult<StageOutput> {
    let mut inputs = BTreeMap::new();
    let (vocab, docs) = ctx.bow(&mut inputs)?;
    let mut options = ctx.config.scan.clone();
    options.k_min = kmin.unwrap_or(options.k_min);
    options.k_max = kmax.unwrap_or(options.k_max);
    options.top_n = top.unwrap_or(options.top_n);
    options.restarts = restarts.unwrap_or(options.restarts);
    let mut base = ctx.config.model.clone();
    base.seed = ctx.seed;
    let params = json!({ "scan": options, "model": base });
    let hash = sha256_hex(params.to_string().as_bytes());
    let curve = scan_k(&docs, &vocab, &options, &base, &hash)?;

    let elbow = detect_elbow(&curve).ok();
    let failed: Vec<usize> = curve.failures().map(|p| p.k).collect();
    let mut text = format!(
        "scanned K = {}..={}: {} finite entries",
        options.k_min,
        options.k_max,
        curve.points.len() - failed.len()
    );
    if !failed.is_empty() {
        let _ = write!(text, ", failed at K = {failed:?}");
    }
    match elbow {
        Some(e) => {
            let _ = write!(text, "\nk_argmax = {}\nk_elbow = {}", e.k_argmax, e.k_elbow);
        }
        None => text.push_str("\nfewer than 4 scored points: no elbow reported"),
    }
    text.push('\n');
    Ok(StageOutput {
        params,
        inputs,
        files: vec![
            (SCAN_CSV, curve.to_csv().into_bytes()),
            (SCAN_TOPICS, curve.topics_csv().into_bytes()),
            (
                ELBOW,
                json_bytes(&json!({
                    "k_argmax": elbow.map(|e| e.k_argmax),
                    "k_elbow": elbow.map(|e| e.k_elbow),
                    "failed_k": failed,
                })),
            ),
        ],
        summary: text,
    })
}

enum Fitted {
    Ctm(CtmModel),
    Lda(LdaModel),
    Lsa(LsaModel),
}

fn load_model(text: &str) -> CliResult<Fitted> {
    #[derive(Deserialize)]
    struct Tag {
        model: String,
    }
    let tag: Tag = serde_json::from_str(text).map_err(|e| CliError::Data(format!("{MODEL}: {e}")))?;
    Ok(match tag.model.as_str() {
        "ctm" => Fitted::Ctm(CtmModel::from_json(text)?),
        "lda" => Fitted::Lda(LdaModel::from_json(text)?),
        "lsa" => Fitted::Lsa(LsaModel::from_json(text)?),
        other => return Err(CliError::Data(format!("{MODEL}: unknown model kind {other:?}"))),
    })
}

pub fn topics_stage(ctx: &Context, top: usize) -> CliResult<StageOutput> {
    let mut inputs = BTreeMap::new();
    let (vocab, _) = ctx.bow(&mut inputs)?;
    let model = load_model(&ctx.read_text(MODEL, &mut inputs)?)?;
    if top == 0 || top > vocab.len() {
        return Err(CliError::Usage(format!("--top must be within 1..={}", vocab.len())));
    }
    let words = match &model {
        Fitted::Ctm(m) => beta_top_words(&m.beta, &vocab, top)?,
        Fitted::Lda(m) => beta_top_words(&m.beta, &vocab, top)?,
        Fitted::Lsa(m) => lsa_top_terms(m, &vocab, top)?,
    };
    let mut text = String::new();
    for (t, list) in words.iter().enumerate() {
        let terms: Vec<&str> = list.iter().map(|(w, _)| w.as_str()).collect();
        let _ = writeln!(text, "topic {t}: {}", terms.join(", "));
    }
    Ok(StageOutput {
        params: json!({ "top": top }),
        inputs,
        files: vec![(TOP_WORDS, top_words_tsv(&words).into_bytes())],
        summary: text,
    })
}

pub fn profile_stage(ctx: &Context, _group_by: GroupBy, labels: Option<&Path>, flat: bool) -> CliResult<StageOutput> {
    let mut inputs = BTreeMap::new();
    let set = ctx.documents(&mut inputs)?;
    let model = load_model(&ctx.read_text(MODEL, &mut inputs)?)?;
    if matches!(model, Fitted::Lsa(_)) {
        return Err(CliError::Usage(
            "profiles need document posteriors; fit with --model ctm or --model lda".into(),
        ));
    }
    let posteriors = DocumentTopicMatrix::from_csv(&ctx.read_text(POSTERIORS, &mut inputs)?)?;
    let label_map = match labels {
        Some(path) => {
            external_input(path, &mut inputs)?;
            Some(read_label_map(path)?)
        }
        None => None,
    };
    let aggregation = if flat { Aggregation::Flat } else { Aggregation::TwoStage };
    let profiles = institution_profiles(&posteriors, &set, aggregation)?;
    if profiles.is_empty() {
        return Err(CliError::Data("no institution has any posterior row".into()));
    }
    let (rankings, warnings) = rankings_tsv(&profiles, label_map.as_ref());
    for w in &warnings {
        log::warn!("{}: {}", w.subject, w.message);
    }
    let mut text = format!("{} institution profiles ({DISCLAIMER})\n", profiles.len());
    for p in &profiles {
        let order: Vec<String> = p.ranking.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(text, "{}: topics by share {}", p.institution, order.join(" > "));
    }
    Ok(StageOutput {
        params: json!({
            "group_by": "institution",
            "aggregation": aggregation,
            "labels": label_map,
        }),
        inputs,
        files: vec![
            (PROFILES_CSV, profiles_csv(&profiles).into_bytes()),
            (RANKINGS, rankings.into_bytes()),
            (PROFILES_SVG, profiles_svg(&profiles, label_map.as_ref()).into_bytes()),
        ],
        summary: text,
    })
}

/// Human-readable summary assembled from the artifacts on disk.
pub fn report(run_dir: &Path, manifest: &RunManifest) -> CliResult<String> {
    let read = |rel: &str| fs::read_to_string(run_dir.join(rel)).ok();
    let mut out = String::new();
    let _ = writeln!(out, "run directory: {}", run_dir.display());
    let _ = writeln!(out, "tool version: {}   seed: {}", manifest.tool_version, manifest.seed);
    out.push_str("\nstages:\n");
    for stage in Stage::ALL {
        let state = match manifest.record(stage) {
            None => "not run".to_string(),
            Some(r) => {
                let fresh = if manifest.check_current(run_dir, stage).is_ok() {
                    "current"
                } else {
                    "STALE"
                };
                format!("completed at {} ms, {fresh}", r.completed_unix_ms)
            }
        };
        let _ = writeln!(out, "  {:<11}{state}", stage.name());
    }

    if let Some(summary) = read(INGEST_SUMMARY).and_then(|s| serde_json::from_str::<IngestSummary>(&s).ok()) {
        let _ = writeln!(
            out,
            "\ncorpus: {} documents, {} programs, {} institutions",
            summary.documents, summary.programs, summary.institutions
        );
    }
    if let Some(stats) = read(CORPUS_STATS) {
        out.push_str(&stats);
    }
    if let Some(fit) = read(FIT_SUMMARY).and_then(|s| serde_json::from_str::<FitSummary>(&s).ok()) {
        let _ = write!(out, "\nmodel: {} with K = {} (seed {})", fit.model, fit.k, fit.seed);
        if let Some(e) = fit.final_elbo {
            let _ = write!(out, ", final ELBO {e}");
        }
        out.push('\n');
    }
    if let Some(elbow) = read(ELBOW).and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok()) {
        let _ = writeln!(
            out,
            "scan: k_argmax = {}, k_elbow = {}",
            elbow["k_argmax"], elbow["k_elbow"]
        );
    }
    if let Some(tsv) = read(TOP_WORDS) {
        out.push_str("\ntop words:\n");
        let mut topics: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for line in tsv.lines().skip(1) {
            let parts: Vec<&str> = line.split('\t').collect();
            if let [t, _, term, _] = parts[..] {
                if let Ok(t) = t.parse() {
                    topics.entry(t).or_default().push(term.to_string());
                }
            }
        }
        for (t, terms) in topics {
            let _ = writeln!(out, "  topic {t}: {}", terms.join(", "));
        }
    }
    if let Some(csv) = read(PROFILES_CSV) {
        let table = parse_profiles_csv(&csv)?;
        let _ = writeln!(out, "\nprofiles ({DISCLAIMER}):");
        let k = table.first().map_or(0, |r| r.1.len());
        let width = table.iter().map(|r| r.0.len()).max().unwrap_or(0).max(11);
        let _ = write!(out, "  {:<width$}", "institution");
        for t in 0..k {
            let _ = write!(out, " {:>9}", format!("t{t}"));
        }
        out.push('\n');
        for (inst, shares) in &table {
            let _ = write!(out, "  {inst:<width$}");
            for s in shares {
                let _ = write!(out, " {s:>9.6}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}
