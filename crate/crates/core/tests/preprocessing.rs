use skillscope::baselines::{fit_lsa, lsa_top_terms};
use skillscope::preprocess::{build_vocabulary, to_bow, PreprocessConfig, Tokenizer};

const GOLDEN: &str = include_str!("fixtures/preprocess_golden.txt");

fn golden_cases() -> Vec<(String, Vec<String>)> {
    let mut cases = Vec::new();
    let mut pending: Option<String> = None;
    for line in GOLDEN.lines() {
        if let Some(text) = line.strip_prefix("> ") {
            assert!(pending.is_none(), "two texts in a row: {text}");
            pending = Some(text.to_string());
        } else if let Some(rest) = line.strip_prefix('=') {
            let text = pending.take().expect("expected tokens follow a text line");
            cases.push((text, rest.split_whitespace().map(String::from).collect()));
        }
    }
    assert!(pending.is_none());
    cases
}

#[test]
fn golden_token_streams() {
    let tokenizer = Tokenizer::new(&PreprocessConfig::default_rules()).unwrap();
    let cases = golden_cases();
    assert!(cases.len() >= 20);
    for (text, expected) in &cases {
        assert_eq!(&tokenizer.tokenize(text), expected, "text: {text}");
    }
}

#[test]
fn golden_fixture_exercises_every_rule_class() {
    let cases = golden_cases();
    let texts: Vec<&str> = cases.iter().map(|c| c.0.as_str()).collect();
    let tokens: Vec<&String> = cases.iter().flat_map(|c| &c.1).collect();
    // merges
    assert!(tokens.iter().filter(|t| t.contains('_')).count() >= 10);
    // singular forms
    assert!(texts.iter().any(|t| t.contains("models")) && tokens.iter().any(|t| *t == "model"));
    // deletions, including the "ad"/"hoc" pair
    assert!(texts.iter().any(|t| t.to_lowercase().contains("ad hoc")));
    assert!(!tokens
        .iter()
        .any(|t| ["ad", "hoc", "ad_hoc", "course", "students"].contains(&t.as_str())));
    // numbers and case
    assert!(texts.iter().any(|t| t.contains("2019")));
    assert!(!tokens.iter().any(|t| t.chars().all(|c| c.is_ascii_digit())));
    assert!(tokens.iter().all(|t| t.to_lowercase() == **t));
}

fn lsa_vocab_of_top_terms(config: &PreprocessConfig) -> Vec<String> {
    let texts = [
        "Ad hoc ad hoc ad hoc ad hoc ad hoc ad hoc ad hoc ad hoc queries on a database.",
        "Regression models and inference for economics data.",
        "Database design, indexing and query optimisation.",
        "Inference and estimation in regression analysis.",
        "Programming in Python with data structures and testing.",
        "Ethics, privacy and governance of data.",
        "Visualisation and communication of statistical results.",
    ];
    let tokenizer = Tokenizer::new(config).unwrap();
    let tokens: Vec<Vec<String>> = texts.iter().map(|t| tokenizer.tokenize(t)).collect();
    let vocab = build_vocabulary(&tokens, 1).unwrap();
    let docs: Vec<_> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| to_bow(&i.to_string(), t, &vocab).unwrap())
        .collect();
    let model = fit_lsa(&docs, &vocab, 3).unwrap();
    lsa_top_terms(&model, &vocab, 10)
        .unwrap()
        .into_iter()
        .flatten()
        .map(|(t, _)| t)
        .collect()
}

#[test]
fn delete_list_keeps_ad_hoc_out_of_lsa_components() {
    let mut keep = PreprocessConfig::default_rules();
    keep.merge_phrases.retain(|(p, _)| p != "ad hoc");
    for w in ["ad", "hoc", "ad_hoc"] {
        keep.delete_words.remove(w);
    }
    let without_deletion = lsa_vocab_of_top_terms(&keep);
    assert!(without_deletion.iter().any(|t| t == "ad"));
    assert!(without_deletion.iter().any(|t| t == "hoc"));

    let with_deletion = lsa_vocab_of_top_terms(&PreprocessConfig::default_rules());
    assert!(!with_deletion.iter().any(|t| t == "ad" || t == "hoc" || t == "ad_hoc"));
}
