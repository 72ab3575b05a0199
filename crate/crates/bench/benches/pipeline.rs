use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use skillscope::corpus::{CourseType, Document, DocumentSet, InputFormat, Provenance};
use skillscope::ctm::{fit_ctm, infer_document, ModelConfig};
use skillscope::model_selection::umass_coherence;
use skillscope::preprocess::{preprocess, PreprocessConfig};
use skillscope::synthetic::{planted_corpus, PlantedCorpus, PlantedSpec};

fn planted() -> PlantedCorpus {
    planted_corpus(&PlantedSpec::three_topics(300, 400, 120.0, 1)).unwrap()
}

fn e_step(c: &mut Criterion) {
    let data = planted();
    let cfg = ModelConfig {
        max_em_iters: 5,
        ..ModelConfig::with_k(3, 1)
    };
    let model = fit_ctm(&data.docs, &data.vocab, &cfg).unwrap().model;
    c.bench_function("infer_document k=3 len=120", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % data.docs.len();
            infer_document(&model, &data.docs[i], &cfg).unwrap()
        })
    });
    c.bench_function("fit_ctm 5 em iterations d=400", |b| {
        b.iter(|| fit_ctm(&data.docs, &data.vocab, &cfg).unwrap())
    });
}

fn coherence(c: &mut Criterion) {
    let data = planted();
    let topics: Vec<Vec<usize>> = (0..30)
        .map(|t| (0..10).map(|j| (t * 7 + j * 13) % 300).collect())
        .collect();
    c.bench_function("umass 30 topics top-10 d=400", |b| {
        b.iter(|| umass_coherence(&topics, &data.docs).unwrap())
    });
}

fn preprocessing(c: &mut Criterion) {
    let text = "Students learn statistical learning, machine learning and data analysis. \
                Core courses cover 3 programming languages, research methods and ad hoc querying of databases.";
    let docs = (0..1000)
        .map(|i| Document {
            id: format!("d{i}"),
            institution: format!("U{}", i % 12),
            program: format!("P{}", i % 41),
            course_type: CourseType::Core,
            text: text.repeat(1 + i % 5),
        })
        .collect();
    let set = DocumentSet::new(
        docs,
        Provenance {
            path: "bench".into(),
            format: InputFormat::Csv,
        },
    )
    .unwrap();
    let config = PreprocessConfig::default_rules();
    c.bench_function("preprocess 1000 documents", |b| {
        b.iter_batched(
            || config.clone(),
            |cfg| preprocess(&set, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, e_step, coherence, preprocessing);
criterion_main!(benches);
