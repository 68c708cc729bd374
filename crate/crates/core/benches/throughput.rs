use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use toxspan::corpus::TokenizedPost;
use toxspan::encoder::{EncoderConfig, TrainableConfig};
use toxspan::features::AugmentMode;
use toxspan::model::train::{batch_gradients, predict_inputs, TrainingExample};
use toxspan::model::{train, HeadKind, ModelBundle, Resources, TrainConfig};
use toxspan::par::Execution;
use toxspan::synth::{generate, SynthConfig};

fn setup(head: HeadKind) -> (ModelBundle, Vec<TrainingExample>) {
    let corpus = generate(&SynthConfig {
        posts: 600,
        ..SynthConfig::default()
    });
    let config = TrainConfig {
        epochs: 1,
        head,
        mode: AugmentMode::Both,
        encoder: EncoderConfig::Trainable(TrainableConfig {
            table_size: 4096,
            ..TrainableConfig::default()
        }),
        ..TrainConfig::default()
    };
    let bundle = train(&config, &corpus.train, &corpus.validation, &Resources::default()).unwrap();
    let examples = corpus
        .train
        .posts
        .iter()
        .map(|p| TrainingExample {
            input: bundle.prepare(p, None).unwrap(),
            gold: TokenizedPost::from_post(p.clone()).gold_indices().unwrap(),
        })
        .collect();
    (bundle, examples)
}

fn modes() -> Vec<(&'static str, Execution)> {
    let mut modes = vec![("sequential", Execution::Sequential)];
    if Execution::is_parallel_available() {
        modes.push(("parallel", Execution::Parallel));
    }
    modes
}

fn bench_gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_gradients");
    for head in [HeadKind::Softmax, HeadKind::Crf] {
        let (bundle, examples) = setup(head);
        let batch: Vec<&TrainingExample> = examples.iter().take(256).collect();
        for (name, exec) in modes() {
            group.bench_with_input(BenchmarkId::new(format!("{head:?}"), name), &exec, |b, &exec| {
                b.iter(|| batch_gradients(&bundle.network, &batch, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_prediction(c: &mut Criterion) {
    let mut group = c.benchmark_group("predict");
    for head in [HeadKind::Softmax, HeadKind::Crf] {
        let (bundle, examples) = setup(head);
        let inputs: Vec<_> = examples.into_iter().map(|e| e.input).collect();
        for (name, exec) in modes() {
            group.bench_with_input(BenchmarkId::new(format!("{head:?}"), name), &exec, |b, &exec| {
                b.iter(|| predict_inputs(&bundle.network, &inputs, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_gradients, bench_prediction
}
criterion_main!(benches);
