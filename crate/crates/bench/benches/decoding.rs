use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use toxspan::tagger::build_vocab;
use toxspan::{crf, decode, TaggerConfig, TaggerModel};
use toxspan_bench::{crf_instance, posts, span_tensor};

fn crf_inference(c: &mut Criterion) {
    let mut group = c.benchmark_group("crf");
    for n in [16, 64, 256] {
        let (em, params) = crf_instance(n, 3, 1);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("viterbi", n), &n, |b, _| b.iter(|| crf::viterbi(black_box(&em), &params)));
        group.bench_with_input(BenchmarkId::new("log_partition", n), &n, |b, _| {
            b.iter(|| crf::log_partition(black_box(&em), &params))
        });
    }
    group.finish();
}

fn span_decoding(c: &mut Criterion) {
    let mut group = c.benchmark_group("biaffine_decode");
    for n in [16, 64, 128] {
        let sst = span_tensor(n, 2, 0, 2);
        group.throughput(Throughput::Elements(sst.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &sst, |b, sst| b.iter(|| decode(black_box(sst))));
    }
    group.finish();
}

fn tagger_prediction(c: &mut Criterion) {
    let corpus = posts(200, 3);
    let config = TaggerConfig {
        word_dim: 50,
        char_dim: 16,
        char_hidden: 16,
        lstm_hidden: 64,
        ..Default::default()
    };
    let model = TaggerModel::new(config, build_vocab(&corpus, true)).unwrap();
    let text = &corpus[0].text;
    c.bench_function("tagger_predict_post", |b| b.iter(|| model.predict_post(black_box(text))));
}

criterion_group!(benches, crf_inference, span_decoding, tagger_prediction);
criterion_main!(benches);
