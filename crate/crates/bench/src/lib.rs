//! Seeded inputs shared by the benchmarks.

use rand::Rng as _;
use toxspan::biaffine_model::enumerate_spans;
use toxspan::dataio::{gen_synthetic, SynthConfig};
use toxspan::neural::rng_from_seed;
use toxspan::{CrfParams, EmissionMatrix, RawPost, SpanScoreTensor};

pub fn crf_instance(n: usize, num_tags: usize, seed: u64) -> (EmissionMatrix, CrfParams) {
    let mut rng = rng_from_seed(seed);
    let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect() };
    let em = EmissionMatrix::new(n, num_tags, draw(n * num_tags)).expect("valid shape");
    let params = CrfParams {
        num_tags,
        transitions: draw(num_tags * num_tags),
        start: draw(num_tags),
        stop: draw(num_tags),
    };
    (em, params)
}

/// Every span up to `max_width` (0 for all) with random scores.
pub fn span_tensor(n: usize, categories: usize, max_width: usize, seed: u64) -> SpanScoreTensor {
    let mut rng = rng_from_seed(seed);
    let spans = enumerate_spans(n, max_width);
    let scores = (0..spans.len() * categories).map(|_| rng.gen_range(-3.0..3.0)).collect();
    SpanScoreTensor::new(n, categories, spans, scores).expect("valid shape")
}

pub fn posts(n_posts: usize, seed: u64) -> Vec<RawPost> {
    gen_synthetic(&SynthConfig {
        seed,
        n_posts,
        ..Default::default()
    })
    .expect("valid synthetic config")
}
