use criterion::{criterion_group, criterion_main, Criterion};
use provenant::fingerprint::{embed_corpus, ConvEncoder, EncoderConfig, FeatureExtractor};
use provenant::synth::generate_corpus;
use provenant::verifier::{MapShape, VerifierConfig, VerifierModel};

fn models(c: &mut Criterion) {
    let config = EncoderConfig::default();
    let encoder = ConvEncoder::new(config.clone(), 1).unwrap();
    let corpus = generate_corpus(2, 128, 3);
    let shape = MapShape {
        side: config.feature_side(),
        depth: config.feature_depth(),
    };
    let verifier = VerifierModel::new(VerifierConfig::default(), shape, 2).unwrap();
    let pixels = provenant::fingerprint::patchify(&corpus[0].image, config.input_size).unwrap();
    let maps = encoder.feature_maps(&[&pixels[0].pixels, &pixels[5].pixels]).unwrap();
    let (pa, pb) = (verifier.pool(&maps[0]).unwrap(), verifier.pool(&maps[1]).unwrap());

    let mut g = c.benchmark_group("models");
    g.sample_size(10);
    g.bench_function("embed_image_21_patches", |b| {
        b.iter(|| embed_corpus(&encoder, &corpus[..1], config.input_size).unwrap())
    });
    g.bench_function("verifier_pool_map", |b| b.iter(|| verifier.pool(&maps[0]).unwrap()));
    g.bench_function("verifier_score_pooled_pair", |b| {
        b.iter(|| verifier.score_pooled(&[(&pa, &pb)]).unwrap())
    });
    g.bench_function("verifier_score_maps", |b| {
        b.iter(|| verifier.score_maps(&maps[0], &maps[1]).unwrap())
    });
    g.finish();
}

criterion_group!(benches, models);
criterion_main!(benches);
