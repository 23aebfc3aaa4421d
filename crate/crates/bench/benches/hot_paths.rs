use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use latfill::eval::{eval_encoder, secs_eval};
use latfill::train::{train_step, LanguageBalancedSampler, TrainConfig, TrainContext, TrainState};
use latfill::{latent_fill, LatentFillConfig, Rng};
use latfill_bench::{small_corpus, unit_embedding};

fn bench_latent_fill(c: &mut Criterion) {
    let mut rng = Rng::seed(1);
    let si = unit_embedding(192, &mut rng);
    let sj = unit_embedding(192, &mut rng);
    let cfg = LatentFillConfig::default();
    c.bench_function("latent_fill_d192", |b| {
        b.iter(|| latent_fill(&si, &sj, &cfg, &mut rng).unwrap())
    });
}

fn bench_train_step(c: &mut Criterion) {
    let corpus = small_corpus();
    let mut group = c.benchmark_group("train_step");
    for (name, tau) in [("standard", 0.0), ("lf", 1.0)] {
        let cfg = TrainConfig {
            tau,
            ..Default::default()
        };
        let ctx = TrainContext::new(&corpus, &cfg).unwrap();
        let sampler = LanguageBalancedSampler::for_corpus(&corpus, cfg.sampling_alpha).unwrap();
        let mut rng = Rng::seed(2);
        group.bench_function(name, |b| {
            b.iter_batched(
                || (TrainState::init(&ctx).unwrap(), sampler.batch(cfg.batch_size, &mut rng)),
                |(mut state, batch)| train_step(&mut state, &ctx, &batch, &mut Rng::seed(3)).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn bench_secs_eval(c: &mut Criterion) {
    let corpus = small_corpus();
    let cfg = TrainConfig::default();
    let ctx = TrainContext::new(&corpus, &cfg).unwrap();
    let model = TrainState::init(&ctx).unwrap().model;
    let phi_eval = eval_encoder(&corpus, 1000);
    c.bench_function("secs_eval_small", |b| {
        b.iter(|| secs_eval(&model, &corpus, &phi_eval, 1000).unwrap())
    });
}

criterion_group!(benches, bench_latent_fill, bench_train_step, bench_secs_eval);
criterion_main!(benches);
