use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::Rng;

use pronsim::encoder::EncoderKind;
use pronsim::experiments::TaskData;
use pronsim::models::{BinaryConfig, RankConfig};
use pronsim::phonology::pron_distance;
use pronsim::rng::{stream, Stream};
use pronsim::tasks::{lexical_access_topk, LevenshteinScorer, RankScorer};
use pronsim::{BinaryModel, PhoneId, Pronunciation, RankModel, Triplet};

fn pron(rng: &mut impl Rng, len: usize, phones: usize) -> Pronunciation {
    Pronunciation::new((0..len).map(|_| PhoneId(rng.random_range(0..phones) as u16)).collect()).unwrap()
}

fn kernels(c: &mut Criterion) {
    let task = TaskData::generate(100, 10, 0).unwrap();
    let phones = task.inventory.len();
    let lex = &task.lexicon;
    let mut rng = stream(0, Stream::GradCheck);
    let (a, b) = (pron(&mut rng, 8, phones), pron(&mut rng, 8, phones));

    c.bench_function("levenshtein 8x8", |bench| bench.iter(|| pron_distance(black_box(&a), black_box(&b))));

    let encoder = EncoderKind::TwoLstm.config(64, 64);
    let rank = RankModel::new(RankConfig::new(encoder, 120), phones, &mut stream(0, Stream::Init)).unwrap();
    c.bench_function("rank embed 2lstm len 8", |bench| bench.iter(|| rank.embed(black_box(&a)).unwrap()));

    let binary = BinaryModel::new(BinaryConfig::new(encoder, 12), phones, &mut stream(0, Stream::Init)).unwrap();
    c.bench_function("binary score 2lstm len 8", |bench| bench.iter(|| binary.binary_score(black_box(&a), &b).unwrap()));

    let triplets: Vec<Triplet> = (0..51)
        .map(|_| Triplet { surface: a.clone(), positive: b.clone(), negative: pron(&mut rng, 6, phones) })
        .collect();
    c.bench_function("rank batch step 51 triplets", |bench| {
        bench.iter_batched(
            || rank.clone(),
            |mut m| m.batch_loss_backward(black_box(&triplets), 0.3, 1.0 / 51.0).unwrap(),
            BatchSize::LargeInput,
        )
    });

    let scorer = RankScorer::with_lexicon(&rank, lex).unwrap();
    let surface = &task.corpus.test[0].surface;
    c.bench_function("lexical access rank 100 words", |bench| {
        bench.iter(|| lexical_access_topk(black_box(surface), lex, &scorer, 2).unwrap())
    });
    c.bench_function("lexical access levenshtein 100 words", |bench| {
        bench.iter(|| lexical_access_topk(black_box(surface), lex, &LevenshteinScorer, 2).unwrap())
    });

    c.bench_function("synthetic task 100 words", |bench| bench.iter(|| TaskData::generate(100, 10, black_box(0)).unwrap()));
}

criterion_group!(benches, kernels);
criterion_main!(benches);
