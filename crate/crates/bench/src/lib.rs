//! Fixtures shared by the criterion benches.

use latfill::corpus::{generate_corpus, Corpus, CorpusConfig};
use latfill::{Embedding, Rng};

/// Small two-language corpus that generates in well under a second.
pub fn small_corpus() -> Corpus {
    generate_corpus(&CorpusConfig {
        speakers_per_language: vec![8, 8],
        holdout_speakers_per_language: 2,
        utterances_per_speaker: 4,
        ..Default::default()
    })
    .expect("valid bench corpus")
}

/// Random unit-norm embedding.
pub fn unit_embedding(dim: usize, rng: &mut Rng) -> Embedding {
    let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Embedding::new(v.into_iter().map(|x| x / n).collect()).expect("finite")
}
