use latfill::corpus::{generate_corpus, Corpus, CorpusConfig};
use latfill::train::{train, Mode, PartnerSource, TrainConfig};
use latfill::{Error, FillMode, LatentFillConfig};

fn small_corpus(per_language: Vec<usize>) -> Corpus {
    generate_corpus(&CorpusConfig {
        speakers_per_language: per_language,
        holdout_speakers_per_language: 1,
        utterances_per_speaker: 4,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn reconstruction_loss_decreases_over_windows() {
    let corpus = generate_corpus(&CorpusConfig::default()).unwrap();
    let cfg = TrainConfig {
        steps: 2000,
        seed: 11,
        ..Default::default()
    };
    let out = train(&cfg, &corpus).unwrap();
    let mut windows = Vec::new();
    for chunk in out.log.records.chunks(100) {
        let vals: Vec<f64> = chunk.iter().filter_map(|r| r.losses.l_rec_acoustic).collect();
        windows.push(vals.iter().sum::<f64>() / vals.len() as f64);
    }
    assert_eq!(windows.len(), 20);
    for (k, w) in windows.windows(2).enumerate() {
        assert!(
            w[1] < w[0],
            "window {} mean {} not below window {} mean {}",
            k + 1,
            w[1],
            k,
            w[0]
        );
    }
}

#[test]
fn tau_zero_ignores_every_lf_setting() {
    let corpus = small_corpus(vec![3, 3]);
    let base = TrainConfig {
        tau: 0.0,
        steps: 40,
        batch_size: 4,
        seed: 5,
        ..Default::default()
    };
    let reference = train(&base, &corpus).unwrap();
    assert!(reference
        .log
        .records
        .iter()
        .all(|r| r.mode == Mode::Standard && r.pairs.is_empty()));
    for lf in [
        LatentFillConfig {
            epsilon: 0.0,
            beta: 3.0,
            sigma: 0.5,
            mode: FillMode::Full,
        },
        LatentFillConfig {
            mode: FillMode::NoNoise,
            ..Default::default()
        },
        LatentFillConfig {
            mode: FillMode::NoInterpolation,
            sigma: 1.0,
            ..Default::default()
        },
    ] {
        let other = train(&TrainConfig { lf, ..base.clone() }, &corpus).unwrap();
        assert_eq!(other.model.to_text(), reference.model.to_text());
        assert_eq!(other.log.to_text(), reference.log.to_text());
    }
}

#[test]
fn lf_pairs_are_language_matched_and_logged() {
    let corpus = small_corpus(vec![4, 2]);
    let cfg = TrainConfig {
        tau: 1.0,
        steps: 30,
        batch_size: 6,
        seed: 2,
        ..Default::default()
    };
    let out = train(&cfg, &corpus).unwrap();
    let mut pairs = 0;
    for r in &out.log.records {
        assert_eq!(r.mode, Mode::Lf);
        assert_eq!(r.recon_nodes, 0);
        assert!(r.losses.l_rec_acoustic.is_none() && r.losses.l_lfcl.is_some());
        assert_eq!(r.pairs.len(), cfg.batch_size);
        for p in &r.pairs {
            assert_eq!(p.language_id, p.partner_language_id);
            if p.source == PartnerSource::CorpusFallback {
                assert_ne!(p.speaker_id, p.partner_speaker_id);
            }
            pairs += 1;
        }
    }
    assert_eq!(pairs, 30 * 6);
    assert_eq!(out.log.phi_checksum_start, out.log.phi_checksum_end);
}

#[test]
fn single_speaker_language_fails_in_lf_mode() {
    let corpus = small_corpus(vec![3, 1]);
    let cfg = TrainConfig {
        tau: 1.0,
        steps: 20,
        batch_size: 8,
        ..Default::default()
    };
    assert!(matches!(
        train(&cfg, &corpus),
        Err(Error::DegeneratePairing { language_id: 1 })
    ));
    let standard = TrainConfig { tau: 0.0, ..cfg };
    assert!(train(&standard, &corpus).is_ok());
}

#[test]
fn same_seed_same_artifacts() {
    let corpus = small_corpus(vec![3, 3]);
    let cfg = TrainConfig {
        steps: 50,
        batch_size: 4,
        seed: 8,
        ..Default::default()
    };
    let a = train(&cfg, &corpus).unwrap();
    let b = train(&cfg, &corpus).unwrap();
    assert_eq!(a.model.to_text(), b.model.to_text());
    assert_eq!(a.log.to_text(), b.log.to_text());
    let c = train(&TrainConfig { seed: 9, ..cfg }, &corpus).unwrap();
    assert_ne!(a.model.to_text(), c.model.to_text());
}
