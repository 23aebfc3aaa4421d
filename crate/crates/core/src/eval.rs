//! Zero-shot speaker similarity (SECS) on held-out speakers, baseline vs
//! latent-filling comparison, and coverage diagnostics for the augmentation.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{sample_script, Corpus, SpeakerInfo};
use crate::embedding::{cosine_similarity, fmt_real, Embedding, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::kvfile::KvFile;
use crate::latent_fill::{latent_fill, Branch, LatentFillConfig};
use crate::model::{ModelParams, SpeakerEncoder, Utterance};
use crate::rng::Rng;
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub secs_mean: f64,
    /// `(speaker_id, mean cosine over that speaker's held-out utterances)`.
    pub secs_per_speaker: Vec<(u32, f64)>,
    pub eval_seed: u64,
    pub train_encoder_seed: u64,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "secs_mean {}", fmt_real(self.secs_mean));
        let _ = writeln!(out, "speakers {}", self.secs_per_speaker.len());
        let _ = writeln!(out, "eval_seed {}", self.eval_seed);
        let _ = writeln!(out, "train_encoder_seed {}", self.train_encoder_seed);
        for (s, v) in &self.secs_per_speaker {
            let _ = writeln!(out, "secs_speaker_{s} {}", fmt_real(*v));
        }
        out
    }
}

/// SECS with a caller-supplied generator.
///
/// For every held-out utterance of every holdout speaker, `generate` receives
/// the speaker, its reference embedding (training encoder), a fresh token
/// sequence, and the real utterance; the returned frames are compared with the
/// real frames under `phi_eval`.
pub fn secs_with<G>(corpus: &Corpus, phi_eval: &SpeakerEncoder, eval_seed: u64, generate: G) -> Result<EvalReport>
where
    G: Fn(&SpeakerInfo, &EmbeddingRecord, &[usize], &Utterance) -> Result<Tensor>,
{
    let speakers: Vec<&SpeakerInfo> = corpus.holdout_speakers().collect();
    if speakers.is_empty() {
        return Err(Error::Config("corpus has no holdout speakers to evaluate".into()));
    }
    if phi_eval.seed() == corpus.config.encoder_seed {
        return Err(Error::Config(format!(
            "evaluation encoder seed {} must differ from the training encoder seed",
            phi_eval.seed()
        )));
    }
    let root = Rng::seed(eval_seed);
    let mut per_speaker = Vec::with_capacity(speakers.len());
    for spk in speakers {
        let reference = corpus
            .reference_for(spk.speaker_id)
            .ok_or_else(|| Error::Config(format!("speaker {} has no reference embedding", spk.speaker_id)))?;
        let mut rng = root.child(spk.speaker_id as u64);
        let mut total = 0.0;
        let mut n = 0usize;
        for u in corpus.holdout.iter().filter(|u| u.speaker_id == spk.speaker_id) {
            let (tokens, _) = sample_script(&corpus.config, &mut rng);
            let generated = generate(spk, reference, &tokens, u)?;
            let a = phi_eval.embed(&generated)?;
            let b = phi_eval.embed(&u.frames)?;
            total += cosine_similarity(&a, &b)?;
            n += 1;
        }
        if n == 0 {
            return Err(Error::Config(format!(
                "holdout speaker {} has no utterances",
                spk.speaker_id
            )));
        }
        per_speaker.push((spk.speaker_id, total / n as f64));
    }
    let secs_mean = per_speaker.iter().map(|(_, v)| v).sum::<f64>() / per_speaker.len() as f64;
    Ok(EvalReport {
        secs_mean,
        secs_per_speaker: per_speaker,
        eval_seed,
        train_encoder_seed: corpus.config.encoder_seed,
    })
}

/// SECS of `model` synthesizing in inference mode from each holdout speaker's reference embedding.
pub fn secs_eval(
    model: &ModelParams,
    corpus: &Corpus,
    phi_eval: &SpeakerEncoder,
    eval_seed: u64,
) -> Result<EvalReport> {
    secs_with(corpus, phi_eval, eval_seed, |spk, reference, tokens, _| {
        model.synthesize(tokens, spk.language_id, &reference.embedding)
    })
}

/// Evaluation encoder for a corpus, seeded by `eval_seed`.
pub fn eval_encoder(corpus: &Corpus, eval_seed: u64) -> SpeakerEncoder {
    SpeakerEncoder::new(corpus.config.frame_dim, corpus.config.embed_dim, eval_seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub seed: u64,
    pub secs_base: f64,
    pub secs_lf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub eval_seed: u64,
}

impl ComparisonReport {
    pub fn lf_wins(&self) -> usize {
        self.rows.iter().filter(|r| r.secs_lf > r.secs_base).count()
    }

    pub fn mean_base(&self) -> f64 {
        self.rows.iter().map(|r| r.secs_base).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_lf(&self) -> f64 {
        self.rows.iter().map(|r| r.secs_lf).sum::<f64>() / self.rows.len().max(1) as f64
    }

    /// Tab-separated table with a header row.
    pub fn to_table(&self) -> String {
        let mut out = String::from("seed\tsecs_base\tsecs_lf\tlf_wins\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.seed,
                fmt_real(r.secs_base),
                fmt_real(r.secs_lf),
                u8::from(r.secs_lf > r.secs_base)
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seeds {}", self.rows.len());
        let _ = writeln!(out, "eval_seed {}", self.eval_seed);
        let _ = writeln!(out, "secs_base_mean {}", fmt_real(self.mean_base()));
        let _ = writeln!(out, "secs_lf_mean {}", fmt_real(self.mean_lf()));
        let _ = writeln!(out, "lf_wins {}", self.lf_wins());
        out
    }
}

/// Trains the baseline and the latent-filling system for `n_seeds` seeds
/// (`cfg.seed + k`) and evaluates both with one shared evaluation encoder.
///
/// The two configs must be identical apart from `tau`.
pub fn compare_runs(
    cfg_base: &TrainConfig,
    cfg_lf: &TrainConfig,
    corpus: &Corpus,
    n_seeds: usize,
    eval_seed: u64,
) -> Result<ComparisonReport> {
    let mut aligned = cfg_lf.clone();
    aligned.tau = cfg_base.tau;
    if &aligned != cfg_base {
        return Err(Error::Config("compared configs must differ only in tau".into()));
    }
    let phi_eval = eval_encoder(corpus, eval_seed);

    let jobs: Vec<(usize, bool)> = (0..n_seeds).flat_map(|k| [(k, false), (k, true)]).collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(k, lf)| {
            let mut cfg = if lf { cfg_lf.clone() } else { cfg_base.clone() };
            cfg.seed = cfg.seed.wrapping_add(k as u64);
            let out = train(&cfg, corpus)?;
            Ok(secs_eval(&out.model, corpus, &phi_eval, eval_seed)?.secs_mean)
        })
        .collect::<Result<_>>()?;

    let rows = (0..n_seeds)
        .map(|k| ComparisonRow {
            seed: cfg_base.seed.wrapping_add(k as u64),
            secs_base: scores[2 * k],
            secs_lf: scores[2 * k + 1],
        })
        .collect();
    Ok(ComparisonReport { rows, eval_seed })
}

/// Per-branch displacement and nearest-original distance of augmented embeddings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoverageReport {
    pub draws: usize,
    /// Indexed by [`Branch::index`].
    pub branch_counts: [usize; 3],
    /// Mean `||s~ - s_i||` per branch; `None` when the branch never occurred.
    pub mean_displacement: [Option<f64>; 3],
    /// Distance from each augmented embedding to its nearest original, sorted ascending.
    pub nearest_original: Vec<f64>,
}

impl CoverageReport {
    pub fn frequency(&self, b: Branch) -> f64 {
        if self.draws == 0 {
            0.0
        } else {
            self.branch_counts[b.index()] as f64 / self.draws as f64
        }
    }

    pub fn displacement(&self, b: Branch) -> Option<f64> {
        self.mean_displacement[b.index()]
    }

    /// Mean displacement pooled over both interpolating branches.
    pub fn interpolation_displacement(&self) -> Option<f64> {
        let (a, b) = (Branch::InterpolatePlusNoise.index(), Branch::InterpolateOnly.index());
        let n = self.branch_counts[a] + self.branch_counts[b];
        if n == 0 {
            return None;
        }
        let sum = self.mean_displacement[a].unwrap_or(0.0) * self.branch_counts[a] as f64
            + self.mean_displacement[b].unwrap_or(0.0) * self.branch_counts[b] as f64;
        Some(sum / n as f64)
    }

    fn quantile(&self, q: f64) -> Option<f64> {
        if self.nearest_original.is_empty() {
            return None;
        }
        let idx = ((self.nearest_original.len() - 1) as f64 * q).round() as usize;
        Some(self.nearest_original[idx])
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), fmt_real);
        let mut out = String::new();
        let _ = writeln!(out, "draws {}", self.draws);
        for b in Branch::ALL {
            let _ = writeln!(out, "count_{b} {}", self.branch_counts[b.index()]);
            let _ = writeln!(out, "frequency_{b} {}", fmt_real(self.frequency(b)));
            let _ = writeln!(out, "mean_displacement_{b} {}", opt(self.displacement(b)));
        }
        let _ = writeln!(
            out,
            "mean_displacement_interpolation {}",
            opt(self.interpolation_displacement())
        );
        let mean = (!self.nearest_original.is_empty())
            .then(|| self.nearest_original.iter().sum::<f64>() / self.nearest_original.len() as f64);
        let _ = writeln!(out, "nearest_original_mean {}", opt(mean));
        for (name, q) in [("min", 0.0), ("p10", 0.1), ("median", 0.5), ("p90", 0.9), ("max", 1.0)] {
            let _ = writeln!(out, "nearest_original_{name} {}", opt(self.quantile(q)));
        }
        out
    }
}

/// Settings for a coverage run, read from a `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageConfig {
    pub lf: LatentFillConfig,
    pub draws: usize,
    pub seed: u64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            lf: LatentFillConfig::default(),
            draws: 10_000,
            seed: 0,
        }
    }
}

pub const COVERAGE_KEYS: [&str; 6] = ["epsilon", "beta", "sigma", "lf_mode", "draws", "seed"];

impl CoverageConfig {
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        kv.check_keys(&COVERAGE_KEYS)?;
        let mut c = Self::default();
        kv.set("epsilon", &mut c.lf.epsilon)?;
        kv.set("beta", &mut c.lf.beta)?;
        kv.set("sigma", &mut c.lf.sigma)?;
        kv.set("lf_mode", &mut c.lf.mode)?;
        kv.set("draws", &mut c.draws)?;
        kv.set("seed", &mut c.seed)?;
        c.lf.validate()
            .map_err(|e| Error::format(kv.path(), 0, e.to_string()))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }
}

/// Runs `n_draws` fills over random same-language pairs of `originals`.
pub fn coverage_stats(
    originals: &[EmbeddingRecord],
    cfg: &LatentFillConfig,
    n_draws: usize,
    rng: &mut Rng,
) -> Result<CoverageReport> {
    if n_draws == 0 {
        return Ok(CoverageReport::default());
    }
    cfg.validate()?;
    let pairable: Vec<usize> = (0..originals.len())
        .filter(|&i| {
            originals
                .iter()
                .enumerate()
                .any(|(j, r)| j != i && r.language_id == originals[i].language_id)
        })
        .collect();
    if pairable.is_empty() {
        return Err(Error::InvalidArgument(
            "coverage statistics need at least two originals sharing a language".into(),
        ));
    }
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    let mut nearest = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let i = pairable[rng.below(pairable.len())];
        let partners: Vec<usize> = (0..originals.len())
            .filter(|&j| j != i && originals[j].language_id == originals[i].language_id)
            .collect();
        let j = partners[rng.below(partners.len())];
        let (aug, outcome) = latent_fill(&originals[i].embedding, &originals[j].embedding, cfg, rng)?;
        let k = outcome.branch.index();
        sums[k] += aug.distance(&originals[i].embedding)?;
        counts[k] += 1;
        nearest.push(nearest_distance(&aug, originals)?);
    }
    nearest.sort_by(f64::total_cmp);
    let mut mean_displacement = [None; 3];
    for k in 0..3 {
        if counts[k] > 0 {
            mean_displacement[k] = Some(sums[k] / counts[k] as f64);
        }
    }
    Ok(CoverageReport {
        draws: n_draws,
        branch_counts: counts,
        mean_displacement,
        nearest_original: nearest,
    })
}

fn nearest_distance(e: &Embedding, originals: &[EmbeddingRecord]) -> Result<f64> {
    originals
        .iter()
        .map(|r| e.distance(&r.embedding))
        .try_fold(f64::INFINITY, |acc, d| Ok(acc.min(d?)))
}
