//! Two-mode training.
//!
//! Each iteration draws one gate `u ~ U(0,1)` for the whole batch. When
//! `u < tau` the batch runs in latent-filling mode: every item's speaker
//! embedding is augmented with a same-language partner and the update uses
//! LFCL alone. Otherwise the update uses acoustic and duration reconstruction
//! plus the speaker consistency loss. The speaker encoder is never updated.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;

use crate::corpus::Corpus;
use crate::embedding::{fmt_real, Embedding, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::grad::{Graph, NodeId, OpKind, Tensor};
use crate::kvfile::KvFile;
use crate::latent_fill::{latent_fill, Branch, LatentFillConfig};
use crate::losses::{self, LossBundle};
use crate::model::{ModelDims, ModelParams};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Probability that an iteration runs in latent-filling mode.
    pub tau: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Language sampling exponent: `p_l ∝ n_l^alpha`.
    pub sampling_alpha: f64,
    pub lf: LatentFillConfig,
    pub scl_weight: f64,
    pub token_dim: usize,
    pub decoder_hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.25,
            batch_size: 16,
            steps: 3000,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            sampling_alpha: 0.25,
            lf: LatentFillConfig::default(),
            scl_weight: 1.0,
            token_dim: 8,
            decoder_hidden: 32,
            seed: 0,
        }
    }
}

pub const TRAIN_KEYS: [&str; 16] = [
    "tau",
    "batch_size",
    "steps",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "sampling_alpha",
    "epsilon",
    "beta",
    "sigma",
    "lf_mode",
    "scl_weight",
    "token_dim",
    "decoder_hidden",
    "seed",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.sampling_alpha > 0.0 && self.sampling_alpha.is_finite()) {
            return Err(Error::Config(format!(
                "sampling_alpha must be > 0, got {}",
                self.sampling_alpha
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !self.adam_eps.is_finite() || self.adam_eps <= 0.0 {
            return Err(Error::Config("adam_eps must be > 0".into()));
        }
        if !self.scl_weight.is_finite() {
            return Err(Error::Config("scl_weight must be finite".into()));
        }
        if self.token_dim == 0 || self.decoder_hidden == 0 {
            return Err(Error::Config("token_dim and decoder_hidden must be >= 1".into()));
        }
        self.lf.validate()
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        kv.check_keys(&TRAIN_KEYS)?;
        let mut c = Self::default();
        kv.set("tau", &mut c.tau)?;
        kv.set("batch_size", &mut c.batch_size)?;
        kv.set("steps", &mut c.steps)?;
        kv.set("learning_rate", &mut c.learning_rate)?;
        kv.set("adam_beta1", &mut c.adam_beta1)?;
        kv.set("adam_beta2", &mut c.adam_beta2)?;
        kv.set("adam_eps", &mut c.adam_eps)?;
        kv.set("sampling_alpha", &mut c.sampling_alpha)?;
        kv.set("epsilon", &mut c.lf.epsilon)?;
        kv.set("beta", &mut c.lf.beta)?;
        kv.set("sigma", &mut c.lf.sigma)?;
        kv.set("lf_mode", &mut c.lf.mode)?;
        kv.set("scl_weight", &mut c.scl_weight)?;
        kv.set("token_dim", &mut c.token_dim)?;
        kv.set("decoder_hidden", &mut c.decoder_hidden)?;
        kv.set("seed", &mut c.seed)?;
        c.validate().map_err(|e| Error::format(kv.path(), 0, e.to_string()))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "tau = {:?}\nbatch_size = {}\nsteps = {}\nlearning_rate = {:?}\nadam_beta1 = {:?}\nadam_beta2 = {:?}\n\
             adam_eps = {:?}\nsampling_alpha = {:?}\nepsilon = {:?}\nbeta = {:?}\nsigma = {:?}\nlf_mode = {}\n\
             scl_weight = {:?}\ntoken_dim = {}\ndecoder_hidden = {}\nseed = {}\n",
            self.tau,
            self.batch_size,
            self.steps,
            self.learning_rate,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
            self.sampling_alpha,
            self.lf.epsilon,
            self.lf.beta,
            self.lf.sigma,
            self.lf.mode,
            self.scl_weight,
            self.token_dim,
            self.decoder_hidden,
            self.seed
        )
    }

    pub fn model_dims(&self, corpus: &Corpus) -> ModelDims {
        ModelDims {
            vocab: corpus.config.vocab,
            token_dim: self.token_dim,
            languages: corpus.config.languages(),
            embed_dim: corpus.config.embed_dim,
            frame_dim: corpus.config.frame_dim,
            decoder_hidden: self.decoder_hidden,
        }
    }
}

/// Draws items so that language `l` is picked with probability `n_l^alpha / sum_m n_m^alpha`,
/// then an item uniformly within that language.
#[derive(Debug, Clone)]
pub struct LanguageBalancedSampler {
    buckets: Vec<Vec<usize>>,
    cumulative: Vec<f64>,
}

impl LanguageBalancedSampler {
    /// `language_ids[i]` is the language of item `i`; every language in `0..languages` must occur.
    pub fn new(language_ids: &[u32], languages: usize, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("sampling alpha must be > 0, got {alpha}")));
        }
        let mut buckets = vec![Vec::new(); languages];
        for (i, &l) in language_ids.iter().enumerate() {
            let slot = buckets
                .get_mut(l as usize)
                .ok_or_else(|| Error::Config(format!("language {l} out of range")))?;
            slot.push(i);
        }
        if let Some(l) = buckets.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("language {l} has no utterances")));
        }
        let weights: Vec<f64> = buckets.iter().map(|b| (b.len() as f64).powf(alpha)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(Self { buckets, cumulative })
    }

    pub fn for_corpus(corpus: &Corpus, alpha: f64) -> Result<Self> {
        let ids: Vec<u32> = corpus.train.iter().map(|u| u.language_id).collect();
        Self::new(&ids, corpus.config.languages(), alpha)
    }

    /// Selection probability of each language.
    pub fn probabilities(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u = rng.uniform();
        let l = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1);
        let bucket = &self.buckets[l];
        bucket[rng.below(bucket.len())]
    }

    pub fn batch(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartnerSource {
    Batch,
    CorpusFallback,
}

/// Corpus-wide records used when a batch holds no same-language partner.
#[derive(Debug, Clone)]
pub struct PartnerPool {
    records: Vec<EmbeddingRecord>,
    /// Languages with at least two distinct speakers.
    pairable: BTreeSet<u32>,
}

impl PartnerPool {
    pub fn new(records: Vec<EmbeddingRecord>) -> Self {
        let mut first: BTreeMap<u32, u32> = BTreeMap::new();
        let mut pairable = BTreeSet::new();
        for r in &records {
            match first.get(&r.language_id) {
                None => {
                    first.insert(r.language_id, r.speaker_id);
                }
                Some(&s) if s != r.speaker_id => {
                    pairable.insert(r.language_id);
                }
                Some(_) => {}
            }
        }
        Self { records, pairable }
    }
}

/// Picks a partner for `batch[i]`: uniform over other same-language batch
/// records, else a same-language record of a different speaker from `pool`.
pub fn select_partner(
    batch: &[EmbeddingRecord],
    i: usize,
    pool: &PartnerPool,
    rng: &mut Rng,
) -> Result<(EmbeddingRecord, PartnerSource)> {
    let me = &batch[i];
    if !pool.pairable.contains(&me.language_id) {
        return Err(Error::DegeneratePairing {
            language_id: me.language_id,
        });
    }
    let candidates: Vec<usize> = (0..batch.len())
        .filter(|&j| j != i && batch[j].language_id == me.language_id)
        .collect();
    if !candidates.is_empty() {
        let j = candidates[rng.below(candidates.len())];
        return Ok((batch[j].clone(), PartnerSource::Batch));
    }
    let fallback: Vec<&EmbeddingRecord> = pool
        .records
        .iter()
        .filter(|r| r.language_id == me.language_id && r.speaker_id != me.speaker_id)
        .collect();
    Ok((
        fallback[rng.below(fallback.len())].clone(),
        PartnerSource::CorpusFallback,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Lf,
    Standard,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Lf => "lf",
            Mode::Standard => "standard",
        })
    }
}

/// One augmentation performed in an lf-mode iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub speaker_id: u32,
    pub language_id: u32,
    pub partner_speaker_id: u32,
    pub partner_language_id: u32,
    pub branch: Branch,
    pub lambda: Option<f64>,
    pub source: PartnerSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub mode: Mode,
    pub losses: LossBundle,
    pub pairs: Vec<PairRecord>,
    /// Reconstruction loss nodes built during the iteration.
    pub recon_nodes: usize,
}

impl LogRecord {
    pub fn fallbacks(&self) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.source == PartnerSource::CorpusFallback)
            .count()
    }

    pub fn to_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), fmt_real);
        let mut line = format!(
            "iter={}\tmode={}\ttotal={}\trec_acoustic={}\trec_duration={}\tscl={}\tlfcl={}\trecon_nodes={}\tfallbacks={}\tpairs=",
            self.iteration,
            self.mode,
            fmt_real(self.losses.total),
            opt(self.losses.l_rec_acoustic),
            opt(self.losses.l_rec_duration),
            opt(self.losses.l_scl),
            opt(self.losses.l_lfcl),
            self.recon_nodes,
            self.fallbacks(),
        );
        if self.pairs.is_empty() {
            line.push('-');
        }
        for (k, p) in self.pairs.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            let _ = write!(
                line,
                "{}/{}>{}/{}:{}:{}",
                p.speaker_id,
                p.language_id,
                p.partner_speaker_id,
                p.partner_language_id,
                p.branch,
                opt(p.lambda)
            );
        }
        line
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub phi_checksum_start: u64,
    pub phi_checksum_end: u64,
}

impl TrainLog {
    pub fn lf_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let n = self.records.iter().filter(|r| r.mode == Mode::Lf).count();
        n as f64 / self.records.len() as f64
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# phi_checksum_start={:016x}", self.phi_checksum_start);
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        let _ = writeln!(out, "# phi_checksum_end={:016x}", self.phi_checksum_end);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// First and second moment estimates for each trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &[Tensor], cfg: &TrainConfig) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[&Tensor]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((w, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Everything a training step reads but never writes.
pub struct TrainContext<'a> {
    pub corpus: &'a Corpus,
    pub cfg: &'a TrainConfig,
    /// Training-encoder embedding of every training utterance.
    pub embeddings: Vec<Embedding>,
    pub pool: PartnerPool,
}

impl<'a> TrainContext<'a> {
    pub fn new(corpus: &'a Corpus, cfg: &'a TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let phi = corpus.encoder();
        let embeddings: Vec<Embedding> = corpus
            .train
            .iter()
            .map(|u| phi.embed(&u.frames))
            .collect::<Result<_>>()?;
        let pool = PartnerPool::new(
            corpus
                .train
                .iter()
                .zip(&embeddings)
                .map(|(u, e)| EmbeddingRecord::new(u.speaker_id, u.language_id, e.clone()))
                .collect(),
        );
        Ok(Self {
            corpus,
            cfg,
            embeddings,
            pool,
        })
    }

    fn record(&self, idx: usize) -> EmbeddingRecord {
        let u = &self.corpus.train[idx];
        EmbeddingRecord::new(u.speaker_id, u.language_id, self.embeddings[idx].clone())
    }
}

pub struct TrainState {
    pub model: ModelParams,
    pub optimizer: Adam,
    pub iteration: usize,
}

impl TrainState {
    pub fn init(ctx: &TrainContext) -> Result<Self> {
        let dims = ctx.cfg.model_dims(ctx.corpus);
        let model = ModelParams::init(dims, ctx.cfg.seed, ctx.corpus.encoder())?;
        let optimizer = Adam::new(&model.trainable, ctx.cfg);
        Ok(Self {
            model,
            optimizer,
            iteration: 0,
        })
    }
}

/// Runs one iteration over `batch` (indices into `corpus.train`) and applies the update.
pub fn train_step(state: &mut TrainState, ctx: &TrainContext, batch: &[usize], rng: &mut Rng) -> Result<LogRecord> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let cfg = ctx.cfg;
    let mode = if rng.uniform() < cfg.tau {
        Mode::Lf
    } else {
        Mode::Standard
    };
    let n = batch.len() as f64;

    let mut g = Graph::new();
    let nodes = state.model.attach(&mut g);
    let mut pairs = Vec::new();
    let mut losses = LossBundle::default();

    let root: NodeId = match mode {
        Mode::Lf => {
            let records: Vec<EmbeddingRecord> = batch.iter().map(|&i| ctx.record(i)).collect();
            let mut s_tilde = Vec::with_capacity(batch.len());
            let mut x_tilde = Vec::with_capacity(batch.len());
            for (k, &idx) in batch.iter().enumerate() {
                let (partner, source) = select_partner(&records, k, &ctx.pool, rng)?;
                let me = &records[k];
                debug_assert_eq!(partner.language_id, me.language_id);
                let (aug, outcome) = latent_fill(&me.embedding, &partner.embedding, &cfg.lf, rng)?;
                pairs.push(PairRecord {
                    speaker_id: me.speaker_id,
                    language_id: me.language_id,
                    partner_speaker_id: partner.speaker_id,
                    partner_language_id: partner.language_id,
                    branch: outcome.branch,
                    lambda: outcome.lambda,
                    source,
                });
                let u = &ctx.corpus.train[idx];
                let s = g.leaf(Tensor::vector(aug.into_vec())?);
                let out = state
                    .model
                    .forward(&mut g, &nodes, &u.tokens, u.language_id, s, Some(&u.durations))?;
                s_tilde.push(s);
                x_tilde.push(out.frames);
            }
            let l = losses::lfcl(&mut g, &s_tilde, &x_tilde, &nodes.phi)?;
            losses.l_lfcl = Some(g.value(l).item());
            l
        }
        Mode::Standard => {
            let mut rec_a = g.leaf(Tensor::scalar(0.0)?);
            let mut rec_d = g.leaf(Tensor::scalar(0.0)?);
            let mut ss = Vec::with_capacity(batch.len());
            let mut xs = Vec::with_capacity(batch.len());
            for &idx in batch {
                let u = &ctx.corpus.train[idx];
                let s = g.leaf(Tensor::vector(ctx.embeddings[idx].as_slice().to_vec())?);
                let out = state
                    .model
                    .forward(&mut g, &nodes, &u.tokens, u.language_id, s, Some(&u.durations))?;
                let target = g.leaf(u.frames.clone());
                let la = losses::reconstruction_acoustic(&mut g, out.frames, target)?;
                let dur_target = g.leaf(Tensor::vector(u.durations.iter().map(|&d| d as f64).collect())?);
                let ld = losses::reconstruction_duration(&mut g, out.durations, dur_target)?;
                rec_a = g.scale_add(rec_a, 1.0 / n, la)?;
                rec_d = g.scale_add(rec_d, 1.0 / n, ld)?;
                ss.push(s);
                xs.push(out.frames);
            }
            let scl = losses::scl(&mut g, &ss, &xs, &nodes.phi)?;
            losses.l_rec_acoustic = Some(g.value(rec_a).item());
            losses.l_rec_duration = Some(g.value(rec_d).item());
            losses.l_scl = Some(g.value(scl).item());
            let t = g.scale_add(rec_a, 1.0, rec_d)?;
            g.scale_add(t, cfg.scl_weight, scl)?
        }
    };
    losses.total = g.value(root).item();
    if !losses.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "iteration {} ({mode} mode): loss {:?}",
            state.iteration, losses
        )));
    }
    let recon_nodes = g.count(OpKind::L1Mean) + g.count(OpKind::L2Mean);

    let grads = g.backward(root)?;
    let param_grads: Vec<&Tensor> = nodes.trainable.iter().map(|&id| grads.get(id)).collect();
    if let Some(k) = param_grads.iter().position(|t| t.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!(
            "iteration {} ({mode} mode): gradient of {} is non-finite",
            state.iteration,
            crate::model::PARAM_NAMES[k]
        )));
    }
    state.optimizer.step(&mut state.model.trainable, &param_grads);

    let record = LogRecord {
        iteration: state.iteration,
        mode,
        losses,
        pairs,
        recon_nodes,
    };
    state.iteration += 1;
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: ModelParams,
    pub log: TrainLog,
}

/// Runs `cfg.steps` iterations over language-balanced batches. Fully determined by `cfg.seed`.
pub fn train(cfg: &TrainConfig, corpus: &Corpus) -> Result<TrainOutput> {
    let ctx = TrainContext::new(corpus, cfg)?;
    let sampler = LanguageBalancedSampler::for_corpus(corpus, cfg.sampling_alpha)?;
    let mut state = TrainState::init(&ctx)?;
    let start = state.model.phi.checksum();
    let root = Rng::seed(cfg.seed).child(0x7452_4149_4e00);
    let mut records = Vec::with_capacity(cfg.steps);
    for it in 0..cfg.steps {
        let it_rng = root.child(it as u64);
        let batch = sampler.batch(cfg.batch_size, &mut it_rng.child(0));
        let rec = train_step(&mut state, &ctx, &batch, &mut it_rng.child(1))?;
        records.push(rec);
    }
    let end = state.model.phi.checksum();
    Ok(TrainOutput {
        model: state.model,
        log: TrainLog {
            records,
            phi_checksum_start: start,
            phi_checksum_end: end,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};
    use crate::latent_fill::FillMode;

    fn rec(s: u32, l: u32) -> EmbeddingRecord {
        EmbeddingRecord::new(s, l, Embedding::new(vec![s as f64 + 1.0, 1.0]).unwrap())
    }

    fn tiny_corpus() -> Corpus {
        generate_corpus(&CorpusConfig {
            speakers_per_language: vec![3, 2],
            holdout_speakers_per_language: 1,
            utterances_per_speaker: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn sampler_probabilities() {
        let mut ids = vec![0u32; 16];
        ids.push(1);
        let s = LanguageBalancedSampler::new(&ids, 2, 0.25).unwrap();
        let p = s.probabilities();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);

        let eq = LanguageBalancedSampler::new(&[0, 1, 2, 0, 1, 2], 3, 0.25).unwrap();
        for q in eq.probabilities() {
            assert!((q - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampler_rejects_empty_language() {
        assert!(LanguageBalancedSampler::new(&[0, 0, 2], 3, 0.25).is_err());
        assert!(LanguageBalancedSampler::new(&[0, 1], 2, 0.0).is_err());
    }

    #[test]
    fn partner_prefers_batch() {
        let batch = vec![rec(0, 0), rec(1, 0), rec(2, 1)];
        let pool = PartnerPool::new(vec![rec(0, 0), rec(5, 0), rec(2, 1), rec(3, 1)]);
        let mut rng = Rng::seed(3);
        for _ in 0..50 {
            let (p, src) = select_partner(&batch, 0, &pool, &mut rng).unwrap();
            assert_eq!(p.speaker_id, 1);
            assert_eq!(src, PartnerSource::Batch);
        }
    }

    #[test]
    fn partner_falls_back_to_corpus() {
        let batch = vec![rec(0, 0), rec(2, 1)];
        let pool = PartnerPool::new(vec![rec(0, 0), rec(4, 0), rec(2, 1)]);
        let (p, src) = select_partner(&batch, 0, &pool, &mut Rng::seed(1)).unwrap();
        assert_eq!((p.speaker_id, src), (4, PartnerSource::CorpusFallback));
    }

    #[test]
    fn single_speaker_language_is_degenerate() {
        let batch = vec![rec(0, 0), rec(2, 1)];
        let pool = PartnerPool::new(vec![rec(0, 0), rec(2, 1)]);
        assert!(matches!(
            select_partner(&batch, 0, &pool, &mut Rng::seed(1)),
            Err(Error::DegeneratePairing { language_id: 0 })
        ));
        // Two utterances of the only speaker in the batch still cannot pair.
        let same = vec![rec(0, 0), rec(0, 0)];
        assert!(matches!(
            select_partner(&same, 0, &pool, &mut Rng::seed(1)),
            Err(Error::DegeneratePairing { language_id: 0 })
        ));
    }

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let cfg = TrainConfig {
            tau: 0.3,
            seed: 9,
            lf: LatentFillConfig {
                mode: FillMode::NoNoise,
                ..Default::default()
            },
            ..Default::default()
        };
        let kv = KvFile::parse(&cfg.to_kv_string(), Path::new("t")).unwrap();
        assert_eq!(TrainConfig::from_kv(&kv).unwrap(), cfg);
        let bad = KvFile::parse("tau = 0.2\nwarmup = 10\n", Path::new("t.cfg")).unwrap();
        let err = TrainConfig::from_kv(&bad).unwrap_err();
        assert!(err.to_string().contains("t.cfg:2"));
        let bad = KvFile::parse("tau = 1.5\n", Path::new("t.cfg")).unwrap();
        assert!(TrainConfig::from_kv(&bad).is_err());
    }

    #[test]
    fn zero_steps_returns_initial_parameters() {
        let corpus = tiny_corpus();
        let cfg = TrainConfig {
            steps: 0,
            ..Default::default()
        };
        let out = train(&cfg, &corpus).unwrap();
        let init = ModelParams::init(cfg.model_dims(&corpus), cfg.seed, corpus.encoder()).unwrap();
        assert_eq!(out.model, init);
        assert!(out.log.records.is_empty());
    }

    #[test]
    fn degenerate_gates() {
        let corpus = tiny_corpus();
        for (tau, want) in [(0.0, Mode::Standard), (1.0, Mode::Lf)] {
            let cfg = TrainConfig {
                tau,
                steps: 20,
                batch_size: 4,
                ..Default::default()
            };
            let out = train(&cfg, &corpus).unwrap();
            assert!(out.log.records.iter().all(|r| r.mode == want));
            if want == Mode::Lf {
                assert!(out
                    .log
                    .records
                    .iter()
                    .all(|r| r.recon_nodes == 0 && r.losses.l_rec_acoustic.is_none() && r.losses.l_scl.is_none()));
            } else {
                assert!(out
                    .log
                    .records
                    .iter()
                    .all(|r| r.recon_nodes == 2 * 4 && r.pairs.is_empty()));
            }
        }
    }

    #[test]
    fn same_seed_same_run() {
        let corpus = tiny_corpus();
        let cfg = TrainConfig {
            steps: 15,
            batch_size: 4,
            tau: 0.5,
            ..Default::default()
        };
        let a = train(&cfg, &corpus).unwrap();
        let b = train(&cfg, &corpus).unwrap();
        assert_eq!(a.model.to_text(), b.model.to_text());
        assert_eq!(a.log.to_text(), b.log.to_text());
    }

    #[test]
    fn log_line_format() {
        let r = LogRecord {
            iteration: 3,
            mode: Mode::Lf,
            losses: LossBundle {
                l_lfcl: Some(-0.5),
                total: -0.5,
                ..Default::default()
            },
            pairs: vec![PairRecord {
                speaker_id: 1,
                language_id: 0,
                partner_speaker_id: 2,
                partner_language_id: 0,
                branch: Branch::NoiseOnly,
                lambda: None,
                source: PartnerSource::Batch,
            }],
            recon_nodes: 0,
        };
        let line = r.to_line();
        assert!(line.starts_with("iter=3\tmode=lf\t"));
        assert!(line.ends_with("pairs=1/0>2/0:noise_only:-"));
        assert!(line.contains("rec_acoustic=-"));
    }
}
