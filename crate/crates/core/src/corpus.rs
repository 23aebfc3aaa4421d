//! Synthetic multi-language, multi-speaker corpus.
//!
//! Each speaker has a latent `z` drawn uniformly on the unit sphere in `R^K`.
//! Each language has a content codebook (one `F`-dim pattern per token,
//! zero-mean over the vocabulary) and a mixing map `M_l: F x K`. A frame for
//! token `t` is `pattern_l(t) + M_l z + noise`. Because the codebook is
//! zero-mean, pooling over frames mostly cancels content and leaves `M_l z`,
//! which is what makes a frozen random encoder speaker-discriminative.
//!
//! Every speaker draws from its own child stream, so generation can be split
//! across threads without changing the output.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::embedding::{fmt_reals, Embedding, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::kvfile::KvFile;
use crate::model::{SpeakerEncoder, Utterance};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    /// Training speakers per language; its length is the language count.
    pub speakers_per_language: Vec<usize>,
    pub holdout_speakers_per_language: usize,
    pub utterances_per_speaker: usize,
    pub token_len_min: usize,
    pub token_len_max: usize,
    pub duration_min: usize,
    pub duration_max: usize,
    pub latent_dim: usize,
    pub frame_dim: usize,
    pub embed_dim: usize,
    pub vocab: usize,
    pub content_noise_std: f64,
    pub seed: u64,
    pub encoder_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            speakers_per_language: vec![40, 40],
            holdout_speakers_per_language: 8,
            utterances_per_speaker: 10,
            token_len_min: 4,
            token_len_max: 10,
            duration_min: 1,
            duration_max: 3,
            latent_dim: 8,
            frame_dim: 12,
            embed_dim: 16,
            vocab: 32,
            content_noise_std: 0.1,
            seed: 0,
            encoder_seed: 1,
        }
    }
}

pub const CORPUS_KEYS: [&str; 14] = [
    "speakers_per_language",
    "holdout_speakers_per_language",
    "utterances_per_speaker",
    "token_len_min",
    "token_len_max",
    "duration_min",
    "duration_max",
    "latent_dim",
    "frame_dim",
    "embed_dim",
    "vocab",
    "content_noise_std",
    "seed",
    "encoder_seed",
];

impl CorpusConfig {
    pub fn languages(&self) -> usize {
        self.speakers_per_language.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers_per_language.is_empty() {
            return Err(Error::Config("at least one language is required".into()));
        }
        if self.speakers_per_language.contains(&0) {
            return Err(Error::Config("every language needs >= 1 training speaker".into()));
        }
        let positive = [
            ("utterances_per_speaker", self.utterances_per_speaker),
            ("token_len_min", self.token_len_min),
            ("duration_min", self.duration_min),
            ("latent_dim", self.latent_dim),
            ("frame_dim", self.frame_dim),
            ("embed_dim", self.embed_dim),
            ("vocab", self.vocab),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be >= 1")));
        }
        if self.token_len_max < self.token_len_min {
            return Err(Error::Config("token_len_max < token_len_min".into()));
        }
        if self.duration_max < self.duration_min {
            return Err(Error::Config("duration_max < duration_min".into()));
        }
        if !(self.content_noise_std >= 0.0 && self.content_noise_std.is_finite()) {
            return Err(Error::Config("content_noise_std must be finite and >= 0".into()));
        }
        if self.vocab < 2 {
            return Err(Error::Config("vocab must be >= 2 for a zero-mean codebook".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        kv.check_keys(&CORPUS_KEYS)?;
        let mut c = Self::default();
        kv.set_list("speakers_per_language", &mut c.speakers_per_language)?;
        kv.set("holdout_speakers_per_language", &mut c.holdout_speakers_per_language)?;
        kv.set("utterances_per_speaker", &mut c.utterances_per_speaker)?;
        kv.set("token_len_min", &mut c.token_len_min)?;
        kv.set("token_len_max", &mut c.token_len_max)?;
        kv.set("duration_min", &mut c.duration_min)?;
        kv.set("duration_max", &mut c.duration_max)?;
        kv.set("latent_dim", &mut c.latent_dim)?;
        kv.set("frame_dim", &mut c.frame_dim)?;
        kv.set("embed_dim", &mut c.embed_dim)?;
        kv.set("vocab", &mut c.vocab)?;
        kv.set("content_noise_std", &mut c.content_noise_std)?;
        kv.set("seed", &mut c.seed)?;
        kv.set("encoder_seed", &mut c.encoder_seed)?;
        c.validate().map_err(|e| Error::format(kv.path(), 0, e.to_string()))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }

    /// Serializes as a `key = value` file that [`CorpusConfig::from_kv`] accepts.
    pub fn to_kv_string(&self) -> String {
        let spl = self
            .speakers_per_language
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "speakers_per_language = {spl}\nholdout_speakers_per_language = {}\nutterances_per_speaker = {}\n\
             token_len_min = {}\ntoken_len_max = {}\nduration_min = {}\nduration_max = {}\nlatent_dim = {}\n\
             frame_dim = {}\nembed_dim = {}\nvocab = {}\ncontent_noise_std = {:?}\nseed = {}\nencoder_seed = {}\n",
            self.holdout_speakers_per_language,
            self.utterances_per_speaker,
            self.token_len_min,
            self.token_len_max,
            self.duration_min,
            self.duration_max,
            self.latent_dim,
            self.frame_dim,
            self.embed_dim,
            self.vocab,
            self.content_noise_std,
            self.seed,
            self.encoder_seed
        )
    }
}

/// Per-language generative parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSpec {
    /// `[V, F]`, columns sum to zero.
    pub codebook: Tensor,
    /// `[F, K]`
    pub mixing: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerInfo {
    pub speaker_id: u32,
    pub language_id: u32,
    pub holdout: bool,
    /// Unit-norm latent in `R^K`.
    pub latent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub languages: Vec<LanguageSpec>,
    pub speakers: Vec<SpeakerInfo>,
    pub train: Vec<Utterance>,
    pub holdout: Vec<Utterance>,
    /// One held-aside utterance per speaker (train and holdout), in speaker order.
    pub references: Vec<Utterance>,
    /// The training encoder applied to each reference utterance.
    pub reference_embeddings: Vec<EmbeddingRecord>,
}

impl Corpus {
    pub fn encoder(&self) -> SpeakerEncoder {
        SpeakerEncoder::new(self.config.frame_dim, self.config.embed_dim, self.config.encoder_seed)
    }

    pub fn reference_for(&self, speaker_id: u32) -> Option<&EmbeddingRecord> {
        self.reference_embeddings.iter().find(|r| r.speaker_id == speaker_id)
    }

    pub fn holdout_speakers(&self) -> impl Iterator<Item = &SpeakerInfo> {
        self.speakers.iter().filter(|s| s.holdout)
    }

    /// Training speakers of `language_id`.
    pub fn train_speakers_in(&self, language_id: u32) -> usize {
        self.speakers
            .iter()
            .filter(|s| !s.holdout && s.language_id == language_id)
            .count()
    }
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Vec<f64> {
    (0..rows * cols).map(|_| rng.normal()).collect()
}

fn language_spec(cfg: &CorpusConfig, rng: &mut Rng) -> LanguageSpec {
    let (v, f, k) = (cfg.vocab, cfg.frame_dim, cfg.latent_dim);
    let mut codebook = normal_matrix(v, f, rng);
    for c in 0..f {
        let mean = (0..v).map(|r| codebook[r * f + c]).sum::<f64>() / v as f64;
        for r in 0..v {
            codebook[r * f + c] -= mean;
        }
    }
    let mixing = normal_matrix(f, k, rng);
    LanguageSpec {
        codebook: Tensor::matrix(v, f, codebook).expect("finite codebook"),
        mixing: Tensor::matrix(f, k, mixing).expect("finite mixing map"),
    }
}

fn unit_sphere(k: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
        let n = crate::embedding::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Draws a fresh token sequence with durations from the config's ranges.
pub fn sample_script(cfg: &CorpusConfig, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let len = cfg.token_len_min + rng.below(cfg.token_len_max - cfg.token_len_min + 1);
    let tokens = (0..len).map(|_| rng.below(cfg.vocab)).collect();
    let durations = (0..len)
        .map(|_| cfg.duration_min + rng.below(cfg.duration_max - cfg.duration_min + 1))
        .collect();
    (tokens, durations)
}

/// Renders frames for a script spoken by a speaker with latent `z`.
pub fn render_frames(
    cfg: &CorpusConfig,
    lang: &LanguageSpec,
    z: &[f64],
    tokens: &[usize],
    durations: &[usize],
    rng: &mut Rng,
) -> Tensor {
    let (f, k) = (cfg.frame_dim, cfg.latent_dim);
    let speaker_term: Vec<f64> = (0..f)
        .map(|r| (0..k).map(|c| lang.mixing.data()[r * k + c] * z[c]).sum())
        .collect();
    let t: usize = durations.iter().sum();
    let mut data = Vec::with_capacity(t * f);
    for (&tok, &d) in tokens.iter().zip(durations) {
        let pattern = lang.codebook.row(tok);
        for _ in 0..d {
            for c in 0..f {
                data.push(pattern[c] + speaker_term[c] + cfg.content_noise_std * rng.normal());
            }
        }
    }
    Tensor::matrix(t, f, data).expect("finite frames")
}

struct SpeakerOutput {
    info: SpeakerInfo,
    utterances: Vec<Utterance>,
    reference: Utterance,
}

/// Generates a corpus. Identical configs give identical corpora.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let root = Rng::seed(cfg.seed);
    let lang_root = root.child(0);
    let speaker_root = root.child(1);
    let languages: Vec<LanguageSpec> = (0..cfg.languages())
        .map(|l| language_spec(cfg, &mut lang_root.child(l as u64)))
        .collect();

    let mut plan: Vec<(u32, u32, bool)> = Vec::new();
    let mut next_id = 0u32;
    for (l, &n_train) in cfg.speakers_per_language.iter().enumerate() {
        for i in 0..n_train + cfg.holdout_speakers_per_language {
            plan.push((next_id, l as u32, i >= n_train));
            next_id += 1;
        }
    }

    let outputs: Vec<SpeakerOutput> = plan
        .par_iter()
        .map(|&(speaker_id, language_id, holdout)| {
            let mut rng = speaker_root.child(speaker_id as u64);
            let latent = unit_sphere(cfg.latent_dim, &mut rng);
            let lang = &languages[language_id as usize];
            let make = |rng: &mut Rng| {
                let (tokens, durations) = sample_script(cfg, rng);
                let frames = render_frames(cfg, lang, &latent, &tokens, &durations, rng);
                Utterance {
                    tokens,
                    durations,
                    frames,
                    speaker_id,
                    language_id,
                }
            };
            let reference = make(&mut rng);
            let utterances = (0..cfg.utterances_per_speaker).map(|_| make(&mut rng)).collect();
            SpeakerOutput {
                info: SpeakerInfo {
                    speaker_id,
                    language_id,
                    holdout,
                    latent: latent.clone(),
                },
                utterances,
                reference,
            }
        })
        .collect();

    let mut speakers = Vec::with_capacity(outputs.len());
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    let mut references = Vec::with_capacity(outputs.len());
    for out in outputs {
        if out.info.holdout {
            holdout.extend(out.utterances);
        } else {
            train.extend(out.utterances);
        }
        references.push(out.reference);
        speakers.push(out.info);
    }

    let mut corpus = Corpus {
        config: cfg.clone(),
        languages,
        speakers,
        train,
        holdout,
        references,
        reference_embeddings: Vec::new(),
    };
    corpus.reference_embeddings = reference_embeddings(&corpus)?;
    Ok(corpus)
}

fn reference_embeddings(corpus: &Corpus) -> Result<Vec<EmbeddingRecord>> {
    let phi = corpus.encoder();
    corpus
        .references
        .iter()
        .map(|u| Ok(EmbeddingRecord::new(u.speaker_id, u.language_id, phi.embed(&u.frames)?)))
        .collect()
}

const MAGIC: &str = "latfill-corpus 1";

fn write_tensor(out: &mut String, name: &str, t: &Tensor) {
    let _ = writeln!(out, "{name} {} {}", t.rows(), t.cols());
    for r in 0..t.rows() {
        out.push_str(&fmt_reals(t.row(r), ' '));
        out.push('\n');
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Text serialization of a corpus. Reference embeddings are not stored; they
/// are recomputed from the reference utterances on load.
pub fn corpus_to_string(c: &Corpus) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    for line in c.config.to_kv_string().lines() {
        let _ = writeln!(out, "config {line}");
    }
    for (l, spec) in c.languages.iter().enumerate() {
        let _ = writeln!(out, "language {l}");
        write_tensor(&mut out, "codebook", &spec.codebook);
        write_tensor(&mut out, "mixing", &spec.mixing);
    }
    for s in &c.speakers {
        let _ = writeln!(
            out,
            "speaker {} {} {} {}",
            s.speaker_id,
            s.language_id,
            u8::from(s.holdout),
            fmt_reals(&s.latent, ',')
        );
    }
    for (split, list) in [
        ("train", &c.train),
        ("holdout", &c.holdout),
        ("reference", &c.references),
    ] {
        let _ = writeln!(out, "split {split} {}", list.len());
        for u in list {
            let _ = writeln!(out, "utterance {} {}", u.speaker_id, u.language_id);
            let _ = writeln!(out, "tokens {}", join(&u.tokens));
            let _ = writeln!(out, "durations {}", join(&u.durations));
            write_tensor(&mut out, "frames", &u.frames);
        }
    }
    let _ = writeln!(out, "end");
    out
}

pub fn save_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, corpus_to_string(corpus)).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path)
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l))
            }
            None => Err(Error::format(
                self.path,
                self.last + 1,
                format!("truncated file: expected {what}"),
            )),
        }
    }

    fn peek_starts_with(&mut self, prefix: &str) -> bool {
        self.inner.peek().is_some_and(|(_, l)| l.starts_with(prefix))
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::format(self.path, line, msg)
    }

    fn tagged(&mut self, tag: &str) -> Result<(usize, Vec<&'a str>)> {
        let (ln, line) = self.next(tag)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(tag) {
            return Err(self.err(ln, format!("expected {tag:?} line, found {line:?}")));
        }
        Ok((ln, parts.collect()))
    }

    fn tensor(&mut self, tag: &str) -> Result<Tensor> {
        let (ln, head) = self.tagged(tag)?;
        let dims: Vec<usize> = head
            .iter()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.err(ln, "bad tensor dimensions"))?;
        if dims.len() != 2 {
            return Err(self.err(ln, "tensor header needs rows and cols"));
        }
        let (rows, cols) = (dims[0], dims[1]);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, row) = self.next("tensor row")?;
            let before = data.len();
            for tok in row.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|e| self.err(ln, format!("bad value: {e}")))?,
                );
            }
            if data.len() - before != cols {
                return Err(self.err(ln, format!("expected {cols} values")));
            }
        }
        Tensor::matrix(rows, cols, data).map_err(|e| self.err(ln, e.to_string()))
    }
}

fn parse_nums<T: std::str::FromStr>(parts: &[&str], lines: &Lines, ln: usize) -> Result<Vec<T>> {
    parts
        .iter()
        .map(|s| s.parse::<T>().map_err(|_| lines.err(ln, format!("bad number {s:?}"))))
        .collect()
}

pub fn parse_corpus(text: &str, path: &Path) -> Result<Corpus> {
    let mut lines = Lines {
        path,
        inner: text.lines().enumerate().peekable(),
        last: 0,
    };
    let (ln, magic) = lines.next("header")?;
    if magic.trim() != MAGIC {
        return Err(lines.err(ln, format!("unsupported header {magic:?}, expected {MAGIC:?}")));
    }

    let mut cfg_text = String::new();
    while lines.peek_starts_with("config ") {
        let (_, l) = lines.next("config")?;
        cfg_text.push_str(&l["config ".len()..]);
        cfg_text.push('\n');
    }
    let config = CorpusConfig::from_kv(&KvFile::parse(&cfg_text, path)?)?;

    let mut languages = Vec::with_capacity(config.languages());
    for l in 0..config.languages() {
        let (ln, parts) = lines.tagged("language")?;
        if parts != [l.to_string().as_str()] {
            return Err(lines.err(ln, format!("expected language {l}")));
        }
        let codebook = lines.tensor("codebook")?;
        let mixing = lines.tensor("mixing")?;
        if codebook.shape() != [config.vocab, config.frame_dim]
            || mixing.shape() != [config.frame_dim, config.latent_dim]
        {
            return Err(lines.err(ln, "language tensors do not match config dimensions"));
        }
        languages.push(LanguageSpec { codebook, mixing });
    }

    let mut speakers = Vec::new();
    while lines.peek_starts_with("speaker ") {
        let (ln, parts) = lines.tagged("speaker")?;
        if parts.len() != 4 {
            return Err(lines.err(ln, "speaker line needs id, language, holdout flag, latent"));
        }
        let ids: Vec<u32> = parse_nums(&parts[..3], &lines, ln)?;
        let latent = parts[3]
            .split(',')
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| lines.err(ln, "bad latent"))?;
        if latent.len() != config.latent_dim || ids[1] as usize >= config.languages() || ids[2] > 1 {
            return Err(lines.err(ln, "speaker record inconsistent with config"));
        }
        speakers.push(SpeakerInfo {
            speaker_id: ids[0],
            language_id: ids[1],
            holdout: ids[2] == 1,
            latent,
        });
    }

    let mut splits: Vec<Vec<Utterance>> = Vec::with_capacity(3);
    for name in ["train", "holdout", "reference"] {
        let (ln, parts) = lines.tagged("split")?;
        if parts.len() != 2 || parts[0] != name {
            return Err(lines.err(ln, format!("expected split {name}")));
        }
        let count: usize = parts[1].parse().map_err(|_| lines.err(ln, "bad split count"))?;
        let mut list = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, head) = lines.tagged("utterance")?;
            let ids: Vec<u32> = parse_nums(&head, &lines, ln)?;
            if ids.len() != 2 {
                return Err(lines.err(ln, "utterance line needs speaker and language"));
            }
            let (tln, tparts) = lines.tagged("tokens")?;
            let tokens: Vec<usize> = parse_nums(&tparts, &lines, tln)?;
            let (dln, dparts) = lines.tagged("durations")?;
            let durations: Vec<usize> = parse_nums(&dparts, &lines, dln)?;
            let frames = lines.tensor("frames")?;
            let u = Utterance {
                tokens,
                durations,
                frames,
                speaker_id: ids[0],
                language_id: ids[1],
            };
            u.validate().map_err(|e| lines.err(ln, e.to_string()))?;
            if u.tokens.iter().any(|&t| t >= config.vocab)
                || u.frames.cols() != config.frame_dim
                || u.language_id as usize >= config.languages()
            {
                return Err(lines.err(ln, "utterance inconsistent with config"));
            }
            list.push(u);
        }
        splits.push(list);
    }
    let (ln, end) = lines.next("end marker")?;
    if end.trim() != "end" {
        return Err(lines.err(ln, "expected end marker"));
    }

    let references = splits.pop().expect("three splits");
    let holdout = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    let mut corpus = Corpus {
        config,
        languages,
        speakers,
        train,
        holdout,
        references,
        reference_embeddings: Vec::new(),
    };
    corpus.reference_embeddings = reference_embeddings(&corpus).map_err(|e| Error::format(path, 0, e.to_string()))?;
    Ok(corpus)
}

/// Mean cosine of encoder embeddings over same-speaker and different-speaker
/// utterance pairs among `utterances`.
pub fn separability(phi: &SpeakerEncoder, utterances: &[Utterance]) -> Result<(f64, f64)> {
    let embs: Vec<Embedding> = utterances.iter().map(|u| phi.embed(&u.frames)).collect::<Result<_>>()?;
    let (mut same, mut n_same, mut diff, mut n_diff) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            let c = crate::embedding::cosine_similarity(&embs[i], &embs[j])?;
            if utterances[i].speaker_id == utterances[j].speaker_id {
                same += c;
                n_same += 1;
            } else {
                diff += c;
                n_diff += 1;
            }
        }
    }
    if n_same == 0 || n_diff == 0 {
        return Err(Error::InvalidArgument("need same- and different-speaker pairs".into()));
    }
    Ok((same / n_same as f64, diff / n_diff as f64))
}
