//! Toy conditional generator and the frozen speaker encoder.
//!
//! Per token the hidden vector is `concat(token_emb, language_emb, s)`, so the
//! hidden width is `E + 4 + D`. Hidden rows are repeated by duration, then a
//! `linear -> tanh -> linear` decoder maps them to acoustic frames. A linear
//! head on the per-token hidden vector predicts durations in frames.
//!
//! The speaker encoder is `mean_pool_rows -> linear(F, D) -> tanh -> linear(D, D)`
//! with parameters fixed by its seed.

use std::fmt::Write as _;
use std::path::Path;

use crate::embedding::{fmt_reals, Embedding};
use crate::error::{Error, Result};
use crate::grad::{Graph, NodeId, Tensor};
use crate::rng::Rng;

/// Width of the language embedding.
pub const LANGUAGE_DIM: usize = 4;

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub tokens: Vec<usize>,
    /// Frames emitted per token, each >= 1.
    pub durations: Vec<usize>,
    /// `[sum(durations), F]`.
    pub frames: Tensor,
    pub speaker_id: u32,
    pub language_id: u32,
}

impl Utterance {
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() || self.tokens.len() != self.durations.len() {
            return Err(Error::InvalidArgument(format!(
                "utterance has {} tokens and {} durations",
                self.tokens.len(),
                self.durations.len()
            )));
        }
        if self.durations.contains(&0) {
            return Err(Error::InvalidArgument("durations must be >= 1".into()));
        }
        let t: usize = self.durations.iter().sum();
        if self.frames.shape().len() != 2 || self.frames.rows() != t {
            return Err(Error::InvalidArgument(format!(
                "frames shape {:?} does not match total duration {t}",
                self.frames.shape()
            )));
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }
}

fn init_vector(len: usize, fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::vector((0..len).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect()).expect("finite init")
}

fn init_matrix(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect();
    Tensor::matrix(rows, cols, data).expect("finite init")
}

/// Frozen pool-then-project speaker encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEncoder {
    seed: u64,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

/// Leaves holding an encoder's parameters inside one graph.
#[derive(Debug, Clone, Copy)]
pub struct EncoderNodes {
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
}

impl SpeakerEncoder {
    pub fn new(frame_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let rng = Rng::seed(seed);
        Self {
            seed,
            w1: init_matrix(embed_dim, frame_dim, frame_dim, &mut rng.child(0)),
            b1: init_vector(embed_dim, frame_dim, &mut rng.child(1)),
            w2: init_matrix(embed_dim, embed_dim, embed_dim, &mut rng.child(2)),
            b2: init_vector(embed_dim, embed_dim, &mut rng.child(3)),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frame_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.shape()[0]
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t.data() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn attach(&self, g: &mut Graph) -> EncoderNodes {
        EncoderNodes {
            w1: g.leaf(self.w1.clone()),
            b1: g.leaf(self.b1.clone()),
            w2: g.leaf(self.w2.clone()),
            b2: g.leaf(self.b2.clone()),
        }
    }

    /// Differentiable encoding of a `[T, F]` frame node into a `[D]` node.
    pub fn encode(g: &mut Graph, nodes: &EncoderNodes, frames: NodeId) -> Result<NodeId> {
        let fv = g.value(frames);
        if fv.shape().len() != 2 {
            return Err(Error::Shape {
                op: "speaker_encode",
                detail: format!("frames must be [T, F], got {:?}", fv.shape()),
            });
        }
        let pooled = g.mean_pool_rows(frames)?;
        let h = g.linear(nodes.w1, pooled, nodes.b1)?;
        let h = g.tanh(h)?;
        g.linear(nodes.w2, h, nodes.b2)
    }

    pub fn embed(&self, frames: &Tensor) -> Result<Embedding> {
        if frames.shape().len() != 2 || frames.cols() != self.frame_dim() {
            return Err(Error::Shape {
                op: "speaker_encode",
                detail: format!(
                    "frames {:?} incompatible with frame dim {}",
                    frames.shape(),
                    self.frame_dim()
                ),
            });
        }
        let mut g = Graph::new();
        let nodes = self.attach(&mut g);
        let x = g.leaf(frames.clone());
        let out = Self::encode(&mut g, &nodes, x)?;
        Embedding::new(g.value(out).data().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub token_dim: usize,
    pub languages: usize,
    pub embed_dim: usize,
    pub frame_dim: usize,
    pub decoder_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            vocab: 32,
            token_dim: 8,
            languages: 2,
            embed_dim: 16,
            frame_dim: 12,
            decoder_hidden: 32,
        }
    }
}

impl ModelDims {
    /// Per-token hidden width `E + 4 + D`.
    pub fn hidden(&self) -> usize {
        self.token_dim + LANGUAGE_DIM + self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("vocab", self.vocab),
            ("token_dim", self.token_dim),
            ("languages", self.languages),
            ("embed_dim", self.embed_dim),
            ("frame_dim", self.frame_dim),
            ("decoder_hidden", self.decoder_hidden),
        ];
        if let Some((name, _)) = all.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        Ok(())
    }
}

pub const PARAM_NAMES: [&str; 8] = [
    "token_table",
    "language_table",
    "duration_w",
    "duration_b",
    "decoder_w1",
    "decoder_b1",
    "decoder_w2",
    "decoder_b2",
];

const ENCODER_NAMES: [&str; 4] = ["encoder_w1", "encoder_b1", "encoder_w2", "encoder_b2"];

/// Trainable generator parameters plus the frozen encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub seed: u64,
    /// Trainable tensors in [`PARAM_NAMES`] order.
    pub trainable: Vec<Tensor>,
    pub phi: SpeakerEncoder,
}

/// Graph leaves for one model instance.
#[derive(Debug, Clone)]
pub struct ModelNodes {
    pub trainable: Vec<NodeId>,
    pub phi: EncoderNodes,
}

/// Output of [`ModelParams::forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `[T, F]`
    pub frames: NodeId,
    /// `[L]`
    pub durations: NodeId,
}

impl ModelParams {
    pub fn init(dims: ModelDims, seed: u64, phi: SpeakerEncoder) -> Result<Self> {
        dims.validate()?;
        if phi.frame_dim() != dims.frame_dim || phi.embed_dim() != dims.embed_dim {
            return Err(Error::Config(format!(
                "speaker encoder maps {} -> {}, model expects {} -> {}",
                phi.frame_dim(),
                phi.embed_dim(),
                dims.frame_dim,
                dims.embed_dim
            )));
        }
        let rng = Rng::seed(seed);
        let h = dims.hidden();
        let hd = dims.decoder_hidden;
        let trainable = vec![
            init_matrix(dims.vocab, dims.token_dim, dims.token_dim, &mut rng.child(0)),
            init_matrix(dims.languages, LANGUAGE_DIM, LANGUAGE_DIM, &mut rng.child(1)),
            init_matrix(1, h, h, &mut rng.child(2)),
            init_vector(1, h, &mut rng.child(3)),
            init_matrix(hd, h, h, &mut rng.child(4)),
            init_vector(hd, h, &mut rng.child(5)),
            init_matrix(dims.frame_dim, hd, hd, &mut rng.child(6)),
            init_vector(dims.frame_dim, hd, &mut rng.child(7)),
        ];
        Ok(Self {
            dims,
            seed,
            trainable,
            phi,
        })
    }

    pub fn attach(&self, g: &mut Graph) -> ModelNodes {
        ModelNodes {
            trainable: self.trainable.iter().map(|t| g.leaf(t.clone())).collect(),
            phi: self.phi.attach(g),
        }
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable.iter().map(Tensor::len).sum()
    }

    /// Runs the generator. With `durations = None` (inference) each token
    /// emits `max(1, round(d_hat))` frames from the duration head.
    pub fn forward(
        &self,
        g: &mut Graph,
        nodes: &ModelNodes,
        tokens: &[usize],
        language_id: u32,
        speaker: NodeId,
        durations: Option<&[usize]>,
    ) -> Result<ForwardOutput> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("token sequence is empty".into()));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.dims.vocab) {
            return Err(Error::InvalidArgument(format!(
                "token {t} out of range for vocabulary of {}",
                self.dims.vocab
            )));
        }
        let lang = language_id as usize;
        if lang >= self.dims.languages {
            return Err(Error::InvalidArgument(format!(
                "language {language_id} out of range for {} languages",
                self.dims.languages
            )));
        }
        if g.value(speaker).len() != self.dims.embed_dim {
            return Err(Error::DimensionMismatch {
                context: "forward speaker embedding",
                expected: self.dims.embed_dim,
                actual: g.value(speaker).len(),
            });
        }
        let p = &nodes.trainable;
        let n = tokens.len();

        let tok = g.gather_rows(p[0], tokens)?;
        let lang_rows = g.gather_rows(p[1], &vec![lang; n])?;
        let spk_rows = g.gather_rows(speaker, &vec![0; n])?;
        let hidden = g.concat(&[tok, lang_rows, spk_rows])?;

        let dur = g.linear(p[2], hidden, p[3])?;
        let dur = g.reshape(dur, &[n])?;

        let inferred: Vec<usize>;
        let durs = match durations {
            Some(d) => {
                if d.len() != n {
                    return Err(Error::InvalidArgument(format!("{} durations for {n} tokens", d.len())));
                }
                d
            }
            None => {
                inferred = inference_durations(g.value(dur).data());
                &inferred
            }
        };
        let up = upsample_by_duration(g, hidden, durs)?;
        let z = g.linear(p[4], up, p[5])?;
        let z = g.tanh(z)?;
        let frames = g.linear(p[6], z, p[7])?;
        Ok(ForwardOutput { frames, durations: dur })
    }

    /// Inference-mode synthesis from a plain embedding, returning frames.
    pub fn synthesize(&self, tokens: &[usize], language_id: u32, speaker: &Embedding) -> Result<Tensor> {
        let mut g = Graph::new();
        let nodes = self.attach(&mut g);
        let s = g.leaf(Tensor::vector(speaker.as_slice().to_vec())?);
        let out = self.forward(&mut g, &nodes, tokens, language_id, s, None)?;
        Ok(g.value(out.frames).clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let d = &self.dims;
        let mut out = String::new();
        let _ = writeln!(out, "latfill-model 1");
        let _ = writeln!(
            out,
            "vocab={} token_dim={} frame_dim={} embed_dim={} languages={} hidden={} decoder_hidden={} seed={} encoder_seed={}",
            d.vocab, d.token_dim, d.frame_dim, d.embed_dim, d.languages, d.hidden(),
            d.decoder_hidden, self.seed, self.phi.seed
        );
        let named = PARAM_NAMES
            .iter()
            .zip(&self.trainable)
            .chain(ENCODER_NAMES.iter().zip(self.phi.tensors()));
        for (name, t) in named {
            let _ = writeln!(out, "tensor {name} {}", shape_str(t));
            for r in 0..t.rows() {
                out.push_str(&fmt_reals(t.row(r), ' '));
                out.push('\n');
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::format(path, 0, format!("unexpected end of file, expected {what}")))
        };
        let (ln, magic) = next("header")?;
        if magic.trim() != "latfill-model 1" {
            return Err(Error::format(path, ln, format!("bad header {magic:?}")));
        }
        let (ln, dims_line) = next("dimensions")?;
        let kv = parse_kv_line(dims_line, path, ln)?;
        let get = |k: &str| -> Result<u64> {
            kv.iter()
                .find(|(key, _)| key == k)
                .ok_or_else(|| Error::format(path, ln, format!("missing {k}")))?
                .1
                .parse()
                .map_err(|_| Error::format(path, ln, format!("bad value for {k}")))
        };
        let dims = ModelDims {
            vocab: get("vocab")? as usize,
            token_dim: get("token_dim")? as usize,
            frame_dim: get("frame_dim")? as usize,
            embed_dim: get("embed_dim")? as usize,
            languages: get("languages")? as usize,
            decoder_hidden: get("decoder_hidden")? as usize,
        };
        dims.validate().map_err(|e| Error::format(path, ln, e.to_string()))?;
        if get("hidden")? as usize != dims.hidden() {
            return Err(Error::format(path, ln, "hidden width inconsistent with dimensions"));
        }
        let seed = get("seed")?;
        let encoder_seed = get("encoder_seed")?;

        // Reference shapes come from a fresh init with the same dimensions.
        let template = ModelParams::init(
            dims,
            seed,
            SpeakerEncoder::new(dims.frame_dim, dims.embed_dim, encoder_seed),
        )
        .map_err(|e| Error::format(path, ln, e.to_string()))?;
        let expected: Vec<(&str, &Tensor)> = PARAM_NAMES
            .iter()
            .copied()
            .zip(template.trainable.iter())
            .chain(ENCODER_NAMES.iter().copied().zip(template.phi.tensors()))
            .collect();

        let mut loaded = Vec::with_capacity(expected.len());
        for (name, tmpl) in expected {
            let (ln, head) = next("tensor header")?;
            let want = format!("tensor {name} {}", shape_str(tmpl));
            if head.trim() != want {
                return Err(Error::format(path, ln, format!("expected {want:?}, found {head:?}")));
            }
            let mut data = Vec::with_capacity(tmpl.len());
            for _ in 0..tmpl.rows() {
                let (ln, row) = next("tensor row")?;
                let vals = row
                    .split_whitespace()
                    .map(str::parse::<f64>)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::format(path, ln, format!("bad value: {e}")))?;
                if vals.len() != tmpl.cols() {
                    return Err(Error::format(
                        path,
                        ln,
                        format!("expected {} values, found {}", tmpl.cols(), vals.len()),
                    ));
                }
                data.extend(vals);
            }
            let t = Tensor::new(tmpl.shape().to_vec(), data).map_err(|e| Error::format(path, ln, e.to_string()))?;
            loaded.push(t);
        }
        let enc = loaded.split_off(PARAM_NAMES.len());
        let mut enc = enc.into_iter();
        let phi = SpeakerEncoder {
            seed: encoder_seed,
            w1: enc.next().expect("4 encoder tensors"),
            b1: enc.next().expect("4 encoder tensors"),
            w2: enc.next().expect("4 encoder tensors"),
            b2: enc.next().expect("4 encoder tensors"),
        };
        Ok(Self {
            dims,
            seed,
            trainable: loaded,
            phi,
        })
    }
}

fn shape_str(t: &Tensor) -> String {
    t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
}

pub(crate) fn parse_kv_line(line: &str, path: &Path, ln: usize) -> Result<Vec<(String, String)>> {
    line.split_whitespace()
        .map(|tok| {
            tok.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::format(path, ln, format!("expected key=value, found {tok:?}")))
        })
        .collect()
}

/// `max(1, round(d))` per token.
pub fn inference_durations(pred: &[f64]) -> Vec<usize> {
    pred.iter()
        .map(|&d| {
            let r = d.round();
            if r < 1.0 {
                1
            } else {
                r as usize
            }
        })
        .collect()
}

/// Repeats row `i` of `h` `d[i]` times. Backward sums over the repeats.
pub fn upsample_by_duration(g: &mut Graph, h: NodeId, d: &[usize]) -> Result<NodeId> {
    let rows = g.value(h).rows();
    if d.len() != rows {
        return Err(Error::Shape {
            op: "upsample_by_duration",
            detail: format!("{} durations for {rows} rows", d.len()),
        });
    }
    if d.contains(&0) {
        return Err(Error::InvalidArgument("durations must be >= 1".into()));
    }
    let idx: Vec<usize> = d
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| std::iter::repeat_n(i, n))
        .collect();
    g.gather_rows(h, &idx)
}
