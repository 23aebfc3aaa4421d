//! Latent filling: augment a speaker embedding by interpolating towards a
//! same-language partner and/or adding small Gaussian noise.
//!
//! Every call draws `u1, u2 ~ U(0,1)`, `lambda ~ Beta(beta, beta)` and a noise
//! vector `G ~ N(0, sigma^2 I)` in that order, whatever branch ends up taken,
//! so the randomness consumed per call is constant. In [`FillMode::Full`]:
//!
//! ```text
//! if u1 > epsilon:  s~ = lambda * s_i + (1 - lambda) * s_j ; if u2 < epsilon: s~ += G
//! else:             s~ = s_i + G
//! ```
//!
//! The two ablations remove one mechanism each: `NoNoise` always interpolates
//! and never adds `G`, `NoInterpolation` always returns `s_i + G`.

use std::fmt;
use std::str::FromStr;

use crate::embedding::{check_dims, fmt_real, Embedding, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FillMode {
    #[default]
    Full,
    NoNoise,
    NoInterpolation,
}

impl FillMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FillMode::Full => "full",
            FillMode::NoNoise => "no_noise",
            FillMode::NoInterpolation => "no_interpolation",
        }
    }

    /// Whether this mode can ever interpolate, and therefore needs a same-language partner.
    pub fn interpolates(self) -> bool {
        !matches!(self, FillMode::NoInterpolation)
    }
}

impl fmt::Display for FillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(FillMode::Full),
            "no_noise" => Ok(FillMode::NoNoise),
            "no_interpolation" => Ok(FillMode::NoInterpolation),
            other => Err(Error::Config(format!(
                "unknown fill mode {other:?} (expected full, no_noise or no_interpolation)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentFillConfig {
    /// Noise-adding probability, in `[0, 1]`.
    pub epsilon: f64,
    /// Shape of the symmetric Beta distribution the interpolation rate is drawn from.
    pub beta: f64,
    /// Per-component standard deviation of the additive noise.
    pub sigma: f64,
    pub mode: FillMode,
}

impl Default for LatentFillConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            beta: 0.5,
            sigma: 1e-4,
            mode: FillMode::Full,
        }
    }
}

impl LatentFillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    InterpolatePlusNoise,
    InterpolateOnly,
    NoiseOnly,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::InterpolatePlusNoise, Branch::InterpolateOnly, Branch::NoiseOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::InterpolatePlusNoise => "interpolate_plus_noise",
            Branch::InterpolateOnly => "interpolate_only",
            Branch::NoiseOnly => "noise_only",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Branch::InterpolatePlusNoise => 0,
            Branch::InterpolateOnly => 1,
            Branch::NoiseOnly => 2,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which branch a fill took. `lambda` is present exactly when it interpolated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FillOutcome {
    pub branch: Branch,
    pub lambda: Option<f64>,
    pub partner_speaker_id: Option<u32>,
}

/// The random variates consumed by one fill.
#[derive(Debug, Clone, PartialEq)]
pub struct FillDraws {
    pub u1: f64,
    pub u2: f64,
    pub lambda: f64,
    pub noise: Vec<f64>,
}

impl FillDraws {
    pub fn sample(dim: usize, cfg: &LatentFillConfig, rng: &mut Rng) -> Result<Self> {
        let u1 = rng.uniform();
        let u2 = rng.uniform();
        let lambda = sample_lambda(cfg.beta, rng)?;
        let noise = sample_noise(dim, cfg.sigma, rng)?;
        Ok(Self { u1, u2, lambda, noise })
    }
}

/// One exact draw from `Beta(beta, beta)`.
pub fn sample_lambda(beta: f64, rng: &mut Rng) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")));
    }
    rng.beta(beta, beta)
}

/// `dim` independent draws from `N(0, sigma^2)`.
pub fn sample_noise(dim: usize, sigma: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("noise dimension must be >= 1".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
    }
    Ok((0..dim).map(|_| sigma * rng.normal()).collect())
}

/// Applies the branch logic to pre-drawn variates.
pub fn fill_with_draws(
    s_i: &Embedding,
    s_j: &Embedding,
    cfg: &LatentFillConfig,
    draws: &FillDraws,
) -> Result<(Embedding, FillOutcome)> {
    check_dims("latent_fill", s_i.dim(), s_j.dim())?;
    check_dims("latent_fill noise", s_i.dim(), draws.noise.len())?;

    let (interpolate, add_noise) = match cfg.mode {
        FillMode::Full => {
            if draws.u1 > cfg.epsilon {
                (true, draws.u2 < cfg.epsilon)
            } else {
                (false, true)
            }
        }
        FillMode::NoNoise => (true, false),
        FillMode::NoInterpolation => (false, true),
    };

    let lambda = draws.lambda;
    let mut out: Vec<f64> = if interpolate {
        s_i.as_slice()
            .iter()
            .zip(s_j.as_slice())
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect()
    } else {
        s_i.as_slice().to_vec()
    };
    if add_noise {
        for (o, g) in out.iter_mut().zip(&draws.noise) {
            *o += g;
        }
    }

    let branch = match (interpolate, add_noise) {
        (true, true) => Branch::InterpolatePlusNoise,
        (true, false) => Branch::InterpolateOnly,
        (false, _) => Branch::NoiseOnly,
    };
    let outcome = FillOutcome {
        branch,
        lambda: interpolate.then_some(lambda),
        partner_speaker_id: None,
    };
    Ok((Embedding::new(out)?, outcome))
}

/// Augments `s_i` with partner `s_j`.
pub fn latent_fill(
    s_i: &Embedding,
    s_j: &Embedding,
    cfg: &LatentFillConfig,
    rng: &mut Rng,
) -> Result<(Embedding, FillOutcome)> {
    check_dims("latent_fill", s_i.dim(), s_j.dim())?;
    let draws = FillDraws::sample(s_i.dim(), cfg, rng)?;
    fill_with_draws(s_i, s_j, cfg, &draws)
}

/// Record-level fill that also checks the same-language constraint and
/// fills in the partner id.
pub fn latent_fill_records(
    source: &EmbeddingRecord,
    partner: &EmbeddingRecord,
    cfg: &LatentFillConfig,
    rng: &mut Rng,
) -> Result<(Embedding, FillOutcome)> {
    if cfg.mode.interpolates() && source.language_id != partner.language_id {
        return Err(Error::InvalidArgument(format!(
            "partner speaker {} has language {}, source speaker {} has language {}",
            partner.speaker_id, partner.language_id, source.speaker_id, source.language_id
        )));
    }
    let (emb, mut outcome) = latent_fill(&source.embedding, &partner.embedding, cfg, rng)?;
    outcome.partner_speaker_id = Some(partner.speaker_id);
    Ok((emb, outcome))
}

/// One augmented record and how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub record: EmbeddingRecord,
    pub source_speaker_id: u32,
    pub outcome: FillOutcome,
}

impl Augmented {
    /// Audit line: `branch<TAB>lambda<TAB>source<TAB>partner`, `-` for no lambda.
    pub fn audit_line(&self) -> String {
        let lambda = self.outcome.lambda.map_or_else(|| "-".to_string(), fmt_real);
        let partner = self
            .outcome
            .partner_speaker_id
            .map_or_else(|| "-".to_string(), |p| p.to_string());
        format!(
            "{}\t{}\t{}\t{}",
            self.outcome.branch, lambda, self.source_speaker_id, partner
        )
    }
}

/// Draws `n` augmentations from `records`. Each picks a source uniformly among
/// records that have another same-language record, then a partner uniformly
/// among those others. The augmented record keeps the source's ids.
pub fn augment_records(
    records: &[EmbeddingRecord],
    cfg: &LatentFillConfig,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<Augmented>> {
    cfg.validate()?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let partners: Vec<Vec<usize>> = (0..records.len())
        .map(|i| {
            (0..records.len())
                .filter(|&j| j != i && records[j].language_id == records[i].language_id)
                .collect()
        })
        .collect();
    let sources: Vec<usize> = (0..records.len()).filter(|&i| !partners[i].is_empty()).collect();
    if sources.is_empty() {
        return Err(Error::InvalidArgument(
            "augmentation needs at least two records sharing a language".into(),
        ));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let i = sources[rng.below(sources.len())];
        let j = partners[i][rng.below(partners[i].len())];
        let (embedding, outcome) = latent_fill_records(&records[i], &records[j], cfg, rng)?;
        out.push(Augmented {
            record: EmbeddingRecord::new(records[i].speaker_id, records[i].language_id, embedding),
            source_speaker_id: records[i].speaker_id,
            outcome,
        });
    }
    Ok(out)
}
