//! Finite-difference verification of every graph primitive and of the
//! composite consistency-loss graphs.

use std::fmt::Write as _;

use crate::embedding::Embedding;
use crate::error::Result;
use crate::grad::{grad_check, Graph, NodeId, Tensor};
use crate::latent_fill::{latent_fill, LatentFillConfig};
use crate::losses::{lfcl, reconstruction_acoustic, reconstruction_duration, scl};
use crate::model::{ModelDims, ModelNodes, ModelParams, SpeakerEncoder};
use crate::rng::Rng;

pub const PRIMITIVE_TOL: f64 = 1e-5;
pub const COMPOSITE_TOL: f64 = 1e-4;
pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub rows: Vec<CheckRow>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(CheckRow::passed)
    }

    pub fn row(&self, name: &str) -> Option<&CheckRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<22} {:>6} {:>12} {:>8}  result\n",
            "check", "trials", "max_rel_err", "tol"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<22} {:>6} {:>12.3e} {:>8.0e}  {}",
                r.name,
                r.trials,
                r.max_rel_error,
                r.tol,
                if r.passed() { "pass" } else { "FAIL" }
            );
        }
        out
    }
}

fn normals(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn vec_t(n: usize, rng: &mut Rng) -> Tensor {
    Tensor::vector(normals(n, rng)).expect("finite")
}

fn mat_t(r: usize, c: usize, rng: &mut Rng) -> Tensor {
    Tensor::matrix(r, c, normals(r * c, rng)).expect("finite")
}

fn dim(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// Reduces a node to a scalar with a fixed random target so every output entry gets a distinct weight.
fn reduce(g: &mut Graph, y: NodeId, target: &Tensor) -> Result<NodeId> {
    let t = g.leaf(target.clone());
    g.l2_mean(y, t)
}

fn like(t: &Tensor, rng: &mut Rng) -> Tensor {
    let data = normals(t.len(), rng);
    Tensor::new(t.shape().to_vec(), data).expect("finite")
}

type Builder = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>>;

fn run_trials<F>(name: &'static str, trials: usize, tol: f64, seed: u64, mut make: F) -> Result<CheckRow>
where
    F: FnMut(&mut Rng) -> Result<(Builder, Vec<Tensor>)>,
{
    let root = Rng::seed(seed);
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = root.child(t as u64);
        let (builder, point) = make(&mut rng)?;
        let rep = grad_check(builder, &point, STEP, tol)?;
        worst = worst.max(rep.max_rel_error);
    }
    Ok(CheckRow {
        name,
        trials,
        max_rel_error: worst,
        tol,
    })
}

/// Primitive checks, `trials` random points each.
pub fn verify_primitives(trials: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let tol = PRIMITIVE_TOL;

    rows.push(run_trials("linear_vector", trials, tol, seed ^ 1, |rng| {
        let (o, i) = (dim(rng, 1, 6), dim(rng, 1, 6));
        let target = vec_t(o, rng);
        let b: Builder = Box::new(move |g, l| {
            let y = g.linear(l[0], l[1], l[2])?;
            reduce(g, y, &target)
        });
        Ok((b, vec![mat_t(o, i, rng), vec_t(i, rng), vec_t(o, rng)]))
    })?);

    rows.push(run_trials("linear_rows", trials, tol, seed ^ 2, |rng| {
        let (o, i, r) = (dim(rng, 1, 5), dim(rng, 1, 5), dim(rng, 1, 4));
        let target = mat_t(r, o, rng);
        let b: Builder = Box::new(move |g, l| {
            let y = g.linear(l[0], l[1], l[2])?;
            reduce(g, y, &target)
        });
        Ok((b, vec![mat_t(o, i, rng), mat_t(r, i, rng), vec_t(o, rng)]))
    })?);

    rows.push(run_trials("tanh", trials, tol, seed ^ 3, |rng| {
        let x = mat_t(dim(rng, 1, 4), dim(rng, 1, 5), rng);
        let target = like(&x, rng);
        let b: Builder = Box::new(move |g, l| {
            let y = g.tanh(l[0])?;
            reduce(g, y, &target)
        });
        Ok((b, vec![x]))
    })?);

    rows.push(run_trials("concat", trials, tol, seed ^ 4, |rng| {
        let r = dim(rng, 1, 4);
        let (c1, c2, c3) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3));
        let target = mat_t(r, c1 + c2 + c3, rng);
        let b: Builder = Box::new(move |g, l| {
            let y = g.concat(l)?;
            reduce(g, y, &target)
        });
        Ok((b, vec![mat_t(r, c1, rng), mat_t(r, c2, rng), mat_t(r, c3, rng)]))
    })?);

    rows.push(run_trials("mean_pool_rows", trials, tol, seed ^ 5, |rng| {
        let (r, c) = (dim(rng, 1, 6), dim(rng, 1, 5));
        let target = vec_t(c, rng);
        let b: Builder = Box::new(move |g, l| {
            let y = g.mean_pool_rows(l[0])?;
            reduce(g, y, &target)
        });
        Ok((b, vec![mat_t(r, c, rng)]))
    })?);

    rows.push(run_trials("cosine", trials, tol, seed ^ 6, |rng| {
        let d = dim(rng, 2, 16);
        let b: Builder = Box::new(|g, l| g.cosine(l[0], l[1]));
        Ok((b, vec![vec_t(d, rng), vec_t(d, rng)]))
    })?);

    rows.push(run_trials("l1_mean", trials, tol, seed ^ 7, |rng| {
        let n = dim(rng, 1, 8);
        let a = vec_t(n, rng);
        // Keep every |a - b| >= 0.1 so the point is away from the kink.
        let b_vals: Vec<f64> = a
            .data()
            .iter()
            .map(|&x| {
                let gap = 0.1 + rng.uniform();
                if rng.uniform() < 0.5 {
                    x + gap
                } else {
                    x - gap
                }
            })
            .collect();
        let b: Builder = Box::new(|g, l| g.l1_mean(l[0], l[1]));
        Ok((b, vec![a, Tensor::vector(b_vals)?]))
    })?);

    rows.push(run_trials("l2_mean", trials, tol, seed ^ 8, |rng| {
        let (r, c) = (dim(rng, 1, 4), dim(rng, 1, 4));
        let b: Builder = Box::new(|g, l| g.l2_mean(l[0], l[1]));
        Ok((b, vec![mat_t(r, c, rng), mat_t(r, c, rng)]))
    })?);

    rows.push(run_trials("scale_add", trials, tol, seed ^ 9, |rng| {
        let n = dim(rng, 1, 6);
        let c = rng.normal();
        let target = vec_t(n, rng);
        let b: Builder = Box::new(move |g, l| {
            let y = g.scale_add(l[0], c, l[1])?;
            reduce(g, y, &target)
        });
        Ok((b, vec![vec_t(n, rng), vec_t(n, rng)]))
    })?);

    rows.push(run_trials("gather_rows", trials, tol, seed ^ 10, |rng| {
        let (r, c) = (dim(rng, 1, 4), dim(rng, 1, 4));
        let idx: Vec<usize> = (0..dim(rng, 1, 8)).map(|_| rng.below(r)).collect();
        let target = mat_t(idx.len(), c, rng);
        let b: Builder = Box::new(move |g, l| {
            let y = g.gather_rows(l[0], &idx)?;
            reduce(g, y, &target)
        });
        Ok((b, vec![mat_t(r, c, rng)]))
    })?);

    rows.push(run_trials("reshape", trials, tol, seed ^ 11, |rng| {
        let (r, c) = (dim(rng, 1, 4), dim(rng, 1, 4));
        let target = vec_t(r * c, rng);
        let b: Builder = Box::new(move |g, l| {
            let y = g.reshape(l[0], &[r * c])?;
            reduce(g, y, &target)
        });
        Ok((b, vec![mat_t(r, c, rng)]))
    })?);

    Ok(rows)
}

fn small_dims() -> ModelDims {
    ModelDims {
        vocab: 5,
        token_dim: 3,
        languages: 2,
        embed_dim: 4,
        frame_dim: 3,
        decoder_hidden: 4,
    }
}

/// Composite checks: SCL and LFCL through the frozen encoder with the
/// generated frames as leaves, and both again end to end through the
/// generator with its trainable parameters as leaves.
pub fn verify_composites(trials: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let tol = COMPOSITE_TOL;
    let mut rows = Vec::new();

    rows.push(run_trials("scl_frames", trials, tol, seed ^ 21, |rng| {
        let (f, d, n) = (dim(rng, 2, 6), dim(rng, 2, 6), dim(rng, 1, 3));
        let phi = SpeakerEncoder::new(f, d, rng.u64());
        let ss: Vec<Tensor> = (0..n).map(|_| vec_t(d, rng)).collect();
        let xs: Vec<Tensor> = (0..n).map(|_| mat_t(dim(rng, 1, 5), f, rng)).collect();
        let b: Builder = Box::new(move |g, l| {
            let nodes = phi.attach(g);
            let s: Vec<NodeId> = ss.iter().map(|t| g.leaf(t.clone())).collect();
            scl(g, &s, l, &nodes)
        });
        Ok((b, xs))
    })?);

    rows.push(run_trials("lfcl_frames", trials, tol, seed ^ 22, |rng| {
        let (f, d, n) = (dim(rng, 2, 6), dim(rng, 2, 6), dim(rng, 1, 3));
        let phi = SpeakerEncoder::new(f, d, rng.u64());
        let cfg = LatentFillConfig::default();
        let mut st = Vec::with_capacity(n);
        for _ in 0..n {
            let a = Embedding::new(normals(d, rng))?;
            let p = Embedding::new(normals(d, rng))?;
            st.push(Tensor::vector(latent_fill(&a, &p, &cfg, rng)?.0.into_vec())?);
        }
        let xs: Vec<Tensor> = (0..n).map(|_| mat_t(dim(rng, 1, 5), f, rng)).collect();
        let b: Builder = Box::new(move |g, l| {
            let nodes = phi.attach(g);
            let s: Vec<NodeId> = st.iter().map(|t| g.leaf(t.clone())).collect();
            lfcl(g, &s, l, &nodes)
        });
        Ok((b, xs))
    })?);

    rows.push(run_trials("standard_end_to_end", trials, tol, seed ^ 23, |rng| {
        let dims = small_dims();
        let phi = SpeakerEncoder::new(dims.frame_dim, dims.embed_dim, rng.u64());
        let model = ModelParams::init(dims, rng.u64(), phi)?;
        let n = dim(rng, 1, 4);
        let tokens: Vec<usize> = (0..n).map(|_| rng.below(dims.vocab)).collect();
        let durs: Vec<usize> = (0..n).map(|_| 1 + rng.below(3)).collect();
        let lang = rng.below(dims.languages) as u32;
        let s = vec_t(dims.embed_dim, rng);
        let target = mat_t(durs.iter().sum(), dims.frame_dim, rng);
        // Keep the duration target off the L1 kink at the evaluation point. One
        // side for every token, or the bias gradient cancels to exactly zero.
        let pred = {
            let mut g = Graph::new();
            let nodes = model.attach(&mut g);
            let sn = g.leaf(s.clone());
            let out = model.forward(&mut g, &nodes, &tokens, lang, sn, Some(&durs))?;
            g.value(out.durations).data().to_vec()
        };
        let side = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        let dtarget = Tensor::vector(
            pred.iter()
                .map(|p| p + side * (0.1 + 0.5 * rng.normal().abs()))
                .collect(),
        )?;
        let point = model.trainable.clone();
        let b: Builder = Box::new(move |g, l| {
            let nodes = ModelNodes {
                trainable: l.to_vec(),
                phi: model.phi.attach(g),
            };
            let sn = g.leaf(s.clone());
            let out = model.forward(g, &nodes, &tokens, lang, sn, Some(&durs))?;
            let t = g.leaf(target.clone());
            let dt = g.leaf(dtarget.clone());
            let ra = reconstruction_acoustic(g, out.frames, t)?;
            let rd = reconstruction_duration(g, out.durations, dt)?;
            let c = scl(g, &[sn], &[out.frames], &nodes.phi)?;
            let acc = g.scale_add(ra, 1.0, rd)?;
            g.scale_add(acc, 1.0, c)
        });
        Ok((b, point))
    })?);

    rows.push(run_trials("lfcl_end_to_end", trials, tol, seed ^ 24, |rng| {
        let dims = small_dims();
        let phi = SpeakerEncoder::new(dims.frame_dim, dims.embed_dim, rng.u64());
        let model = ModelParams::init(dims, rng.u64(), phi)?;
        let n = dim(rng, 1, 4);
        let tokens: Vec<usize> = (0..n).map(|_| rng.below(dims.vocab)).collect();
        let durs: Vec<usize> = (0..n).map(|_| 1 + rng.below(3)).collect();
        let lang = rng.below(dims.languages) as u32;
        let a = Embedding::new(normals(dims.embed_dim, rng))?;
        let p = Embedding::new(normals(dims.embed_dim, rng))?;
        let st = Tensor::vector(latent_fill(&a, &p, &LatentFillConfig::default(), rng)?.0.into_vec())?;
        let point = model.trainable.clone();
        let b: Builder = Box::new(move |g, l| {
            let nodes = ModelNodes {
                trainable: l.to_vec(),
                phi: model.phi.attach(g),
            };
            let sn = g.leaf(st.clone());
            let out = model.forward(g, &nodes, &tokens, lang, sn, Some(&durs))?;
            lfcl(g, &[sn], &[out.frames], &nodes.phi)
        });
        Ok((b, point))
    })?);

    Ok(rows)
}

/// Full suite at `trials` points per check.
pub fn verify_all(trials: usize, seed: u64) -> Result<VerifyReport> {
    let mut rows = verify_primitives(trials, seed)?;
    rows.extend(verify_composites(trials, seed)?);
    Ok(VerifyReport { rows })
}
