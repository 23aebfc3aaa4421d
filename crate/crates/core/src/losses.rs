//! Training losses as graph builders.
//!
//! Both consistency losses are `-(1/N) * sum_i cos(s_i, phi(x_i))`. SCL is fed
//! the true speaker embeddings and the generated frames; LFCL is fed augmented
//! embeddings and the frames generated from them. The encoder parameters are
//! graph leaves, so gradients flow through `phi` into the frames while `phi`
//! itself is never handed to the optimizer.

use crate::error::{Error, Result};
use crate::grad::{Graph, NodeId, Tensor};
use crate::model::{EncoderNodes, SpeakerEncoder};

/// Scalar loss values from one training iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBundle {
    pub l_rec_acoustic: Option<f64>,
    pub l_rec_duration: Option<f64>,
    pub l_scl: Option<f64>,
    pub l_lfcl: Option<f64>,
    pub total: f64,
}

/// Mean squared error over all frame entries.
pub fn reconstruction_acoustic(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId> {
    g.l2_mean(pred, target)
}

/// Mean absolute error over tokens, in frames.
pub fn reconstruction_duration(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId> {
    g.l1_mean(pred, target)
}

fn consistency(g: &mut Graph, embeddings: &[NodeId], frames: &[NodeId], phi: &EncoderNodes) -> Result<NodeId> {
    if embeddings.is_empty() {
        return Err(Error::InvalidArgument(
            "consistency loss needs a batch of at least 1".into(),
        ));
    }
    if embeddings.len() != frames.len() {
        return Err(Error::InvalidArgument(format!(
            "{} embeddings for {} frame sequences",
            embeddings.len(),
            frames.len()
        )));
    }
    let scale = -1.0 / embeddings.len() as f64;
    let mut acc = g.leaf(Tensor::scalar(0.0)?);
    for (&s, &x) in embeddings.iter().zip(frames) {
        let e = SpeakerEncoder::encode(g, phi, x)?;
        let c = g.cosine(s, e)?;
        acc = g.scale_add(acc, scale, c)?;
    }
    Ok(acc)
}

/// Speaker consistency loss on true embeddings and generated frames.
pub fn scl(g: &mut Graph, s_batch: &[NodeId], xhat_batch: &[NodeId], phi: &EncoderNodes) -> Result<NodeId> {
    consistency(g, s_batch, xhat_batch, phi)
}

/// Latent filling consistency loss on augmented embeddings and the frames generated from them.
pub fn lfcl(g: &mut Graph, s_tilde_batch: &[NodeId], xtilde_batch: &[NodeId], phi: &EncoderNodes) -> Result<NodeId> {
    consistency(g, s_tilde_batch, xtilde_batch, phi)
}
