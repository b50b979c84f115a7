//! Contrastive objectives with analytic gradients.
//!
//! Every function returns the loss value together with its gradient with
//! respect to each input embedding, so a training loop can backpropagate
//! into whatever produced the embeddings.

use thiserror::Error;

use crate::embedding::dot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("zero-norm embedding")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("label must be 0 or 1, got {0}")]
    Label(f64),
    #[error("InfoNCE needs a batch of at least 2 pairs, got {0}")]
    BatchTooSmall(usize),
    #[error("margin {0} out of range")]
    Margin(f64),
}

/// How the contrastive objective measures closeness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveDistance {
    /// `d = 1 - cos(u, v)`: positives are pulled together.
    #[default]
    CosineDistance,
    /// `d = cos(u, v)` used directly as the distance.
    LiteralCosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGrad {
    pub value: f64,
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub value: f64,
    pub du: Vec<f64>,
    pub dpos: Vec<f64>,
    pub dneg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrad {
    pub value: f64,
    pub du: Vec<Vec<f64>>,
    pub dv: Vec<Vec<f64>>,
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<(), LossError> {
    if a.len() != b.len() {
        return Err(LossError::Dimension(a.len(), b.len()));
    }
    Ok(())
}

fn check_label(y: f64) -> Result<bool, LossError> {
    if y == 1.0 {
        Ok(true)
    } else if y == 0.0 {
        Ok(false)
    } else {
        Err(LossError::Label(y))
    }
}

/// Cosine similarity and its gradients `(c, dc/du, dc/dv)`.
fn cosine_with_grad(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), LossError> {
    check_dims(u, v)?;
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(LossError::ZeroVector);
    }
    let c = dot(u, v) / (nu * nv);
    let du = u.iter().zip(v).map(|(a, b)| b / (nu * nv) - c * a / (nu * nu)).collect();
    let dv = u.iter().zip(v).map(|(a, b)| a / (nu * nv) - c * b / (nv * nv)).collect();
    Ok((c, du, dv))
}

fn scale(v: &[f64], k: f64) -> Vec<f64> {
    v.iter().map(|x| x * k).collect()
}

/// Squared error between the label and the cosine similarity, `(y - cos)^2`.
pub fn cosine_mse_grad(u: &[f64], v: &[f64], y: f64) -> Result<PairGrad, LossError> {
    let (c, dc_du, dc_dv) = cosine_with_grad(u, v)?;
    let r = y - c;
    Ok(PairGrad { value: r * r, du: scale(&dc_du, -2.0 * r), dv: scale(&dc_dv, -2.0 * r) })
}

pub fn loss_cosine(u: &[f64], v: &[f64], y: f64) -> Result<f64, LossError> {
    cosine_mse_grad(u, v, y).map(|g| g.value)
}

/// Margin contrastive loss: `d^2 / 2` for positives and
/// `max(0, margin - d)^2 / 2` for negatives.
pub fn contrastive_grad(u: &[f64], v: &[f64], y: f64, margin: f64, distance: ContrastiveDistance) -> Result<PairGrad, LossError> {
    let positive = check_label(y)?;
    if !(0.0..=2.0).contains(&margin) {
        return Err(LossError::Margin(margin));
    }
    let (c, dc_du, dc_dv) = cosine_with_grad(u, v)?;
    let (d, dd_dc) = match distance {
        ContrastiveDistance::CosineDistance => (1.0 - c, -1.0),
        ContrastiveDistance::LiteralCosine => (c, 1.0),
    };
    let (value, dl_dd) = if positive {
        (d * d / 2.0, d)
    } else {
        let gap = (margin - d).max(0.0);
        (gap * gap / 2.0, -gap)
    };
    let k = dl_dd * dd_dc;
    Ok(PairGrad { value, du: scale(&dc_du, k), dv: scale(&dc_dv, k) })
}

pub fn loss_contrastive(u: &[f64], v: &[f64], y: f64, margin: f64, distance: ContrastiveDistance) -> Result<f64, LossError> {
    contrastive_grad(u, v, y, margin, distance).map(|g| g.value)
}

fn normalized(v: &[f64]) -> Result<(Vec<f64>, f64), LossError> {
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        return Err(LossError::ZeroVector);
    }
    Ok((scale(v, 1.0 / n), n))
}

/// Gradient through `x / |x|`: `(g - (g . x_hat) x_hat) / |x|`.
fn through_normalization(g: &[f64], unit: &[f64], norm: f64) -> Vec<f64> {
    let proj = dot(g, unit);
    g.iter().zip(unit).map(|(gi, ui)| (gi - proj * ui) / norm).collect()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Triplet loss on L2-normalized embeddings,
/// `max(0, |u - pos| - |u - neg| + margin)`.
pub fn triplet_grad(u: &[f64], pos: &[f64], neg: &[f64], margin: f64) -> Result<TripletGrad, LossError> {
    check_dims(u, pos)?;
    check_dims(u, neg)?;
    if margin < 0.0 || !margin.is_finite() {
        return Err(LossError::Margin(margin));
    }
    let (uh, nu) = normalized(u)?;
    let (ph, np) = normalized(pos)?;
    let (nh, nn) = normalized(neg)?;
    let a = diff(&uh, &ph);
    let b = diff(&uh, &nh);
    let da = dot(&a, &a).sqrt();
    let db = dot(&b, &b).sqrt();
    let raw = da - db + margin;
    let dim = u.len();
    if raw <= 0.0 {
        return Ok(TripletGrad { value: 0.0, du: vec![0.0; dim], dpos: vec![0.0; dim], dneg: vec![0.0; dim] });
    }
    let ga = if da > 0.0 { scale(&a, 1.0 / da) } else { vec![0.0; dim] };
    let gb = if db > 0.0 { scale(&b, 1.0 / db) } else { vec![0.0; dim] };
    let g_uh = diff(&ga, &gb);
    let g_ph = scale(&ga, -1.0);
    Ok(TripletGrad {
        value: raw,
        du: through_normalization(&g_uh, &uh, nu),
        dpos: through_normalization(&g_ph, &ph, np),
        dneg: through_normalization(&gb, &nh, nn),
    })
}

pub fn loss_triplet(u: &[f64], pos: &[f64], neg: &[f64], margin: f64) -> Result<f64, LossError> {
    triplet_grad(u, pos, neg, margin).map(|g| g.value)
}

/// In-batch InfoNCE: for each document `u_i` its own entity `v_i` is the
/// positive and every other `v_j` a negative. Returns the mean over the
/// batch of `-log softmax_j(scale * cos(u_i, v_j))[i]`.
pub fn infonce_grad(us: &[Vec<f64>], vs: &[Vec<f64>], logit_scale: f64) -> Result<BatchGrad, LossError> {
    let b = us.len();
    if vs.len() != b {
        return Err(LossError::Dimension(b, vs.len()));
    }
    if b < 2 {
        return Err(LossError::BatchTooSmall(b));
    }
    let mut du: Vec<Vec<f64>> = us.iter().map(|u| vec![0.0; u.len()]).collect();
    let mut dv: Vec<Vec<f64>> = vs.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut total = 0.0;
    for i in 0..b {
        let row: Vec<(f64, Vec<f64>, Vec<f64>)> = vs.iter().map(|v| cosine_with_grad(&us[i], v)).collect::<Result<_, _>>()?;
        let logits: Vec<f64> = row.iter().map(|(c, _, _)| logit_scale * c).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|s| (s - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - logits[i];
        for (j, (_, dc_du, dc_dv)) in row.iter().enumerate() {
            let p = (logits[j] - lse).exp();
            let g = logit_scale * (p - if i == j { 1.0 } else { 0.0 }) / b as f64;
            for (acc, x) in du[i].iter_mut().zip(dc_du) {
                *acc += g * x;
            }
            for (acc, x) in dv[j].iter_mut().zip(dc_dv) {
                *acc += g * x;
            }
        }
    }
    Ok(BatchGrad { value: total / b as f64, du, dv })
}

pub fn loss_infonce(us: &[Vec<f64>], vs: &[Vec<f64>], logit_scale: f64) -> Result<f64, LossError> {
    infonce_grad(us, vs, logit_scale).map(|g| g.value)
}
