//! Training objectives and their gradients.
//!
//! The codeword losses take `z`, the projection scaled to norm `sqrt(c)`,
//! and bipolar codewords `v` in `{-1, +1}^c`. Correlation is `v.z / c`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Gradient with respect to the loss input (scaled output, logits, or
    /// the flattened embedding table).
    pub grad: Vec<f64>,
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

pub fn correlation(z: &[f64], v: &[f64]) -> f64 {
    z.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / z.len() as f64
}

/// `max(0, 1 - v.z / c)`; the subgradient at the kink is zero.
pub fn pos_loss(z: &[f64], v: &[f64]) -> Result<LossValue> {
    check_len(z.len(), v.len())?;
    let c = z.len() as f64;
    let value = (1.0 - correlation(z, v)).max(0.0);
    let grad = if value > 0.0 {
        v.iter().map(|x| -x / c).collect()
    } else {
        vec![0.0; z.len()]
    };
    Ok(LossValue { value, grad })
}

/// `max_u v_u.z / c` over the other users' codewords. The gradient flows
/// through the first maximizer only.
pub fn neg_loss<V: AsRef<[f64]>>(z: &[f64], others: &[V]) -> Result<LossValue> {
    if others.is_empty() {
        return Err(Error::EmptyOtherSet);
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, v) in others.iter().enumerate() {
        let v = v.as_ref();
        check_len(z.len(), v.len())?;
        let corr = correlation(z, v);
        if corr > best.1 {
            best = (i, corr);
        }
    }
    let c = z.len() as f64;
    let grad = others[best.0].as_ref().iter().map(|x| x / c).collect();
    Ok(LossValue {
        value: best.1,
        grad,
    })
}

/// `pos_loss + lambda * neg_loss`. With `lambda == 0` the other codewords
/// are never read and may be empty.
pub fn feduv_loss<V: AsRef<[f64]>>(
    z: &[f64],
    v: &[f64],
    others: &[V],
    lambda: f64,
) -> Result<LossValue> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let mut loss = pos_loss(z, v)?;
    if lambda > 0.0 {
        let neg = neg_loss(z, others)?;
        loss.value += lambda * neg.value;
        for (g, n) in loss.grad.iter_mut().zip(&neg.grad) {
            *g += lambda * n;
        }
    }
    Ok(loss)
}

/// `-log softmax(logits)[y]` with gradient `softmax - onehot(y)`.
pub fn softmax_ce(logits: &[f64], y: usize) -> Result<LossValue> {
    if y >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: y,
            len: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    // log-sum-exp minus the target logit, in the shifted frame; the
    // ln_1p form keeps the loss accurate when the target dominates.
    let rest: f64 = exps
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != y)
        .map(|(_, e)| e)
        .sum();
    let value = if logits[y] == max {
        rest.ln_1p()
    } else {
        sum.ln() - (logits[y] - max)
    };
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[y] -= 1.0;
    Ok(LossValue { value, grad })
}

/// Spreadout regularizer over a row-major `K x n_d` embedding table:
/// `sum_u sum_{u' != u} max(0, nu - |w_u - w_u'|)^2` with Euclidean distance.
/// Coincident rows contribute to the value but get a zero (sub)gradient.
pub fn spreadout_reg(table: &[f64], n_d: usize, nu: f64) -> Result<LossValue> {
    if n_d == 0 || !table.len().is_multiple_of(n_d) {
        return Err(Error::InvalidArgument(format!(
            "table of length {} is not a multiple of n_d = {n_d}",
            table.len()
        )));
    }
    if !(nu > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "margin must be positive, got {nu}"
        )));
    }
    let users = table.len() / n_d;
    if users < 2 {
        return Err(Error::TooFewUsers(users));
    }
    let row = |u: usize| &table[u * n_d..(u + 1) * n_d];
    let mut value = 0.0;
    let mut grad = vec![0.0; table.len()];
    for a in 0..users {
        for b in a + 1..users {
            let diff: Vec<f64> = row(a).iter().zip(row(b)).map(|(x, y)| x - y).collect();
            let d = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
            if d >= nu {
                continue;
            }
            let gap = nu - d;
            // Both ordered pairs (a, b) and (b, a).
            value += 2.0 * gap * gap;
            if d == 0.0 {
                continue;
            }
            let coef = -4.0 * gap / d;
            for j in 0..n_d {
                grad[a * n_d + j] += coef * diff[j];
                grad[b * n_d + j] -= coef * diff[j];
            }
        }
    }
    Ok(LossValue { value, grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosineLoss {
    pub value: f64,
    pub grad_embedding: Vec<f64>,
    pub grad_class: Vec<f64>,
}

/// `max(0, 1 - cos(e, w))`: the positive-only hinge on cosine similarity
/// used by the FedAwS client. Zero vectors give cosine 0 and no gradient.
pub fn cosine_pos_loss(embedding: &[f64], class_vec: &[f64]) -> Result<CosineLoss> {
    check_len(embedding.len(), class_vec.len())?;
    let n = embedding.len();
    let ne = embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nw = class_vec.iter().map(|x| x * x).sum::<f64>().sqrt();
    if ne == 0.0 || nw == 0.0 {
        return Ok(CosineLoss {
            value: 1.0,
            grad_embedding: vec![0.0; n],
            grad_class: vec![0.0; n],
        });
    }
    let cos = embedding
        .iter()
        .zip(class_vec)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / (ne * nw);
    let value = (1.0 - cos).max(0.0);
    if value == 0.0 {
        return Ok(CosineLoss {
            value,
            grad_embedding: vec![0.0; n],
            grad_class: vec![0.0; n],
        });
    }
    let d_cos = |a: &[f64], na: f64, b: &[f64], nb: f64| -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(ai, bi)| -(bi / (na * nb) - cos * ai / (na * na)))
            .collect()
    };
    Ok(CosineLoss {
        value,
        grad_embedding: d_cos(embedding, ne, class_vec, nw),
        grad_class: d_cos(class_vec, nw, embedding, ne),
    })
}
