//! Training objectives with closed-form gradients.
//!
//! Each loss is computed in f64 on plain slices; the `*_var` wrappers lift
//! them into the autodiff graph so they can terminate a forward pass.

use blindqe_tensor::{Scalar, Tensor, Var};

use crate::{Error, Result};

/// Row-wise softmax of a `[rows, classes]` matrix.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(classes) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

fn check_matrix(len: usize, cols: usize, what: &str) -> Result<usize> {
    if cols == 0 || len == 0 || len % cols != 0 {
        return Err(Error::Shape(format!("{what}: {len} values do not form rows of {cols}")));
    }
    Ok(len / cols)
}

/// Class indices of a one-hot matrix.
pub fn one_hot_indices(one_hot: &[f64], classes: usize) -> Result<Vec<usize>> {
    let rows = check_matrix(one_hot.len(), classes, "labels")?;
    (0..rows)
        .map(|r| {
            let row = &one_hot[r * classes..(r + 1) * classes];
            let ones: Vec<usize> = (0..classes).filter(|&c| row[c] == 1.0).collect();
            if ones.len() != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Validation(format!("label row {r} is not one-hot: {row:?}")));
            }
            Ok(ones[0])
        })
        .collect()
}

pub fn one_hot(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; labels.len() * classes];
    for (r, &l) in labels.iter().enumerate() {
        out[r * classes + l] = 1.0;
    }
    out
}

/// Mean negative log-likelihood of softmax probabilities, and its gradient
/// with respect to the logits.
pub fn cross_entropy_with_grad(logits: &[f64], one_hot: &[f64], classes: usize) -> Result<(f64, Vec<f64>)> {
    let rows = check_matrix(logits.len(), classes, "logits")?;
    if one_hot.len() != logits.len() {
        return Err(Error::Shape(format!(
            "labels have {} values, logits {}",
            one_hot.len(),
            logits.len()
        )));
    }
    let idx = one_hot_indices(one_hot, classes)?;
    let p = softmax_rows(logits, classes);
    let mut loss = 0.0;
    let mut grad = p.clone();
    for (r, &c) in idx.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
        loss += lse - row[c];
        grad[r * classes + c] -= 1.0;
    }
    let m = rows as f64;
    grad.iter_mut().for_each(|g| *g /= m);
    Ok((loss / m, grad))
}

pub fn cross_entropy_loss(logits: &[f64], one_hot: &[f64], classes: usize) -> Result<f64> {
    Ok(cross_entropy_with_grad(logits, one_hot, classes)?.0)
}

/// Temperature-scaled cosine InfoNCE over a `[m, dim]` batch in which row
/// `i` is paired with row `positives[i]`. The denominator runs over all
/// other rows, the positive included.
pub fn info_nce_with_grad(vectors: &[f64], dim: usize, positives: &[usize], tau: f64) -> Result<(f64, Vec<f64>)> {
    let m = check_matrix(vectors.len(), dim, "vectors")?;
    if m < 4 {
        return Err(Error::Validation(format!("contrastive batch needs at least 4 rows, got {m}")));
    }
    if positives.len() != m {
        return Err(Error::Shape(format!("{} positives for {m} rows", positives.len())));
    }
    if let Some((i, &p)) = positives.iter().enumerate().find(|&(i, &p)| p == i || p >= m) {
        return Err(Error::Validation(format!("row {i} has invalid positive {p}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Validation(format!("temperature must be positive, got {tau}")));
    }
    let mut norms = vec![0.0; m];
    let mut n = vec![0.0; m * dim];
    for i in 0..m {
        let v = &vectors[i * dim..(i + 1) * dim];
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len == 0.0 || !len.is_finite() {
            return Err(Error::Validation(format!("row {i} has norm {len}; cosine similarity undefined")));
        }
        norms[i] = len;
        for (d, &x) in n[i * dim..(i + 1) * dim].iter_mut().zip(v) {
            *d = x / len;
        }
    }
    let dot = |a: usize, b: usize| -> f64 {
        n[a * dim..(a + 1) * dim]
            .iter()
            .zip(&n[b * dim..(b + 1) * dim])
            .map(|(x, y)| x * y)
            .sum()
    };
    // g[i][k] = dL/ds_ik with s_ik = cos(i, k) / tau.
    let mut g = vec![0.0; m * m];
    let mut loss = 0.0;
    for i in 0..m {
        let s: Vec<f64> = (0..m).map(|k| if k == i { f64::NEG_INFINITY } else { dot(i, k) / tau }).collect();
        let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|&v| (v - mx).exp()).sum();
        let lse = mx + z.ln();
        let sp = s[positives[i]];
        // When the positive dominates, lse - sp cancels; ln(1 + rest) does not.
        loss += if mx <= sp {
            (0..m).filter(|&k| k != i && k != positives[i]).map(|k| (s[k] - sp).exp()).sum::<f64>().ln_1p()
        } else {
            lse - sp
        };
        for k in (0..m).filter(|&k| k != i) {
            let p = (s[k] - lse).exp();
            g[i * m + k] = (p - if k == positives[i] { 1.0 } else { 0.0 }) / m as f64;
        }
    }
    let mut grad = vec![0.0; m * dim];
    for i in 0..m {
        let mut gn = vec![0.0; dim];
        for k in 0..m {
            let w = (g[i * m + k] + g[k * m + i]) / tau;
            if w != 0.0 {
                for (acc, &x) in gn.iter_mut().zip(&n[k * dim..(k + 1) * dim]) {
                    *acc += w * x;
                }
            }
        }
        // Back through the normalization: (I - n n^T) / |v|.
        let ni = &n[i * dim..(i + 1) * dim];
        let proj: f64 = gn.iter().zip(ni).map(|(a, b)| a * b).sum();
        for ((dst, &a), &b) in grad[i * dim..(i + 1) * dim].iter_mut().zip(&gn).zip(ni) {
            *dst = (a - proj * b) / norms[i];
        }
    }
    Ok((loss / m as f64, grad))
}

pub fn info_nce_loss(vectors: &[f64], dim: usize, positives: &[usize], tau: f64) -> Result<f64> {
    Ok(info_nce_with_grad(vectors, dim, positives, tau)?.0)
}

pub fn drl_total_loss(ce: f64, nce: f64, lambda: f64) -> f64 {
    ce + lambda * nce
}

/// Per-pixel mean of `sqrt(d^2 + eps)`, and its gradient in `x`.
pub fn charbonnier_with_grad(x: &[f64], target: &[f64], eps: f64) -> Result<(f64, Vec<f64>)> {
    if x.len() != target.len() || x.is_empty() {
        return Err(Error::Shape(format!(
            "charbonnier inputs have {} and {} values",
            x.len(),
            target.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {eps}")));
    }
    let n = x.len() as f64;
    let mut loss = 0.0;
    let grad = x
        .iter()
        .zip(target)
        .map(|(&a, &b)| {
            let d = a - b;
            let r = (d * d + eps).sqrt();
            loss += r;
            d / r / n
        })
        .collect();
    Ok((loss / n, grad))
}

pub fn charbonnier_loss(x: &[f64], target: &[f64], eps: f64) -> Result<f64> {
    Ok(charbonnier_with_grad(x, target, eps)?.0)
}

/// Wraps a scalar loss computed on f64 values of `x` as a graph node.
fn scalar_node<T: Scalar>(x: &Var<T>, value: f64, grad: Vec<f64>) -> Var<T> {
    let grad = Tensor::<f64>::new(x.shape().to_vec(), grad).cast::<T>();
    Var::from_op(Tensor::scalar(T::from_f64_lossy(value)), vec![x.clone()], move |g, _, _| {
        let s = g.data()[0];
        vec![Some(grad.map(|v| v * s))]
    })
}

/// Cross-entropy of `logits: [rows, classes]` against class indices.
pub fn cross_entropy_var<T: Scalar>(logits: &Var<T>, labels: &[usize]) -> Result<Var<T>> {
    let &[_, classes] = logits.shape() else {
        return Err(Error::Shape(format!("logits must be 2-D, got {:?}", logits.shape())));
    };
    if labels.iter().any(|&l| l >= classes) {
        return Err(Error::Validation(format!("label outside 0..{classes}")));
    }
    let (v, g) = cross_entropy_with_grad(&logits.value().to_f64_vec(), &one_hot(labels, classes), classes)?;
    Ok(scalar_node(logits, v, g))
}

pub fn info_nce_var<T: Scalar>(vectors: &Var<T>, positives: &[usize], tau: f64) -> Result<Var<T>> {
    let &[_, dim] = vectors.shape() else {
        return Err(Error::Shape(format!("vectors must be 2-D, got {:?}", vectors.shape())));
    };
    let (v, g) = info_nce_with_grad(&vectors.value().to_f64_vec(), dim, positives, tau)?;
    Ok(scalar_node(vectors, v, g))
}

pub fn charbonnier_var<T: Scalar>(x: &Var<T>, target: &Tensor<T>, eps: f64) -> Result<Var<T>> {
    if x.shape() != target.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", x.shape(), target.shape())));
    }
    let (v, g) = charbonnier_with_grad(&x.value().to_f64_vec(), &target.to_f64_vec(), eps)?;
    Ok(scalar_node(x, v, g))
}
