//! Differentiable operations.
//!
//! Every op validates shapes, computes the forward result, and — when the
//! tape is recording and an input carries gradient — pushes a backward
//! closure. Reductions accumulate in f64; see the module docs in
//! [`crate::tensor`] for the storage contract.

use super::{kernels, out_grad, Tape, Tensor};
use crate::error::{Error, Result};

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// c[m,n] = a[m,k] · b[k,n]
pub fn matmul(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ash, bsh) = (a.shape().to_vec(), b.shape().to_vec());
    if ash.len() != 2 || bsh.len() != 2 {
        return Err(Error::shape(format!("matmul expects 2-d, got {ash:?} x {bsh:?}")));
    }
    let (m, k, k2, n) = (ash[0], ash[1], bsh[0], bsh[1]);
    if k != k2 {
        return Err(Error::shape(format!("matmul inner dims: {ash:?} x {bsh:?}")));
    }
    let mut out = vec![0.0f32; m * n];
    a.with_data(|ad| b.with_data(|bd| kernels::matmul_nn(ad, bd, m, k, n, &mut out)));
    let out = Tensor::from_parts(vec![m, n], out, tape.tracks(&[a, b]));
    if out.requires_grad() {
        let (a, b, o) = (a.clone(), b.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dc) = out_grad(&o) else { return };
            if a.requires_grad() {
                let mut da = vec![0.0f32; m * k];
                b.with_data(|bd| kernels::matmul_nt(&dc, bd, m, n, k, &mut da));
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let mut db = vec![0.0f64; k * n];
                a.with_data(|ad| kernels::matmul_tn_acc(ad, &dc, m, k, n, &mut db));
                b.accumulate_grad_f64(&db);
            }
        });
    }
    Ok(out)
}

fn check_3d_batch(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape().len() != 3 || b.shape().len() != 3 || a.shape()[0] != b.shape()[0] {
        return Err(Error::shape(format!(
            "batched matmul expects matching 3-d batches, got {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// c[b,m,n] = a[b,m,k] · b[b,n,k]ᵀ — attention scores (q against keys).
pub fn bmm_nt(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_3d_batch(a, b)?;
    let (bs, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (n, k2) = (b.shape()[1], b.shape()[2]);
    if k != k2 {
        return Err(Error::shape(format!(
            "bmm_nt inner dims: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0f32; bs * m * n];
    a.with_data(|ad| {
        b.with_data(|bd| {
            for i in 0..bs {
                kernels::matmul_nt(
                    &ad[i * m * k..(i + 1) * m * k],
                    &bd[i * n * k..(i + 1) * n * k],
                    m,
                    k,
                    n,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        })
    });
    let out = Tensor::from_parts(vec![bs, m, n], out, tape.tracks(&[a, b]));
    if out.requires_grad() {
        let (a, b, o) = (a.clone(), b.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dc) = out_grad(&o) else { return };
            if a.requires_grad() {
                let mut da = vec![0.0f32; bs * m * k];
                b.with_data(|bd| {
                    for i in 0..bs {
                        kernels::matmul_nn(
                            &dc[i * m * n..(i + 1) * m * n],
                            &bd[i * n * k..(i + 1) * n * k],
                            m,
                            n,
                            k,
                            &mut da[i * m * k..(i + 1) * m * k],
                        );
                    }
                });
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let mut db = vec![0.0f64; bs * n * k];
                a.with_data(|ad| {
                    for i in 0..bs {
                        kernels::matmul_tn_acc(
                            &dc[i * m * n..(i + 1) * m * n],
                            &ad[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                            &mut db[i * n * k..(i + 1) * n * k],
                        );
                    }
                });
                b.accumulate_grad_f64(&db);
            }
        });
    }
    Ok(out)
}

/// c[b,m,n] = a[b,m,k] · b[b,k,n] — attention context (weights against values).
pub fn bmm_nn(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_3d_batch(a, b)?;
    let (bs, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (k2, n) = (b.shape()[1], b.shape()[2]);
    if k != k2 {
        return Err(Error::shape(format!(
            "bmm_nn inner dims: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0f32; bs * m * n];
    a.with_data(|ad| {
        b.with_data(|bd| {
            for i in 0..bs {
                kernels::matmul_nn(
                    &ad[i * m * k..(i + 1) * m * k],
                    &bd[i * k * n..(i + 1) * k * n],
                    m,
                    k,
                    n,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        })
    });
    let out = Tensor::from_parts(vec![bs, m, n], out, tape.tracks(&[a, b]));
    if out.requires_grad() {
        let (a, b, o) = (a.clone(), b.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dc) = out_grad(&o) else { return };
            if a.requires_grad() {
                let mut da = vec![0.0f32; bs * m * k];
                b.with_data(|bd| {
                    for i in 0..bs {
                        kernels::matmul_nt(
                            &dc[i * m * n..(i + 1) * m * n],
                            &bd[i * k * n..(i + 1) * k * n],
                            m,
                            n,
                            k,
                            &mut da[i * m * k..(i + 1) * m * k],
                        );
                    }
                });
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let mut db = vec![0.0f64; bs * k * n];
                a.with_data(|ad| {
                    for i in 0..bs {
                        kernels::matmul_tn_acc(
                            &ad[i * m * k..(i + 1) * m * k],
                            &dc[i * m * n..(i + 1) * m * n],
                            m,
                            k,
                            n,
                            &mut db[i * k * n..(i + 1) * k * n],
                        );
                    }
                });
                b.accumulate_grad_f64(&db);
            }
        });
    }
    Ok(out)
}

/// Elementwise a + b.
pub fn add(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "add")?;
    let mut out = a.to_vec();
    b.with_data(|bd| {
        for (o, &v) in out.iter_mut().zip(bd) {
            *o += v;
        }
    });
    let out = Tensor::from_parts(a.shape().to_vec(), out, tape.tracks(&[a, b]));
    if out.requires_grad() {
        let (a, b, o) = (a.clone(), b.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dc) = out_grad(&o) else { return };
            if a.requires_grad() {
                a.accumulate_grad(&dc);
            }
            if b.requires_grad() {
                b.accumulate_grad(&dc);
            }
        });
    }
    Ok(out)
}

/// Elementwise a - b.
pub fn sub(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "sub")?;
    let mut out = a.to_vec();
    b.with_data(|bd| {
        for (o, &v) in out.iter_mut().zip(bd) {
            *o -= v;
        }
    });
    let out = Tensor::from_parts(a.shape().to_vec(), out, tape.tracks(&[a, b]));
    if out.requires_grad() {
        let (a, b, o) = (a.clone(), b.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dc) = out_grad(&o) else { return };
            if a.requires_grad() {
                a.accumulate_grad(&dc);
            }
            if b.requires_grad() {
                let neg: Vec<f32> = dc.iter().map(|&v| -v).collect();
                b.accumulate_grad(&neg);
            }
        });
    }
    Ok(out)
}

/// x + bias where bias broadcasts over the last axis.
pub fn add_bias(tape: &Tape, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = *x.shape().last().ok_or_else(|| Error::shape("add_bias on 0-d"))?;
    if bias.shape() != [n] {
        return Err(Error::shape(format!(
            "bias shape {:?} does not match last axis {n}",
            bias.shape()
        )));
    }
    let mut out = x.to_vec();
    bias.with_data(|bd| {
        for row in out.chunks_mut(n) {
            for (o, &v) in row.iter_mut().zip(bd) {
                *o += v;
            }
        }
    });
    let out = Tensor::from_parts(x.shape().to_vec(), out, tape.tracks(&[x, bias]));
    if out.requires_grad() {
        let (x, bias, o) = (x.clone(), bias.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dc) = out_grad(&o) else { return };
            if x.requires_grad() {
                x.accumulate_grad(&dc);
            }
            if bias.requires_grad() {
                let mut db = vec![0.0f64; n];
                for row in dc.chunks(n) {
                    for (slot, &v) in db.iter_mut().zip(row) {
                        *slot += v as f64;
                    }
                }
                bias.accumulate_grad_f64(&db);
            }
        });
    }
    Ok(out)
}

/// scores[h,t,c] + mask[t,c], broadcast over the leading axis. The mask is a
/// gradient-free constant (additive causal masking).
pub fn add_mask(tape: &Tape, scores: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let sh = scores.shape().to_vec();
    if sh.len() != 3 || mask.shape() != &sh[1..] {
        return Err(Error::shape(format!(
            "add_mask: scores {:?} vs mask {:?}",
            sh,
            mask.shape()
        )));
    }
    let plane = sh[1] * sh[2];
    let mut out = scores.to_vec();
    mask.with_data(|md| {
        for chunk in out.chunks_mut(plane) {
            for (o, &v) in chunk.iter_mut().zip(md) {
                *o += v;
            }
        }
    });
    let out = Tensor::from_parts(sh, out, tape.tracks(&[scores]));
    if out.requires_grad() {
        let (s, o) = (scores.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dc) = out_grad(&o) else { return };
            if s.requires_grad() {
                s.accumulate_grad(&dc);
            }
        });
    }
    Ok(out)
}

/// x * c for a constant scalar.
pub fn scale(tape: &Tape, x: &Tensor, c: f32) -> Result<Tensor> {
    let out: Vec<f32> = x.with_data(|d| d.iter().map(|&v| v * c).collect());
    let out = Tensor::from_parts(x.shape().to_vec(), out, tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, o) = (x.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dc) = out_grad(&o) else { return };
            if x.requires_grad() {
                let dx: Vec<f32> = dc.iter().map(|&v| v * c).collect();
                x.accumulate_grad(&dx);
            }
        });
    }
    Ok(out)
}

/// Softmax over the last axis with max-subtraction. Row sums are 1 within
/// rounding; fully masked inputs (all -inf-like) are rejected upstream by
/// construction (every token attends at least to itself).
pub fn softmax_rows(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let n = *x.shape().last().ok_or_else(|| Error::shape("softmax on 0-d"))?;
    let mut out = vec![0.0f32; x.numel()];
    x.with_data(|xd| {
        for (row, orow) in xd.chunks(n).zip(out.chunks_mut(n)) {
            softmax_row_f64(row, orow);
        }
    });
    let out = Tensor::from_parts(x.shape().to_vec(), out, tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, o) = (x.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dy) = out_grad(&o) else { return };
            if !x.requires_grad() {
                return;
            }
            let mut dx = vec![0.0f32; dy.len()];
            o.with_data(|p| {
                for ((prow, dyrow), dxrow) in
                    p.chunks(n).zip(dy.chunks(n)).zip(dx.chunks_mut(n))
                {
                    let dot: f64 = prow
                        .iter()
                        .zip(dyrow)
                        .map(|(&pi, &di)| pi as f64 * di as f64)
                        .sum();
                    for ((dxi, &pi), &di) in dxrow.iter_mut().zip(prow).zip(dyrow) {
                        *dxi = (pi as f64 * (di as f64 - dot)) as f32;
                    }
                }
            });
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

pub(crate) fn softmax_row_f64(row: &[f32], out: &mut [f32]) {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut sum = 0.0f64;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = ((v as f64) - max).exp();
        *o = e as f32;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o = (*o as f64 * inv) as f32;
    }
}

/// Layer normalization over the last axis: per-row zero mean / unit variance
/// (eps = 1e-5) followed by the affine gain/bias.
pub fn layer_norm(tape: &Tape, x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    const EPS: f64 = 1e-5;
    let n = *x.shape().last().ok_or_else(|| Error::shape("layer_norm on 0-d"))?;
    if gain.shape() != [n] || bias.shape() != [n] {
        return Err(Error::shape(format!(
            "layer_norm affine shapes {:?}/{:?} vs last axis {n}",
            gain.shape(),
            bias.shape()
        )));
    }
    let rows = x.numel() / n;
    let mut out = vec![0.0f32; x.numel()];
    let mut xhat = vec![0.0f32; x.numel()];
    let mut inv_sigma = vec![0.0f64; rows];
    x.with_data(|xd| {
        gain.with_data(|gd| {
            bias.with_data(|bd| {
                for r in 0..rows {
                    let row = &xd[r * n..(r + 1) * n];
                    let mean: f64 = row.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
                    let var: f64 = row
                        .iter()
                        .map(|&v| {
                            let d = v as f64 - mean;
                            d * d
                        })
                        .sum::<f64>()
                        / n as f64;
                    let inv = 1.0 / (var + EPS).sqrt();
                    inv_sigma[r] = inv;
                    for j in 0..n {
                        let h = (row[j] as f64 - mean) * inv;
                        xhat[r * n + j] = h as f32;
                        out[r * n + j] = (h * gd[j] as f64 + bd[j] as f64) as f32;
                    }
                }
            })
        })
    });
    let out = Tensor::from_parts(x.shape().to_vec(), out, tape.tracks(&[x, gain, bias]));
    if out.requires_grad() {
        let (x, gain, bias, o) = (x.clone(), gain.clone(), bias.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dy) = out_grad(&o) else { return };
            if gain.requires_grad() {
                let mut dg = vec![0.0f64; n];
                for r in 0..rows {
                    for j in 0..n {
                        dg[j] += dy[r * n + j] as f64 * xhat[r * n + j] as f64;
                    }
                }
                gain.accumulate_grad_f64(&dg);
            }
            if bias.requires_grad() {
                let mut db = vec![0.0f64; n];
                for r in 0..rows {
                    for j in 0..n {
                        db[j] += dy[r * n + j] as f64;
                    }
                }
                bias.accumulate_grad_f64(&db);
            }
            if x.requires_grad() {
                let mut dx = vec![0.0f32; rows * n];
                gain.with_data(|gd| {
                    for r in 0..rows {
                        let mut mean_g = 0.0f64;
                        let mut mean_gh = 0.0f64;
                        for j in 0..n {
                            let g = gd[j] as f64 * dy[r * n + j] as f64;
                            mean_g += g;
                            mean_gh += g * xhat[r * n + j] as f64;
                        }
                        mean_g /= n as f64;
                        mean_gh /= n as f64;
                        for j in 0..n {
                            let g = gd[j] as f64 * dy[r * n + j] as f64;
                            dx[r * n + j] = (inv_sigma[r]
                                * (g - mean_g - xhat[r * n + j] as f64 * mean_gh))
                                as f32;
                        }
                    }
                });
                x.accumulate_grad(&dx);
            }
        });
    }
    Ok(out)
}

/// Elementwise max(x, 0); the derivative at exactly 0 is 0.
pub fn relu(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let out: Vec<f32> = x.with_data(|d| d.iter().map(|&v| v.max(0.0)).collect());
    let out = Tensor::from_parts(x.shape().to_vec(), out, tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, o) = (x.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dy) = out_grad(&o) else { return };
            if !x.requires_grad() {
                return;
            }
            let dx: Vec<f32> =
                x.with_data(|xd| xd.iter().zip(&dy).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect());
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Elementwise GELU (tanh approximation).
pub fn gelu(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let out: Vec<f32> = x.with_data(|d| {
        d.iter()
            .map(|&v| {
                let v = v as f64;
                let u = GELU_C * (v + GELU_A * v * v * v);
                (0.5 * v * (1.0 + u.tanh())) as f32
            })
            .collect()
    });
    let out = Tensor::from_parts(x.shape().to_vec(), out, tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, o) = (x.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dy) = out_grad(&o) else { return };
            if !x.requires_grad() {
                return;
            }
            let dx: Vec<f32> = x.with_data(|xd| {
                xd.iter()
                    .zip(&dy)
                    .map(|(&v, &d)| {
                        let v = v as f64;
                        let u = GELU_C * (v + GELU_A * v * v * v);
                        let t = u.tanh();
                        let sech2 = 1.0 - t * t;
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        ((0.5 * (1.0 + t) + 0.5 * v * sech2 * du) * d as f64) as f32
                    })
                    .collect()
            });
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Per-position negative log-likelihood: out[t] = -log softmax(logits[t])[targets[t]].
pub fn token_nll(tape: &Tape, logits: &Tensor, targets: &[u32]) -> Result<Tensor> {
    let sh = logits.shape().to_vec();
    if sh.len() != 2 {
        return Err(Error::shape(format!("token_nll expects [t, vocab], got {sh:?}")));
    }
    let (t, v) = (sh[0], sh[1]);
    if targets.len() != t {
        return Err(Error::shape(format!(
            "token_nll: {} targets for {t} positions",
            targets.len()
        )));
    }
    for (i, &id) in targets.iter().enumerate() {
        if id as usize >= v {
            return Err(Error::numeric(format!(
                "target id {id} at position {i} out of range for vocab {v}"
            )));
        }
    }
    let mut out = vec![0.0f32; t];
    let mut probs = vec![0.0f32; t * v];
    logits.with_data(|ld| {
        for (r, &target) in targets.iter().enumerate() {
            let row = &ld[r * v..(r + 1) * v];
            softmax_row_f64(row, &mut probs[r * v..(r + 1) * v]);
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let lse: f64 =
                max + row.iter().map(|&x| ((x as f64) - max).exp()).sum::<f64>().ln();
            out[r] = (lse - row[target as usize] as f64) as f32;
        }
    });
    let out = Tensor::from_parts(vec![t], out, tape.tracks(&[logits]));
    if out.requires_grad() {
        let (logits, o) = (logits.clone(), out.clone());
        let targets = targets.to_vec();
        tape.push(&[&out], move || {
            let Some(dy) = out_grad(&o) else { return };
            if !logits.requires_grad() {
                return;
            }
            let mut dl = vec![0.0f32; t * v];
            for (r, &target) in targets.iter().enumerate() {
                let d = dy[r];
                let prow = &probs[r * v..(r + 1) * v];
                let drow = &mut dl[r * v..(r + 1) * v];
                for (slot, &p) in drow.iter_mut().zip(prow) {
                    *slot = p * d;
                }
                drow[target as usize] -= d;
            }
            logits.accumulate_grad(&dl);
        });
    }
    Ok(out)
}

/// Mean negative log-likelihood over positions.
pub fn cross_entropy(tape: &Tape, logits: &Tensor, targets: &[u32]) -> Result<Tensor> {
    let nll = token_nll(tape, logits, targets)?;
    mean(tape, &nll)
}

/// Mean over positions of sum_v p·(log p − log q), p = softmax(p_logits).
pub fn kl_divergence(tape: &Tape, p_logits: &Tensor, q_logits: &Tensor) -> Result<Tensor> {
    same_shape(p_logits, q_logits, "kl_divergence")?;
    let sh = p_logits.shape().to_vec();
    if sh.len() != 2 {
        return Err(Error::shape(format!("kl_divergence expects [t, vocab], got {sh:?}")));
    }
    let (t, v) = (sh[0], sh[1]);
    let mut p = vec![0.0f32; t * v];
    let mut q = vec![0.0f32; t * v];
    let mut row_kl = vec![0.0f64; t];
    let mut total = 0.0f64;
    p_logits.with_data(|pd| {
        q_logits.with_data(|qd| {
            for r in 0..t {
                softmax_row_f64(&pd[r * v..(r + 1) * v], &mut p[r * v..(r + 1) * v]);
                softmax_row_f64(&qd[r * v..(r + 1) * v], &mut q[r * v..(r + 1) * v]);
                let mut kl = 0.0f64;
                for j in 0..v {
                    let pj = p[r * v + j] as f64;
                    if pj > 0.0 {
                        let qj = (q[r * v + j] as f64).max(1e-30);
                        kl += pj * (pj.ln() - qj.ln());
                    }
                }
                row_kl[r] = kl;
                total += kl;
            }
        })
    });
    let value = (total / t as f64) as f32;
    let out = Tensor::from_parts(vec![1], vec![value], tape.tracks(&[p_logits, q_logits]));
    if out.requires_grad() {
        let (pl, ql, o) = (p_logits.clone(), q_logits.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dy) = out_grad(&o) else { return };
            let d = dy[0] as f64 / t as f64;
            if pl.requires_grad() {
                let mut dp = vec![0.0f32; t * v];
                for r in 0..t {
                    for j in 0..v {
                        let pj = p[r * v + j] as f64;
                        if pj > 0.0 {
                            let qj = (q[r * v + j] as f64).max(1e-30);
                            dp[r * v + j] = (d * pj * (pj.ln() - qj.ln() - row_kl[r])) as f32;
                        }
                    }
                }
                pl.accumulate_grad(&dp);
            }
            if ql.requires_grad() {
                let mut dq = vec![0.0f32; t * v];
                for i in 0..t * v {
                    dq[i] = (d * (q[i] as f64 - p[i] as f64)) as f32;
                }
                ql.accumulate_grad(&dq);
            }
        });
    }
    Ok(out)
}

/// Sum of all elements.
pub fn sum(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let total: f64 = x.with_data(|d| d.iter().map(|&v| v as f64).sum());
    let out = Tensor::from_parts(vec![1], vec![total as f32], tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, o) = (x.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dy) = out_grad(&o) else { return };
            if x.requires_grad() {
                x.accumulate_grad(&vec![dy[0]; x.numel()]);
            }
        });
    }
    Ok(out)
}

/// Mean of all elements.
pub fn mean(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let n = x.numel();
    if n == 0 {
        return Err(Error::shape("mean of empty tensor"));
    }
    let total: f64 = x.with_data(|d| d.iter().map(|&v| v as f64).sum());
    let out = Tensor::from_parts(vec![1], vec![(total / n as f64) as f32], tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, o) = (x.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dy) = out_grad(&o) else { return };
            if x.requires_grad() {
                x.accumulate_grad(&vec![dy[0] / n as f32; n]);
            }
        });
    }
    Ok(out)
}

/// Elementwise min(x, cap); gradient passes only where x < cap.
pub fn clamp_max(tape: &Tape, x: &Tensor, cap: f32) -> Result<Tensor> {
    let out: Vec<f32> = x.with_data(|d| d.iter().map(|&v| v.min(cap)).collect());
    let out = Tensor::from_parts(x.shape().to_vec(), out, tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, o) = (x.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dy) = out_grad(&o) else { return };
            if !x.requires_grad() {
                return;
            }
            let dx: Vec<f32> = x.with_data(|xd| {
                xd.iter()
                    .zip(&dy)
                    .map(|(&v, &d)| if v < cap { d } else { 0.0 })
                    .collect()
            });
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Row gather: out[i] = table[ids[i]].
pub fn embedding(tape: &Tape, table: &Tensor, ids: &[u32]) -> Result<Tensor> {
    let sh = table.shape().to_vec();
    if sh.len() != 2 {
        return Err(Error::shape(format!("embedding table must be 2-d, got {sh:?}")));
    }
    let (rows, d) = (sh[0], sh[1]);
    for &id in ids {
        if id as usize >= rows {
            return Err(Error::numeric(format!(
                "embedding id {id} out of range for table with {rows} rows"
            )));
        }
    }
    let mut out = vec![0.0f32; ids.len() * d];
    table.with_data(|td| {
        for (i, &id) in ids.iter().enumerate() {
            out[i * d..(i + 1) * d].copy_from_slice(&td[id as usize * d..(id as usize + 1) * d]);
        }
    });
    let out = Tensor::from_parts(vec![ids.len(), d], out, tape.tracks(&[table]));
    if out.requires_grad() {
        let (table, o) = (table.clone(), out.clone());
        let ids = ids.to_vec();
        tape.push(&[&out], move || {
            let Some(dy) = out_grad(&o) else { return };
            if !table.requires_grad() {
                return;
            }
            let mut dt = vec![0.0f64; rows * d];
            for (i, &id) in ids.iter().enumerate() {
                let row = &dy[i * d..(i + 1) * d];
                let slot = &mut dt[id as usize * d..(id as usize + 1) * d];
                for (s, &v) in slot.iter_mut().zip(row) {
                    *s += v as f64;
                }
            }
            table.accumulate_grad_f64(&dt);
        });
    }
    Ok(out)
}

/// [t, h·dh] -> [h, t, dh]
pub fn to_heads(tape: &Tape, x: &Tensor, n_heads: usize) -> Result<Tensor> {
    let sh = x.shape().to_vec();
    if sh.len() != 2 || sh[1] % n_heads != 0 {
        return Err(Error::shape(format!(
            "to_heads: shape {sh:?} not splittable into {n_heads} heads"
        )));
    }
    let (t, d) = (sh[0], sh[1]);
    let dh = d / n_heads;
    let mut out = vec![0.0f32; t * d];
    x.with_data(|xd| {
        for h in 0..n_heads {
            for i in 0..t {
                let src = &xd[i * d + h * dh..i * d + (h + 1) * dh];
                out[(h * t + i) * dh..(h * t + i + 1) * dh].copy_from_slice(src);
            }
        }
    });
    let out = Tensor::from_parts(vec![n_heads, t, dh], out, tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, o) = (x.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dy) = out_grad(&o) else { return };
            if !x.requires_grad() {
                return;
            }
            let mut dx = vec![0.0f32; t * d];
            for h in 0..n_heads {
                for i in 0..t {
                    let src = &dy[(h * t + i) * dh..(h * t + i + 1) * dh];
                    dx[i * d + h * dh..i * d + (h + 1) * dh].copy_from_slice(src);
                }
            }
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// [h, t, dh] -> [t, h·dh]
pub fn from_heads(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let sh = x.shape().to_vec();
    if sh.len() != 3 {
        return Err(Error::shape(format!("from_heads expects 3-d, got {sh:?}")));
    }
    let (n_heads, t, dh) = (sh[0], sh[1], sh[2]);
    let d = n_heads * dh;
    let mut out = vec![0.0f32; t * d];
    x.with_data(|xd| {
        for h in 0..n_heads {
            for i in 0..t {
                let src = &xd[(h * t + i) * dh..(h * t + i + 1) * dh];
                out[i * d + h * dh..i * d + (h + 1) * dh].copy_from_slice(src);
            }
        }
    });
    let out = Tensor::from_parts(vec![t, d], out, tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, o) = (x.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dy) = out_grad(&o) else { return };
            if !x.requires_grad() {
                return;
            }
            let mut dx = vec![0.0f32; t * d];
            for h in 0..n_heads {
                for i in 0..t {
                    let src = &dy[i * d + h * dh..i * d + (h + 1) * dh];
                    dx[(h * t + i) * dh..(h * t + i + 1) * dh].copy_from_slice(src);
                }
            }
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Concatenate [h, t_i, dh] parts along the token axis (axis 1).
pub fn concat_tokens(tape: &Tape, parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::shape("concat_tokens of zero parts"));
    }
    if parts.len() == 1 {
        return Ok(parts[0].clone());
    }
    let first = parts[0].shape().to_vec();
    if first.len() != 3 {
        return Err(Error::shape(format!("concat_tokens expects 3-d, got {first:?}")));
    }
    let (h, dh) = (first[0], first[2]);
    let mut lens = Vec::with_capacity(parts.len());
    for p in parts {
        let sh = p.shape();
        if sh.len() != 3 || sh[0] != h || sh[2] != dh {
            return Err(Error::shape(format!(
                "concat_tokens geometry mismatch: {:?} vs {:?}",
                first, sh
            )));
        }
        lens.push(sh[1]);
    }
    let total: usize = lens.iter().sum();
    let mut out = vec![0.0f32; h * total * dh];
    for hh in 0..h {
        let mut cursor = 0usize;
        for (p, &len) in parts.iter().zip(&lens) {
            p.with_data(|pd| {
                let src = &pd[hh * len * dh..(hh + 1) * len * dh];
                let dst = &mut out[(hh * total + cursor) * dh..(hh * total + cursor + len) * dh];
                dst.copy_from_slice(src);
            });
            cursor += len;
        }
    }
    let tracked = tape.is_recording() && parts.iter().any(|p| p.requires_grad());
    let out = Tensor::from_parts(vec![h, total, dh], out, tracked);
    if out.requires_grad() {
        let parts: Vec<Tensor> = parts.iter().map(|&p| p.clone()).collect();
        let o = out.clone();
        tape.push(&[&out], move || {
            let Some(dy) = out_grad(&o) else { return };
            let mut offset = 0usize;
            for (p, &len) in parts.iter().zip(&lens) {
                if p.requires_grad() {
                    let mut dp = vec![0.0f32; h * len * dh];
                    for hh in 0..h {
                        let src =
                            &dy[(hh * total + offset) * dh..(hh * total + offset + len) * dh];
                        dp[hh * len * dh..(hh + 1) * len * dh].copy_from_slice(src);
                    }
                    p.accumulate_grad(&dp);
                }
                offset += len;
            }
        });
    }
    Ok(out)
}

/// Same data, new shape (row-major layout is unchanged).
pub fn reshape(tape: &Tape, x: &Tensor, new_shape: Vec<usize>) -> Result<Tensor> {
    let numel: usize = new_shape.iter().product();
    if numel != x.numel() {
        return Err(Error::shape(format!(
            "reshape {:?} -> {:?} changes element count",
            x.shape(),
            new_shape
        )));
    }
    let out = Tensor::from_parts(new_shape, x.to_vec(), tape.tracks(&[x]));
    if out.requires_grad() {
        let (x, o) = (x.clone(), out.clone());
        tape.push(&[&out], move || {
            let Some(dy) = out_grad(&o) else { return };
            if x.requires_grad() {
                x.accumulate_grad(&dy);
            }
        });
    }
    Ok(out)
}

/// Split columns of [t, n] into parts of the given widths.
pub fn split_cols(tape: &Tape, x: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let sh = x.shape().to_vec();
    if sh.len() != 2 {
        return Err(Error::shape(format!("split_cols expects 2-d, got {sh:?}")));
    }
    let (t, n) = (sh[0], sh[1]);
    if widths.iter().sum::<usize>() != n {
        return Err(Error::shape(format!(
            "split_cols widths {widths:?} do not sum to {n}"
        )));
    }
    let tracked = tape.tracks(&[x]);
    let mut outs = Vec::with_capacity(widths.len());
    let mut offset = 0usize;
    x.with_data(|xd| {
        for &w in widths {
            let mut part = vec![0.0f32; t * w];
            for i in 0..t {
                part[i * w..(i + 1) * w].copy_from_slice(&xd[i * n + offset..i * n + offset + w]);
            }
            outs.push(Tensor::from_parts(vec![t, w], part, tracked));
            offset += w;
        }
    });
    if tracked {
        let x = x.clone();
        let outs_c: Vec<Tensor> = outs.clone();
        let out_refs: Vec<&Tensor> = outs.iter().collect();
        let widths = widths.to_vec();
        tape.push(&out_refs, move || {
            if !x.requires_grad() {
                return;
            }
            let mut dx = vec![0.0f32; t * n];
            let mut any = false;
            let mut offset = 0usize;
            for (o, &w) in outs_c.iter().zip(&widths) {
                if let Some(dy) = out_grad(o) {
                    any = true;
                    for i in 0..t {
                        dx[i * n + offset..i * n + offset + w]
                            .copy_from_slice(&dy[i * w..(i + 1) * w]);
                    }
                }
                offset += w;
            }
            if any {
                x.accumulate_grad(&dx);
            }
        });
    }
    Ok(outs)
}
