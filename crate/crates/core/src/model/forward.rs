//! Forward pass with cached activations and the matching manual backward pass.

use serde::Serialize;

use super::{Aggregation, Checkpoint, EncoderKind};
use crate::error::{Error, Result};
use crate::linalg::{affine, axpy, dot, matvec_t_acc, outer_acc, Real};
use crate::semantic::{ensure_valid, ItemCatalog};

/// Activations of one sequence encoding, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Forward<T> {
    pub n: usize,
    /// `n x d` item vectors.
    pub items: Vec<T>,
    /// For max pooling: which digit supplied each coordinate (`n x d`).
    pub argmax: Vec<u16>,
    /// Attention query, keys, values and weights (empty for the reference encoder).
    pub q: Vec<T>,
    pub keys: Vec<T>,
    pub vals: Vec<T>,
    pub alpha: Vec<T>,
    /// MLP input `[summary ∥ v_last]`.
    pub x: Vec<T>,
    pub z1: Vec<T>,
    pub s: Vec<T>,
}

pub(crate) struct HeadForward<T> {
    pub u: Vec<T>,
    pub g: Vec<T>,
}

/// Per-digit and total MTP loss; `total` is the in-order sum of `per_digit`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossTerms {
    pub total: f64,
    pub per_digit: Vec<f64>,
}

/// Flat gradient vector sharing the checkpoint's [`super::Layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub values: Vec<T>,
    /// Mean batch loss.
    pub loss: f64,
}

pub(crate) fn history_codes<'a>(
    catalog: &'a ItemCatalog,
    history: &[u32],
    cap: usize,
) -> Vec<&'a [u16]> {
    let start = history.len().saturating_sub(cap);
    history[start..]
        .iter()
        .map(|&i| catalog.codes(i as usize))
        .collect()
}

pub(crate) fn aggregate_into<T: Real>(
    ck: &Checkpoint<T>,
    codes: &[u16],
    out: &mut [T],
    argmax: Option<&mut [u16]>,
) {
    match ck.shape.aggregation {
        Aggregation::Mean => {
            out.fill(T::zero());
            for (j, &c) in codes.iter().enumerate() {
                axpy(T::one(), ck.token(j, c as usize), out);
            }
            let inv = T::one() / T::from_f64c(codes.len() as f64);
            out.iter_mut().for_each(|v| *v *= inv);
        }
        Aggregation::Max => {
            out.copy_from_slice(ck.token(0, codes[0] as usize));
            let mut arg = vec![0u16; out.len()];
            for (j, &c) in codes.iter().enumerate().skip(1) {
                for ((o, a), &e) in out.iter_mut().zip(arg.iter_mut()).zip(ck.token(j, c as usize)) {
                    if e > *o {
                        *o = e;
                        *a = j as u16;
                    }
                }
            }
            if let Some(dst) = argmax {
                dst.copy_from_slice(&arg);
            }
        }
    }
}

pub(crate) fn encode_codes<T: Real>(ck: &Checkpoint<T>, codes: &[&[u16]]) -> Forward<T> {
    let d = ck.layout.d;
    let n = codes.len();
    let mut items = vec![T::zero(); n * d];
    let mut argmax = if ck.shape.aggregation == Aggregation::Max {
        vec![0u16; n * d]
    } else {
        Vec::new()
    };
    for (i, id) in codes.iter().enumerate() {
        let am = if argmax.is_empty() {
            None
        } else {
            Some(&mut argmax[i * d..(i + 1) * d])
        };
        aggregate_into(ck, id, &mut items[i * d..(i + 1) * d], am);
    }
    let mut f = encode(ck, &items, n);
    f.argmax = argmax;
    f
}

pub(crate) fn encode<T: Real>(ck: &Checkpoint<T>, items: &[T], n: usize) -> Forward<T> {
    let l = &ck.layout;
    let (d, h) = (l.d, l.h);
    let p = &ck.params;
    let last = &items[(n - 1) * d..n * d];
    let mut x = vec![T::zero(); 2 * d];
    let (mut q, mut keys, mut vals, mut alpha) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());

    match ck.shape.encoder {
        EncoderKind::Reference => {
            let inv = T::one() / T::from_f64c(n as f64);
            for v in items.chunks_exact(d) {
                axpy(inv, v, &mut x[..d]);
            }
        }
        EncoderKind::Attention => {
            let zeros = vec![T::zero(); d];
            q = vec![T::zero(); d];
            affine(&p[l.wq.clone()], &zeros, last, &mut q);
            keys = vec![T::zero(); n * d];
            vals = vec![T::zero(); n * d];
            for (i, v) in items.chunks_exact(d).enumerate() {
                affine(&p[l.wk.clone()], &zeros, v, &mut keys[i * d..(i + 1) * d]);
                affine(&p[l.wv.clone()], &zeros, v, &mut vals[i * d..(i + 1) * d]);
            }
            let scale = T::one() / T::from_f64c(d as f64).sqrt();
            let scores: Vec<T> = keys.chunks_exact(d).map(|k| dot(&q, k) * scale).collect();
            alpha = softmax(&scores);
            for (i, v) in vals.chunks_exact(d).enumerate() {
                axpy(alpha[i], v, &mut x[..d]);
            }
        }
    }
    x[d..].copy_from_slice(last);

    let mut z1 = vec![T::zero(); h];
    affine(&p[l.w1.clone()], &p[l.b1.clone()], &x, &mut z1);
    let a1: Vec<T> = z1.iter().map(|&z| z.max(T::zero())).collect();
    let mut s = vec![T::zero(); d];
    affine(&p[l.w2.clone()], &p[l.b2.clone()], &a1, &mut s);

    Forward {
        n,
        items: items.to_vec(),
        argmax: Vec::new(),
        q,
        keys,
        vals,
        alpha,
        x,
        z1,
        s,
    }
}

pub(crate) fn head_forward<T: Real>(ck: &Checkpoint<T>, j: usize, s: &[T]) -> HeadForward<T> {
    let l = &ck.layout;
    let hr = l.head(j);
    let p = &ck.params;
    let mut u = vec![T::zero(); l.h];
    affine(&p[hr.a.clone()], &p[hr.a_bias.clone()], s, &mut u);
    let r: Vec<T> = u.iter().map(|&v| v.max(T::zero())).collect();
    let mut g = vec![T::zero(); l.d];
    affine(&p[hr.b.clone()], &p[hr.b_bias.clone()], &r, &mut g);
    HeadForward { u, g }
}

fn softmax<T: Real>(v: &[T]) -> Vec<T> {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / sum).collect()
}

/// Digit-`j` logits `E_j g / τ`.
fn digit_logits<T: Real>(ck: &Checkpoint<T>, j: usize, g: &[T], out: &mut [T]) {
    let inv_tau = T::from_f64c(1.0 / ck.tau);
    let table = ck.table(j);
    for (o, row) in out.iter_mut().zip(table.chunks_exact(ck.layout.d)) {
        *o = dot(row, g) * inv_tau;
    }
}

fn log_softmax<T: Real>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = v.iter().map(|&x| (x - max).exp()).sum();
    let lse = max + sum.ln();
    v.iter_mut().for_each(|x| *x -= lse);
}

pub(crate) fn loss_terms<T: Real>(ck: &Checkpoint<T>, s: &[T], target: &[u16]) -> LossTerms {
    let mut logits = vec![T::zero(); ck.layout.big_m];
    let per_digit: Vec<f64> = target
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            let hf = head_forward(ck, j, s);
            digit_logits(ck, j, &hf.g, &mut logits);
            log_softmax(&mut logits);
            -logits[c as usize].to_f64c()
        })
        .collect();
    let mut total = 0.0;
    for &l in &per_digit {
        total += l;
    }
    LossTerms { total, per_digit }
}

/// Adds `scale * ∂loss/∂θ` for one (history, target) example into `grad`
/// and returns the unscaled loss.
pub(crate) fn accumulate_example<T: Real>(
    ck: &Checkpoint<T>,
    history: &[&[u16]],
    target: &[u16],
    scale: T,
    grad: &mut [T],
) -> f64 {
    let l = &ck.layout;
    let (d, h, big_m) = (l.d, l.h, l.big_m);
    let p = &ck.params;
    let fwd = encode_codes(ck, history);
    let inv_tau = T::from_f64c(1.0 / ck.tau);

    let mut ds = vec![T::zero(); d];
    let mut logits = vec![T::zero(); big_m];
    let mut loss = 0.0;
    for (j, &tc) in target.iter().enumerate() {
        let hf = head_forward(ck, j, &fwd.s);
        digit_logits(ck, j, &hf.g, &mut logits);
        log_softmax(&mut logits);
        loss += -logits[tc as usize].to_f64c();

        // dL/dlogit = softmax - onehot; logits = E_j g / τ.
        let mut dg = vec![T::zero(); d];
        let table = l.table(j);
        for (c, &logit) in logits.iter().enumerate() {
            let mut dz = logit.exp();
            if c == tc as usize {
                dz -= T::one();
            }
            let coeff = dz * inv_tau * scale;
            if coeff == T::zero() {
                continue;
            }
            let row = table.start + c * d..table.start + (c + 1) * d;
            axpy(coeff, &p[row.clone()], &mut dg);
            axpy(coeff, &hf.g, &mut grad[row]);
        }

        // g = B relu(u) + b, u = A s + a.
        let hr = l.head(j);
        let r: Vec<T> = hf.u.iter().map(|&v| v.max(T::zero())).collect();
        outer_acc(&mut grad[hr.b.clone()], &dg, &r);
        axpy(T::one(), &dg, &mut grad[hr.b_bias.clone()]);
        let mut du = vec![T::zero(); h];
        matvec_t_acc(&p[hr.b.clone()], &dg, &mut du);
        for (g, &u) in du.iter_mut().zip(&hf.u) {
            if u <= T::zero() {
                *g = T::zero();
            }
        }
        outer_acc(&mut grad[hr.a.clone()], &du, &fwd.s);
        axpy(T::one(), &du, &mut grad[hr.a_bias.clone()]);
        matvec_t_acc(&p[hr.a.clone()], &du, &mut ds);
    }

    let dv = encoder_backward(ck, &fwd, &ds, grad);
    aggregation_backward(ck, history, &fwd, &dv, grad);
    loss
}

/// Backpropagates `ds` through the encoder; returns `∂/∂v` for every item (`n x d`).
fn encoder_backward<T: Real>(
    ck: &Checkpoint<T>,
    fwd: &Forward<T>,
    ds: &[T],
    grad: &mut [T],
) -> Vec<T> {
    let l = &ck.layout;
    let (d, h, n) = (l.d, l.h, fwd.n);
    let p = &ck.params;

    let a1: Vec<T> = fwd.z1.iter().map(|&z| z.max(T::zero())).collect();
    outer_acc(&mut grad[l.w2.clone()], ds, &a1);
    axpy(T::one(), ds, &mut grad[l.b2.clone()]);
    let mut dz1 = vec![T::zero(); h];
    matvec_t_acc(&p[l.w2.clone()], ds, &mut dz1);
    for (g, &z) in dz1.iter_mut().zip(&fwd.z1) {
        if z <= T::zero() {
            *g = T::zero();
        }
    }
    outer_acc(&mut grad[l.w1.clone()], &dz1, &fwd.x);
    axpy(T::one(), &dz1, &mut grad[l.b1.clone()]);
    let mut dx = vec![T::zero(); 2 * d];
    matvec_t_acc(&p[l.w1.clone()], &dz1, &mut dx);

    let mut dv = vec![T::zero(); n * d];
    axpy(T::one(), &dx[d..], &mut dv[(n - 1) * d..]);
    let dsum = &dx[..d];
    match ck.shape.encoder {
        EncoderKind::Reference => {
            let inv = T::one() / T::from_f64c(n as f64);
            for row in dv.chunks_exact_mut(d) {
                axpy(inv, dsum, row);
            }
        }
        EncoderKind::Attention => {
            let scale = T::one() / T::from_f64c(d as f64).sqrt();
            let dalpha: Vec<T> = fwd.vals.chunks_exact(d).map(|v| dot(dsum, v)).collect();
            let mean: T = fwd.alpha.iter().zip(&dalpha).map(|(&a, &g)| a * g).sum();
            let mut dq = vec![T::zero(); d];
            for i in 0..n {
                let v_i = &fwd.items[i * d..(i + 1) * d];
                let dscore = fwd.alpha[i] * (dalpha[i] - mean) * scale;
                // values
                let mut dval = dsum.to_vec();
                dval.iter_mut().for_each(|x| *x *= fwd.alpha[i]);
                outer_acc(&mut grad[l.wv.clone()], &dval, v_i);
                matvec_t_acc(&p[l.wv.clone()], &dval, &mut dv[i * d..(i + 1) * d]);
                // keys
                let mut dk = fwd.q.clone();
                dk.iter_mut().for_each(|x| *x *= dscore);
                outer_acc(&mut grad[l.wk.clone()], &dk, v_i);
                matvec_t_acc(&p[l.wk.clone()], &dk, &mut dv[i * d..(i + 1) * d]);
                axpy(dscore, &fwd.keys[i * d..(i + 1) * d], &mut dq);
            }
            let last = &fwd.items[(n - 1) * d..n * d];
            outer_acc(&mut grad[l.wq.clone()], &dq, last);
            matvec_t_acc(&p[l.wq.clone()], &dq, &mut dv[(n - 1) * d..]);
        }
    }
    dv
}

fn aggregation_backward<T: Real>(
    ck: &Checkpoint<T>,
    history: &[&[u16]],
    fwd: &Forward<T>,
    dv: &[T],
    grad: &mut [T],
) {
    let l = &ck.layout;
    let d = l.d;
    match ck.shape.aggregation {
        Aggregation::Mean => {
            let inv = T::one() / T::from_f64c(l.m as f64);
            for (i, codes) in history.iter().enumerate() {
                let g = &dv[i * d..(i + 1) * d];
                for (j, &c) in codes.iter().enumerate() {
                    axpy(inv, g, &mut grad[l.token(j, c as usize)]);
                }
            }
        }
        Aggregation::Max => {
            for (i, codes) in history.iter().enumerate() {
                for k in 0..d {
                    let j = fwd.argmax[i * d + k] as usize;
                    let row = l.token(j, codes[j] as usize);
                    grad[row.start + k] += dv[i * d + k];
                }
            }
        }
    }
}

/// Mean-loss gradients over `(history, target)` pairs of catalog items.
pub fn backward<T: Real>(
    ck: &Checkpoint<T>,
    catalog: &ItemCatalog,
    batch: &[(Vec<u32>, u32)],
) -> Result<Gradients<T>> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    if catalog.scheme() != ck.scheme() {
        return Err(Error::data("catalog and checkpoint schemes differ"));
    }
    let mut values = vec![T::zero(); ck.layout.total];
    let scale = T::one() / T::from_f64c(batch.len() as f64);
    let mut loss = 0.0;
    for (history, target) in batch {
        if history.is_empty() {
            return Err(Error::contract("empty history in batch"));
        }
        for &i in history.iter().chain(std::iter::once(target)) {
            catalog.check_item(i as usize)?;
        }
        let codes = history_codes(catalog, history, ck.max_seq_len);
        let t = catalog.codes(*target as usize);
        ensure_valid(t, ck.scheme())?;
        loss += accumulate_example(ck, &codes, t, scale, &mut values);
    }
    Ok(Gradients {
        values,
        loss: loss / batch.len() as f64,
    })
}
