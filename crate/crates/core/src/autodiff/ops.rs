//! Primitive set: forward evaluation and vector-Jacobian products.
//!
//! Broadcasting for binary elementwise ops is deliberately narrow: equal
//! shapes, one-element scalars, or a trailing-dimension match (the smaller
//! shape equals a suffix of the larger one). Anything else is an error.

use super::{AutodiffError, Tensor};

/// A primitive operation together with its non-tensor attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum Prim {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Matmul,
    Affine,
    LeakyRelu { slope: f64 },
    Tanh,
    Softplus,
    Square,
    Sum,
    Mean,
    Reshape { shape: Vec<usize> },
    Slice { start: usize, end: usize },
    Concat,
    Broadcast { shape: Vec<usize> },
    UpsampleNearest { factor: usize },
    MaskedSumSquares,
}

impl Prim {
    pub fn name(&self) -> &'static str {
        match self {
            Prim::Leaf => "leaf",
            Prim::Add => "add",
            Prim::Sub => "sub",
            Prim::Mul => "mul",
            Prim::Div => "div",
            Prim::Matmul => "matmul",
            Prim::Affine => "affine",
            Prim::LeakyRelu { .. } => "leaky_relu",
            Prim::Tanh => "tanh",
            Prim::Softplus => "softplus",
            Prim::Square => "square",
            Prim::Sum => "sum",
            Prim::Mean => "mean",
            Prim::Reshape { .. } => "reshape",
            Prim::Slice { .. } => "slice",
            Prim::Concat => "concat",
            Prim::Broadcast { .. } => "broadcast",
            Prim::UpsampleNearest { .. } => "upsample_nearest",
            Prim::MaskedSumSquares => "masked_sum_of_squares",
        }
    }

    /// Parse a primitive id such as `add`, `leaky_relu(0.2)` or
    /// `upsample_nearest(2)`. Shape-carrying primitives (reshape, slice,
    /// broadcast) cannot be named this way and have dedicated entry points.
    pub fn parse(name: &str) -> Result<Prim, AutodiffError> {
        let (base, arg) = match name.find('(') {
            Some(i) if name.ends_with(')') => (&name[..i], Some(&name[i + 1..name.len() - 1])),
            _ => (name, None),
        };
        let num = |a: Option<&str>| -> Option<f64> { a.and_then(|s| s.trim().parse().ok()) };
        let prim = match base {
            "add" => Prim::Add,
            "sub" => Prim::Sub,
            "mul" => Prim::Mul,
            "div" => Prim::Div,
            "matmul" => Prim::Matmul,
            "affine" => Prim::Affine,
            "leaky_relu" => Prim::LeakyRelu {
                slope: num(arg).unwrap_or(0.2),
            },
            "tanh" => Prim::Tanh,
            "softplus" => Prim::Softplus,
            "square" => Prim::Square,
            "sum" => Prim::Sum,
            "mean" => Prim::Mean,
            "concat" => Prim::Concat,
            "upsample_nearest" => Prim::UpsampleNearest {
                factor: num(arg).unwrap_or(2.0) as usize,
            },
            "masked_sum_of_squares" => Prim::MaskedSumSquares,
            _ => return Err(AutodiffError::UnknownPrimitive(name.to_string())),
        };
        Ok(prim)
    }
}

// ── broadcasting helpers ─────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq)]
enum Bcast {
    Equal,
    /// Right operand broadcasts over the left (scalar or trailing match).
    Right,
    /// Left operand broadcasts over the right.
    Left,
}

fn bcast_kind(prim: &'static str, a: &[usize], b: &[usize]) -> Result<Bcast, AutodiffError> {
    let len = |s: &[usize]| s.iter().product::<usize>();
    if a == b {
        return Ok(Bcast::Equal);
    }
    if len(b) == 1 {
        return Ok(Bcast::Right);
    }
    if len(a) == 1 {
        return Ok(Bcast::Left);
    }
    if a.len() > b.len() && a.ends_with(b) {
        return Ok(Bcast::Right);
    }
    if b.len() > a.len() && b.ends_with(a) {
        return Ok(Bcast::Left);
    }
    Err(AutodiffError::ShapeMismatch {
        prim,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    })
}

fn binary_forward(
    prim: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, AutodiffError> {
    let out = match bcast_kind(prim, a.shape(), b.shape())? {
        Bcast::Equal => {
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::from_vec(a.shape().to_vec(), data)?
        }
        Bcast::Right => {
            let bd = b.data();
            let m = bd.len();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bd[i % m]))
                .collect();
            Tensor::from_vec(a.shape().to_vec(), data)?
        }
        Bcast::Left => {
            let ad = a.data();
            let m = ad.len();
            let data = b
                .data()
                .iter()
                .enumerate()
                .map(|(i, &y)| f(ad[i % m], y))
                .collect();
            Tensor::from_vec(b.shape().to_vec(), data)?
        }
    };
    Ok(out)
}

/// Reduce a gradient in the output shape back to an operand shape by summing
/// over broadcast positions.
fn reduce_to_shape(grad: &[f64], target_len: usize) -> Vec<f64> {
    if grad.len() == target_len {
        return grad.to_vec();
    }
    let mut out = vec![0.0; target_len];
    for (i, &g) in grad.iter().enumerate() {
        out[i % target_len] += g;
    }
    out
}

// ── dense kernels ────────────────────────────────────────────────────

/// C[m,n] = A[m,k] · B[k,n]
pub fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// C[m,k] = A[m,n] · B[k,n]ᵀ
fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            out[i * k + kk] = acc;
        }
    }
}

/// C[k,n] = A[m,k]ᵀ · B[m,n]
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn softplus_stable(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The mask of `masked_sum_of_squares` may either match the value shape
/// exactly or match all but the trailing (channel) axis, in which case it is
/// broadcast across channels. Returns the per-element repeat factor.
fn mask_repeat(
    d_shape: &[usize],
    m_shape: &[usize],
    d_len: usize,
    m_len: usize,
) -> Result<usize, AutodiffError> {
    if d_shape == m_shape {
        return Ok(1);
    }
    if !d_shape.is_empty() && d_shape[..d_shape.len() - 1] == *m_shape {
        return Ok(d_shape[d_shape.len() - 1]);
    }
    // Flat tensors of equal length also count (shape-[n] vs shape-[n]).
    if d_len == m_len && d_shape.iter().product::<usize>() == m_shape.iter().product::<usize>() {
        return Ok(1);
    }
    Err(AutodiffError::ShapeMismatch {
        prim: "masked_sum_of_squares",
        lhs: d_shape.to_vec(),
        rhs: m_shape.to_vec(),
    })
}

// ── forward ──────────────────────────────────────────────────────────

pub(crate) fn forward(prim: &Prim, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
    let arity = |n: usize| -> Result<(), AutodiffError> {
        if inputs.len() != n {
            return Err(AutodiffError::InvalidArg {
                prim: prim.name(),
                msg: format!("expected {n} inputs, got {}", inputs.len()),
            });
        }
        Ok(())
    };
    match prim {
        Prim::Leaf => {
            arity(1)?;
            Ok(inputs[0].clone())
        }
        Prim::Add => {
            arity(2)?;
            binary_forward("add", inputs[0], inputs[1], |x, y| x + y)
        }
        Prim::Sub => {
            arity(2)?;
            binary_forward("sub", inputs[0], inputs[1], |x, y| x - y)
        }
        Prim::Mul => {
            arity(2)?;
            binary_forward("mul", inputs[0], inputs[1], |x, y| x * y)
        }
        Prim::Div => {
            arity(2)?;
            binary_forward("div", inputs[0], inputs[1], |x, y| x / y)
        }
        Prim::Matmul => {
            arity(2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(AutodiffError::ShapeMismatch {
                    prim: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![0.0; m * n];
            mm_nn(a.data(), b.data(), m, k, n, &mut out);
            Tensor::from_vec(vec![m, n], out)
        }
        Prim::Affine => {
            arity(3)?;
            let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
            if w.rank() != 2 || b.rank() != 1 || b.shape()[0] != w.shape()[1] {
                return Err(AutodiffError::ShapeMismatch {
                    prim: "affine",
                    lhs: w.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let (k, j) = (w.shape()[0], w.shape()[1]);
            let rows = match x.rank() {
                1 if x.shape()[0] == k => 1,
                2 if x.shape()[1] == k => x.shape()[0],
                _ => {
                    return Err(AutodiffError::ShapeMismatch {
                        prim: "affine",
                        lhs: x.shape().to_vec(),
                        rhs: w.shape().to_vec(),
                    })
                }
            };
            let mut out = vec![0.0; rows * j];
            mm_nn(x.data(), w.data(), rows, k, j, &mut out);
            for r in 0..rows {
                for (o, &bv) in out[r * j..(r + 1) * j].iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            let shape = if x.rank() == 1 { vec![j] } else { vec![rows, j] };
            Tensor::from_vec(shape, out)
        }
        Prim::LeakyRelu { slope } => {
            arity(1)?;
            Ok(inputs[0].map(|v| if v > 0.0 { v } else { slope * v }))
        }
        Prim::Tanh => {
            arity(1)?;
            Ok(inputs[0].map(f64::tanh))
        }
        Prim::Softplus => {
            arity(1)?;
            Ok(inputs[0].map(softplus_stable))
        }
        Prim::Square => {
            arity(1)?;
            Ok(inputs[0].map(|v| v * v))
        }
        Prim::Sum => {
            arity(1)?;
            Ok(Tensor::scalar(inputs[0].data().iter().sum()))
        }
        Prim::Mean => {
            arity(1)?;
            let n = inputs[0].len().max(1) as f64;
            Ok(Tensor::scalar(inputs[0].data().iter().sum::<f64>() / n))
        }
        Prim::Reshape { shape } => {
            arity(1)?;
            inputs[0].reshape(shape)
        }
        Prim::Slice { start, end } => {
            arity(1)?;
            let x = inputs[0];
            if x.rank() == 0 || *start >= *end || *end > x.shape()[0] {
                return Err(AutodiffError::InvalidArg {
                    prim: "slice",
                    msg: format!("range {start}..{end} on shape {:?}", x.shape()),
                });
            }
            let row = x.len() / x.shape()[0];
            let mut shape = x.shape().to_vec();
            shape[0] = end - start;
            Tensor::from_vec(shape, x.data()[start * row..end * row].to_vec())
        }
        Prim::Concat => {
            if inputs.is_empty() {
                return Err(AutodiffError::InvalidArg {
                    prim: "concat",
                    msg: "no inputs".into(),
                });
            }
            let first = inputs[0];
            if first.rank() == 0 {
                return Err(AutodiffError::InvalidArg {
                    prim: "concat",
                    msg: "cannot concat rank-0 tensors".into(),
                });
            }
            let mut rows = 0;
            let mut data = Vec::new();
            for t in inputs {
                if t.rank() != first.rank() || t.shape()[1..] != first.shape()[1..] {
                    return Err(AutodiffError::ShapeMismatch {
                        prim: "concat",
                        lhs: first.shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                rows += t.shape()[0];
                data.extend_from_slice(t.data());
            }
            let mut shape = first.shape().to_vec();
            shape[0] = rows;
            Tensor::from_vec(shape, data)
        }
        Prim::Broadcast { shape } => {
            arity(1)?;
            let x = inputs[0];
            let target: usize = shape.iter().product();
            let ok = x.len() == 1 || (shape.len() > x.rank() && shape.ends_with(x.shape()));
            if !ok && x.shape() != &shape[..] {
                return Err(AutodiffError::ShapeMismatch {
                    prim: "broadcast",
                    lhs: x.shape().to_vec(),
                    rhs: shape.clone(),
                });
            }
            let xd = x.data();
            let data = (0..target).map(|i| xd[i % xd.len()]).collect();
            Tensor::from_vec(shape.clone(), data)
        }
        Prim::UpsampleNearest { factor } => {
            arity(1)?;
            let x = inputs[0];
            if x.rank() != 3 || *factor == 0 {
                return Err(AutodiffError::InvalidArg {
                    prim: "upsample_nearest",
                    msg: format!("need rank-3 input and factor > 0, got {:?}", x.shape()),
                });
            }
            let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let f = *factor;
            let mut data = vec![0.0; h * f * w * f * c];
            let xd = x.data();
            for y in 0..h * f {
                for xx in 0..w * f {
                    let src = ((y / f) * w + (xx / f)) * c;
                    let dst = (y * w * f + xx) * c;
                    data[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                }
            }
            Tensor::from_vec(vec![h * f, w * f, c], data)
        }
        Prim::MaskedSumSquares => {
            arity(2)?;
            let (d, m) = (inputs[0], inputs[1]);
            let rep = mask_repeat(d.shape(), m.shape(), d.len(), m.len())?;
            let md = m.data();
            let acc = d
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| md[i / rep % md.len()] * v * v)
                .sum();
            Ok(Tensor::scalar(acc))
        }
    }
}

// ── backward ─────────────────────────────────────────────────────────

/// Per-input gradients of `prim` given upstream gradient `gout` (flat, in the
/// output shape). `None` marks non-differentiable inputs (masks).
pub(crate) fn backward(
    prim: &Prim,
    inputs: &[&Tensor],
    output: &Tensor,
    gout: &[f64],
) -> Vec<Option<Vec<f64>>> {
    match prim {
        Prim::Leaf => vec![None],
        Prim::Add => {
            let a = reduce_to_shape(gout, inputs[0].len());
            let b = reduce_to_shape(gout, inputs[1].len());
            vec![Some(a), Some(b)]
        }
        Prim::Sub => {
            let a = reduce_to_shape(gout, inputs[0].len());
            let neg: Vec<f64> = gout.iter().map(|g| -g).collect();
            let b = reduce_to_shape(&neg, inputs[1].len());
            vec![Some(a), Some(b)]
        }
        Prim::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (ad, bd) = (a.data(), b.data());
            let ga_full: Vec<f64> = gout
                .iter()
                .enumerate()
                .map(|(i, &g)| g * bd[i % bd.len()])
                .collect();
            let gb_full: Vec<f64> = gout
                .iter()
                .enumerate()
                .map(|(i, &g)| g * ad[i % ad.len()])
                .collect();
            vec![
                Some(reduce_to_shape(&ga_full, ad.len())),
                Some(reduce_to_shape(&gb_full, bd.len())),
            ]
        }
        Prim::Div => {
            let (a, b) = (inputs[0], inputs[1]);
            let (ad, bd) = (a.data(), b.data());
            let ga_full: Vec<f64> = gout
                .iter()
                .enumerate()
                .map(|(i, &g)| g / bd[i % bd.len()])
                .collect();
            let gb_full: Vec<f64> = gout
                .iter()
                .enumerate()
                .map(|(i, &g)| {
                    let bv = bd[i % bd.len()];
                    -g * ad[i % ad.len()] / (bv * bv)
                })
                .collect();
            vec![
                Some(reduce_to_shape(&ga_full, ad.len())),
                Some(reduce_to_shape(&gb_full, bd.len())),
            ]
        }
        Prim::Matmul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut ga = vec![0.0; m * k];
            mm_nt(gout, b.data(), m, n, k, &mut ga);
            let mut gb = vec![0.0; k * n];
            mm_tn(a.data(), gout, m, k, n, &mut gb);
            vec![Some(ga), Some(gb)]
        }
        Prim::Affine => {
            let (x, w) = (inputs[0], inputs[1]);
            let (k, j) = (w.shape()[0], w.shape()[1]);
            let rows = x.len() / k;
            let mut gx = vec![0.0; rows * k];
            mm_nt(gout, w.data(), rows, j, k, &mut gx);
            let mut gw = vec![0.0; k * j];
            mm_tn(x.data(), gout, rows, k, j, &mut gw);
            let mut gb = vec![0.0; j];
            for r in 0..rows {
                for (g, &go) in gb.iter_mut().zip(&gout[r * j..(r + 1) * j]) {
                    *g += go;
                }
            }
            vec![Some(gx), Some(gw), Some(gb)]
        }
        Prim::LeakyRelu { slope } => {
            let g = inputs[0]
                .data()
                .iter()
                .zip(gout)
                .map(|(&x, &g)| if x > 0.0 { g } else { slope * g })
                .collect();
            vec![Some(g)]
        }
        Prim::Tanh => {
            let g = output
                .data()
                .iter()
                .zip(gout)
                .map(|(&y, &g)| g * (1.0 - y * y))
                .collect();
            vec![Some(g)]
        }
        Prim::Softplus => {
            let g = inputs[0]
                .data()
                .iter()
                .zip(gout)
                .map(|(&x, &g)| g * sigmoid(x))
                .collect();
            vec![Some(g)]
        }
        Prim::Square => {
            let g = inputs[0]
                .data()
                .iter()
                .zip(gout)
                .map(|(&x, &g)| g * 2.0 * x)
                .collect();
            vec![Some(g)]
        }
        Prim::Sum => {
            vec![Some(vec![gout[0]; inputs[0].len()])]
        }
        Prim::Mean => {
            let n = inputs[0].len().max(1) as f64;
            vec![Some(vec![gout[0] / n; inputs[0].len()])]
        }
        Prim::Reshape { .. } => vec![Some(gout.to_vec())],
        Prim::Slice { start, end } => {
            let x = inputs[0];
            let row = x.len() / x.shape()[0];
            let mut g = vec![0.0; x.len()];
            g[start * row..end * row].copy_from_slice(gout);
            vec![Some(g)]
        }
        Prim::Concat => {
            let mut grads = Vec::with_capacity(inputs.len());
            let mut offset = 0;
            for t in inputs {
                grads.push(Some(gout[offset..offset + t.len()].to_vec()));
                offset += t.len();
            }
            grads
        }
        Prim::Broadcast { .. } => {
            vec![Some(reduce_to_shape(gout, inputs[0].len()))]
        }
        Prim::UpsampleNearest { factor } => {
            let x = inputs[0];
            let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let f = *factor;
            let mut g = vec![0.0; x.len()];
            for y in 0..h * f {
                for xx in 0..w * f {
                    let src = ((y / f) * w + (xx / f)) * c;
                    let dst = (y * w * f + xx) * c;
                    for ch in 0..c {
                        g[src + ch] += gout[dst + ch];
                    }
                }
            }
            vec![Some(g)]
        }
        Prim::MaskedSumSquares => {
            let (d, m) = (inputs[0], inputs[1]);
            let md = m.data();
            let rep = if d.len() == md.len() {
                1
            } else {
                d.len() / md.len()
            };
            let g0 = gout[0];
            let gd = d
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| g0 * 2.0 * md[i / rep % md.len()] * v)
                .collect();
            vec![Some(gd), None]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_elementwise() {
        let out = forward(&Prim::Add, &[&t(&[2], &[1.0, 2.0]), &t(&[2], &[3.0, 4.0])]).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0]);
    }

    #[test]
    fn matmul_identity() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let out = forward(&Prim::Matmul, &[&a, &eye]).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn masked_sum_of_squares_hand_case() {
        // a - b = [0, 2, 0, 4], mask [0,1,0,1] -> 4 + 16 = 20
        let d = forward(
            &Prim::Sub,
            &[&t(&[4], &[1.0, 2.0, 3.0, 4.0]), &t(&[4], &[1.0, 0.0, 3.0, 0.0])],
        )
        .unwrap();
        let m = t(&[4], &[0.0, 1.0, 0.0, 1.0]);
        let out = forward(&Prim::MaskedSumSquares, &[&d, &m]).unwrap();
        assert_eq!(out.item(), 20.0);
    }

    #[test]
    fn masked_sum_broadcasts_mask_over_channels() {
        // d: [2,1,2] image-like, mask: [2,1]
        let d = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let m = t(&[2, 1], &[1.0, 0.0]);
        let out = forward(&Prim::MaskedSumSquares, &[&d, &m]).unwrap();
        assert_eq!(out.item(), 1.0 + 4.0);
    }

    #[test]
    fn trailing_broadcast_and_reduction() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3], &[10.0, 20.0, 30.0]);
        let out = forward(&Prim::Mul, &[&a, &b]).unwrap();
        assert_eq!(out.data(), &[10.0, 40.0, 90.0, 40.0, 100.0, 180.0]);
        // grads of b should sum over the leading axis
        let grads = backward(&Prim::Mul, &[&a, &b], &out, &[1.0; 6]);
        assert_eq!(grads[1].as_ref().unwrap(), &vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let err = forward(&Prim::Add, &[&t(&[4], &[0.0; 4]), &t(&[2], &[0.0; 2])]).unwrap_err();
        assert!(matches!(err, AutodiffError::ShapeMismatch { .. }));
    }

    #[test]
    fn unknown_primitive_rejected() {
        assert!(matches!(
            Prim::parse("convolve"),
            Err(AutodiffError::UnknownPrimitive(_))
        ));
        assert_eq!(Prim::parse("leaky_relu(0.3)").unwrap(), Prim::LeakyRelu { slope: 0.3 });
        assert_eq!(Prim::parse("sum").unwrap(), Prim::Sum);
    }

    #[test]
    fn upsample_nearest_copies_blocks() {
        let x = t(&[1, 2, 1], &[5.0, 7.0]);
        let out = forward(&Prim::UpsampleNearest { factor: 2 }, &[&x]).unwrap();
        assert_eq!(out.shape(), &[2, 4, 1]);
        assert_eq!(out.data(), &[5.0, 5.0, 7.0, 7.0, 5.0, 5.0, 7.0, 7.0]);
    }

    #[test]
    fn slice_concat_roundtrip() {
        let x = t(&[4, 2], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let a = forward(&Prim::Slice { start: 0, end: 2 }, &[&x]).unwrap();
        let b = forward(&Prim::Slice { start: 2, end: 4 }, &[&x]).unwrap();
        let back = forward(&Prim::Concat, &[&a, &b]).unwrap();
        assert_eq!(back, x);
    }
}
