//! Differentiable ops on [`Var`].
//!
//! Binary elementwise ops broadcast along trailing dimensions only: the
//! smaller operand's shape must be a suffix of the larger one's.

use std::f64::consts::PI;
use std::rc::Rc;

use crate::error::{dim_err, Error, Result};
use crate::tape::Var;
use crate::tensor::{axis_split, Tensor};

const GELU_CUBIC: f64 = 0.044715;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    /// `atan2(lhs, rhs)`, lhs is the ordinate.
    Atan2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Cos,
    Sin,
    Sqrt,
    Abs,
    Gelu,
    Square,
}

/// Result shape of a trailing-dimension broadcast.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if long.ends_with(short) {
        Ok(long.to_vec())
    } else {
        dim_err(format!("cannot broadcast {:?} with {:?}", a, b))
    }
}

/// Elementwise `f` over `n` outputs where each operand has length `n` or
/// repeats with its own period (trailing broadcast).
fn zip_bcast(a: &[f64], b: &[f64], n: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    if a.len() == n && b.len() == n {
        out.extend(a.iter().zip(b).map(|(&x, &y)| f(x, y)));
    } else if a.len() == n {
        for chunk in a.chunks(b.len()) {
            out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
        }
    } else if b.len() == n {
        for chunk in b.chunks(a.len()) {
            out.extend(a.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
        }
    } else {
        out.extend((0..n).map(|i| f(a[i % a.len()], b[i % b.len()])));
    }
    out
}

/// Sums a cotangent of `out_len` elements down to a trailing-broadcast operand.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let n: usize = shape.iter().product();
    let mut out = vec![0.0; n];
    for chunk in g.data().chunks(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::new(shape.to_vec(), out).expect("reduce_to shape")
}

pub(crate) fn gelu(x: f64) -> f64 {
    let c = (2.0 / PI).sqrt();
    let u = c * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let c = (2.0 / PI).sqrt();
    let u = c * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = c * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// `out[m,n] = sum_k a[m,k] * b[k,n]`
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m,n] = sum_k a[m,k] * b[n,k]`
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `out[k,n] = sum_m a[m,k] * b[m,n]`
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return dim_err(format!("axis {} out of range for shape {:?}", axis, shape));
    }
    Ok(())
}

/// Depthwise 1-D correlation along `axis` with zero padding; `w` is
/// `[window, channels]` and channels is the last axis of `x`.
fn window_mix_raw(x: &Tensor, w: &Tensor, axis: usize) -> Tensor {
    let shape = x.shape();
    let c = *shape.last().unwrap();
    let k = w.shape()[0];
    let half = (k / 2) as isize;
    let (outer, len, inner) = axis_split(shape, axis);
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for j in 0..len {
            let dst = (o * len + j) * inner;
            for r in 0..k {
                let src_j = j as isize + r as isize - half;
                if src_j < 0 || src_j >= len as isize {
                    continue;
                }
                let src = (o * len + src_j as usize) * inner;
                let wrow = &wd[r * c..(r + 1) * c];
                for i in 0..inner {
                    out[dst + i] += wrow[i % c] * xd[src + i];
                }
            }
        }
    }
    Tensor::new(shape.to_vec(), out).unwrap()
}

impl<'t> Var<'t> {
    fn binary(self, other: Var<'t>, op: Binary) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let shape = broadcast_shape(a.shape(), b.shape())?;
        let n: usize = shape.iter().product();
        let data = match op {
            Binary::Add => zip_bcast(a.data(), b.data(), n, |x, y| x + y),
            Binary::Sub => zip_bcast(a.data(), b.data(), n, |x, y| x - y),
            Binary::Mul => zip_bcast(a.data(), b.data(), n, |x, y| x * y),
            Binary::Atan2 => zip_bcast(a.data(), b.data(), n, f64::atan2),
        };
        let value = Tensor::new(shape, data)?;
        let rule = Box::new(move |g: &Tensor| {
            let gd = g.data();
            let n = gd.len();
            let (ga, gb) = match op {
                Binary::Add => (gd.to_vec(), gd.to_vec()),
                Binary::Sub => (gd.to_vec(), gd.iter().map(|v| -v).collect()),
                Binary::Mul => (
                    zip_bcast(gd, b.data(), n, |g, y| g * y),
                    zip_bcast(gd, a.data(), n, |g, x| g * x),
                ),
                Binary::Atan2 => {
                    let (mut ga, mut gb) = (Vec::with_capacity(n), Vec::with_capacity(n));
                    let (ad, bd) = (a.data(), b.data());
                    let (na, nb) = (ad.len(), bd.len());
                    for (i, &gi) in gd.iter().enumerate() {
                        let (x, y) = (ad[i % na], bd[i % nb]);
                        let r2 = x * x + y * y;
                        if r2 == 0.0 {
                            ga.push(0.0);
                            gb.push(0.0);
                        } else {
                            ga.push(gi * y / r2);
                            gb.push(-gi * x / r2);
                        }
                    }
                    (ga, gb)
                }
            };
            let ga = Tensor::new(g.shape().to_vec(), ga).unwrap();
            let gb = Tensor::new(g.shape().to_vec(), gb).unwrap();
            vec![reduce_to(&ga, a.shape()), reduce_to(&gb, b.shape())]
        });
        Ok(self.tape().record(&[self, other], value, rule))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Mul)
    }

    /// Two-argument arctangent with `self` as the ordinate. The gradient at
    /// the origin is taken to be zero.
    pub fn atan2(self, x: Var<'t>) -> Result<Var<'t>> {
        self.binary(x, Binary::Atan2)
    }

    pub fn elementwise(self, op: Unary) -> Result<Var<'t>> {
        let a = self.value();
        if op == Unary::Sqrt {
            if let Some(v) = a.data().iter().find(|v| **v < 0.0) {
                return Err(Error::Domain(format!("sqrt of negative value {}", v)));
            }
        }
        let value = a.map(|x| match op {
            Unary::Cos => x.cos(),
            Unary::Sin => x.sin(),
            Unary::Sqrt => x.sqrt(),
            Unary::Abs => x.abs(),
            Unary::Gelu => gelu(x),
            Unary::Square => x * x,
        });
        let out = Rc::new(value.clone());
        let rule = Box::new(move |g: &Tensor| {
            let d: Vec<f64> = g
                .data()
                .iter()
                .zip(a.data())
                .zip(out.data())
                .map(|((&g, &x), &y)| {
                    g * match op {
                        Unary::Cos => -x.sin(),
                        Unary::Sin => x.cos(),
                        Unary::Sqrt => {
                            if y == 0.0 {
                                0.0
                            } else {
                                0.5 / y
                            }
                        }
                        Unary::Abs => {
                            if x > 0.0 {
                                1.0
                            } else if x < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Gelu => gelu_grad(x),
                        Unary::Square => 2.0 * x,
                    }
                })
                .collect();
            vec![Tensor::new(g.shape().to_vec(), d).unwrap()]
        });
        Ok(self.tape().record(&[self], value, rule))
    }

    pub fn cos(self) -> Result<Var<'t>> {
        self.elementwise(Unary::Cos)
    }

    pub fn sin(self) -> Result<Var<'t>> {
        self.elementwise(Unary::Sin)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.elementwise(Unary::Sqrt)
    }

    pub fn abs(self) -> Result<Var<'t>> {
        self.elementwise(Unary::Abs)
    }

    pub fn gelu(self) -> Result<Var<'t>> {
        self.elementwise(Unary::Gelu)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.elementwise(Unary::Square)
    }

    /// Multiplies by a constant.
    pub fn scale(self, c: f64) -> Var<'t> {
        let value = self.value().map(|x| x * c);
        let rule = Box::new(move |g: &Tensor| vec![g.map(|v| v * c)]);
        self.tape().record(&[self], value, rule)
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return dim_err(format!("matmul of {:?} and {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))?;
        let rule = Box::new(move |g: &Tensor| {
            // dA = dC B^T, dB = A^T dC
            let ga = matmul_nt(g.data(), b.data(), m, n, k);
            let gb = matmul_tn(a.data(), g.data(), m, k, n);
            vec![
                Tensor::new(vec![m, k], ga).unwrap(),
                Tensor::new(vec![k, n], gb).unwrap(),
            ]
        });
        Ok(self.tape().record(&[self, other], value, rule))
    }

    /// Channel-FC: applies `w: [out, in]` to every vector along the last axis.
    pub fn linear(self, w: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let wv = w.value();
        let xs = x.shape();
        let ws = wv.shape();
        if xs.is_empty() || ws.len() != 2 || ws[1] != *xs.last().unwrap() {
            return dim_err(format!("linear of {:?} with weight {:?}", xs, ws));
        }
        let (dout, din) = (ws[0], ws[1]);
        let rows = x.len() / din;
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = dout;
        let value = Tensor::new(shape, matmul_nt(x.data(), wv.data(), rows, din, dout))?;
        let rule = Box::new(move |g: &Tensor| {
            let gx = matmul_raw(g.data(), wv.data(), rows, dout, din);
            let gw = matmul_tn(g.data(), x.data(), rows, dout, din);
            vec![
                Tensor::new(x.shape().to_vec(), gx).unwrap(),
                Tensor::new(vec![dout, din], gw).unwrap(),
            ]
        });
        Ok(self.tape().record(&[self, w], value, rule))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let old = a.shape().to_vec();
        let value = (*a).clone().reshape(shape)?;
        let rule = Box::new(move |g: &Tensor| vec![g.clone().reshape(&old).unwrap()]);
        Ok(self.tape().record(&[self], value, rule))
    }

    /// Permutes axes: output axis `i` is input axis `perm[i]`.
    pub fn transpose(self, perm: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return dim_err(format!("invalid permutation {:?} for {:?}", perm, shape));
        }
        let value = permute(&a, perm);
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let rule = Box::new(move |g: &Tensor| vec![permute(g, &inverse)]);
        Ok(self.tape().record(&[self], value, rule))
    }

    /// Sums out `axis`.
    pub fn reduce_sum(self, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        check_axis(a.shape(), axis)?;
        let (outer, len, inner) = axis_split(a.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &a.data()[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = a.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::new(shape, out)?;
        let in_shape = a.shape().to_vec();
        let rule = Box::new(move |g: &Tensor| {
            let gd = g.data();
            let mut d = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for j in 0..len {
                    d[(o * len + j) * inner..(o * len + j + 1) * inner]
                        .copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
            }
            vec![Tensor::new(in_shape.clone(), d).unwrap()]
        });
        Ok(self.tape().record(&[self], value, rule))
    }

    /// Sum of every element as a rank-0 tensor.
    pub fn sum_all(self) -> Var<'t> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let rule = Box::new(move |g: &Tensor| vec![Tensor::full(&shape, g.item())]);
        self.tape().record(&[self], Tensor::scalar(a.sum()), rule)
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = self.value().len().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Inserts `before`/`after` zeros along `axis`.
    pub fn pad_zeros(self, axis: usize, before: usize, after: usize) -> Result<Var<'t>> {
        let a = self.value();
        check_axis(a.shape(), axis)?;
        let (outer, len, inner) = axis_split(a.shape(), axis);
        let new_len = len + before + after;
        let mut out = vec![0.0; outer * new_len * inner];
        for o in 0..outer {
            let src = &a.data()[o * len * inner..(o + 1) * len * inner];
            let dst = (o * new_len + before) * inner;
            out[dst..dst + len * inner].copy_from_slice(src);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = new_len;
        let value = Tensor::new(shape, out)?;
        let in_shape = a.shape().to_vec();
        let rule = Box::new(move |g: &Tensor| {
            let mut d = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let s = (o * new_len + before) * inner;
                d.extend_from_slice(&g.data()[s..s + len * inner]);
            }
            vec![Tensor::new(in_shape.clone(), d).unwrap()]
        });
        Ok(self.tape().record(&[self], value, rule))
    }

    /// Contiguous window `[start, start + len)` along `axis`.
    pub fn slice_window(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let a = self.value();
        check_axis(a.shape(), axis)?;
        let (outer, full, inner) = axis_split(a.shape(), axis);
        if len == 0 || start + len > full {
            return dim_err(format!(
                "window [{}, {}) outside axis {} of extent {}",
                start,
                start + len,
                axis,
                full
            ));
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            out.extend_from_slice(&a.data()[s..s + len * inner]);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        let in_shape = a.shape().to_vec();
        let rule = Box::new(move |g: &Tensor| {
            let mut d = vec![0.0; outer * full * inner];
            for o in 0..outer {
                let s = (o * full + start) * inner;
                d[s..s + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Tensor::new(in_shape.clone(), d).unwrap()]
        });
        Ok(self.tape().record(&[self], value, rule))
    }

    /// Repeats `self` along leading dimensions so it takes `shape`, whose
    /// trailing dimensions must equal `self`'s shape.
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        if !shape.ends_with(a.shape()) {
            return dim_err(format!("cannot broadcast {:?} to {:?}", a.shape(), shape));
        }
        let na = a.len();
        let value = Tensor::from_fn(shape, |i| a.data()[i % na]);
        let rule = Box::new(move |g: &Tensor| vec![reduce_to(g, a.shape())]);
        Ok(self.tape().record(&[self], value, rule))
    }

    /// Per-channel sliding-window mix along `axis` with zero padding:
    /// `out[j] = sum_r w[r] * x[j + r - window/2]`, weights `[window, C]`
    /// with `C` the last axis of `self`. The window must be odd.
    pub fn window_mix(self, w: Var<'t>, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        let wv = w.value();
        let xs = x.shape();
        let ws = wv.shape();
        if xs.len() < 2 || axis + 1 >= xs.len() {
            return dim_err(format!("window_mix axis {} invalid for {:?}", axis, xs));
        }
        if ws.len() != 2 || ws[1] != *xs.last().unwrap() {
            return dim_err(format!("window weights {:?} do not match input {:?}", ws, xs));
        }
        if ws[0] % 2 == 0 {
            return Err(Error::Config(format!("window {} must be odd", ws[0])));
        }
        let value = window_mix_raw(&x, &wv, axis);
        let rule = Box::new(move |g: &Tensor| {
            let shape = x.shape();
            let c = *shape.last().unwrap();
            let k = wv.shape()[0];
            let half = (k / 2) as isize;
            let (outer, len, inner) = axis_split(shape, axis);
            let (xd, wd, gd) = (x.data(), wv.data(), g.data());
            let mut gx = vec![0.0; xd.len()];
            let mut gw = vec![0.0; wd.len()];
            for o in 0..outer {
                for j in 0..len {
                    let dst = (o * len + j) * inner;
                    for r in 0..k {
                        let src_j = j as isize + r as isize - half;
                        if src_j < 0 || src_j >= len as isize {
                            continue;
                        }
                        let src = (o * len + src_j as usize) * inner;
                        for i in 0..inner {
                            let ch = r * c + i % c;
                            gx[src + i] += wd[ch] * gd[dst + i];
                            gw[ch] += xd[src + i] * gd[dst + i];
                        }
                    }
                }
            }
            vec![
                Tensor::new(shape.to_vec(), gx).unwrap(),
                Tensor::new(wv.shape().to_vec(), gw).unwrap(),
            ]
        });
        Ok(self.tape().record(&[self, w], value, rule))
    }

    /// Standardizes each vector along the last axis to zero mean and unit
    /// variance (`eps` added to the variance), then applies `scale`/`shift`.
    pub fn layer_norm(self, scale: Var<'t>, shift: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        let (sv, bv) = (scale.value(), shift.value());
        let c = *x.shape().last().unwrap_or(&0);
        if c == 0 || sv.shape() != [c] || bv.shape() != [c] {
            return dim_err(format!(
                "layer_norm of {:?} with scale {:?} shift {:?}",
                x.shape(),
                sv.shape(),
                bv.shape()
            ));
        }
        let rows = x.len() / c;
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..c {
                let h = (row[i] - mean) * is;
                xhat[r * c + i] = h;
                out[r * c + i] = h * sv.data()[i] + bv.data()[i];
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rule = Box::new(move |g: &Tensor| {
            let gd = g.data();
            let mut gx = vec![0.0; gd.len()];
            let mut gs = vec![0.0; c];
            let mut gb = vec![0.0; c];
            for r in 0..rows {
                let gr = &gd[r * c..(r + 1) * c];
                let hr = &xhat[r * c..(r + 1) * c];
                let mut mean_gh = 0.0;
                let mut mean_ghh = 0.0;
                for i in 0..c {
                    gs[i] += gr[i] * hr[i];
                    gb[i] += gr[i];
                    let gh = gr[i] * sv.data()[i];
                    mean_gh += gh;
                    mean_ghh += gh * hr[i];
                }
                mean_gh /= c as f64;
                mean_ghh /= c as f64;
                for i in 0..c {
                    let gh = gr[i] * sv.data()[i];
                    gx[r * c + i] = inv_std[r] * (gh - mean_gh - hr[i] * mean_ghh);
                }
            }
            vec![
                Tensor::new(g.shape().to_vec(), gx).unwrap(),
                Tensor::vector(gs),
                Tensor::vector(gb),
            ]
        });
        Ok(self.tape().record(&[self, scale, shift], value, rule))
    }

    /// `[B,H,W,C] -> [B,ceil(H/p),ceil(W/p),p*p*C]`, non-overlapping patches
    /// flattened in (row, column, channel) order, zero-filled past the edge.
    pub fn patchify(self, patch: usize) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 4 || patch == 0 {
            return dim_err(format!("patchify({}) of {:?}", patch, s));
        }
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        if b == 0 || h == 0 || w == 0 || c == 0 {
            return dim_err(format!("patchify of empty input {:?}", s));
        }
        let (ho, wo) = (h.div_ceil(patch), w.div_ceil(patch));
        let pc = patch * patch * c;
        // source offset (or None for padding) for each output element
        let mut index: Vec<Option<usize>> = Vec::with_capacity(b * ho * wo * pc);
        for bi in 0..b {
            for i in 0..ho {
                for j in 0..wo {
                    for di in 0..patch {
                        for dj in 0..patch {
                            let (y, xx) = (i * patch + di, j * patch + dj);
                            for ch in 0..c {
                                index.push(
                                    (y < h && xx < w).then(|| ((bi * h + y) * w + xx) * c + ch),
                                );
                            }
                        }
                    }
                }
            }
        }
        let data = index
            .iter()
            .map(|src| src.map_or(0.0, |k| x.data()[k]))
            .collect();
        let value = Tensor::new(vec![b, ho, wo, pc], data)?;
        let in_len = x.len();
        let in_shape = s.to_vec();
        let rule = Box::new(move |g: &Tensor| {
            let mut d = vec![0.0; in_len];
            for (gv, src) in g.data().iter().zip(&index) {
                if let Some(k) = src {
                    d[*k] += gv;
                }
            }
            vec![Tensor::new(in_shape.clone(), d).unwrap()]
        });
        Ok(self.tape().record(&[self], value, rule))
    }

    /// Mean softmax cross-entropy of `[B,K]` logits against class labels.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let z = self.value();
        let s = z.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return dim_err(format!(
                "cross_entropy of {:?} with {} labels",
                s,
                labels.len()
            ));
        }
        let (b, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return dim_err(format!("label {} out of range for {} classes", bad, k));
        }
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &z.data()[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum.ln();
            loss += lse - row[labels[i]];
            for j in 0..k {
                probs[i * k + j] = (row[j] - lse).exp();
            }
        }
        let labels = labels.to_vec();
        let rule = Box::new(move |g: &Tensor| {
            let scale = g.item() / b as f64;
            let mut d = probs.clone();
            for (i, &l) in labels.iter().enumerate() {
                d[i * k + l] -= 1.0;
            }
            d.iter_mut().for_each(|v| *v *= scale);
            vec![Tensor::new(vec![b, k], d).unwrap()]
        });
        Ok(self
            .tape()
            .record(&[self], Tensor::scalar(loss / b as f64), rule))
    }
}

fn permute(a: &Tensor, perm: &[usize]) -> Tensor {
    let shape = a.shape();
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = a.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(a.data()[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, out).unwrap()
}
