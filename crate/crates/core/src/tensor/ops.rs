use std::sync::Arc;

use super::{is_grad_enabled, numel, Tensor};
use crate::error::{Error, Result};

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn wants(parents: &[Tensor], i: usize) -> bool {
    parents[i].requires_grad()
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// (outer, n, inner) split of a shape around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Dimension(format!("axis {axis} out of range for {shape:?}")));
    }
    Ok((
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    ))
}

fn last_axis(shape: &[usize]) -> Result<usize> {
    match shape.len() {
        0 => Err(Error::Dimension("operation needs rank >= 1".into())),
        r => Ok(r - 1),
    }
}

/// `c[m,n] = a[m,k] * b[k,n]`
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `c[m,k] = g[m,n] * b[k,n]^T`
fn mm_bt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            c[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `c[k,n] = a[m,k]^T * g[m,n]`
fn mm_at(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, gv) in crow.iter_mut().zip(grow) {
                *cv += av * gv;
            }
        }
    }
    c
}

impl Tensor {
    pub(crate) fn from_op<F>(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: F,
    ) -> Result<Tensor>
    where
        F: Fn(&[f64], &[f64], &[Tensor]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    {
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op, index });
        }
        let rg = is_grad_enabled() && parents.iter().any(Tensor::requires_grad);
        if rg {
            Ok(Tensor::make(op, shape, data, true, parents, Some(Box::new(backward))))
        } else {
            Ok(Tensor::make(op, shape, data, false, Vec::new(), None))
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |g, _, ps| {
                vec![
                    wants(ps, 0).then(|| g.to_vec()),
                    wants(ps, 1).then(|| g.to_vec()),
                ]
            },
        )
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |g, _, ps| {
                vec![
                    wants(ps, 0).then(|| g.to_vec()),
                    wants(ps, 1).then(|| g.iter().map(|v| -v).collect()),
                ]
            },
        )
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |g, _, ps| {
                let (a, b) = (ps[0].data(), ps[1].data());
                vec![
                    wants(ps, 0).then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                    wants(ps, 1).then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
                ]
            },
        )
    }

    /// Adds a vector along the last axis (bias broadcast).
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let n = *self.shape().last().unwrap_or(&0);
        if bias.shape() != [n] {
            return Err(Error::Dimension(format!(
                "add_row: bias {:?} does not match last axis of {:?}",
                bias.shape(),
                self.shape()
            )));
        }
        let b = bias.data();
        let data = self
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        Tensor::from_op(
            "add_row",
            self.shape().to_vec(),
            data,
            vec![self.clone(), bias.clone()],
            move |g, _, ps| {
                let db = wants(ps, 1).then(|| {
                    let mut acc = vec![0.0; n];
                    for row in g.chunks(n) {
                        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    acc
                });
                vec![wants(ps, 0).then(|| g.to_vec()), db]
            },
        )
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::from_op("scale", self.shape().to_vec(), data, vec![self.clone()], move |g, _, _| {
            vec![Some(g.iter().map(|v| v * c).collect())]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v + c).collect();
        Tensor::from_op("add_scalar", self.shape().to_vec(), data, vec![self.clone()], |g, _, _| {
            vec![Some(g.to_vec())]
        })
    }

    /// Elementwise product with a constant array (no gradient to the constant).
    pub fn mul_const(&self, c: &[f64]) -> Result<Tensor> {
        if c.len() != self.len() {
            return Err(Error::Dimension(format!(
                "mul_const: {} constants for {} elements",
                c.len(),
                self.len()
            )));
        }
        let c: Arc<[f64]> = c.into();
        let data = self.data().iter().zip(c.iter()).map(|(a, b)| a * b).collect();
        Tensor::from_op("mul_const", self.shape().to_vec(), data, vec![self.clone()], move |g, _, _| {
            vec![Some(g.iter().zip(c.iter()).map(|(g, c)| g * c).collect())]
        })
    }

    /// Divides every element by a one-element tensor.
    pub fn div_scalar(&self, s: &Tensor) -> Result<Tensor> {
        let sv = s.item()?;
        let data = self.data().iter().map(|v| v / sv).collect();
        Tensor::from_op(
            "div_scalar",
            self.shape().to_vec(),
            data,
            vec![self.clone(), s.clone()],
            move |g, y, ps| {
                vec![
                    wants(ps, 0).then(|| g.iter().map(|v| v / sv).collect()),
                    wants(ps, 1).then(|| {
                        let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                        vec![-dot / sv]
                    }),
                ]
            },
        )
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul: inner dimensions {k} and {k2} differ"
            )));
        }
        let data = mm(self.data(), other.data(), m, k, n);
        Tensor::from_op(
            "matmul",
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            move |g, _, ps| {
                vec![
                    wants(ps, 0).then(|| mm_bt(g, ps[1].data(), m, k, n)),
                    wants(ps, 1).then(|| mm_at(ps[0].data(), g, m, k, n)),
                ]
            },
        )
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        let idx: Vec<usize> = (0..n).flat_map(|j| (0..m).map(move |i| i * n + j)).collect();
        self.gather_op("transpose", &[n, m], idx)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() {
            return Err(Error::Dimension(format!(
                "reshape: {:?} -> {:?} changes element count",
                self.shape(),
                shape
            )));
        }
        Tensor::from_op("reshape", shape.to_vec(), self.data().to_vec(), vec![self.clone()], |g, _, _| {
            vec![Some(g.to_vec())]
        })
    }

    /// `out[i] = self[indices[i]]`, reshaped to `shape`. Gradients scatter-add.
    pub fn gather(&self, shape: &[usize], indices: Vec<usize>) -> Result<Tensor> {
        self.gather_op("gather", shape, indices)
    }

    fn gather_op(&self, op: &'static str, shape: &[usize], indices: Vec<usize>) -> Result<Tensor> {
        if numel(shape) != indices.len() {
            return Err(Error::Dimension(format!(
                "{op}: {} indices for shape {:?}",
                indices.len(),
                shape
            )));
        }
        let src = self.data();
        if let Some(bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(Error::Dimension(format!(
                "{op}: index {bad} out of range for {} elements",
                src.len()
            )));
        }
        let data = indices.iter().map(|&i| src[i]).collect();
        let n_src = src.len();
        let indices: Arc<[usize]> = indices.into();
        Tensor::from_op(op, shape.to_vec(), data, vec![self.clone()], move |g, _, _| {
            let mut dx = vec![0.0; n_src];
            for (gv, &i) in g.iter().zip(indices.iter()) {
                dx[i] += gv;
            }
            vec![Some(dx)]
        })
    }

    /// Rows `rows` of a tensor viewed as `[len(shape[0]), rest]`.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Tensor> {
        let (outer, n, inner) = axis_split(self.shape(), 0)?;
        debug_assert_eq!(outer, 1);
        let mut idx = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            if r >= n {
                return Err(Error::Dimension(format!("select_rows: row {r} of {n}")));
            }
            idx.extend(r * inner..(r + 1) * inner);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = rows.len();
        self.gather_op("select_rows", &shape, idx)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (outer, n, inner) = axis_split(self.shape(), axis)?;
        if start + len > n {
            return Err(Error::Dimension(format!(
                "narrow: [{start}, {}) exceeds axis size {n}",
                start + len
            )));
        }
        let mut idx = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner;
            idx.extend(base + start * inner..base + (start + len) * inner);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        self.gather_op("narrow", &shape, idx)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::Dimension(format!("concat: axis {axis} for rank {rank}")));
        }
        for p in parts {
            let ok = p.shape().len() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::Dimension(format!(
                    "concat: {:?} incompatible with {:?} on axis {axis}",
                    p.shape(),
                    first.shape()
                )));
            }
        }
        let outer = numel(&first.shape()[..axis]);
        let inner = numel(&first.shape()[axis + 1..]);
        let blocks: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = blocks.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &b) in parts.iter().zip(&blocks) {
                data.extend_from_slice(&p.data()[o * b..(o + 1) * b]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Tensor::from_op("concat", shape, data, parts.to_vec(), move |g, _, ps| {
            let mut out: Vec<Option<Vec<f64>>> = ps
                .iter()
                .zip(&blocks)
                .map(|(p, &b)| p.requires_grad().then(|| Vec::with_capacity(outer * b)))
                .collect();
            for o in 0..outer {
                let mut off = o * total;
                for (slot, &b) in out.iter_mut().zip(&blocks) {
                    if let Some(v) = slot {
                        v.extend_from_slice(&g[off..off + b]);
                    }
                    off += b;
                }
            }
            out
        })
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = axis_split(self.shape(), axis)?;
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for k in 0..n {
                    let e = (x[at(k)] - max).exp();
                    y[at(k)] = e;
                    sum += e;
                }
                for k in 0..n {
                    y[at(k)] /= sum;
                }
            }
        }
        Tensor::from_op("softmax", self.shape().to_vec(), y, vec![self.clone()], move |g, y, _| {
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let dot: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                    for k in 0..n {
                        dx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            vec![Some(dx)]
        })
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let n = self.shape()[last_axis(self.shape())?];
        if gain.shape() != [n] || bias.shape() != [n] {
            return Err(Error::Dimension(format!(
                "layer_norm: gain {:?}/bias {:?} vs feature size {n}",
                gain.shape(),
                bias.shape()
            )));
        }
        let rows = self.len() / n;
        let mut xhat = vec![0.0; self.len()];
        let mut inv_std = vec![0.0; rows];
        let (gv, bv) = (gain.data(), bias.data());
        let mut y = vec![0.0; self.len()];
        for (r, row) in self.data().chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                y[r * n + j] = h * gv[j] + bv[j];
            }
        }
        Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            y,
            vec![self.clone(), gain.clone(), bias.clone()],
            move |g, _, ps| {
                let gamma = ps[1].data();
                let dx = wants(ps, 0).then(|| {
                    let mut dx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..n {
                            let d = gr[j] * gamma[j];
                            m1 += d;
                            m2 += d * hr[j];
                        }
                        m1 /= n as f64;
                        m2 /= n as f64;
                        for j in 0..n {
                            dx[r * n + j] = inv_std[r] * (gr[j] * gamma[j] - m1 - hr[j] * m2);
                        }
                    }
                    dx
                });
                let dgain = wants(ps, 1).then(|| {
                    let mut acc = vec![0.0; n];
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            acc[j] += gr[j] * hr[j];
                        }
                    }
                    acc
                });
                let dbias = wants(ps, 2).then(|| {
                    let mut acc = vec![0.0; n];
                    for gr in g.chunks(n) {
                        acc.iter_mut().zip(gr).for_each(|(a, v)| *a += v);
                    }
                    acc
                });
                vec![dx, dgain, dbias]
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Tensor> {
        let data = self
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()))
            .collect();
        Tensor::from_op("gelu", self.shape().to_vec(), data, vec![self.clone()], |g, _, ps| {
            let dx = g
                .iter()
                .zip(ps[0].data())
                .map(|(g, &x)| {
                    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                    let dt = (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x);
                    g * (0.5 * (1.0 + t) + 0.5 * x * dt)
                })
                .collect();
            vec![Some(dx)]
        })
    }

    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|&x| x.max(0.0)).collect();
        Tensor::from_op("relu", self.shape().to_vec(), data, vec![self.clone()], |g, _, ps| {
            let dx = g
                .iter()
                .zip(ps[0].data())
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect();
            vec![Some(dx)]
        })
    }

    pub fn exp(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|x| x.exp()).collect();
        Tensor::from_op("exp", self.shape().to_vec(), data, vec![self.clone()], |g, y, _| {
            vec![Some(g.iter().zip(y).map(|(g, y)| g * y).collect())]
        })
    }

    pub fn log(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|x| x.ln()).collect();
        Tensor::from_op("log", self.shape().to_vec(), data, vec![self.clone()], |g, _, ps| {
            vec![Some(g.iter().zip(ps[0].data()).map(|(g, x)| g / x).collect())]
        })
    }

    /// Euclidean norm over the last axis; the result drops that axis.
    /// The gradient at a zero vector is taken as zero.
    pub fn norm_last(&self) -> Result<Tensor> {
        let ax = last_axis(self.shape())?;
        let n = self.shape()[ax];
        let data: Vec<f64> = self
            .data()
            .chunks(n)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Tensor::from_op("norm_last", self.shape()[..ax].to_vec(), data, vec![self.clone()], move |g, y, ps| {
            let x = ps[0].data();
            let mut dx = vec![0.0; x.len()];
            for (r, (&gr, &yr)) in g.iter().zip(y).enumerate() {
                if yr > 0.0 {
                    for j in 0..n {
                        dx[r * n + j] = gr * x[r * n + j] / yr;
                    }
                }
            }
            vec![Some(dx)]
        })
    }

    /// Divides each slice along the last axis by its sum.
    pub fn normalize_last(&self) -> Result<Tensor> {
        let n = self.shape()[last_axis(self.shape())?];
        let sums: Vec<f64> = self.data().chunks(n).map(|r| r.iter().sum()).collect();
        let data = self
            .data()
            .chunks(n)
            .zip(&sums)
            .flat_map(|(r, s)| r.iter().map(move |v| v / s))
            .collect();
        Tensor::from_op("normalize_last", self.shape().to_vec(), data, vec![self.clone()], move |g, y, _| {
            let mut dx = vec![0.0; y.len()];
            for (r, s) in sums.iter().enumerate() {
                let gr = &g[r * n..(r + 1) * n];
                let yr = &y[r * n..(r + 1) * n];
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    dx[r * n + j] = (gr[j] - dot) / s;
                }
            }
            vec![Some(dx)]
        })
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s = compensated_sum(self.data());
        let len = self.len();
        Tensor::from_op("sum", vec![], vec![s], vec![self.clone()], move |g, _, _| {
            vec![Some(vec![g[0]; len])]
        })
    }

    pub fn mean(&self) -> Result<Tensor> {
        let len = self.len();
        if len == 0 {
            return Err(Error::Dimension("mean of empty tensor".into()));
        }
        let m = compensated_sum(self.data()) / len as f64;
        Tensor::from_op("mean", vec![], vec![m], vec![self.clone()], move |g, _, _| {
            vec![Some(vec![g[0] / len as f64; len])]
        })
    }
}

/// Neumaier summation; keeps reductions of long loss vectors accurate
/// enough for finite-difference checks.
fn compensated_sum(v: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &x in v {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}
