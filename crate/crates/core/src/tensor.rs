//! Dense row-major `f64` tensors.
//!
//! `Tensor` is a plain value: it carries no gradient bookkeeping. The
//! reverse-mode tape in [`crate::autodiff`] stores `Tensor`s as node values
//! and reuses the kernels defined here for its forward passes.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Shape produced by combining `a` and `b` where every pair of extents is
/// either equal or contains a 1.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(op, a, b));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(op, a, b)),
        })
        .collect()
}

/// Flat offset into a tensor of `shape` for the broadcast multi-index `idx`
/// (extents of 1 are pinned to index 0).
fn broadcast_offset(idx: &[usize], shape: &[usize], strides: &[usize]) -> usize {
    idx.iter()
        .zip(shape)
        .zip(strides)
        .map(|((&i, &n), &s)| if n == 1 { 0 } else { i * s })
        .sum()
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for d in (0..shape.len()).rev() {
        idx[d] += 1;
        if idx[d] < shape[d] {
            return;
        }
        idx[d] = 0;
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::contract(
                "tensor",
                format!("extents must be positive, got {shape:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::contract(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "extents must be positive"
        );
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn random_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.gen_range(lo..hi))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let st = strides(&self.shape);
        idx.iter().zip(&st).map(|(i, s)| i * s).sum()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::contract(
                "permute",
                format!("{perm:?} is not a permutation of rank {r}"),
            ));
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut data = Vec::with_capacity(self.numel());
        let mut idx = vec![0; r];
        for _ in 0..self.numel() {
            let o: usize = idx.iter().zip(&gather).map(|(i, s)| i * s).sum();
            data.push(self.data[o]);
            increment(&mut idx, &out_shape);
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// Elementwise binary op with singleton broadcasting on equal-rank shapes.
    pub fn zip_broadcast(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        let out_shape = broadcast_shape(op, &self.shape, &other.shape)?;
        let sa = strides(&self.shape);
        let sb = strides(&other.shape);
        let n: usize = out_shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0; out_shape.len()];
        for _ in 0..n {
            let a = self.data[broadcast_offset(&idx, &self.shape, &sa)];
            let b = other.data[broadcast_offset(&idx, &other.shape, &sb)];
            data.push(f(a, b));
            increment(&mut idx, &out_shape);
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// Sums `self` (shaped like a broadcast result) down to `target` shape.
    pub fn reduce_to(&self, target: &[usize]) -> Tensor {
        if self.shape == target {
            return self.clone();
        }
        let st = strides(target);
        let mut out = Tensor::zeros(target);
        let mut idx = vec![0; self.rank()];
        for &v in &self.data {
            out.data[broadcast_offset(&idx, target, &st)] += v;
            increment(&mut idx, &self.shape);
        }
        out
    }

    /// Splits the shape around `axis` into (outer, extent, inner) counts.
    pub fn axis_split(&self, axis: usize) -> (usize, usize, usize) {
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        (outer, self.shape[axis], inner)
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(Error::contract(
                op,
                format!("axis {axis} out of range for shape {:?}", self.shape),
            ));
        }
        Ok(())
    }

    /// Applies the matrix `m` (shape `[n_out, n_in]`) along `axis`:
    /// `out[.., i, ..] = Σ_j m[i, j] · self[.., j, ..]`.
    ///
    /// Cumulative averages, trilinear resampling, pooling and reversal are all
    /// linear maps of this form.
    pub fn apply_along(&self, axis: usize, m: &Tensor) -> Result<Tensor> {
        self.check_axis("apply_along", axis)?;
        let (outer, n_in, inner) = self.axis_split(axis);
        if m.rank() != 2 || m.shape[1] != n_in {
            return Err(Error::shape("apply_along", &self.shape, &m.shape));
        }
        let n_out = m.shape[0];
        let mut shape = self.shape.clone();
        shape[axis] = n_out;
        let mut data = vec![0.0; outer * n_out * inner];
        for o in 0..outer {
            let src = &self.data[o * n_in * inner..(o + 1) * n_in * inner];
            let dst = &mut data[o * n_out * inner..(o + 1) * n_out * inner];
            for i in 0..n_out {
                let row = &m.data[i * n_in..(i + 1) * n_in];
                let d = &mut dst[i * inner..(i + 1) * inner];
                for (j, &w) in row.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let s = &src[j * inner..(j + 1) * inner];
                    for (dv, &sv) in d.iter_mut().zip(s) {
                        *dv += w * sv;
                    }
                }
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Reverses the order of entries along `axis`.
    pub fn reverse_axis(&self, axis: usize) -> Result<Tensor> {
        self.check_axis("reverse_axis", axis)?;
        let (outer, n, inner) = self.axis_split(axis);
        let mut data = Vec::with_capacity(self.numel());
        for o in 0..outer {
            for i in (0..n).rev() {
                let start = (o * n + i) * inner;
                data.extend_from_slice(&self.data[start..start + inner]);
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Sum over `axis`, removing it (rank-1 tensors reduce to shape `[1]`).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.check_axis("sum_axis", axis)?;
        let (outer, n, inner) = self.axis_split(axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let s = &self.data[(o * n + i) * inner..(o * n + i + 1) * inner];
                for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(s) {
                    *d += v;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Tensor { shape, data })
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.check_axis("slice_axis", axis)?;
        let (outer, n, inner) = self.axis_split(axis);
        if len == 0 || start + len > n {
            return Err(Error::contract(
                "slice_axis",
                format!("range {start}..{} outside extent {n}", start + len),
            ));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor { shape, data })
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat", "no inputs"))?;
        first.check_axis("concat", axis)?;
        for p in parts {
            let same = p.rank() == first.rank()
                && p
                    .shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !same {
                return Err(Error::shape("concat", &first.shape, &p.shape));
            }
        }
        let (outer, _, inner) = first.axis_split(axis);
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let n = p.shape[axis];
                data.extend_from_slice(&p.data[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Tensor { shape, data })
    }

    /// Softmax along `axis` with max-subtraction. Negative-infinity inputs map
    /// to exactly zero; a lane that is entirely negative infinity is an error.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        self.check_axis("softmax", axis)?;
        let (outer, n, inner) = self.axis_split(axis);
        let mut out = self.clone();
        for o in 0..outer {
            for k in 0..inner {
                let at = |i: usize| (o * n + i) * inner + k;
                let m = (0..n).map(|i| self.data[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    return Err(Error::contract(
                        "softmax",
                        format!("every entry of lane {} is -inf; at least one slot must be allowed", o * inner + k),
                    ));
                }
                let mut z = 0.0;
                for i in 0..n {
                    let e = (self.data[at(i)] - m).exp();
                    out.data[at(i)] = e;
                    z += e;
                }
                for i in 0..n {
                    out.data[at(i)] /= z;
                }
            }
        }
        Ok(out)
    }

    /// Numerically stable log-softmax along `axis` (finite inputs only).
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        self.check_axis("log_softmax", axis)?;
        let (outer, n, inner) = self.axis_split(axis);
        let mut out = self.clone();
        for o in 0..outer {
            for k in 0..inner {
                let at = |i: usize| (o * n + i) * inner + k;
                let m = (0..n).map(|i| self.data[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                if !m.is_finite() {
                    return Err(Error::contract("log_softmax", "inputs must be finite"));
                }
                let lse = m + (0..n).map(|i| (self.data[at(i)] - m).exp()).sum::<f64>().ln();
                for i in 0..n {
                    out.data[at(i)] = self.data[at(i)] - lse;
                }
            }
        }
        Ok(out)
    }

    /// Batched matrix product. `self` is `[.., m, k]`; `other` is either `[k, n]`
    /// (shared) or `[.., k, n]` with leading extents that match or are 1.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let plan = MatmulPlan::new(self.shape(), other.shape())?;
        let mut out = vec![0.0; plan.batch * plan.m * plan.n];
        for b in 0..plan.batch {
            let a = &self.data[plan.a_batch(b) * plan.m * plan.k..][..plan.m * plan.k];
            let w = &other.data[plan.b_batch(b) * plan.k * plan.n..][..plan.k * plan.n];
            let c = &mut out[b * plan.m * plan.n..][..plan.m * plan.n];
            for i in 0..plan.m {
                let crow = &mut c[i * plan.n..(i + 1) * plan.n];
                for p in 0..plan.k {
                    let av = a[i * plan.k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for (cv, &bv) in crow.iter_mut().zip(&w[p * plan.n..(p + 1) * plan.n]) {
                        *cv += av * bv;
                    }
                }
            }
        }
        Ok(Tensor {
            shape: plan.out_shape.clone(),
            data: out,
        })
    }

    /// Swaps the two trailing axes.
    pub fn transpose_last(&self) -> Tensor {
        let r = self.rank();
        assert!(r >= 2);
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm).expect("valid permutation")
    }
}

/// Shape bookkeeping shared by the matmul forward and backward kernels.
#[derive(Clone, Debug)]
pub(crate) struct MatmulPlan {
    pub batch: usize,
    pub a_batches: usize,
    pub b_batches: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out_shape: Vec<usize>,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape("matmul", a, b));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", a, b));
        }
        let a_lead = &a[..a.len() - 2];
        let b_lead = &b[..b.len() - 2];
        let lead: Vec<usize> = if b_lead.is_empty() {
            a_lead.to_vec()
        } else if a_lead.is_empty() {
            b_lead.to_vec()
        } else if a_lead.len() == b_lead.len() {
            let mut lead = Vec::with_capacity(a_lead.len());
            for (&x, &y) in a_lead.iter().zip(b_lead) {
                // Only whole-operand broadcasting is supported on the batch axes.
                lead.push(if x == y { x } else { x.max(y) });
            }
            lead
        } else {
            return Err(Error::shape("matmul", a, b));
        };
        let a_batches: usize = a_lead.iter().product();
        let b_batches: usize = b_lead.iter().product();
        let batch: usize = lead.iter().product();
        if !(a_batches == batch || a_batches == 1) || !(b_batches == batch || b_batches == 1) {
            return Err(Error::shape("matmul", a, b));
        }
        if a_lead.len() == b_lead.len()
            && a_lead.iter().zip(b_lead).any(|(&x, &y)| x != y && x != 1 && y != 1)
        {
            return Err(Error::shape("matmul", a, b));
        }
        let mut out_shape = lead;
        out_shape.push(m);
        out_shape.push(n);
        Ok(MatmulPlan {
            batch,
            a_batches,
            b_batches,
            m,
            k,
            n,
            out_shape,
        })
    }

    pub fn a_batch(&self, b: usize) -> usize {
        if self.a_batches == 1 {
            0
        } else {
            b
        }
    }

    pub fn b_batch(&self, b: usize) -> usize {
        if self.b_batches == 1 {
            0
        } else {
            b
        }
    }
}

/// Builds a dense `[rows, cols]` matrix from a generator.
pub fn matrix(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
    Tensor::from_fn(&[rows, cols], |i| f(i / cols, i % cols))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
    }

    #[test]
    fn permute_and_back() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.get(&[3, 1, 2]), t.get(&[1, 2, 3]));
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_bad_permutation() {
        let t = Tensor::zeros(&[2, 2]);
        assert!(t.permute(&[0, 0]).is_err());
    }

    #[test]
    fn apply_along_identity_and_sum() {
        let t = Tensor::from_fn(&[2, 3, 2], |i| i as f64);
        let eye = matrix(3, 3, |i, j| (i == j) as u8 as f64);
        assert_eq!(t.apply_along(1, &eye).unwrap(), t);
        let ones = matrix(1, 3, |_, _| 1.0);
        let s = t.apply_along(1, &ones).unwrap();
        assert_eq!(s.shape(), &[2, 1, 2]);
        assert_eq!(s.data(), t.sum_axis(1).unwrap().data());
    }

    #[test]
    fn softmax_blocked_slot_is_zero() {
        let t = Tensor::new(vec![3], vec![0.0, f64::NEG_INFINITY, 0.0]).unwrap();
        let s = t.softmax(0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn softmax_all_blocked_is_error() {
        let t = Tensor::full(&[2], f64::NEG_INFINITY);
        assert!(matches!(t.softmax(0), Err(Error::Contract { .. })));
    }

    #[test]
    fn matmul_shared_rhs() {
        let a = Tensor::from_fn(&[2, 2, 3], |i| i as f64);
        let b = Tensor::from_fn(&[3, 1], |_| 1.0);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 2, 1]);
        assert_eq!(c.data(), &[3.0, 12.0, 21.0, 30.0]);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn broadcast_and_reduce() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f64);
        let b = Tensor::new(vec![1, 3], vec![10.0, 20.0, 30.0]).unwrap();
        let c = a.zip_broadcast(&b, "add", |x, y| x + y).unwrap();
        assert_eq!(c.data(), &[10.0, 21.0, 32.0, 13.0, 24.0, 35.0]);
        let r = c.reduce_to(&[1, 3]);
        assert_eq!(r.data(), &[23.0, 45.0, 67.0]);
    }

    #[test]
    fn reverse_twice_is_identity() {
        let t = Tensor::from_fn(&[3, 4, 2], |i| (i * 7 % 5) as f64);
        for ax in 0..3 {
            assert_eq!(t.reverse_axis(ax).unwrap().reverse_axis(ax).unwrap(), t);
        }
    }
}
