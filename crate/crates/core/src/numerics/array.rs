use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Real;
use crate::error::{Error, Result};

/// Dense row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Array<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("array", shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    /// Samples every entry from N(0, std²).
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std.max(0.0)).expect("finite std");
        Self::from_fn(shape, |_| T::lit(normal.sample(rng)))
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64_lossy()).collect()
    }

    pub fn cast<U: Real>(&self) -> Array<U> {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("zip_map", &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max)
    }

    /// Bitwise equality of shape and every element.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_f64_lossy().to_bits() == b.to_f64_lossy().to_bits())
    }

    /// Element at a multi-index.
    pub fn at(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            debug_assert!(i < n);
            acc * n + i
        })
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", &self.shape, axes));
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.numel());
        for_each_offset(&out_shape, &perm_strides, |off| data.push(self.data[off]));
        Ok(Self { shape: out_shape, data })
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Self> {
        let rank = self.rank();
        if rank < 2 {
            return Err(Error::shape("transpose", &self.shape, &[]));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(&axes)
    }

    /// Matrix product. `self` is `[..., M, K]`; `other` is either a plain
    /// `[K, N]` matrix (shared across the leading axes) or `[..., K, N]` with
    /// identical leading axes.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let plan = MatmulPlan::new(&self.shape, &other.shape)?;
        let mut out = vec![T::zero(); plan.out_numel()];
        plan.forward(&self.data, &other.data, &mut out);
        Ok(Self {
            shape: plan.out_shape.clone(),
            data: out,
        })
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Visits every multi-index of `shape` in row-major order, passing the
/// offset computed with `strides`.
pub(crate) fn for_each_offset(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize)) {
    let numel: usize = shape.iter().product();
    if numel == 0 {
        return;
    }
    let rank = shape.len();
    if rank == 0 {
        f(0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..numel {
        f(off);
        let mut ax = rank;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each element of `out_shape`, the offset of the corresponding element
/// of an input with shape `in_shape` broadcast to it.
pub(crate) fn broadcast_offsets(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let in_strides = strides(in_shape);
    let mut bstrides = vec![0; rank];
    for (i, bs) in bstrides.iter_mut().enumerate() {
        if i + in_shape.len() >= rank {
            let j = i + in_shape.len() - rank;
            if in_shape[j] != 1 {
                *bs = in_strides[j];
            }
        }
    }
    let mut offs = Vec::with_capacity(out_shape.iter().product());
    for_each_offset(out_shape, &bstrides, |o| offs.push(o));
    offs
}

/// Shape bookkeeping for a (possibly batched) matrix product.
#[derive(Clone, Debug)]
pub(crate) struct MatmulPlan {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// True when the right operand is one matrix shared across the batch.
    pub shared_rhs: bool,
    /// True when the right operand is stored as `[N, K]`.
    pub rhs_transposed: bool,
    pub out_shape: Vec<usize>,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        Self::build(a, b, false)
    }

    /// Plan for `A·Bᵀ` with `B` given as `[N, K]` or `[..., N, K]`.
    pub fn new_transposed(a: &[usize], b: &[usize]) -> Result<Self> {
        Self::build(a, b, true)
    }

    fn build(a: &[usize], b: &[usize], rhs_transposed: bool) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape("matmul", a, b));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (kb, n) = if rhs_transposed {
            (b[b.len() - 1], b[b.len() - 2])
        } else {
            (b[b.len() - 2], b[b.len() - 1])
        };
        if k != kb {
            return Err(Error::shape("matmul", a, b));
        }
        let lead = &a[..a.len() - 2];
        let batch: usize = lead.iter().product();
        let shared_rhs = b.len() == 2;
        if !shared_rhs && &b[..b.len() - 2] != lead {
            return Err(Error::shape("matmul", a, b));
        }
        let mut out_shape = lead.to_vec();
        out_shape.extend([m, n]);
        Ok(Self {
            batch,
            m,
            k,
            n,
            shared_rhs,
            rhs_transposed,
            out_shape,
        })
    }

    pub fn out_numel(&self) -> usize {
        self.batch * self.m * self.n
    }

    fn rhs_off(&self, bi: usize) -> usize {
        if self.shared_rhs {
            0
        } else {
            bi * self.k * self.n
        }
    }

    pub fn forward<T: Real>(&self, a: &[T], b: &[T], out: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        let kernel = |a: &[T], b: &[T], c: &mut [T], rows: usize| {
            if self.rhs_transposed {
                gemm_nt(a, b, c, rows, k, n)
            } else {
                gemm_nn(a, b, c, rows, k, n)
            }
        };
        if self.shared_rhs {
            // Leading axes fold into rows.
            kernel(a, b, out, self.batch * m);
            return;
        }
        for bi in 0..self.batch {
            kernel(
                &a[bi * m * k..(bi + 1) * m * k],
                &b[self.rhs_off(bi)..self.rhs_off(bi) + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
            );
        }
    }

    /// Accumulates dA += dC·Bᵀ.
    pub fn grad_lhs<T: Real>(&self, g: &[T], b: &[T], da: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        let kernel = |g: &[T], b: &[T], c: &mut [T], rows: usize| {
            if self.rhs_transposed {
                gemm_nn(g, b, c, rows, n, k)
            } else {
                gemm_nt(g, b, c, rows, n, k)
            }
        };
        if self.shared_rhs {
            kernel(g, b, da, self.batch * m);
            return;
        }
        for bi in 0..self.batch {
            kernel(
                &g[bi * m * n..(bi + 1) * m * n],
                &b[self.rhs_off(bi)..self.rhs_off(bi) + k * n],
                &mut da[bi * m * k..(bi + 1) * m * k],
                m,
            );
        }
    }

    /// Accumulates dB += Aᵀ·dC, or dCᵀ·A for a transposed right operand.
    pub fn grad_rhs<T: Real>(&self, a: &[T], g: &[T], db: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        let kernel = |a: &[T], g: &[T], c: &mut [T], rows: usize| {
            if self.rhs_transposed {
                gemm_tn(g, a, c, rows, n, k)
            } else {
                gemm_tn(a, g, c, rows, k, n)
            }
        };
        if self.shared_rhs {
            kernel(a, g, db, self.batch * m);
            return;
        }
        for bi in 0..self.batch {
            let off = self.rhs_off(bi);
            kernel(
                &a[bi * m * k..(bi + 1) * m * k],
                &g[bi * m * n..(bi + 1) * m * n],
                &mut db[off..off + k * n],
                m,
            );
        }
    }
}

/// c[m,n] += a[m,k] · b[k,n]
fn gemm_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Dot product over eight interleaved partial sums, which lets the
/// compiler vectorise the reduction.
pub(crate) fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            lanes[l] += a[l] * b[l];
        }
    }
    let mut acc = ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
    for (&a, &b) in xr.iter().zip(yr) {
        acc += a * b;
    }
    acc
}

/// c[m,k] += a[m,n] · b[k,n]ᵀ
fn gemm_nt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            c[i * k + p] += dot(arow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// c[k,n] += a[m,k]ᵀ · b[m,n]
fn gemm_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}
