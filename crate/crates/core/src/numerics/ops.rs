use std::rc::Rc;

use super::array::{broadcast_offsets, broadcast_shape, dot, MatmulPlan};
use super::{Array, Real, Var};
use crate::error::{Error, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// `tanh` from a single `exp`, switching to the odd Taylor series near
/// zero where `1 − e^(−2|x|)` would cancel. Within a few ulp of the libm
/// call and several times faster, which matters because GELU and the bias
/// projection evaluate it on every element.
pub fn tanh_scalar<T: Real>(x: T) -> T {
    let a = x.abs();
    if a < T::lit(0.0625) {
        let x2 = x * x;
        let mut p = T::lit(-929_569.0 / 638_512_875.0);
        for c in [
            21_844.0 / 6_081_075.0,
            -1_382.0 / 155_925.0,
            62.0 / 2_835.0,
            -17.0 / 315.0,
            2.0 / 15.0,
            -1.0 / 3.0,
        ] {
            p = T::lit(c) + x2 * p;
        }
        x + x * x2 * p
    } else {
        let e = (T::lit(-2.0) * a).exp();
        let t = (T::one() - e) / (T::one() + e);
        if x < T::zero() {
            -t
        } else {
            t
        }
    }
}

/// GELU, tanh approximation:
/// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub fn gelu_scalar<T: Real>(x: T) -> T {
    let inner = T::lit(SQRT_2_OVER_PI) * (x + T::lit(GELU_CUBIC) * x * x * x);
    T::lit(0.5) * x * (T::one() + tanh_scalar(inner))
}

fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let c = T::lit(SQRT_2_OVER_PI);
    let inner = c * (x + T::lit(GELU_CUBIC) * x * x * x);
    let t = tanh_scalar(inner);
    let dinner = c * (T::one() + T::lit(3.0 * GELU_CUBIC) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * dinner
}

pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// How an input of a broadcasting op maps onto the output's flat index.
#[derive(Clone)]
enum Gather {
    /// Same element count as the output, so the layout is unchanged.
    Same,
    Scalar,
    Offsets(Rc<Vec<usize>>),
}

impl Gather {
    fn new(out_shape: &[usize], in_shape: &[usize]) -> Self {
        let (out_n, in_n) = (out_shape.iter().product::<usize>(), in_shape.iter().product::<usize>());
        if in_n == out_n {
            Gather::Same
        } else if in_n == 1 {
            Gather::Scalar
        } else {
            Gather::Offsets(Rc::new(broadcast_offsets(out_shape, in_shape)))
        }
    }

    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            Gather::Same => i,
            Gather::Scalar => 0,
            Gather::Offsets(o) => o[i],
        }
    }
}

fn zip_broadcast<T: Real>(
    shape: &[usize],
    a: &[T],
    ga: &Gather,
    b: &[T],
    gb: &Gather,
    f: impl Fn(T, T) -> T,
) -> Array<T> {
    let data = match (ga, gb) {
        (Gather::Same, Gather::Same) => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
        (Gather::Same, Gather::Scalar) => a.iter().map(|&x| f(x, b[0])).collect(),
        (Gather::Scalar, Gather::Same) => b.iter().map(|&y| f(a[0], y)).collect(),
        _ => (0..shape.iter().product())
            .map(|i| f(a[ga.at(i)], b[gb.at(i)]))
            .collect(),
    };
    Array::new(shape, data).expect("broadcast output matches its shape")
}

/// Sums a gradient laid out over the broadcast output back onto an input
/// shape.
fn reduce_to<T: Real>(g: &Array<T>, gather: &Gather, shape: &[usize], f: impl Fn(usize, T) -> T) -> Array<T> {
    match gather {
        Gather::Same => Array::from_fn(shape, |i| f(i, g.data()[i])),
        _ => {
            let mut out = Array::zeros(shape);
            let od = out.data_mut();
            for (i, &gv) in g.data().iter().enumerate() {
                od[gather.at(i)] += f(i, gv);
            }
            out
        }
    }
}

// Arithmetic is fallible on shape mismatch, so these are methods rather
// than operator impls.
#[allow(clippy::should_implement_trait)]
impl<'t, T: Real> Var<'t, T> {
    fn binary(self, other: Var<'t, T>, op: BinOp, name: &str) -> Result<Var<'t, T>> {
        let a = self.value();
        let b = other.value();
        let out_shape =
            broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::shape(name, a.shape(), b.shape()))?;
        let (ga, gb) = (Gather::new(&out_shape, a.shape()), Gather::new(&out_shape, b.shape()));
        let (ad, bd) = (a.data(), b.data());
        let value = match op {
            BinOp::Add => zip_broadcast(&out_shape, ad, &ga, bd, &gb, |x, y| x + y),
            BinOp::Sub => zip_broadcast(&out_shape, ad, &ga, bd, &gb, |x, y| x - y),
            BinOp::Mul => zip_broadcast(&out_shape, ad, &ga, bd, &gb, |x, y| x * y),
            BinOp::Div => zip_broadcast(&out_shape, ad, &ga, bd, &gb, |x, y| x / y),
        };
        Ok(self.tape.op(
            value,
            &[self, other],
            Box::new(move |g, inputs, _| {
                let (a, b) = (&inputs[0], &inputs[1]);
                let (ad, bd) = (a.data(), b.data());
                let da = reduce_to(g, &ga, a.shape(), |i, gv| match op {
                    BinOp::Add | BinOp::Sub => gv,
                    BinOp::Mul => gv * bd[gb.at(i)],
                    BinOp::Div => gv / bd[gb.at(i)],
                });
                let db = reduce_to(g, &gb, b.shape(), |i, gv| match op {
                    BinOp::Add => gv,
                    BinOp::Sub => -gv,
                    BinOp::Mul => gv * ad[ga.at(i)],
                    BinOp::Div => {
                        let y = bd[gb.at(i)];
                        -gv * ad[ga.at(i)] / (y * y)
                    }
                });
                vec![Some(da), Some(db)]
            }),
        ))
    }

    /// Broadcasting elementwise sum.
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinOp::Add, "add")
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinOp::Sub, "sub")
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinOp::Mul, "mul")
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinOp::Div, "div")
    }

    fn unary(self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<'t, T> {
        let value = self.value().map(f);
        self.tape.op(
            value,
            &[self],
            Box::new(move |g, inputs, out| {
                let x = inputs[0].data();
                let y = out.data();
                let gx = Array::from_fn(out.shape(), |i| g.data()[i] * df(x[i], y[i]));
                vec![Some(gx)]
            }),
        )
    }

    pub fn neg(self) -> Var<'t, T> {
        self.unary(|x| -x, |_, _| -T::one())
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        self.unary(move |x| x + c, |_, _| T::one())
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(tanh_scalar, |_, y| T::one() - y * y)
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(sigmoid_scalar, |_, y| y * (T::one() - y))
    }

    pub fn gelu(self) -> Var<'t, T> {
        self.unary(gelu_scalar, |x, _| gelu_grad_scalar(x))
    }

    /// Replaces values with magnitude below `eps` by `sign·eps`; clamped
    /// entries pass no gradient.
    pub fn clamp_abs_min(self, eps: T) -> Var<'t, T> {
        self.unary(
            move |x| {
                if x.abs() < eps {
                    if x < T::zero() {
                        -eps
                    } else {
                        eps
                    }
                } else {
                    x
                }
            },
            move |x, _| if x.abs() < eps { T::zero() } else { T::one() },
        )
    }

    /// Cuts the gradient path.
    pub fn detach(self) -> Var<'t, T> {
        self.tape.constant((*self.value()).clone())
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = self.value().reshape(shape)?;
        Ok(self.tape.op(
            value,
            &[self],
            Box::new(|g, inputs, _| vec![Some(g.reshape(inputs[0].shape()).expect("same numel"))]),
        ))
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let value = self.value().permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(self.tape.op(
            value,
            &[self],
            Box::new(move |g, _, _| vec![Some(g.permute(&inverse).expect("valid inverse"))]),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let rank = self.shape().len();
        if rank < 2 {
            return Err(Error::shape("transpose", &self.shape(), &[]));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(&axes)
    }

    /// `[..., M, K] × [K, N]` or batched `[..., M, K] × [..., K, N]`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let plan = MatmulPlan::new(&self.shape(), &other.shape())?;
        self.matmul_planned(other, plan)
    }

    /// `self · otherᵀ` where `other` is `[N, K]` or `[..., N, K]`, without
    /// materialising the transpose.
    pub fn matmul_t(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let plan = MatmulPlan::new_transposed(&self.shape(), &other.shape())?;
        self.matmul_planned(other, plan)
    }

    fn matmul_planned(self, other: Var<'t, T>, plan: MatmulPlan) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let mut out = vec![T::zero(); plan.out_numel()];
        plan.forward(a.data(), b.data(), &mut out);
        let value = Array::new(&plan.out_shape, out)?;
        let need_a = self.requires_grad();
        let need_b = other.requires_grad();
        Ok(self.tape.op(
            value,
            &[self, other],
            Box::new(move |g, inputs, _| {
                let (a, b) = (&inputs[0], &inputs[1]);
                let ga = need_a.then(|| {
                    let mut da = Array::zeros(a.shape());
                    plan.grad_lhs(g.data(), b.data(), da.data_mut());
                    da
                });
                let gb = need_b.then(|| {
                    let mut db = Array::zeros(b.shape());
                    plan.grad_rhs(a.data(), g.data(), db.data_mut());
                    db
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(self) -> Var<'t, T> {
        let x = self.value();
        let n = *x.shape().last().unwrap_or(&1);
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n.max(1)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Array::new(x.shape(), out).expect("same shape");
        self.tape.op(
            value,
            &[self],
            Box::new(move |g, _, y| {
                let mut gx = Array::zeros(y.shape());
                for ((gr, yr), dr) in g
                    .data()
                    .chunks(n)
                    .zip(y.data().chunks(n))
                    .zip(gx.data_mut().chunks_mut(n))
                {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = yv * (gv - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn sum_all(self) -> Var<'t, T> {
        let value = Array::scalar(self.value().sum());
        self.tape.op(
            value,
            &[self],
            Box::new(|g, inputs, _| vec![Some(Array::full(inputs[0].shape(), g.item()))]),
        )
    }

    pub fn mean_all(self) -> Var<'t, T> {
        let n = T::lit(self.numel().max(1) as f64);
        self.sum_all().scale(T::one() / n)
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", &shape, &[axis]));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x.data()[base + i];
                }
            }
        }
        let value = Array::new(&out_shape, out)?;
        Ok(self.tape.op(
            value,
            &[self],
            Box::new(move |g, inputs, _| {
                let mut gx = Array::zeros(inputs[0].shape());
                let gd = gx.data_mut();
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            gd[base + i] = g.data()[o * inner + i];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let len = self
            .shape()
            .get(axis)
            .copied()
            .ok_or_else(|| Error::shape("mean_axis", &self.shape(), &[axis]))?;
        Ok(self.sum_axis(axis)?.scale(T::one() / T::lit(len.max(1) as f64)))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice_axis(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape("slice_axis", &shape, &[axis, start, len]));
        }
        let outer: usize = shape[..axis].iter().product();
        let full = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let value = Array::new(&out_shape, out)?;
        Ok(self.tape.op(
            value,
            &[self],
            Box::new(move |g, inputs, _| {
                let mut gx = Array::zeros(inputs[0].shape());
                let gd = gx.data_mut();
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gd[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Appends `extra` zero entries at the end of `axis`.
    pub fn pad_axis(self, axis: usize, extra: usize) -> Result<Var<'t, T>> {
        if extra == 0 {
            return Ok(self);
        }
        let mut zshape = self.shape();
        if axis >= zshape.len() {
            return Err(Error::shape("pad_axis", &zshape, &[axis]));
        }
        zshape[axis] = extra;
        let zeros = self.tape.constant(Array::zeros(&zshape));
        concat(&[self, zeros], axis)
    }

    /// Gathers rows of a `[Q, D]` table; output is `[idx.len(), D]`.
    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t, T>> {
        let table = self.value();
        if table.rank() != 2 {
            return Err(Error::shape("gather_rows", table.shape(), &[idx.len()]));
        }
        let (q, d) = (table.shape()[0], table.shape()[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= q) {
            return Err(Error::shape("gather_rows", table.shape(), &[bad]));
        }
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&table.data()[i * d..(i + 1) * d]);
        }
        let value = Array::new(&[idx.len(), d], out)?;
        let idx = idx.to_vec();
        Ok(self.tape.op(
            value,
            &[self],
            Box::new(move |g, inputs, _| {
                let mut gt = Array::zeros(inputs[0].shape());
                let gd = gt.data_mut();
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        gd[i * d + j] += g.data()[r * d + j];
                    }
                }
                vec![Some(gt)]
            }),
        ))
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        let d = *x.shape().last().unwrap_or(&0);
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::shape("layer_norm", x.shape(), gv.shape()));
        }
        let rows = x.numel() / d.max(1);
        let eps = T::lit(eps);
        let dn = T::lit(d as f64);
        let mut xhat = vec![T::zero(); x.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); x.numel()];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Array::new(x.shape(), out)?;
        Ok(self.tape.op(
            value,
            &[self, gamma, beta],
            Box::new(move |g, inputs, _| {
                let gamma = inputs[1].data();
                let mut gx = Array::zeros(inputs[0].shape());
                let mut gg = Array::zeros(&[d]);
                let mut gb = Array::zeros(&[d]);
                for r in 0..rows {
                    let grow = &g.data()[r * d..(r + 1) * d];
                    let hrow = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..d {
                        let dh = grow[j] * gamma[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hrow[j];
                        gg.data_mut()[j] += grow[j] * hrow[j];
                        gb.data_mut()[j] += grow[j];
                    }
                    mean_dh /= dn;
                    mean_dh_h /= dn;
                    let gxr = &mut gx.data_mut()[r * d..(r + 1) * d];
                    for j in 0..d {
                        let dh = grow[j] * gamma[j];
                        gxr[j] = rstd[r] * (dh - mean_dh - hrow[j] * mean_dh_h);
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            }),
        ))
    }

    /// Temporal 1-D convolution with "same" zero padding.
    ///
    /// `self`: `[B, L, C_in]`; `weight`: `[C_out, C_in/groups, K]`;
    /// `bias`: `[C_out]`. Output channel `o` belongs to group
    /// `o / (C_out/groups)` and reads input channels
    /// `g·C_in/groups .. (g+1)·C_in/groups`.
    pub fn conv1d(self, weight: Var<'t, T>, bias: Var<'t, T>, groups: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let w = weight.value();
        let bv = bias.value();
        let (xs, ws) = (x.shape().to_vec(), w.shape().to_vec());
        if xs.len() != 3 || ws.len() != 3 || groups == 0 {
            return Err(Error::shape("conv1d", &xs, &ws));
        }
        let (b, l, cin) = (xs[0], xs[1], xs[2]);
        let (cout, cin_g, k) = (ws[0], ws[1], ws[2]);
        if cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g || bv.shape() != [cout] {
            return Err(Error::shape("conv1d", &xs, &ws));
        }
        if k > l {
            return Err(Error::Config(format!("conv1d kernel {k} longer than sequence {l}")));
        }
        let cout_g = cout / groups;
        let pad = (k - 1) / 2;
        let geom = ConvGeom {
            b,
            l,
            cin,
            cout,
            cin_g,
            cout_g,
            k,
            pad,
        };
        let mut out = vec![T::zero(); b * l * cout];
        geom.forward(x.data(), w.data(), bv.data(), &mut out);
        let value = Array::new(&[b, l, cout], out)?;
        Ok(self.tape.op(
            value,
            &[self, weight, bias],
            Box::new(move |g, inputs, _| {
                let (gx, gw, gb) = geom.backward(g.data(), inputs[0].data(), inputs[1].data());
                vec![
                    Some(Array::new(inputs[0].shape(), gx).expect("shape")),
                    Some(Array::new(inputs[1].shape(), gw).expect("shape")),
                    Some(Array::new(inputs[2].shape(), gb).expect("shape")),
                ]
            }),
        ))
    }

    /// Elementwise `mask == 1 ? self : other` with a constant 0/1 mask.
    /// Exact passthrough at selected positions, unlike `m·x + (1−m)·y`.
    pub fn select(self, mask: &Array<T>, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() || a.shape() != mask.shape() {
            return Err(Error::shape("select", a.shape(), b.shape()));
        }
        let keep: Rc<Vec<bool>> = Rc::new(mask.data().iter().map(|&m| m == T::one()).collect());
        let value = Array::from_fn(a.shape(), |i| if keep[i] { a.data()[i] } else { b.data()[i] });
        Ok(self.tape.op(
            value,
            &[self, other],
            Box::new(move |g, _, out| {
                let ga = Array::from_fn(out.shape(), |i| if keep[i] { g.data()[i] } else { T::zero() });
                let gb = Array::from_fn(out.shape(), |i| if keep[i] { T::zero() } else { g.data()[i] });
                vec![Some(ga), Some(gb)]
            }),
        ))
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    b: usize,
    l: usize,
    cin: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    k: usize,
    pad: usize,
}

impl ConvGeom {
    fn src_t(&self, t: usize, kk: usize) -> Option<usize> {
        let s = t + kk;
        (s >= self.pad && s - self.pad < self.l).then(|| s - self.pad)
    }

    /// Weights `[cout, cin_g, k]` regrouped tap-major as `[k, cout, cin_g]`
    /// so each tap's channel dot product reads contiguous memory.
    fn taps<T: Real>(&self, w: &[T]) -> Vec<T> {
        let mut wt = vec![T::zero(); w.len()];
        for o in 0..self.cout {
            for ci in 0..self.cin_g {
                for kk in 0..self.k {
                    wt[(kk * self.cout + o) * self.cin_g + ci] = w[(o * self.cin_g + ci) * self.k + kk];
                }
            }
        }
        wt
    }

    fn forward<T: Real>(&self, x: &[T], w: &[T], bias: &[T], out: &mut [T]) {
        let wt = self.taps(w);
        let (cin_g, cout) = (self.cin_g, self.cout);
        for bi in 0..self.b {
            for t in 0..self.l {
                let orow = &mut out[(bi * self.l + t) * cout..][..cout];
                orow.copy_from_slice(bias);
                for kk in 0..self.k {
                    let Some(s) = self.src_t(t, kk) else { continue };
                    let xrow = &x[(bi * self.l + s) * self.cin..][..self.cin];
                    let wk = &wt[kk * cout * cin_g..][..cout * cin_g];
                    for (o, acc) in orow.iter_mut().enumerate() {
                        let grp = o / self.cout_g;
                        *acc += dot(&wk[o * cin_g..][..cin_g], &xrow[grp * cin_g..][..cin_g]);
                    }
                }
            }
        }
    }

    fn backward<T: Real>(&self, g: &[T], x: &[T], w: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let wt = self.taps(w);
        let (cin_g, cout) = (self.cin_g, self.cout);
        let mut gx = vec![T::zero(); x.len()];
        let mut gwt = vec![T::zero(); w.len()];
        let mut gb = vec![T::zero(); cout];
        for bi in 0..self.b {
            for t in 0..self.l {
                let grow = &g[(bi * self.l + t) * cout..][..cout];
                for (acc, &gv) in gb.iter_mut().zip(grow) {
                    *acc += gv;
                }
                for kk in 0..self.k {
                    let Some(s) = self.src_t(t, kk) else { continue };
                    let base = (bi * self.l + s) * self.cin;
                    for (o, &gv) in grow.iter().enumerate() {
                        let off = (o / self.cout_g) * cin_g;
                        let wi = (kk * cout + o) * cin_g;
                        let xs = &x[base + off..][..cin_g];
                        for (gw, &xv) in gwt[wi..wi + cin_g].iter_mut().zip(xs) {
                            *gw += gv * xv;
                        }
                        for (gxv, &wv) in gx[base + off..][..cin_g].iter_mut().zip(&wt[wi..wi + cin_g]) {
                            *gxv += gv * wv;
                        }
                    }
                }
            }
        }
        let mut gw = vec![T::zero(); w.len()];
        for o in 0..cout {
            for ci in 0..cin_g {
                for kk in 0..self.k {
                    gw[(o * cin_g + ci) * self.k + kk] = gwt[(kk * cout + o) * cin_g + ci];
                }
            }
        }
        (gx, gw, gb)
    }
}

/// Concatenates along `axis`; all other axes must agree.
pub fn concat<'t, T: Real>(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    let tape = first.tape;
    let vals: Vec<Rc<Array<T>>> = parts.iter().map(|p| p.value()).collect();
    let base = vals[0].shape().to_vec();
    if axis >= base.len() {
        return Err(Error::shape("concat", &base, &[axis]));
    }
    for v in &vals[1..] {
        let s = v.shape();
        if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
            return Err(Error::shape("concat", &base, s));
        }
    }
    let lens: Vec<usize> = vals.iter().map(|v| v.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let mut out_shape = base.clone();
    out_shape[axis] = total;
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &len) in vals.iter().zip(&lens) {
            out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let value = Array::new(&out_shape, out)?;
    Ok(tape.op(
        value,
        parts,
        Box::new(move |g, inputs, _| {
            let mut grads: Vec<Vec<T>> = lens
                .iter()
                .map(|&len| Vec::with_capacity(outer * len * inner))
                .collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (gi, &len) in grads.iter_mut().zip(&lens) {
                    gi.extend_from_slice(&g.data()[pos..pos + len * inner]);
                    pos += len * inner;
                }
            }
            grads
                .into_iter()
                .zip(inputs)
                .map(|(gd, inp)| Some(Array::new(inp.shape(), gd).expect("shape")))
                .collect()
        }),
    ))
}

/// Stacks equally shaped tensors along a new axis inserted at `axis`.
pub fn stack<'t, T: Real>(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("stack of zero tensors".into()))?;
    let mut shape = first.shape();
    if axis > shape.len() {
        return Err(Error::shape("stack", &shape, &[axis]));
    }
    shape.insert(axis, 1);
    let expanded: Result<Vec<Var<'t, T>>> = parts.iter().map(|p| p.reshape(&shape)).collect();
    concat(&expanded?, axis)
}
