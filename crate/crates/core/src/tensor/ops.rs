//! Differentiable operations. Broadcasting is deliberately narrow: operands
//! must match exactly or one side's shape must be a suffix of the other's
//! (the leading dimensions broadcast). Anything else is a shape error naming
//! the op and both shapes.

use super::kernel;
use super::{make_node, Elem, Tensor};
use crate::error::{MmcError, Result};

/// How the smaller operand maps onto the larger one.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Bcast {
    Same,
    /// rhs is a suffix of lhs
    RhsSuffix,
    /// lhs is a suffix of rhs
    LhsSuffix,
}

fn bcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Bcast)> {
    if a == b {
        return Ok((a.to_vec(), Bcast::Same));
    }
    if a.len() > b.len() && a[a.len() - b.len()..] == *b {
        return Ok((a.to_vec(), Bcast::RhsSuffix));
    }
    if b.len() > a.len() && b[b.len() - a.len()..] == *a {
        return Ok((b.to_vec(), Bcast::LhsSuffix));
    }
    Err(MmcError::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    })
}

impl<E: Elem> Tensor<E> {
    pub fn add(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        binary(self, rhs, "add", |a, b| a + b, AddLike::Add)
    }

    pub fn sub(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        binary(self, rhs, "sub", |a, b| a - b, AddLike::Sub)
    }

    pub fn mul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        binary(self, rhs, "mul", |a, b| a * b, AddLike::Mul)
    }

    pub fn add_scalar(&self, c: E) -> Tensor<E> {
        let out = self.data().iter().map(|&v| v + c).collect();
        let xp = self.clone();
        make_node(
            self.shape(),
            out,
            vec![self.clone()],
            Box::new(move |g, store| {
                if let Some(gx) = store.acc(&xp) {
                    for i in 0..g.len() {
                        gx[i] = gx[i] + g[i];
                    }
                }
            }),
        )
    }

    pub fn mul_scalar(&self, c: E) -> Tensor<E> {
        let out = self.data().iter().map(|&v| v * c).collect();
        let xp = self.clone();
        make_node(
            self.shape(),
            out,
            vec![self.clone()],
            Box::new(move |g, store| {
                if let Some(gx) = store.acc(&xp) {
                    for i in 0..g.len() {
                        gx[i] = gx[i] + g[i] * c;
                    }
                }
            }),
        )
    }

    pub fn neg(&self) -> Tensor<E> {
        self.mul_scalar(-E::one())
    }

    /// 2-D [m,k]·[k,n] or batched 3-D [b,m,k]·[b,k,n] matrix product.
    pub fn matmul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        let sa = self.shape();
        let sb = rhs.shape();
        let (batch, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k1], [k2, n]) if k1 == k2 => (1usize, *m, *k1, *n),
            ([b1, m, k1], [b2, k2, n]) if b1 == b2 && k1 == k2 => (*b1, *m, *k1, *n),
            _ => {
                return Err(MmcError::Shape {
                    op: "matmul",
                    lhs: sa,
                    rhs: sb,
                })
            }
        };
        let mut out = vec![E::zero(); batch * m * n];
        {
            let a = self.data();
            let b = rhs.data();
            for bi in 0..batch {
                kernel::mm_acc(
                    &a[bi * m * k..(bi + 1) * m * k],
                    &b[bi * k * n..(bi + 1) * k * n],
                    m,
                    k,
                    n,
                    &mut out[bi * m * n..(bi + 1) * m * n],
                );
            }
        }
        let shape = if sa.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let (ap, bp) = (self.clone(), rhs.clone());
        Ok(make_node(
            shape,
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, store| {
                // dA = g·Bᵀ ; dB = Aᵀ·g (per batch)
                let ad = ap.data();
                let bd = bp.data();
                if let Some(ga) = store.acc(&ap) {
                    for bi in 0..batch {
                        let bt = kernel::transpose(&bd[bi * k * n..(bi + 1) * k * n], k, n);
                        kernel::mm_acc(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &bt,
                            m,
                            n,
                            k,
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                        );
                    }
                }
                if let Some(gb) = store.acc(&bp) {
                    for bi in 0..batch {
                        let at = kernel::transpose(&ad[bi * m * k..(bi + 1) * m * k], m, k);
                        kernel::mm_acc(
                            &at,
                            &g[bi * m * n..(bi + 1) * m * n],
                            k,
                            m,
                            n,
                            &mut gb[bi * k * n..(bi + 1) * k * n],
                        );
                    }
                }
            }),
        ))
    }

    /// Gaussian error linear unit, tanh approximation (derivative matches the
    /// approximation exactly, which is what the gradient checker verifies).
    pub fn gelu(&self) -> Tensor<E> {
        let c = E::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
        let a3 = E::from_f64(0.044_715);
        let half = E::from_f64(0.5);
        let three = E::from_f64(3.0);
        let data = self.to_vec();
        let out: Vec<E> = data
            .iter()
            .map(|&x| {
                let t = (c * (x + a3 * x * x * x)).tanh();
                half * x * (E::one() + t)
            })
            .collect();
        let deriv: Vec<E> = if self.requires_grad() {
            data.iter()
                .map(|&x| {
                    let inner = c * (x + a3 * x * x * x);
                    let t = inner.tanh();
                    let dinner = c * (E::one() + three * a3 * x * x);
                    half * (E::one() + t) + half * x * (E::one() - t * t) * dinner
                })
                .collect()
        } else {
            Vec::new()
        };
        unary(self, out, deriv)
    }

    pub fn sigmoid(&self) -> Tensor<E> {
        let out: Vec<E> = self
            .data()
            .iter()
            .map(|&x| {
                if x >= E::zero() {
                    E::one() / (E::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (E::one() + e)
                }
            })
            .collect();
        let deriv: Vec<E> = if self.requires_grad() {
            out.iter().map(|&y| y * (E::one() - y)).collect()
        } else {
            Vec::new()
        };
        unary(self, out, deriv)
    }

    pub fn log(&self) -> Tensor<E> {
        let out: Vec<E> = self.data().iter().map(|&x| x.ln()).collect();
        let deriv: Vec<E> = if self.requires_grad() {
            self.data().iter().map(|&x| E::one() / x).collect()
        } else {
            Vec::new()
        };
        unary(self, out, deriv)
    }

    pub fn exp(&self) -> Tensor<E> {
        let out: Vec<E> = self.data().iter().map(|&x| x.exp()).collect();
        let deriv = if self.requires_grad() {
            out.clone()
        } else {
            Vec::new()
        };
        unary(self, out, deriv)
    }

    pub fn square(&self) -> Tensor<E> {
        let two = E::from_f64(2.0);
        let out: Vec<E> = self.data().iter().map(|&x| x * x).collect();
        let deriv: Vec<E> = if self.requires_grad() {
            self.data().iter().map(|&x| two * x).collect()
        } else {
            Vec::new()
        };
        unary(self, out, deriv)
    }

    pub fn sum_all(&self) -> Tensor<E> {
        let mut s = E::zero();
        for &v in self.data().iter() {
            s = s + v;
        }
        let xp = self.clone();
        make_node(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g, store| {
                if let Some(gx) = store.acc(&xp) {
                    for v in gx.iter_mut() {
                        *v = *v + g[0];
                    }
                }
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor<E> {
        let inv = E::one() / E::from_f64(self.numel() as f64);
        self.sum_all().mul_scalar(inv)
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<E>> {
        if new_shape.iter().any(|&d| d == 0)
            || new_shape.iter().product::<usize>() != self.numel()
        {
            return Err(MmcError::Contract(format!(
                "reshape: {:?} incompatible with {} elements",
                new_shape,
                self.numel()
            )));
        }
        let xp = self.clone();
        Ok(make_node(
            new_shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(move |g, store| {
                if let Some(gx) = store.acc(&xp) {
                    for i in 0..g.len() {
                        gx[i] = gx[i] + g[i];
                    }
                }
            }),
        ))
    }

    /// Axis permutation with materialized copy; `axes[i]` names the source
    /// axis landing at output position i.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<E>> {
        let shape = self.shape();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(MmcError::Contract(format!(
                "permute: {axes:?} is not a permutation of axes of {shape:?}"
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        // strides of the source, then out_flat -> in_flat map
        let mut in_strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * shape[i + 1];
        }
        let n = self.numel();
        let mut map = vec![0usize; n];
        let mut coords = vec![0usize; rank];
        for (j, m) in map.iter_mut().enumerate() {
            let mut src = 0usize;
            for (pos, &ax) in axes.iter().enumerate() {
                src += coords[pos] * in_strides[ax];
            }
            *m = src;
            let _ = j;
            // increment output multi-index (row-major)
            for pos in (0..rank).rev() {
                coords[pos] += 1;
                if coords[pos] < out_shape[pos] {
                    break;
                }
                coords[pos] = 0;
            }
        }
        let data = self.data();
        let out: Vec<E> = map.iter().map(|&s| data[s]).collect();
        drop(data);
        let xp = self.clone();
        Ok(make_node(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g, store| {
                if let Some(gx) = store.acc(&xp) {
                    for (j, &s) in map.iter().enumerate() {
                        gx[s] = gx[s] + g[j];
                    }
                }
            }),
        ))
    }

    /// Contiguous slice along one axis.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(MmcError::Contract(format!(
                "narrow: axis {axis} range {start}..{} out of bounds for {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let tail: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut out = Vec::with_capacity(outer * len * tail);
        {
            let d = self.data();
            for o in 0..outer {
                let base = o * dim * tail + start * tail;
                out.extend_from_slice(&d[base..base + len * tail]);
            }
        }
        let xp = self.clone();
        Ok(make_node(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g, store| {
                if let Some(gx) = store.acc(&xp) {
                    for o in 0..outer {
                        let base = o * dim * tail + start * tail;
                        let gbase = o * len * tail;
                        for t in 0..len * tail {
                            gx[base + t] = gx[base + t] + g[gbase + t];
                        }
                    }
                }
            }),
        ))
    }

    /// Rows of axis 0 picked by (possibly repeating) indices.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor<E>> {
        let shape = self.shape();
        let rows = shape[0];
        let row_len = self.numel() / rows;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(MmcError::Contract(format!(
                "select_rows: index {bad} out of {rows} rows"
            )));
        }
        let mut out_shape = shape.clone();
        out_shape[0] = idx.len();
        let mut out = Vec::with_capacity(idx.len() * row_len);
        {
            let d = self.data();
            for &r in idx {
                out.extend_from_slice(&d[r * row_len..(r + 1) * row_len]);
            }
        }
        let xp = self.clone();
        let idx = idx.to_vec();
        Ok(make_node(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g, store| {
                if let Some(gx) = store.acc(&xp) {
                    for (j, &r) in idx.iter().enumerate() {
                        for t in 0..row_len {
                            gx[r * row_len + t] = gx[r * row_len + t] + g[j * row_len + t];
                        }
                    }
                }
            }),
        ))
    }

    /// From [N,C], the value at column `idx[i]` of each row: output [N].
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor<E>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(MmcError::Contract(format!(
                "gather_rows needs a 2-D tensor, got {shape:?}"
            )));
        }
        let (n, c) = (shape[0], shape[1]);
        if idx.len() != n || idx.iter().any(|&i| i >= c) {
            return Err(MmcError::Contract(format!(
                "gather_rows: {} indices into [{n},{c}]",
                idx.len()
            )));
        }
        let d = self.data();
        let out: Vec<E> = idx.iter().enumerate().map(|(i, &j)| d[i * c + j]).collect();
        drop(d);
        let xp = self.clone();
        let idx = idx.to_vec();
        Ok(make_node(
            vec![n],
            out,
            vec![self.clone()],
            Box::new(move |g, store| {
                if let Some(gx) = store.acc(&xp) {
                    for (i, &j) in idx.iter().enumerate() {
                        gx[i * c + j] = gx[i * c + j] + g[i];
                    }
                }
            }),
        ))
    }

    /// Softmax over the last axis of `logits / tau`, max-subtracted.
    pub fn softmax_temp(&self, tau: f64) -> Result<Tensor<E>> {
        let (rows, d) = self.check_softmax(tau, "softmax_temp")?;
        let t = E::from_f64(tau);
        let mut out = vec![E::zero(); rows * d];
        {
            let x = self.data();
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let m = row.iter().cloned().fold(row[0], E::max);
                let mut s = E::zero();
                for j in 0..d {
                    let e = ((row[j] - m) / t).exp();
                    out[r * d + j] = e;
                    s = s + e;
                }
                for j in 0..d {
                    out[r * d + j] = out[r * d + j] / s;
                }
            }
        }
        let y = out.clone();
        let xp = self.clone();
        Ok(make_node(
            self.shape(),
            out,
            vec![self.clone()],
            Box::new(move |g, store| {
                if let Some(gx) = store.acc(&xp) {
                    for r in 0..rows {
                        let mut dot = E::zero();
                        for j in 0..d {
                            dot = dot + g[r * d + j] * y[r * d + j];
                        }
                        for j in 0..d {
                            let k = r * d + j;
                            gx[k] = gx[k] + y[k] * (g[k] - dot) / t;
                        }
                    }
                }
            }),
        ))
    }

    /// Log-softmax over the last axis of `logits / tau`, max-subtracted.
    pub fn log_softmax_temp(&self, tau: f64) -> Result<Tensor<E>> {
        let (rows, d) = self.check_softmax(tau, "log_softmax_temp")?;
        let t = E::from_f64(tau);
        let mut out = vec![E::zero(); rows * d];
        let mut p = vec![E::zero(); rows * d];
        {
            let x = self.data();
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let m = row.iter().cloned().fold(row[0], E::max);
                let mut s = E::zero();
                for j in 0..d {
                    s = s + ((row[j] - m) / t).exp();
                }
                let lse = s.ln();
                for j in 0..d {
                    let l = (row[j] - m) / t - lse;
                    out[r * d + j] = l;
                    p[r * d + j] = l.exp();
                }
            }
        }
        let xp = self.clone();
        Ok(make_node(
            self.shape(),
            out,
            vec![self.clone()],
            Box::new(move |g, store| {
                if let Some(gx) = store.acc(&xp) {
                    for r in 0..rows {
                        let mut sg = E::zero();
                        for j in 0..d {
                            sg = sg + g[r * d + j];
                        }
                        for j in 0..d {
                            let k = r * d + j;
                            gx[k] = gx[k] + (g[k] - p[k] * sg) / t;
                        }
                    }
                }
            }),
        ))
    }

    fn check_softmax(&self, tau: f64, op: &str) -> Result<(usize, usize)> {
        if tau <= 0.0 {
            return Err(MmcError::Parameter(format!(
                "{op}: temperature must be positive, got {tau}"
            )));
        }
        if self.data().iter().any(|v| !v.is_finite()) {
            return Err(MmcError::Numeric(format!("{op}: non-finite logit")));
        }
        let shape = self.shape();
        let d = *shape.last().expect("non-empty shape");
        Ok((self.numel() / d, d))
    }

    /// Normalize the last axis to zero mean / unit variance (biased variance,
    /// epsilon inside the square root), then scale and shift.
    pub fn layer_norm(&self, gamma: &Tensor<E>, beta: &Tensor<E>, eps: f64) -> Result<Tensor<E>> {
        let shape = self.shape();
        let d = *shape.last().expect("non-empty shape");
        if gamma.shape() != [d] {
            return Err(MmcError::Shape {
                op: "layer_norm",
                lhs: shape,
                rhs: gamma.shape(),
            });
        }
        if beta.shape() != [d] {
            return Err(MmcError::Shape {
                op: "layer_norm",
                lhs: shape,
                rhs: beta.shape(),
            });
        }
        let rows = self.numel() / d;
        let epse = E::from_f64(eps);
        let dinv = E::one() / E::from_f64(d as f64);
        let mut out = vec![E::zero(); rows * d];
        let mut xhat = vec![E::zero(); rows * d];
        let mut inv_std = vec![E::zero(); rows];
        {
            let x = self.data();
            let gw = gamma.data();
            let bw = beta.data();
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mut mu = E::zero();
                for &v in row {
                    mu = mu + v;
                }
                mu = mu * dinv;
                let mut var = E::zero();
                for &v in row {
                    var = var + (v - mu) * (v - mu);
                }
                var = var * dinv;
                let inv = E::one() / (var + epse).sqrt();
                inv_std[r] = inv;
                for j in 0..d {
                    let h = (row[j] - mu) * inv;
                    xhat[r * d + j] = h;
                    out[r * d + j] = gw[j] * h + bw[j];
                }
            }
        }
        let (xp, gp, bp) = (self.clone(), gamma.clone(), beta.clone());
        Ok(make_node(
            self.shape(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, store| {
                let gw = gp.data();
                if let Some(gx) = store.acc(&xp) {
                    for r in 0..rows {
                        let mut m1 = E::zero();
                        let mut m2 = E::zero();
                        for j in 0..d {
                            let h = gw[j] * g[r * d + j];
                            m1 = m1 + h;
                            m2 = m2 + h * xhat[r * d + j];
                        }
                        m1 = m1 * dinv;
                        m2 = m2 * dinv;
                        for j in 0..d {
                            let k = r * d + j;
                            let h = gw[j] * g[k];
                            gx[k] = gx[k] + inv_std[r] * (h - m1 - xhat[k] * m2);
                        }
                    }
                }
                drop(gw);
                if let Some(gg) = store.acc(&gp) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] = gg[j] + g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = store.acc(&bp) {
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] = gb[j] + g[r * d + j];
                        }
                    }
                }
            }),
        ))
    }

    /// Channel-major concatenation along `axis`.
    pub fn concat(parts: &[&Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        let first = parts
            .first()
            .ok_or_else(|| MmcError::Contract("concat of zero tensors".into()))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(MmcError::Contract(format!(
                "concat axis {axis} out of rank {}",
                base.len()
            )));
        }
        let mut axis_total = 0usize;
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(MmcError::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s,
                });
            }
            axis_total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let tail: usize = base[axis + 1..].iter().product();
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let mut out = Vec::with_capacity(outer * axis_total * tail);
        let inners: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * tail).collect();
        for o in 0..outer {
            for (p, &inner) in parts.iter().zip(&inners) {
                let d = p.data();
                out.extend_from_slice(&d[o * inner..(o + 1) * inner]);
            }
        }
        let owned: Vec<Tensor<E>> = parts.iter().map(|p| (*p).clone()).collect();
        let parents = owned.clone();
        let out_inner = axis_total * tail;
        Ok(make_node(
            out_shape,
            out,
            parents,
            Box::new(move |g, store| {
                let mut offset = 0usize;
                for (p, &inner) in owned.iter().zip(&inners) {
                    if let Some(gp) = store.acc(p) {
                        for o in 0..outer {
                            let src = o * out_inner + offset;
                            let dst = o * inner;
                            for t in 0..inner {
                                gp[dst + t] = gp[dst + t] + g[src + t];
                            }
                        }
                    }
                    offset += inner;
                }
            }),
        ))
    }
}

enum AddLike {
    Add,
    Sub,
    Mul,
}

fn binary<E: Elem>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    op: &'static str,
    f: fn(E, E) -> E,
    kind: AddLike,
) -> Result<Tensor<E>> {
    let (shape, mode) = bcast(op, &a.shape(), &b.shape())?;
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    {
        let ad = a.data();
        let bd = b.data();
        match mode {
            Bcast::Same => {
                for i in 0..n {
                    out.push(f(ad[i], bd[i]));
                }
            }
            Bcast::RhsSuffix => {
                let nb = bd.len();
                for i in 0..n {
                    out.push(f(ad[i], bd[i % nb]));
                }
            }
            Bcast::LhsSuffix => {
                let na = ad.len();
                for i in 0..n {
                    out.push(f(ad[i % na], bd[i]));
                }
            }
        }
    }
    let (ap, bp) = (a.clone(), b.clone());
    Ok(make_node(
        shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, store| {
            // The buffer length distinguishes the full side from a suffix side.
            match kind {
                AddLike::Add | AddLike::Sub => {
                    let sign = if matches!(kind, AddLike::Sub) {
                        -E::one()
                    } else {
                        E::one()
                    };
                    if let Some(ga) = store.acc(&ap) {
                        let na = ga.len();
                        for i in 0..g.len() {
                            ga[i % na] = ga[i % na] + g[i];
                        }
                    }
                    if let Some(gb) = store.acc(&bp) {
                        let nb = gb.len();
                        for i in 0..g.len() {
                            gb[i % nb] = gb[i % nb] + sign * g[i];
                        }
                    }
                }
                AddLike::Mul => {
                    let ad = ap.data();
                    let bd = bp.data();
                    let (na, nb) = (ad.len(), bd.len());
                    if let Some(ga) = store.acc(&ap) {
                        for i in 0..g.len() {
                            ga[i % na] = ga[i % na] + g[i] * bd[i % nb];
                        }
                    }
                    if let Some(gb) = store.acc(&bp) {
                        for i in 0..g.len() {
                            gb[i % nb] = gb[i % nb] + g[i] * ad[i % na];
                        }
                    }
                }
            }
        }),
    ))
}

fn unary<E: Elem>(x: &Tensor<E>, out: Vec<E>, deriv: Vec<E>) -> Tensor<E> {
    let xp = x.clone();
    make_node(
        x.shape(),
        out,
        vec![x.clone()],
        Box::new(move |g, store| {
            if let Some(gx) = store.acc(&xp) {
                for i in 0..g.len() {
                    gx[i] = gx[i] + g[i] * deriv[i];
                }
            }
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    fn close(a: f32, b: f32, tol: f32) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn add_basic() {
        let out = t(&[2], &[1.0, 2.0]).add(&t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(out.to_vec(), vec![4.0, 6.0]);
    }

    #[test]
    fn matmul_identity() {
        let eye = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let a = t(&[3, 3], &[2., -1., 0.5, 3., 7., 1., -2., 0., 4.]);
        let out = eye.matmul(&a).unwrap();
        assert_eq!(out.to_vec(), a.to_vec());
    }

    #[test]
    fn shape_error_names_operation() {
        let e = t(&[2], &[1.0, 2.0]).add(&t(&[3], &[1.0, 2.0, 3.0]));
        let msg = format!("{}", e.unwrap_err());
        assert!(msg.contains("add"), "{msg}");
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn suffix_broadcast_add_and_grad() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]).with_grad();
        let b = t(&[3], &[10., 20., 30.]).with_grad();
        let y = x.add(&b).unwrap();
        assert_eq!(y.to_vec(), vec![11., 22., 33., 14., 25., 36.]);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![1.0; 6]);
        assert_eq!(b.grad_vec().unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn softmax_symmetry() {
        let y = t(&[2], &[0.0, 0.0]).softmax_temp(2.0).unwrap();
        assert_eq!(y.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_hand_value() {
        // exp(1)/(exp(1)+1) at logits [2,0], tau 2
        let y = t(&[2], &[2.0, 0.0]).softmax_temp(2.0).unwrap().to_vec();
        assert!(close(y[0], 0.7311, 1e-4), "{y:?}");
        assert!(close(y[1], 0.2689, 1e-4), "{y:?}");
    }

    #[test]
    fn softmax_high_temperature_flattens() {
        let y = t(&[3], &[5.0, 1.0, 1.0]).softmax_temp(1e6).unwrap().to_vec();
        for v in y {
            assert!(close(v, 1.0 / 3.0, 1e-4));
        }
    }

    #[test]
    fn softmax_rejects_bad_inputs() {
        assert!(matches!(
            t(&[2], &[0.0, 0.0]).softmax_temp(0.0),
            Err(MmcError::Parameter(_))
        ));
        assert!(matches!(
            t(&[2], &[f32::NAN, 0.0]).softmax_temp(2.0),
            Err(MmcError::Numeric(_))
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_positive() {
        let mut rng = crate::rng::stream(11, "softmax-prop", &[]);
        use rand::Rng;
        for _ in 0..100 {
            let data: Vec<f32> = (0..12).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let y = t(&[3, 4], &data).softmax_temp(2.0).unwrap().to_vec();
            for r in 0..3 {
                let s: f32 = y[r * 4..(r + 1) * 4].iter().sum();
                assert!(close(s, 1.0, 1e-6));
            }
            assert!(y.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let x = t(&[2, 3], &[0.3, -1.0, 2.0, 5.0, 5.0, 5.0]);
        let a = x.softmax_temp(2.0).unwrap().to_vec();
        let b = x.log_softmax_temp(2.0).unwrap().to_vec();
        for (pa, lb) in a.iter().zip(&b) {
            assert!(close(pa.ln(), *lb, 1e-6));
        }
    }

    #[test]
    fn permute_and_back() {
        let x = t(&[2, 3, 4], &(0..24).map(|i| i as f32).collect::<Vec<_>>());
        let p = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), vec![4, 2, 3]);
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn narrow_concat_roundtrip() {
        let x = t(&[2, 4], &(0..8).map(|i| i as f32).collect::<Vec<_>>());
        let l = x.narrow(1, 0, 2).unwrap();
        let r = x.narrow(1, 2, 2).unwrap();
        let back = Tensor::concat(&[&l, &r], 1).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
        assert_eq!(l.to_vec(), vec![0., 1., 4., 5.]);
    }

    #[test]
    fn select_rows_repeats_accumulate_grad() {
        let x = t(&[3, 2], &[1., 2., 3., 4., 5., 6.]).with_grad();
        let s = x.select_rows(&[1, 1, 0]).unwrap();
        assert_eq!(s.to_vec(), vec![3., 4., 3., 4., 1., 2.]);
        s.sum_all().backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![1., 1., 2., 2., 0., 0.]);
    }

    #[test]
    fn gather_rows_basic() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]).with_grad();
        let g = x.gather_rows(&[2, 0]).unwrap();
        assert_eq!(g.to_vec(), vec![3., 4.]);
        g.sum_all().backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![0., 0., 1., 1., 0., 0.]);
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let x = t(&[2, 4], &[1., 2., 3., 4., -2., 0., 2., 4.]);
        let gamma = t(&[4], &[1.0; 4]);
        let beta = t(&[4], &[0.0; 4]);
        let y = x.layer_norm(&gamma, &beta, 1e-5).unwrap().to_vec();
        for r in 0..2 {
            let row = &y[r * 4..(r + 1) * 4];
            let mean: f32 = row.iter().sum::<f32>() / 4.0;
            let var: f32 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 4.0;
            assert!(close(mean, 0.0, 1e-5));
            assert!(close(var, 1.0, 1e-3));
        }
    }

    #[test]
    fn layer_norm_constant_row_is_finite() {
        let x = t(&[1, 4], &[0.0; 4]);
        let y = x
            .layer_norm(&t(&[4], &[1.0; 4]), &t(&[4], &[0.0; 4]), 1e-5)
            .unwrap();
        assert!(y.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn batched_matmul() {
        let a = t(&[2, 1, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 2, 1], &[5., 6., 7., 8.]);
        let y = a.matmul(&b).unwrap();
        assert_eq!(y.shape(), vec![2, 1, 1]);
        assert_eq!(y.to_vec(), vec![17., 53.]);
    }

    #[test]
    fn mean_all_value() {
        let x = t(&[4], &[1., 2., 3., 6.]);
        assert!(close(x.mean_all().item(), 3.0, 1e-6));
    }
}
