//! 2-D convolution and its transpose, lowered to the matrix kernel through
//! im2col/col2im. Inputs are single images [C,H,W]; batching happens a level
//! up, one graph per image.

use super::kernel;
use super::{make_node, Elem, Tensor};
use crate::error::{MmcError, Result};

/// Patch matrix [C·kh·kw, Hout·Wout] of x=[c,h,w]; zero padding.
fn im2col<E: Elem>(
    x: &[E],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    hout: usize,
    wout: usize,
) -> Vec<E> {
    let mut cols = vec![E::zero(); c * kh * kw * hout * wout];
    let l = hout * wout;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let base = row * l;
                for oi in 0..hout {
                    let si = (oi * stride + ki) as isize - pad as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src_row = (ci * h + si as usize) * w;
                    for oj in 0..wout {
                        let sj = (oj * stride + kj) as isize - pad as isize;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        cols[base + oi * wout + oj] = x[src_row + sj as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add inverse of `im2col`: accumulates patches back into [c,h,w].
fn col2im<E: Elem>(
    cols: &[E],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    hout: usize,
    wout: usize,
    out: &mut [E],
) {
    let l = hout * wout;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let base = row * l;
                for oi in 0..hout {
                    let si = (oi * stride + ki) as isize - pad as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let dst_row = (ci * h + si as usize) * w;
                    for oj in 0..wout {
                        let sj = (oj * stride + kj) as isize - pad as isize;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        let d = dst_row + sj as usize;
                        out[d] = out[d] + cols[base + oi * wout + oj];
                    }
                }
            }
        }
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (size + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

impl<E: Elem> Tensor<E> {
    /// x=[Cin,H,W] * weight=[Cout,Cin,kh,kw] (+ bias=[Cout]) with zero padding.
    pub fn conv2d(
        &self,
        weight: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<E>> {
        let xs = self.shape();
        let ws = weight.shape();
        let shape_err = || MmcError::Shape {
            op: "conv2d",
            lhs: xs.clone(),
            rhs: ws.clone(),
        };
        if xs.len() != 3 || ws.len() != 4 || xs[0] != ws[1] || stride == 0 {
            return Err(shape_err());
        }
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        let (hout, wout) = match (conv_out(h, kh, stride, pad), conv_out(w, kw, stride, pad)) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => return Err(shape_err()),
        };
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(MmcError::Shape {
                    op: "conv2d",
                    lhs: ws,
                    rhs: b.shape(),
                });
            }
        }
        let k = cin * kh * kw;
        let l = hout * wout;
        let cols = {
            let x = self.data();
            im2col(&x, cin, h, w, kh, kw, stride, pad, hout, wout)
        };
        let mut out = vec![E::zero(); cout * l];
        {
            let wd = weight.data();
            kernel::mm_acc(&wd, &cols, cout, k, l, &mut out);
        }
        if let Some(b) = bias {
            let bd = b.data();
            for co in 0..cout {
                for t in 0..l {
                    out[co * l + t] = out[co * l + t] + bd[co];
                }
            }
        }
        let xp = self.clone();
        let wp = weight.clone();
        let bp = bias.cloned();
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(make_node(
            vec![cout, hout, wout],
            out,
            parents,
            Box::new(move |g, store| {
                // dW = g·colsᵀ ; dx = col2im(Wᵀ·g) ; db = row sums of g
                if let Some(gw) = store.acc(&wp) {
                    let ct = kernel::transpose(&cols, k, l);
                    kernel::mm_acc(g, &ct, cout, l, k, gw);
                }
                if let Some(gx) = store.acc(&xp) {
                    let wd = wp.data();
                    let wt = kernel::transpose(&wd, cout, k);
                    let mut dcols = vec![E::zero(); k * l];
                    kernel::mm_acc(&wt, g, k, cout, l, &mut dcols);
                    col2im(&dcols, cin, h, w, kh, kw, stride, pad, hout, wout, gx);
                }
                if let Some(b) = &bp {
                    if let Some(gb) = store.acc(b) {
                        for co in 0..cout {
                            for t in 0..l {
                                gb[co] = gb[co] + g[co * l + t];
                            }
                        }
                    }
                }
            }),
        ))
    }

    /// Transposed convolution: x=[Cin,H,W] * weight=[Cin,Cout,kh,kw]
    /// (+ bias=[Cout]); output is [(H-1)·stride - 2·pad + kh] square logic
    /// per side. Exact adjoint of `conv2d` with the same geometry.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<E>> {
        let xs = self.shape();
        let ws = weight.shape();
        let shape_err = || MmcError::Shape {
            op: "conv_transpose2d",
            lhs: xs.clone(),
            rhs: ws.clone(),
        };
        if xs.len() != 3 || ws.len() != 4 || xs[0] != ws[0] || stride == 0 {
            return Err(shape_err());
        }
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
        let hout = match ((h - 1) * stride + kh).checked_sub(2 * pad) {
            Some(v) if v > 0 => v,
            _ => return Err(shape_err()),
        };
        let wout = match ((w - 1) * stride + kw).checked_sub(2 * pad) {
            Some(v) if v > 0 => v,
            _ => return Err(shape_err()),
        };
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(MmcError::Shape {
                    op: "conv_transpose2d",
                    lhs: ws,
                    rhs: b.shape(),
                });
            }
        }
        let k = cout * kh * kw;
        let l = h * w;
        // cols = Wᵀ[k,Cin] · x[Cin,L], scattered into the larger image.
        let mut out = vec![E::zero(); cout * hout * wout];
        {
            let wd = weight.data();
            let xd = self.data();
            let wt = kernel::transpose(&wd, cin, k);
            let mut cols = vec![E::zero(); k * l];
            kernel::mm_acc(&wt, &xd, k, cin, l, &mut cols);
            col2im(&cols, cout, hout, wout, kh, kw, stride, pad, h, w, &mut out);
        }
        if let Some(b) = bias {
            let bd = b.data();
            let hw = hout * wout;
            for co in 0..cout {
                for t in 0..hw {
                    out[co * hw + t] = out[co * hw + t] + bd[co];
                }
            }
        }
        let xp = self.clone();
        let wp = weight.clone();
        let bp = bias.cloned();
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(make_node(
            vec![cout, hout, wout],
            out,
            parents,
            Box::new(move |g, store| {
                // Adjoint of the forward scatter: dcols = im2col(g).
                let dcols = im2col(g, cout, hout, wout, kh, kw, stride, pad, h, w);
                if let Some(gx) = store.acc(&xp) {
                    let wd = wp.data();
                    kernel::mm_acc(&wd, &dcols, cin, k, l, gx);
                }
                if let Some(gw) = store.acc(&wp) {
                    let xd = xp.data();
                    let dt = kernel::transpose(&dcols, k, l);
                    kernel::mm_acc(&xd, &dt, cin, l, k, gw);
                }
                if let Some(b) = &bp {
                    if let Some(gb) = store.acc(b) {
                        let hw = hout * wout;
                        for co in 0..cout {
                            for t in 0..hw {
                                gb[co] = gb[co] + g[co * hw + t];
                            }
                        }
                    }
                }
            }),
        ))
    }
}
