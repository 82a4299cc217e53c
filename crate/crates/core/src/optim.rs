//! AdamW with decoupled weight decay. Moment buffers and update arithmetic
//! run in 64-bit regardless of the parameter element type.

use crate::error::{MmcError, Result};
use crate::nn::NamedParams;
use crate::tensor::Elem;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Per-parameter first/second moments plus the shared step counter.
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    shapes: Vec<(String, usize)>,
}

impl AdamW {
    pub fn new<E: Elem>(params: &NamedParams<E>, lr: f64, weight_decay: f64) -> Result<AdamW> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(MmcError::Parameter(format!("lr must be > 0, got {lr}")));
        }
        if !(weight_decay >= 0.0) || !weight_decay.is_finite() {
            return Err(MmcError::Parameter(format!(
                "weight_decay must be >= 0, got {weight_decay}"
            )));
        }
        Ok(AdamW {
            lr,
            weight_decay,
            step: 0,
            m: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
            shapes: params
                .iter()
                .map(|(n, p)| (n.clone(), p.numel()))
                .collect(),
        })
    }

    /// One update: θ ← θ − lr·(m̂/(√v̂+ε) + weight_decay·θ). A missing
    /// gradient counts as zero; a non-finite one aborts before any
    /// parameter is touched.
    pub fn step<E: Elem>(&mut self, params: &NamedParams<E>) -> Result<()> {
        if params.len() != self.shapes.len() {
            return Err(MmcError::Contract(format!(
                "optimizer built for {} parameters, stepped with {}",
                self.shapes.len(),
                params.len()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(params.len());
        for (i, (name, p)) in params.iter().enumerate() {
            if p.numel() != self.shapes[i].1 || *name != self.shapes[i].0 {
                return Err(MmcError::Contract(format!(
                    "parameter {i} changed identity: {name} vs {}",
                    self.shapes[i].0
                )));
            }
            let g = p
                .grad_vec()
                .map(|g| g.iter().map(|&v| Elem::to_f64(v)).collect::<Vec<f64>>());
            if let Some(g) = &g {
                if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                    return Err(MmcError::Numeric(format!(
                        "non-finite gradient {bad} in {name} at step {}",
                        self.step + 1
                    )));
                }
            }
            grads.push(g);
        }
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for (i, (_, p)) in params.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = grads[i].as_deref();
            let (lr, wd) = (self.lr, self.weight_decay);
            p.update_data(|j, x, _| {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let xf = Elem::to_f64(*x);
                *x = E::from_f64(xf - lr * (m_hat / (v_hat.sqrt() + EPS) + wd * xf));
            });
        }
        Ok(())
    }
}
