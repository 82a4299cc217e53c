//! Finite-difference verification of the backward pass.
//!
//! Runs entirely at f64 — storage elsewhere is f32, and checking there would
//! need tolerances loose enough to hide real sign and scale bugs. Graph code
//! is generic over the element type precisely so the same op implementations
//! are the ones being verified here.

use super::{Elem, Tensor};
use crate::error::{MmcError, Result};

fn finite_or_err(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MmcError::Numeric(format!("{what} evaluated non-finite ({v})")))
    }
}

/// Max over all coordinates of all `params` of
/// |analytic − numeric| / max(1e-8, |analytic| + |numeric|),
/// where numeric is the central difference of `f` re-evaluated per probe.
pub fn grad_check_params<F>(params: &[Tensor<f64>], f: F, step: f64) -> Result<f64>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    if !(1e-4..=1e-2).contains(&step) {
        return Err(MmcError::Parameter(format!(
            "grad_check step {step} outside [1e-4, 1e-2]"
        )));
    }
    let loss = f()?;
    finite_or_err(loss.item().to_f64(), "loss")?;
    for p in params {
        p.zero_grad();
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad_vec().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut max_rel = 0.0f64;
    for (p, grads) in params.iter().zip(&analytic) {
        let mut vals = p.to_vec();
        for i in 0..vals.len() {
            let orig = vals[i];
            vals[i] = orig + step;
            p.set_data(&vals)?;
            let lp = finite_or_err(f()?.item(), "loss at +step")?;
            vals[i] = orig - step;
            p.set_data(&vals)?;
            let lm = finite_or_err(f()?.item(), "loss at -step")?;
            vals[i] = orig;
            p.set_data(&vals)?;
            let numeric = (lp - lm) / (2.0 * step);
            let a = grads[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

/// Single-point form: checks d(f)/d(point) at `point`.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let x = point.detach().with_grad();
    grad_check_params(std::slice::from_ref(&x), || f(&x), step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn randt(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn constant_gradient_is_exact() {
        let x = Tensor::from_vec(&[5], vec![0.3, -2.0, 1.1, 4.0, -0.7]).unwrap();
        let err = grad_check(|x| Ok(x.sum_all()), &x, 1e-3).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rejects_out_of_range_step() {
        let x = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        assert!(matches!(
            grad_check(|x| Ok(x.sum_all()), &x, 1e-1),
            Err(MmcError::Parameter(_))
        ));
    }

    #[test]
    fn non_finite_function_is_numeric_error() {
        let x = Tensor::from_vec(&[1], vec![-1.0]).unwrap();
        assert!(matches!(
            grad_check(|x| Ok(x.log().sum_all()), &x, 1e-3),
            Err(MmcError::Numeric(_))
        ));
    }

    /// Every operation, 100 seeded random points each, error < 1e-3.
    #[test]
    fn every_op_at_100_random_points() {
        type OpFn = Box<dyn Fn(&Tensor<f64>) -> Result<Tensor<f64>>>;
        let mut rng = crate::rng::stream(2024, "op-sweep-consts", &[]);
        // Fixed constants the closures combine the probe point with; a random
        // projection turns non-scalar outputs into a scalar with informative
        // (non-uniform) output gradients.
        let proj = |shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng| {
            let n: usize = shape.iter().product();
            Tensor::from_vec(
                shape,
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
            )
            .unwrap()
        };

        let c23 = randt(&[2, 3], -1.0, 1.0, &mut rng);
        let c3 = randt(&[3], -1.0, 1.0, &mut rng);
        let m32 = randt(&[3, 2], -1.0, 1.0, &mut rng);
        let m23 = randt(&[2, 3], -1.0, 1.0, &mut rng);
        let b232 = randt(&[2, 3, 2], -1.0, 1.0, &mut rng);
        let x244 = randt(&[2, 4, 4], -1.0, 1.0, &mut rng);
        let w2233 = randt(&[2, 2, 3, 3], -0.5, 0.5, &mut rng);
        let bias2 = randt(&[2], -0.5, 0.5, &mut rng);
        let x233 = randt(&[2, 3, 3], -1.0, 1.0, &mut rng);
        let gamma = randt(&[3], 0.5, 1.5, &mut rng);
        let beta = randt(&[3], -0.5, 0.5, &mut rng);
        let c12 = randt(&[1, 2], -1.0, 1.0, &mut rng);

        let r6 = proj(&[2, 3], &mut rng);
        let r9 = proj(&[3, 3], &mut rng);
        let r22 = proj(&[2, 2], &mut rng);
        let r222 = proj(&[2, 2, 2], &mut rng);
        let r244 = proj(&[2, 4, 4], &mut rng);
        let r255 = proj(&[2, 5, 5], &mut rng);
        let r32 = proj(&[3, 2], &mut rng);
        let r234 = proj(&[2, 3, 4], &mut rng);

        let dot = |y: Tensor<f64>, r: &Tensor<f64>| -> Result<Tensor<f64>> {
            Ok(y.mul(r)?.sum_all())
        };

        let cases: Vec<(&str, Vec<usize>, f64, f64, OpFn)> = vec![
            ("add", vec![2, 3], -2.0, 2.0, {
                let (c, r) = (c23.clone(), r6.clone());
                Box::new(move |x| dot(x.add(&c)?, &r))
            }),
            ("add_suffix_bcast", vec![2, 3], -2.0, 2.0, {
                let (c, r) = (c3.clone(), r6.clone());
                Box::new(move |x| dot(x.add(&c)?, &r))
            }),
            ("add_as_suffix", vec![3], -2.0, 2.0, {
                let (c, r) = (c23.clone(), r6.clone());
                Box::new(move |x| dot(x.add(&c)?, &r))
            }),
            ("sub", vec![2, 3], -2.0, 2.0, {
                let (c, r) = (c23.clone(), r6.clone());
                Box::new(move |x| dot(x.sub(&c)?, &r))
            }),
            ("mul", vec![2, 3], -2.0, 2.0, {
                let (c, r) = (c23.clone(), r6.clone());
                Box::new(move |x| dot(x.mul(&c)?, &r))
            }),
            ("mul_suffix_bcast", vec![3], -2.0, 2.0, {
                let (c, r) = (c23.clone(), r6.clone());
                Box::new(move |x| dot(c.mul(x)?, &r))
            }),
            ("add_scalar", vec![2, 3], -2.0, 2.0, {
                let r = r6.clone();
                Box::new(move |x| dot(x.add_scalar(0.7), &r))
            }),
            ("mul_scalar", vec![2, 3], -2.0, 2.0, {
                let r = r6.clone();
                Box::new(move |x| dot(x.mul_scalar(-1.3), &r))
            }),
            ("matmul_lhs", vec![3, 3], -2.0, 2.0, {
                let (c, r) = (m32.clone(), r32.clone());
                Box::new(move |x| dot(x.matmul(&c)?, &r))
            }),
            ("matmul_rhs", vec![3, 2], -2.0, 2.0, {
                let (c, r) = (m23.clone(), r22.clone());
                Box::new(move |x| dot(c.matmul(x)?, &r))
            }),
            ("matmul_batched", vec![2, 2, 3], -2.0, 2.0, {
                let (c, r) = (b232.clone(), r222.clone());
                Box::new(move |x| dot(x.matmul(&c)?, &r))
            }),
            ("conv2d_input", vec![2, 4, 4], -1.0, 1.0, {
                let (w, b, r) = (w2233.clone(), bias2.clone(), r244.clone());
                Box::new(move |x| dot(x.conv2d(&w, Some(&b), 1, 1)?, &r))
            }),
            ("conv2d_weight", vec![2, 2, 3, 3], -0.5, 0.5, {
                let (xc, b, r) = (x244.clone(), bias2.clone(), r244.clone());
                Box::new(move |w| dot(xc.conv2d(w, Some(&b), 1, 1)?, &r))
            }),
            ("conv2d_bias", vec![2], -0.5, 0.5, {
                let (xc, w, r) = (x244.clone(), w2233.clone(), r244.clone());
                Box::new(move |b| dot(xc.conv2d(&w, Some(b), 1, 1)?, &r))
            }),
            ("conv2d_strided", vec![2, 4, 4], -1.0, 1.0, {
                let (w, r) = (w2233.clone(), r222.clone());
                Box::new(move |x| dot(x.conv2d(&w, None, 2, 1)?, &r))
            }),
            ("conv_transpose_input", vec![2, 3, 3], -1.0, 1.0, {
                let (w, b, r) = (w2233.clone(), bias2.clone(), r255.clone());
                Box::new(move |x| dot(x.conv_transpose2d(&w, Some(&b), 2, 1)?, &r))
            }),
            ("conv_transpose_weight", vec![2, 2, 3, 3], -0.5, 0.5, {
                let (xc, r) = (x233.clone(), r255.clone());
                Box::new(move |w| dot(xc.conv_transpose2d(w, None, 2, 1)?, &r))
            }),
            ("gelu", vec![2, 3], -3.0, 3.0, {
                let r = r6.clone();
                Box::new(move |x| dot(x.gelu(), &r))
            }),
            ("sigmoid", vec![2, 3], -4.0, 4.0, {
                let r = r6.clone();
                Box::new(move |x| dot(x.sigmoid(), &r))
            }),
            ("log", vec![2, 3], 0.2, 3.0, {
                let r = r6.clone();
                Box::new(move |x| dot(x.log(), &r))
            }),
            ("exp", vec![2, 3], -2.0, 2.0, {
                let r = r6.clone();
                Box::new(move |x| dot(x.exp(), &r))
            }),
            ("square", vec![2, 3], -2.0, 2.0, {
                let r = r6.clone();
                Box::new(move |x| dot(x.square(), &r))
            }),
            ("sum_all", vec![2, 3], -2.0, 2.0, Box::new(|x| Ok(x.sum_all()))),
            ("mean_all", vec![2, 3], -2.0, 2.0, Box::new(|x| Ok(x.mean_all()))),
            ("reshape", vec![2, 3], -2.0, 2.0, {
                let r = r6.clone();
                Box::new(move |x| dot(x.reshape(&[3, 2])?.reshape(&[2, 3])?, &r))
            }),
            ("permute", vec![2, 3, 4], -2.0, 2.0, {
                let r = r234.clone();
                Box::new(move |x| dot(x.permute(&[2, 0, 1])?.permute(&[1, 2, 0])?, &r))
            }),
            ("concat", vec![2, 2], -2.0, 2.0, {
                let (c, r) = (c12.clone(), r9.clone());
                Box::new(move |x| {
                    let y = Tensor::concat(&[x, &c], 0)?;
                    dot(y.reshape(&[3, 2])?.matmul(&m23_const())?, &r)
                })
            }),
            ("narrow", vec![2, 4], -2.0, 2.0, {
                let r = r22.clone();
                Box::new(move |x| dot(x.narrow(1, 1, 2)?, &r))
            }),
            ("select_rows", vec![3, 2], -2.0, 2.0, {
                let r = r32.clone();
                Box::new(move |x| dot(x.select_rows(&[1, 1, 0])?, &r))
            }),
            ("gather_rows", vec![3, 2], -2.0, 2.0, {
                Box::new(move |x| {
                    let g = x.gather_rows(&[1, 0, 1])?;
                    Ok(g.square().sum_all())
                })
            }),
            ("softmax_temp", vec![2, 3], -3.0, 3.0, {
                let r = r6.clone();
                Box::new(move |x| dot(x.softmax_temp(2.0)?, &r))
            }),
            ("log_softmax_temp", vec![2, 3], -3.0, 3.0, {
                let r = r6.clone();
                Box::new(move |x| dot(x.log_softmax_temp(2.0)?, &r))
            }),
            ("layer_norm_input", vec![2, 3], -2.0, 2.0, {
                let (g, b, r) = (gamma.clone(), beta.clone(), r6.clone());
                Box::new(move |x| dot(x.layer_norm(&g, &b, 1e-5)?, &r))
            }),
            ("layer_norm_gamma", vec![3], 0.5, 1.5, {
                let (xc, b, r) = (c23.clone(), beta.clone(), r6.clone());
                Box::new(move |g| dot(xc.layer_norm(g, &b, 1e-5)?, &r))
            }),
            ("layer_norm_beta", vec![3], -0.5, 0.5, {
                let (xc, g, r) = (c23.clone(), gamma.clone(), r6.clone());
                Box::new(move |b| dot(xc.layer_norm(&g, b, 1e-5)?, &r))
            }),
        ];

        for (name, shape, lo, hi, f) in &cases {
            let mut prng = crate::rng::stream(77, "op-sweep-points", &[fxhash(name)]);
            for rep in 0..100 {
                let point = randt(shape, *lo, *hi, &mut prng);
                let err = grad_check(|x| f(x), &point, 1e-4)
                    .unwrap_or_else(|e| panic!("{name} rep {rep}: {e}"));
                assert!(err < 1e-3, "{name} rep {rep}: max rel err {err}");
            }
        }
    }

    fn m23_const() -> Tensor<f64> {
        Tensor::from_vec(&[2, 3], vec![0.3, -0.5, 0.9, 1.1, -0.2, 0.4]).unwrap()
    }

    fn fxhash(s: &str) -> u64 {
        s.bytes().fold(0xcbf29ce484222325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x100000001b3)
        })
    }
}
