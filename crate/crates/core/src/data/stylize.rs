//! Channel-statistics style transfer: re-center each content channel to
//! the style image's mean and spread.

use crate::error::{MmcError, Result};
use crate::tensor::Tensor;

fn mean_std(data: &[f32]) -> (f32, f32) {
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean as f32, var.sqrt() as f32)
}

/// Per content channel c: `out_c = sigma_style * (c - mu_c) / max(sigma_c,
/// 1e-5) + mu_style`, clipped to [0,1]. When channel counts differ the
/// style statistics are global over the whole style image.
pub fn adain_stylize(content: &Tensor<f32>, style: &Tensor<f32>) -> Result<Tensor<f32>> {
    let cs = content.shape();
    let ss = style.shape();
    if cs.len() != 3 || ss.len() != 3 {
        return Err(MmcError::Contract(format!(
            "stylization expects rank-3 images, got {cs:?} and {ss:?}"
        )));
    }
    let (c, hw) = (cs[0], cs[1] * cs[2]);
    let style_data = style.data();
    let per_channel = ss[0] == c;
    let global = mean_std(&style_data);
    let content_data = content.data();
    let mut out = vec![0.0f32; content_data.len()];
    for ch in 0..c {
        let slice = &content_data[ch * hw..(ch + 1) * hw];
        let (mu_c, sigma_c) = mean_std(slice);
        let (mu_s, sigma_s) = if per_channel {
            let shw = ss[1] * ss[2];
            mean_std(&style_data[ch * shw..(ch + 1) * shw])
        } else {
            global
        };
        let scale = sigma_s / sigma_c.max(1e-5);
        for (o, &v) in out[ch * hw..(ch + 1) * hw].iter_mut().zip(slice) {
            *o = (scale * (v - mu_c) + mu_s).clamp(0.0, 1.0);
        }
    }
    Tensor::from_vec(&cs, out)
}
