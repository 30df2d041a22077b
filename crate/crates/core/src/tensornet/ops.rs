use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// Negative slope used after every ANN convolution.
pub const LEAKY_SLOPE: f32 = 0.1;
pub const DEFAULT_BN_EPS: f32 = 1e-5;

/// Inference-mode batch normalization parameters for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BatchNorm {
    /// gamma = 1, beta = 0, mean = 0, var = 1.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps: DEFAULT_BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        batch_norm_infer(
            input,
            &self.gamma,
            &self.beta,
            &self.mean,
            &self.var,
            self.eps,
        )
    }
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta`, per channel.
pub fn batch_norm_infer(
    input: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<Tensor> {
    let c = input.shape().c;
    for (name, len) in [
        ("gamma", gamma.len()),
        ("beta", beta.len()),
        ("mean", mean.len()),
        ("var", var.len()),
    ] {
        if len != c {
            return Err(Error::contract(format!(
                "batch norm {name} has {len} entries for {c} channels"
            )));
        }
    }
    if let Some(v) = var.iter().find(|&&v| v < 0.0 || v.is_nan()) {
        return Err(Error::contract(format!(
            "batch norm variance {v} is negative"
        )));
    }
    let mut out = input.clone();
    for ch in 0..c {
        let denom = (var[ch] + eps).sqrt();
        let (g, b, m) = (gamma[ch], beta[ch], mean[ch]);
        for v in out.channel_mut(ch) {
            *v = g * (*v - m) / denom + b;
        }
    }
    Ok(out)
}

pub fn leaky_relu(input: &Tensor, slope: f32) -> Tensor {
    input.map(|x| if x >= 0.0 { x } else { slope * x })
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(|x| 1.0 / (1.0 + (-x).exp()))
}

/// Non-overlapping 2x2 mean pooling.
pub fn avg_pool2(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::contract(format!(
            "avg_pool2 needs even spatial dims, got {s}"
        )));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(Shape::new(s.c, oh, ow));
    for c in 0..s.c {
        let src = input.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..oh {
            for x in 0..ow {
                let a = src[2 * y * s.w + 2 * x];
                let b = src[2 * y * s.w + 2 * x + 1];
                let d = src[(2 * y + 1) * s.w + 2 * x];
                let e = src[(2 * y + 1) * s.w + 2 * x + 1];
                dst[y * ow + x] = (a + b + d + e) * 0.25;
            }
        }
    }
    Ok(out)
}

/// Source taps and weights for half-pixel bilinear resampling along one axis.
fn bilinear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f32 / out_len as f32;
    (0..out_len)
        .map(|o| {
            let src = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = src - i0 as f32;
            (i0, i1, frac)
        })
        .collect()
}

/// Scale-2 bilinear upsampling with half-pixel centers (align_corners = false).
pub fn upsample_bilinear2(input: &Tensor) -> Tensor {
    let s = input.shape();
    let (oh, ow) = (s.h * 2, s.w * 2);
    let mut out = Tensor::zeros(Shape::new(s.c, oh, ow));
    if s.is_empty() {
        return out;
    }
    let ys = bilinear_taps(oh, s.h);
    let xs = bilinear_taps(ow, s.w);
    for c in 0..s.c {
        let src = input.channel(c);
        let dst = out.channel_mut(c);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = src[y0 * s.w + x0] * (1.0 - fx) + src[y0 * s.w + x1] * fx;
                let bot = src[y1 * s.w + x0] * (1.0 - fx) + src[y1 * s.w + x1] * fx;
                dst[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Scale-2 nearest-neighbour upsampling. Binary inputs stay binary.
pub fn upsample_nearest2(input: &Tensor) -> Tensor {
    let s = input.shape();
    let (oh, ow) = (s.h * 2, s.w * 2);
    let mut out = Tensor::zeros(Shape::new(s.c, oh, ow));
    for c in 0..s.c {
        let src = input.channel(c);
        let dst = out.channel_mut(c);
        for oy in 0..oh {
            let row = &src[(oy / 2) * s.w..(oy / 2 + 1) * s.w];
            for (ox, d) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *d = row[ox / 2];
            }
        }
    }
    out
}

/// Channel concatenation, `a` first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.c == 0 {
        return Ok(b.clone());
    }
    if sb.c == 0 {
        return Ok(a.clone());
    }
    if sa.h != sb.h || sa.w != sb.w {
        return Err(Error::contract(format!(
            "concat spatial mismatch: {sa} vs {sb}"
        )));
    }
    let mut data = Vec::with_capacity(sa.len() + sb.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(Shape::new(sa.c + sb.c, sa.h, sa.w), data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    b.expect_shape(a.shape(), "elementwise add")?;
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    Ok(out)
}
