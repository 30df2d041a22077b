use serde::{Deserialize, Serialize};

use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// Square-kernel convolution geometry. Padding is always `kernel / 2`, which
/// preserves spatial size at stride 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub bias: bool,
}

impl ConvLayerSpec {
    pub fn new(kernel: usize, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel,
            stride,
            in_channels,
            out_channels,
            bias: false,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// Output spatial size, `ceil(h / stride) x ceil(w / stride)`.
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn weight_len(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::contract(format!(
                "conv kernel must be odd, got {}",
                self.kernel
            )));
        }
        if self.stride == 0 {
            return Err(Error::contract("conv stride must be >= 1"));
        }
        Ok(())
    }
}

/// `k^2 * W_o * H_o * C_i * C_o` multiply-accumulates for one application.
pub fn count_macs(spec: &ConvLayerSpec, out_h: usize, out_w: usize) -> u64 {
    (spec.kernel * spec.kernel) as u64
        * out_w as u64
        * out_h as u64
        * spec.in_channels as u64
        * spec.out_channels as u64
}

/// Zero-padded cross-correlation. `weight` is laid out `(C_o, C_i, k, k)`.
pub fn conv2d(
    input: &Tensor,
    spec: &ConvLayerSpec,
    weight: &[f32],
    bias: Option<&[f32]>,
) -> Result<Tensor> {
    spec.validate()?;
    let in_shape = input.shape();
    if in_shape.c != spec.in_channels {
        return Err(Error::contract(format!(
            "conv2d expects {} input channels, got {}",
            spec.in_channels, in_shape.c
        )));
    }
    if weight.len() != spec.weight_len() {
        return Err(Error::contract(format!(
            "conv2d weight has {} entries, expected {:?}",
            weight.len(),
            spec.weight_shape()
        )));
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::contract(format!(
                "conv2d bias has {} entries, expected {}",
                b.len(),
                spec.out_channels
            )));
        }
    }

    let (h, w) = (in_shape.h, in_shape.w);
    let (oh, ow) = spec.output_hw(h, w);
    let k = spec.kernel;
    let s = spec.stride;
    let p = spec.padding();
    let mut out = Tensor::zeros(Shape::new(spec.out_channels, oh, ow));

    // Valid output column range for each kernel column.
    let col_ranges: Vec<(usize, usize)> = (0..k).map(|kx| valid_range(kx, p, s, w, ow)).collect();

    let in_data = input.data();
    let plane = h * w;
    for co in 0..spec.out_channels {
        let b = bias.map_or(0.0, |b| b[co]);
        let out_plane = out.channel_mut(co);
        out_plane.iter_mut().for_each(|v| *v = b);
        for oy in 0..oh {
            let row = &mut out_plane[oy * ow..(oy + 1) * ow];
            for ci in 0..spec.in_channels {
                let in_plane = &in_data[ci * plane..(ci + 1) * plane];
                let w_base = (co * spec.in_channels + ci) * k * k;
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let in_row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                    for (kx, &(lo, hi)) in col_ranges.iter().enumerate() {
                        let wv = weight[w_base + ky * k + kx];
                        if wv == 0.0 || lo >= hi {
                            continue;
                        }
                        let first = lo * s + kx - p;
                        if s == 1 {
                            let src = &in_row[first..first + (hi - lo)];
                            for (o, &i) in row[lo..hi].iter_mut().zip(src) {
                                *o += wv * i;
                            }
                        } else {
                            for (j, o) in row[lo..hi].iter_mut().enumerate() {
                                *o += wv * in_row[first + j * s];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Output columns `ox` with `0 <= ox*s + kx - p < w`, as a half-open range.
fn valid_range(kx: usize, p: usize, s: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
    let hi = if w + p > kx {
        ((w + p - kx).div_ceil(s)).min(ow)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// A convolution with its parameters bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub spec: ConvLayerSpec,
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl Conv2d {
    pub fn new(spec: ConvLayerSpec, weight: Vec<f32>, bias: Option<Vec<f32>>) -> Result<Self> {
        spec.validate()?;
        if weight.len() != spec.weight_len() {
            return Err(Error::contract(format!(
                "weight length {} does not match {:?}",
                weight.len(),
                spec.weight_shape()
            )));
        }
        if bias.is_some() != spec.bias {
            return Err(Error::contract("bias presence does not match layer spec"));
        }
        Ok(Self { spec, weight, bias })
    }

    pub fn zeros(spec: ConvLayerSpec) -> Self {
        Self {
            spec,
            weight: vec![0.0; spec.weight_len()],
            bias: spec.bias.then(|| vec![0.0; spec.out_channels]),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        conv2d(input, &self.spec, &self.weight, self.bias.as_deref())
    }

    pub fn macs(&self, input: Shape) -> u64 {
        let (oh, ow) = self.spec.output_hw(input.h, input.w);
        count_macs(&self.spec, oh, ow)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Six-deep loop nest with an instrumented multiply counter.
    fn naive_conv(
        input: &Tensor,
        spec: &ConvLayerSpec,
        weight: &[f32],
        bias: Option<&[f32]>,
    ) -> (Tensor, u64) {
        let s = input.shape();
        let (oh, ow) = spec.output_hw(s.h, s.w);
        let k = spec.kernel as isize;
        let p = spec.padding() as isize;
        let mut out = Tensor::zeros(Shape::new(spec.out_channels, oh, ow));
        let mut mults = 0u64;
        for co in 0..spec.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0f64, |b| b[co] as f64);
                    for ci in 0..spec.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                mults += 1;
                                let iy = (oy * spec.stride) as isize + ky - p;
                                let ix = (ox * spec.stride) as isize + kx - p;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                let wi = ((co * spec.in_channels + ci) * spec.kernel + ky as usize)
                                    * spec.kernel
                                    + kx as usize;
                                acc += weight[wi] as f64
                                    * input.get(ci, iy as usize, ix as usize) as f64;
                            }
                        }
                    }
                    out.set(co, oy, ox, acc as f32);
                }
            }
        }
        (out, mults)
    }

    fn lcg(seed: &mut u64) -> f32 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*seed >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
    }

    #[test]
    fn identity_1x1_passthrough() {
        let spec = ConvLayerSpec::new(1, 1, 3, 3);
        let mut weight = vec![0.0; 9];
        for c in 0..3 {
            weight[c * 3 + c] = 1.0;
        }
        let input =
            Tensor::from_vec(Shape::new(3, 2, 2), (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(conv2d(&input, &spec, &weight, None).unwrap(), input);
    }

    #[test]
    fn ones_kernel_on_one_hot_spreads_block() {
        let spec = ConvLayerSpec::new(3, 1, 1, 1);
        let weight = vec![1.0; 9];
        for (hy, hx) in [(2, 2), (0, 0), (4, 2)] {
            let mut input = Tensor::zeros(Shape::new(1, 5, 5));
            input.set(0, hy, hx, 1.0);
            let out = conv2d(&input, &spec, &weight, None).unwrap();
            let (expected, _) = naive_conv(&input, &spec, &weight, None);
            assert_eq!(out, expected);
            for y in 0..5usize {
                for x in 0..5usize {
                    let near = y.abs_diff(hy) <= 1 && x.abs_diff(hx) <= 1;
                    assert_eq!(out.get(0, y, x), if near { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn stride_two_halves_resolution() {
        let spec = ConvLayerSpec::new(3, 2, 1, 1);
        let input = Tensor::filled(Shape::new(1, 8, 8), 1.0);
        let out = conv2d(&input, &spec, &[1.0; 9], None).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 4, 4));
        let spec5 = ConvLayerSpec::new(5, 2, 1, 1);
        let out = conv2d(
            &Tensor::zeros(Shape::new(1, 7, 9)),
            &spec5,
            &[0.0; 25],
            None,
        )
        .unwrap();
        assert_eq!(out.shape(), Shape::new(1, 4, 5));
    }

    #[test]
    fn matches_naive_loop_nest_on_random_tensors() {
        let mut seed = 7u64;
        for case in 0..40 {
            let k = [1, 3, 5, 7][case % 4];
            let stride = 1 + case % 2;
            let spec = ConvLayerSpec::new(k, stride, 1 + case % 3, 1 + case % 4).with_bias(true);
            let shape = Shape::new(spec.in_channels, 3 + case % 6, 4 + case % 5);
            let input = Tensor::from_vec(shape, (0..shape.len()).map(|_| lcg(&mut seed)).collect())
                .unwrap();
            let weight: Vec<f32> = (0..spec.weight_len()).map(|_| lcg(&mut seed)).collect();
            let bias: Vec<f32> = (0..spec.out_channels).map(|_| lcg(&mut seed)).collect();
            let fast = conv2d(&input, &spec, &weight, Some(&bias)).unwrap();
            let (slow, mults) = naive_conv(&input, &spec, &weight, Some(&bias));
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{a} vs {b}");
            }
            let (oh, ow) = spec.output_hw(shape.h, shape.w);
            assert_eq!(count_macs(&spec, oh, ow), mults);
        }
    }

    #[test]
    fn mac_count_examples() {
        assert_eq!(count_macs(&ConvLayerSpec::new(3, 1, 2, 3), 4, 4), 864);
        assert_eq!(count_macs(&ConvLayerSpec::new(1, 1, 1, 1), 1, 1), 1);
        assert_eq!(
            count_macs(&ConvLayerSpec::new(3, 1, 2, 6), 4, 4),
            2 * count_macs(&ConvLayerSpec::new(3, 1, 2, 3), 4, 4)
        );
    }

    #[test]
    fn rejects_bad_shapes() {
        let spec = ConvLayerSpec::new(3, 1, 2, 1);
        let input = Tensor::zeros(Shape::new(1, 4, 4));
        assert!(conv2d(&input, &spec, &[0.0; 18], None).is_err());
        let input = Tensor::zeros(Shape::new(2, 4, 4));
        assert!(conv2d(&input, &spec, &[0.0; 9], None).is_err());
        assert!(conv2d(&input, &ConvLayerSpec::new(2, 1, 2, 1), &[0.0; 8], None).is_err());
    }
}
