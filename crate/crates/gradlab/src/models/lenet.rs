//! A small LeNet-style convolutional network: two valid 5x5 convolutions
//! (kernel size configurable so tiny test geometries fit), each followed
//! by a sigmoid and a 2x2 average pool, then a dense classifier. Average
//! pooling uses ceil-mode windows that shrink at the borders, so every
//! spatial size down to 1x1 is well defined.

use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LenetGeometry {
    pub input_h: usize,
    pub input_w: usize,
    pub kernel: usize,
    pub c1: usize,
    pub c2: usize,
    pub conv1_h: usize,
    pub conv1_w: usize,
    pub pool1_h: usize,
    pub pool1_w: usize,
    pub conv2_h: usize,
    pub conv2_w: usize,
    pub pool2_h: usize,
    pub pool2_w: usize,
    pub flat: usize,
}

impl LenetGeometry {
    fn derive(input_h: usize, input_w: usize, kernel: usize, channels: usize) -> Result<LenetGeometry> {
        if kernel == 0 || channels == 0 {
            return Err(Error::InvalidArgument(
                "kernel size and channel count must be positive".into(),
            ));
        }
        let conv = |x: usize| -> Result<usize> {
            if x < kernel {
                Err(Error::InvalidArgument(format!(
                    "spatial size {x} is smaller than kernel {kernel}"
                )))
            } else {
                Ok(x - kernel + 1)
            }
        };
        let pool = |x: usize| x.div_ceil(2);
        let (conv1_h, conv1_w) = (conv(input_h)?, conv(input_w)?);
        let (pool1_h, pool1_w) = (pool(conv1_h), pool(conv1_w));
        let (conv2_h, conv2_w) = (conv(pool1_h)?, conv(pool1_w)?);
        let (pool2_h, pool2_w) = (pool(conv2_h), pool(conv2_w));
        let c2 = 2 * channels;
        Ok(LenetGeometry {
            input_h,
            input_w,
            kernel,
            c1: channels,
            c2,
            conv1_h,
            conv1_w,
            pool1_h,
            pool1_w,
            conv2_h,
            conv2_w,
            pool2_h,
            pool2_w,
            flat: c2 * pool2_h * pool2_w,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeNetModel {
    /// `[c1, 1, k, k]` first-stage kernels.
    pub conv1_w: Tensor,
    /// `[c1]`
    pub conv1_b: Tensor,
    /// `[2*c1, c1, k, k]` second-stage kernels.
    pub conv2_w: Tensor,
    /// `[2*c1]`
    pub conv2_b: Tensor,
    /// `[flat, C]` classifier weights.
    pub fc_w: Tensor,
    /// `[C]`
    pub fc_b: Tensor,
    pub(crate) geom: LenetGeometry,
    num_classes: usize,
}

impl LeNetModel {
    /// Fresh network with uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// parameter init per layer.
    pub fn init(
        input_h: usize,
        input_w: usize,
        kernel: usize,
        channels: usize,
        num_classes: usize,
        rng: &mut SeededRng,
    ) -> Result<LeNetModel> {
        let geom = LenetGeometry::derive(input_h, input_w, kernel, channels)?;
        if num_classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        let k2 = kernel * kernel;
        let bound1 = 1.0 / (k2 as f64).sqrt();
        let bound2 = 1.0 / ((geom.c1 * k2) as f64).sqrt();
        let bound_fc = 1.0 / (geom.flat as f64).sqrt();
        Ok(LeNetModel {
            conv1_w: rng.uniform(&[geom.c1, 1, kernel, kernel], -bound1, bound1)?,
            conv1_b: rng.uniform(&[geom.c1], -bound1, bound1)?,
            conv2_w: rng.uniform(&[geom.c2, geom.c1, kernel, kernel], -bound2, bound2)?,
            conv2_b: rng.uniform(&[geom.c2], -bound2, bound2)?,
            fc_w: rng.uniform(&[geom.flat, num_classes], -bound_fc, bound_fc)?,
            fc_b: rng.uniform(&[num_classes], -bound_fc, bound_fc)?,
            geom,
            num_classes,
        })
    }

    pub(crate) fn from_parts(
        tensors: Vec<Tensor>,
        input_h: usize,
        input_w: usize,
        kernel: usize,
        channels: usize,
        num_classes: usize,
    ) -> Result<LeNetModel> {
        let geom = LenetGeometry::derive(input_h, input_w, kernel, channels)?;
        let mut it = tensors.into_iter();
        let mut next = |expect: Vec<usize>| -> Result<Tensor> {
            let t = it
                .next()
                .ok_or_else(|| Error::InvalidArgument("missing parameter tensor".into()))?;
            if t.shape() != expect.as_slice() {
                return Err(Error::ShapeMismatch {
                    expected: expect,
                    got: t.shape().to_vec(),
                });
            }
            Ok(t)
        };
        let k = kernel;
        Ok(LeNetModel {
            conv1_w: next(vec![geom.c1, 1, k, k])?,
            conv1_b: next(vec![geom.c1])?,
            conv2_w: next(vec![geom.c2, geom.c1, k, k])?,
            conv2_b: next(vec![geom.c2])?,
            fc_w: next(vec![geom.flat, num_classes])?,
            fc_b: next(vec![num_classes])?,
            geom,
            num_classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_h(&self) -> usize {
        self.geom.input_h
    }

    pub fn input_w(&self) -> usize {
        self.geom.input_w
    }

    pub fn kernel(&self) -> usize {
        self.geom.kernel
    }

    pub fn channels(&self) -> usize {
        self.geom.c1
    }

    /// Logits for a `[B, H, W]` batch.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        let b = self.check_inputs(inputs)?;
        let mut out = Vec::with_capacity(b * self.num_classes);
        for m in 0..b {
            let cache = self.forward_sample(sample_slice(inputs, m));
            out.extend_from_slice(&cache.logits);
        }
        Tensor::from_vec(&[b, self.num_classes], out)
    }

    pub(crate) fn check_inputs(&self, inputs: &Tensor) -> Result<usize> {
        if inputs.ndim() != 3
            || inputs.shape()[1] != self.geom.input_h
            || inputs.shape()[2] != self.geom.input_w
        {
            return Err(Error::ShapeMismatch {
                expected: vec![0, self.geom.input_h, self.geom.input_w],
                got: inputs.shape().to_vec(),
            });
        }
        Ok(inputs.shape()[0])
    }

    pub(crate) fn forward_sample(&self, x: &[f64]) -> ForwardCache {
        let g = &self.geom;
        let mut z1 = vec![0.0; g.c1 * g.conv1_h * g.conv1_w];
        conv_forward(
            x,
            1,
            g.input_h,
            g.input_w,
            self.conv1_w.data(),
            self.conv1_b.data(),
            g.c1,
            g.kernel,
            &mut z1,
        );
        let a1: Vec<f64> = z1.iter().map(|&v| sigmoid(v)).collect();
        let p1 = pool_forward(&a1, g.c1, g.conv1_h, g.conv1_w);

        let mut z2 = vec![0.0; g.c2 * g.conv2_h * g.conv2_w];
        conv_forward(
            &p1,
            g.c1,
            g.pool1_h,
            g.pool1_w,
            self.conv2_w.data(),
            self.conv2_b.data(),
            g.c2,
            g.kernel,
            &mut z2,
        );
        let a2: Vec<f64> = z2.iter().map(|&v| sigmoid(v)).collect();
        let p2 = pool_forward(&a2, g.c2, g.conv2_h, g.conv2_w);

        let mut logits = self.fc_b.data().to_vec();
        let w = self.fc_w.data();
        for i in 0..g.flat {
            let f = p2[i];
            if f != 0.0 {
                let row = &w[i * self.num_classes..(i + 1) * self.num_classes];
                for (o, &wij) in logits.iter_mut().zip(row.iter()) {
                    *o += f * wij;
                }
            }
        }
        ForwardCache {
            x: x.to_vec(),
            a1,
            p1,
            a2,
            p2,
            logits,
        }
    }

    /// Parameter gradients for one sample given the loss residual at the
    /// logits, in declaration order.
    pub(crate) fn backward_sample(&self, cache: &ForwardCache, residual: &[f64]) -> Vec<Tensor> {
        let g = &self.geom;
        let c = self.num_classes;

        let mut d_fcw = vec![0.0; g.flat * c];
        let mut d_flat = vec![0.0; g.flat];
        let w = self.fc_w.data();
        for i in 0..g.flat {
            let f = cache.p2[i];
            let wrow = &w[i * c..(i + 1) * c];
            let grow = &mut d_fcw[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for j in 0..c {
                grow[j] = f * residual[j];
                acc += wrow[j] * residual[j];
            }
            d_flat[i] = acc;
        }

        let d_a2 = pool_backward(&d_flat, g.c2, g.conv2_h, g.conv2_w);
        let d_z2: Vec<f64> = d_a2
            .iter()
            .zip(cache.a2.iter())
            .map(|(&d, &a)| d * a * (1.0 - a))
            .collect();

        let mut d_k2 = vec![0.0; g.c2 * g.c1 * g.kernel * g.kernel];
        let mut d_b2 = vec![0.0; g.c2];
        let mut d_p1 = vec![0.0; g.c1 * g.pool1_h * g.pool1_w];
        conv_backward(
            &cache.p1,
            g.c1,
            g.pool1_h,
            g.pool1_w,
            self.conv2_w.data(),
            g.c2,
            g.kernel,
            &d_z2,
            g.conv2_h,
            g.conv2_w,
            &mut d_k2,
            &mut d_b2,
            Some(&mut d_p1),
        );

        let d_a1 = pool_backward(&d_p1, g.c1, g.conv1_h, g.conv1_w);
        let d_z1: Vec<f64> = d_a1
            .iter()
            .zip(cache.a1.iter())
            .map(|(&d, &a)| d * a * (1.0 - a))
            .collect();

        let mut d_k1 = vec![0.0; g.c1 * g.kernel * g.kernel];
        let mut d_b1 = vec![0.0; g.c1];
        conv_backward(
            &cache.x,
            1,
            g.input_h,
            g.input_w,
            self.conv1_w.data(),
            g.c1,
            g.kernel,
            &d_z1,
            g.conv1_h,
            g.conv1_w,
            &mut d_k1,
            &mut d_b1,
            None,
        );

        vec![
            Tensor::from_vec(&[g.c1, 1, g.kernel, g.kernel], d_k1).expect("finite grads"),
            Tensor::from_vec(&[g.c1], d_b1).expect("finite grads"),
            Tensor::from_vec(&[g.c2, g.c1, g.kernel, g.kernel], d_k2).expect("finite grads"),
            Tensor::from_vec(&[g.c2], d_b2).expect("finite grads"),
            Tensor::from_vec(&[g.flat, c], d_fcw).expect("finite grads"),
            Tensor::from_vec(&[c], residual.to_vec()).expect("finite grads"),
        ]
    }
}

pub(crate) struct ForwardCache {
    pub x: Vec<f64>,
    pub a1: Vec<f64>,
    pub p1: Vec<f64>,
    pub a2: Vec<f64>,
    pub p2: Vec<f64>,
    pub logits: Vec<f64>,
}

pub(crate) fn sample_slice(inputs: &Tensor, m: usize) -> &[f64] {
    let inner = inputs.shape()[1] * inputs.shape()[2];
    &inputs.data()[m * inner..(m + 1) * inner]
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Valid cross-correlation: `out[o][i][j] = b[o] + sum K[o][ic] . in[ic]`.
#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    kernels: &[f64],
    bias: &[f64],
    out_ch: usize,
    k: usize,
    out: &mut [f64],
) {
    let out_h = in_h - k + 1;
    let out_w = in_w - k + 1;
    for o in 0..out_ch {
        let out_plane = &mut out[o * out_h * out_w..(o + 1) * out_h * out_w];
        out_plane.fill(bias[o]);
        for ic in 0..in_ch {
            let in_plane = &input[ic * in_h * in_w..(ic + 1) * in_h * in_w];
            let kern = &kernels[(o * in_ch + ic) * k * k..(o * in_ch + ic + 1) * k * k];
            for i in 0..out_h {
                for j in 0..out_w {
                    let mut acc = 0.0;
                    for u in 0..k {
                        let in_row = &in_plane[(i + u) * in_w + j..(i + u) * in_w + j + k];
                        let k_row = &kern[u * k..(u + 1) * k];
                        for v in 0..k {
                            acc += k_row[v] * in_row[v];
                        }
                    }
                    out_plane[i * out_w + j] += acc;
                }
            }
        }
    }
}

/// Gradients of a valid cross-correlation with respect to kernels, bias
/// and (optionally) the input.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    kernels: &[f64],
    out_ch: usize,
    k: usize,
    d_out: &[f64],
    out_h: usize,
    out_w: usize,
    d_kernels: &mut [f64],
    d_bias: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    for o in 0..out_ch {
        let d_plane = &d_out[o * out_h * out_w..(o + 1) * out_h * out_w];
        d_bias[o] = d_plane.iter().sum();
        for ic in 0..in_ch {
            let in_plane = &input[ic * in_h * in_w..(ic + 1) * in_h * in_w];
            let kern = &kernels[(o * in_ch + ic) * k * k..(o * in_ch + ic + 1) * k * k];
            let d_kern = &mut d_kernels[(o * in_ch + ic) * k * k..(o * in_ch + ic + 1) * k * k];
            for i in 0..out_h {
                for j in 0..out_w {
                    let d = d_plane[i * out_w + j];
                    if d == 0.0 {
                        continue;
                    }
                    for u in 0..k {
                        for v in 0..k {
                            d_kern[u * k + v] += d * in_plane[(i + u) * in_w + (j + v)];
                        }
                    }
                    if let Some(d_in) = d_input.as_deref_mut() {
                        let d_in_plane = &mut d_in[ic * in_h * in_w..(ic + 1) * in_h * in_w];
                        for u in 0..k {
                            for v in 0..k {
                                d_in_plane[(i + u) * in_w + (j + v)] += d * kern[u * k + v];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 average pool with stride 2; border windows shrink instead of
/// requiring even sizes.
fn pool_forward(input: &[f64], ch: usize, in_h: usize, in_w: usize) -> Vec<f64> {
    let out_h = in_h.div_ceil(2);
    let out_w = in_w.div_ceil(2);
    let mut out = vec![0.0; ch * out_h * out_w];
    for c in 0..ch {
        let in_plane = &input[c * in_h * in_w..(c + 1) * in_h * in_w];
        let out_plane = &mut out[c * out_h * out_w..(c + 1) * out_h * out_w];
        for i in 0..out_h {
            for j in 0..out_w {
                let mut sum = 0.0;
                let mut count = 0.0;
                for di in 0..2 {
                    for dj in 0..2 {
                        let (r, s) = (2 * i + di, 2 * j + dj);
                        if r < in_h && s < in_w {
                            sum += in_plane[r * in_w + s];
                            count += 1.0;
                        }
                    }
                }
                out_plane[i * out_w + j] = sum / count;
            }
        }
    }
    out
}

fn pool_backward(d_out: &[f64], ch: usize, in_h: usize, in_w: usize) -> Vec<f64> {
    let out_h = in_h.div_ceil(2);
    let out_w = in_w.div_ceil(2);
    let mut d_in = vec![0.0; ch * in_h * in_w];
    for c in 0..ch {
        let d_out_plane = &d_out[c * out_h * out_w..(c + 1) * out_h * out_w];
        let d_in_plane = &mut d_in[c * in_h * in_w..(c + 1) * in_h * in_w];
        for i in 0..out_h {
            for j in 0..out_w {
                let mut count = 0.0;
                for di in 0..2 {
                    for dj in 0..2 {
                        if 2 * i + di < in_h && 2 * j + dj < in_w {
                            count += 1.0;
                        }
                    }
                }
                let share = d_out_plane[i * out_w + j] / count;
                for di in 0..2 {
                    for dj in 0..2 {
                        let (r, s) = (2 * i + di, 2 * j + dj);
                        if r < in_h && s < in_w {
                            d_in_plane[r * in_w + s] += share;
                        }
                    }
                }
            }
        }
    }
    d_in
}
