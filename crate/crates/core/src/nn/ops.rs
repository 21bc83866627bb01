//! Layer primitives: 2D convolution (cross-correlation), ReLU, global
//! average pooling, and a dense head. Forward and backward passes use a
//! fixed row-major summation order.

use super::{NnError, Scalar, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial size = ceil(input / stride); zero padding split
    /// evenly with the surplus on the bottom/right.
    Same,
    /// No padding; output = (input - kernel)/stride + 1.
    Valid,
}

/// Static description of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: Padding::Same,
        }
    }

    #[inline]
    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    #[inline]
    pub fn bias_count(&self) -> usize {
        self.out_channels
    }

    /// Output height/width and top/left padding for the given input size.
    pub fn out_geometry(&self, h: usize, w: usize) -> (usize, usize, usize, usize) {
        match self.padding {
            Padding::Same => {
                let oh = h.div_ceil(self.stride);
                let ow = w.div_ceil(self.stride);
                let pad_h = ((oh - 1) * self.stride + self.kernel).saturating_sub(h);
                let pad_w = ((ow - 1) * self.stride + self.kernel).saturating_sub(w);
                (oh, ow, pad_h / 2, pad_w / 2)
            }
            Padding::Valid => {
                assert!(h >= self.kernel && w >= self.kernel, "input smaller than kernel");
                (
                    (h - self.kernel) / self.stride + 1,
                    (w - self.kernel) / self.stride + 1,
                    0,
                    0,
                )
            }
        }
    }

    /// Forward FLOPs for one sample at the given input size (2 per MAC).
    pub fn flops(&self, h: usize, w: usize) -> f64 {
        let (oh, ow, _, _) = self.out_geometry(h, w);
        2.0 * (self.out_channels * self.in_channels * self.kernel * self.kernel * oh * ow) as f64
    }
}

/// Cross-correlation plus per-output-channel bias.
///
/// `weights` is laid out as `[out][in][ky][kx]`.
pub fn conv2d_forward<F: Scalar>(
    spec: &ConvSpec,
    input: &Tensor4<F>,
    weights: &[F],
    bias: &[F],
) -> Result<Tensor4<F>, NnError> {
    let (b, c, h, w) = input.dims();
    if c != spec.in_channels {
        return Err(NnError::ShapeMismatch(format!(
            "conv expects {} input channels, got {c}",
            spec.in_channels
        )));
    }
    if weights.len() != spec.weight_count() || bias.len() != spec.bias_count() {
        return Err(NnError::ShapeMismatch(format!(
            "conv expects {} weights and {} biases, got {} and {}",
            spec.weight_count(),
            spec.bias_count(),
            weights.len(),
            bias.len()
        )));
    }
    let k = spec.kernel;
    let (oh, ow, pad_y, pad_x) = spec.out_geometry(h, w);
    let mut out = Tensor4::zeros(b, spec.out_channels, oh, ow);

    for n in 0..b {
        for oc in 0..spec.out_channels {
            let w_oc = &weights[oc * spec.in_channels * k * k..(oc + 1) * spec.in_channels * k * k];
            for oy in 0..oh {
                let iy0 = (oy * spec.stride) as isize - pad_y as isize;
                let ky_lo = (-iy0).max(0) as usize;
                let ky_hi = (h as isize - iy0).clamp(0, k as isize) as usize;
                let out_row = out.offset(n, oc, oy, 0);
                for ox in 0..ow {
                    let ix0 = (ox * spec.stride) as isize - pad_x as isize;
                    let kx_lo = (-ix0).max(0) as usize;
                    let kx_hi = (w as isize - ix0).clamp(0, k as isize) as usize;
                    let mut acc = bias[oc];
                    if kx_lo < kx_hi {
                        let span = kx_hi - kx_lo;
                        for ic in 0..spec.in_channels {
                            let w_ic = &w_oc[ic * k * k..(ic + 1) * k * k];
                            for ky in ky_lo..ky_hi {
                                let iy = (iy0 + ky as isize) as usize;
                                let start =
                                    input.offset(n, ic, iy, (ix0 + kx_lo as isize) as usize);
                                let xs = &input.data()[start..start + span];
                                let ws = &w_ic[ky * k + kx_lo..ky * k + kx_hi];
                                for (x, wv) in xs.iter().zip(ws.iter()) {
                                    acc = acc + *wv * *x;
                                }
                            }
                        }
                    }
                    out.data_mut()[out_row + ox] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution: (d input, d weights, d bias).
pub fn conv2d_backward<F: Scalar>(
    spec: &ConvSpec,
    input: &Tensor4<F>,
    weights: &[F],
    grad_out: &Tensor4<F>,
) -> (Tensor4<F>, Vec<F>, Vec<F>) {
    let (b, _, h, w) = input.dims();
    let k = spec.kernel;
    let (oh, ow, pad_y, pad_x) = spec.out_geometry(h, w);
    debug_assert_eq!(grad_out.dims(), (b, spec.out_channels, oh, ow));

    let mut gin = Tensor4::zeros(b, spec.in_channels, h, w);
    let mut gw = vec![F::zero(); spec.weight_count()];
    let mut gb = vec![F::zero(); spec.bias_count()];

    for n in 0..b {
        for oc in 0..spec.out_channels {
            let w_base = oc * spec.in_channels * k * k;
            for oy in 0..oh {
                let iy0 = (oy * spec.stride) as isize - pad_y as isize;
                let ky_lo = (-iy0).max(0) as usize;
                let ky_hi = (h as isize - iy0).clamp(0, k as isize) as usize;
                let go_row = grad_out.offset(n, oc, oy, 0);
                for ox in 0..ow {
                    let ix0 = (ox * spec.stride) as isize - pad_x as isize;
                    let kx_lo = (-ix0).max(0) as usize;
                    let kx_hi = (w as isize - ix0).clamp(0, k as isize) as usize;
                    let g = grad_out.data()[go_row + ox];
                    gb[oc] = gb[oc] + g;
                    if kx_lo >= kx_hi {
                        continue;
                    }
                    let span = kx_hi - kx_lo;
                    for ic in 0..spec.in_channels {
                        let wk = w_base + ic * k * k;
                        for ky in ky_lo..ky_hi {
                            let iy = (iy0 + ky as isize) as usize;
                            let start = input.offset(n, ic, iy, (ix0 + kx_lo as isize) as usize);
                            let xs = &input.data()[start..start + span];
                            let gws = &mut gw[wk + ky * k + kx_lo..wk + ky * k + kx_hi];
                            for (gwv, x) in gws.iter_mut().zip(xs.iter()) {
                                *gwv = *gwv + g * *x;
                            }
                            let ws = &weights[wk + ky * k + kx_lo..wk + ky * k + kx_hi];
                            let gxs = &mut gin.data_mut()[start..start + span];
                            for (gx, wv) in gxs.iter_mut().zip(ws.iter()) {
                                *gx = *gx + g * *wv;
                            }
                        }
                    }
                }
            }
        }
    }
    (gin, gw, gb)
}

/// Elementwise max(0, x).
pub fn relu<F: Scalar>(x: &Tensor4<F>) -> Tensor4<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Backward through ReLU given the post-activation output.
pub fn relu_backward<F: Scalar>(activated: &Tensor4<F>, grad: &Tensor4<F>) -> Tensor4<F> {
    debug_assert_eq!(activated.dims(), grad.dims());
    let data = activated
        .data()
        .iter()
        .zip(grad.data().iter())
        .map(|(&a, &g)| if a > F::zero() { g } else { F::zero() })
        .collect();
    let (b, c, h, w) = grad.dims();
    Tensor4::from_vec(b, c, h, w, data).expect("same dims")
}

/// (b, c, h, w) -> (b, c, 1, 1) spatial mean.
pub fn global_avg_pool_forward<F: Scalar>(x: &Tensor4<F>) -> Tensor4<F> {
    let (b, c, h, w) = x.dims();
    let inv = F::from_f64(1.0 / (h * w) as f64);
    let mut out = Tensor4::zeros(b, c, 1, 1);
    for n in 0..b {
        for ch in 0..c {
            let base = x.offset(n, ch, 0, 0);
            let mut acc = F::zero();
            for i in 0..h * w {
                acc = acc + x.data()[base + i];
            }
            out.set(n, ch, 0, 0, acc * inv);
        }
    }
    out
}

pub fn global_avg_pool_backward<F: Scalar>(
    input_dims: (usize, usize, usize, usize),
    grad: &Tensor4<F>,
) -> Tensor4<F> {
    let (b, c, h, w) = input_dims;
    let inv = F::from_f64(1.0 / (h * w) as f64);
    let mut gin = Tensor4::zeros(b, c, h, w);
    for n in 0..b {
        for ch in 0..c {
            let g = grad.get(n, ch, 0, 0) * inv;
            let base = gin.offset(n, ch, 0, 0);
            for i in 0..h * w {
                gin.data_mut()[base + i] = g;
            }
        }
    }
    gin
}

/// Fully connected layer over (b, inputs, 1, 1) feature vectors.
///
/// `weights` is laid out as `[out][in]`.
pub fn dense_forward<F: Scalar>(
    input: &Tensor4<F>,
    weights: &[F],
    bias: &[F],
    outputs: usize,
) -> Result<Tensor4<F>, NnError> {
    let (b, c, h, w) = input.dims();
    if h != 1 || w != 1 {
        return Err(NnError::ShapeMismatch(format!(
            "dense expects (b, c, 1, 1) input, got {:?}",
            input.dims()
        )));
    }
    if weights.len() != outputs * c || bias.len() != outputs {
        return Err(NnError::ShapeMismatch(format!(
            "dense expects {} weights and {} biases, got {} and {}",
            outputs * c,
            outputs,
            weights.len(),
            bias.len()
        )));
    }
    let mut out = Tensor4::zeros(b, outputs, 1, 1);
    for n in 0..b {
        let xin = &input.data()[n * c..(n + 1) * c];
        for o in 0..outputs {
            let wrow = &weights[o * c..(o + 1) * c];
            let mut acc = bias[o];
            for i in 0..c {
                acc = acc + wrow[i] * xin[i];
            }
            out.set(n, o, 0, 0, acc);
        }
    }
    Ok(out)
}

pub fn dense_backward<F: Scalar>(
    input: &Tensor4<F>,
    weights: &[F],
    grad_out: &Tensor4<F>,
) -> (Tensor4<F>, Vec<F>, Vec<F>) {
    let (b, c, _, _) = input.dims();
    let outputs = grad_out.channels();
    let mut gin = Tensor4::zeros(b, c, 1, 1);
    let mut gw = vec![F::zero(); outputs * c];
    let mut gb = vec![F::zero(); outputs];
    for n in 0..b {
        let xin = &input.data()[n * c..(n + 1) * c];
        for o in 0..outputs {
            let g = grad_out.get(n, o, 0, 0);
            gb[o] = gb[o] + g;
            let wrow = &weights[o * c..(o + 1) * c];
            for i in 0..c {
                gw[o * c + i] = gw[o * c + i] + g * xin[i];
                gin.data_mut()[n * c + i] = gin.data()[n * c + i] + g * wrow[i];
            }
        }
    }
    (gin, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_reproduces_input() {
        let spec = ConvSpec::same(1, 1, 1);
        let x = Tensor4::from_vec(1, 1, 2, 2, vec![1.0f64, -2.0, 3.0, 0.5]).unwrap();
        let y = conv2d_forward(&spec, &x, &[1.0], &[0.0]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn scalar_pixel_conv_is_affine() {
        let spec = ConvSpec::same(1, 1, 1);
        let x = Tensor4::from_vec(1, 1, 1, 1, vec![3.0f64]).unwrap();
        let y = conv2d_forward(&spec, &x, &[2.0], &[0.25]).unwrap();
        assert_eq!(y.get(0, 0, 0, 0), 3.0 * 2.0 + 0.25);
    }

    #[test]
    fn zero_weights_give_constant_bias() {
        let spec = ConvSpec::same(2, 3, 3);
        let x = Tensor4::filled(1, 2, 4, 4, 1.5f32);
        let y = conv2d_forward(&spec, &x, &vec![0.0; spec.weight_count()], &[7.0, -1.0, 0.0])
            .unwrap();
        for ox in 0..4 {
            assert_eq!(y.get(0, 0, 0, ox), 7.0);
            assert_eq!(y.get(0, 1, 3, ox), -1.0);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let spec = ConvSpec::same(3, 1, 1);
        let x = Tensor4::<f32>::zeros(1, 2, 2, 2);
        assert!(conv2d_forward(&spec, &x, &[0.0; 3], &[0.0]).is_err());
    }

    #[test]
    fn same_padding_preserves_size_and_stride_halves_it() {
        let s1 = ConvSpec::same(1, 1, 9);
        assert_eq!(s1.out_geometry(64, 64), (64, 64, 4, 4));
        let s2 = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            stride: 2,
            padding: Padding::Same,
        };
        assert_eq!(s2.out_geometry(32, 32), (16, 16, 0, 0));
    }

    #[test]
    fn relu_matches_definition() {
        let x = Tensor4::from_vec(1, 1, 1, 3, vec![-1.0f32, 0.0, 3.5]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 3.5]);
    }

    #[test]
    fn gap_averages_and_distributes() {
        let x = Tensor4::from_vec(1, 1, 2, 2, vec![1.0f64, 2.0, 3.0, 6.0]).unwrap();
        let y = global_avg_pool_forward(&x);
        assert_eq!(y.get(0, 0, 0, 0), 3.0);
        let g = Tensor4::from_vec(1, 1, 1, 1, vec![8.0f64]).unwrap();
        let gin = global_avg_pool_backward(x.dims(), &g);
        assert_eq!(gin.data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn dense_is_matrix_vector() {
        let x = Tensor4::from_vec(1, 2, 1, 1, vec![1.0f64, 2.0]).unwrap();
        let y = dense_forward(&x, &[1.0, 0.5, -1.0, 1.0], &[0.0, 10.0], 2).unwrap();
        assert_eq!(y.data(), &[2.0, 11.0]);
    }
}
