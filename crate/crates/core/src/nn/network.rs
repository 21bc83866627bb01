//! Fixed-architecture sequential networks with hand-written backprop.

use super::ops::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, global_avg_pool_backward,
    global_avg_pool_forward, relu, relu_backward, ConvSpec,
};
use super::{
    cross_entropy_loss_grad, mse_loss_grad, LayerKind, LayerShape, NnError, ParamVector, Scalar,
    Tensor4,
};
use crate::seed::stream;
use rand::Rng;

#[derive(Clone, Copy, Debug)]
pub enum LayerDef {
    Conv { spec: ConvSpec, relu: bool },
    GlobalAvgPool,
    Dense { inputs: usize, outputs: usize },
}

/// A sequence of layers. Parameters live outside the network in a
/// [`ParamVector`] whose segments map one-to-one onto the parameterized
/// layers (convolutions and dense heads) in order.
#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<LayerDef>,
}

impl Network {
    pub fn new(layers: Vec<LayerDef>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerDef] {
        &self.layers
    }

    /// Segmentation of the flat parameter vector.
    pub fn param_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::new();
        for def in &self.layers {
            match *def {
                LayerDef::Conv { spec, .. } => shapes.push(LayerShape {
                    layer_id: shapes.len(),
                    kind: LayerKind::Conv,
                    in_channels: spec.in_channels,
                    out_channels: spec.out_channels,
                    kernel: spec.kernel,
                }),
                LayerDef::Dense { inputs, outputs } => shapes.push(LayerShape {
                    layer_id: shapes.len(),
                    kind: LayerKind::Dense,
                    in_channels: inputs,
                    out_channels: outputs,
                    kernel: 1,
                }),
                LayerDef::GlobalAvgPool => {}
            }
        }
        shapes
    }

    /// Kaiming-uniform weight init (bound sqrt(6 / fan_in)), zero biases.
    /// Draws are made in f64 and cast, so f32 and f64 models built from
    /// the same seed coincide.
    pub fn init_params<F: Scalar>(&self, seed: u64) -> ParamVector<F> {
        let shapes = self.param_shapes();
        let mut params = ParamVector::zeros(shapes.clone());
        let mut rng = stream(seed, "weight-init", 0);
        for (l, shape) in shapes.iter().enumerate() {
            let fan_in = shape.in_channels * shape.kernel * shape.kernel;
            let bound = (6.0 / fan_in as f64).sqrt();
            let range = params.layer_weight_range(l);
            for i in range {
                params.values_mut()[i] = F::from_f64(rng.gen_range(-bound..bound));
            }
        }
        params
    }

    /// Forward pass; checks that `params` matches the architecture.
    pub fn forward<F: Scalar>(
        &self,
        params: &ParamVector<F>,
        input: &Tensor4<F>,
    ) -> Result<Tensor4<F>, NnError> {
        Ok(self.forward_cached(params, input)?.0)
    }

    /// Forward pass keeping each layer's input (and the final output) for
    /// the backward pass: `acts[i]` is the input to layer `i`.
    pub fn forward_cached<F: Scalar>(
        &self,
        params: &ParamVector<F>,
        input: &Tensor4<F>,
    ) -> Result<(Tensor4<F>, Vec<Tensor4<F>>), NnError> {
        self.check_layout(params)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        let mut p = 0usize;
        for def in &self.layers {
            let x = acts.last().unwrap();
            let y = match *def {
                LayerDef::Conv { spec, relu: act } => {
                    let w = &params.values()[params.layer_weight_range(p)];
                    let b = &params.values()[params.layer_bias_range(p)];
                    p += 1;
                    let y = conv2d_forward(&spec, x, w, b)?;
                    if act {
                        relu(&y)
                    } else {
                        y
                    }
                }
                LayerDef::GlobalAvgPool => global_avg_pool_forward(x),
                LayerDef::Dense { outputs, .. } => {
                    let w = &params.values()[params.layer_weight_range(p)];
                    let b = &params.values()[params.layer_bias_range(p)];
                    p += 1;
                    dense_forward(x, w, b, outputs)?
                }
            };
            acts.push(y);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, acts))
    }

    /// Backward pass from a gradient at the output; returns the parameter
    /// gradient with the same layout as `params`.
    pub fn backward<F: Scalar>(
        &self,
        params: &ParamVector<F>,
        acts: &[Tensor4<F>],
        grad_out: &Tensor4<F>,
    ) -> ParamVector<F> {
        let mut grads = ParamVector::zeros(params.segments().to_vec());
        let mut grad = grad_out.clone();
        let mut p = params.num_layers();
        for (i, def) in self.layers.iter().enumerate().rev() {
            let x = &acts[i];
            match *def {
                LayerDef::Conv { spec, relu: act } => {
                    p -= 1;
                    let g = if act {
                        relu_backward(&acts[i + 1], &grad)
                    } else {
                        grad
                    };
                    let w = &params.values()[params.layer_weight_range(p)];
                    let (gin, gw, gb) = conv2d_backward(&spec, x, w, &g);
                    let wr = grads.layer_weight_range(p);
                    grads.values_mut()[wr].copy_from_slice(&gw);
                    let br = grads.layer_bias_range(p);
                    grads.values_mut()[br].copy_from_slice(&gb);
                    grad = gin;
                }
                LayerDef::GlobalAvgPool => {
                    grad = global_avg_pool_backward(x.dims(), &grad);
                }
                LayerDef::Dense { .. } => {
                    p -= 1;
                    let w = &params.values()[params.layer_weight_range(p)];
                    let (gin, gw, gb) = dense_backward(x, w, &grad);
                    let wr = grads.layer_weight_range(p);
                    grads.values_mut()[wr].copy_from_slice(&gw);
                    let br = grads.layer_bias_range(p);
                    grads.values_mut()[br].copy_from_slice(&gb);
                    grad = gin;
                }
            }
        }
        grads
    }

    /// Forward FLOPs for one sample entering at the given spatial size.
    pub fn flops_forward(&self, mut h: usize, mut w: usize) -> f64 {
        let mut flops = 0.0;
        let mut channels = 0usize;
        for def in &self.layers {
            match *def {
                LayerDef::Conv { spec, .. } => {
                    flops += spec.flops(h, w);
                    let (oh, ow, _, _) = spec.out_geometry(h, w);
                    h = oh;
                    w = ow;
                    channels = spec.out_channels;
                }
                LayerDef::GlobalAvgPool => {
                    flops += (channels * h * w) as f64;
                    h = 1;
                    w = 1;
                }
                LayerDef::Dense { inputs, outputs } => {
                    flops += 2.0 * (inputs * outputs) as f64;
                }
            }
        }
        flops
    }

    fn check_layout<F: Scalar>(&self, params: &ParamVector<F>) -> Result<(), NnError> {
        if params.segments() != self.param_shapes().as_slice() {
            return Err(NnError::ShapeMismatch(
                "parameter vector does not match network architecture".to_string(),
            ));
        }
        Ok(())
    }
}

/// Batch loss and exact parameter gradient for a classification batch.
pub fn classifier_loss_grad<F: Scalar>(
    net: &Network,
    params: &ParamVector<F>,
    images: &Tensor4<F>,
    labels: &[usize],
) -> Result<(f64, ParamVector<F>), NnError> {
    let (logits, acts) = net.forward_cached(params, images)?;
    let (loss, grad_out) = cross_entropy_loss_grad(&logits, labels)?;
    if !loss.is_finite() {
        return Err(NnError::NonFiniteLoss);
    }
    Ok((loss, net.backward(params, &acts, &grad_out)))
}

/// Batch loss (element-mean MSE) and exact parameter gradient for a
/// regression batch.
pub fn regression_loss_grad<F: Scalar>(
    net: &Network,
    params: &ParamVector<F>,
    input: &Tensor4<F>,
    target: &Tensor4<F>,
) -> Result<(f64, ParamVector<F>), NnError> {
    let (pred, acts) = net.forward_cached(params, input)?;
    let (loss, grad_out) = mse_loss_grad(&pred, target)?;
    if !loss.is_finite() {
        return Err(NnError::NonFiniteLoss);
    }
    Ok((loss, net.backward(params, &acts, &grad_out)))
}
