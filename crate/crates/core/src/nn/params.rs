//! Flat model parameters with per-layer segmentation.

use super::{NnError, Scalar};
use serde::{Deserialize, Serialize};
use std::ops::Range;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    Dense,
}

/// Shape of one parameterized layer. Within the flat parameter vector a
/// layer occupies `weight_count()` weights followed by `bias_count()`
/// biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub layer_id: usize,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Spatial kernel size; 1 for dense layers.
    pub kernel: usize,
}

impl LayerShape {
    #[inline]
    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    #[inline]
    pub fn bias_count(&self) -> usize {
        self.out_channels
    }

    /// Total parameter count `d_l` (weights plus biases).
    #[inline]
    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }
}

/// Flat parameter vector segmented by layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<F> {
    segments: Vec<LayerShape>,
    offsets: Vec<usize>,
    values: Vec<F>,
}

fn offsets_of(segments: &[LayerShape]) -> Vec<usize> {
    let mut offs = Vec::with_capacity(segments.len() + 1);
    let mut acc = 0usize;
    offs.push(0);
    for s in segments {
        acc += s.param_count();
        offs.push(acc);
    }
    offs
}

impl<F: Scalar> ParamVector<F> {
    pub fn zeros(segments: Vec<LayerShape>) -> Self {
        let offsets = offsets_of(&segments);
        let total = *offsets.last().unwrap();
        Self {
            segments,
            offsets,
            values: vec![F::zero(); total],
        }
    }

    pub fn from_values(segments: Vec<LayerShape>, values: Vec<F>) -> Result<Self, NnError> {
        let offsets = offsets_of(&segments);
        let total = *offsets.last().unwrap();
        if values.len() != total {
            return Err(NnError::ShapeMismatch(format!(
                "parameter vector length {} does not match segment total {}",
                values.len(),
                total
            )));
        }
        Ok(Self {
            segments,
            offsets,
            values,
        })
    }

    #[inline]
    pub fn segments(&self) -> &[LayerShape] {
        &self.segments
    }

    #[inline]
    pub fn num_layers(&self) -> usize {
        self.segments.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[F] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    /// Range of layer `l` within the flat vector.
    #[inline]
    pub fn layer_range(&self, l: usize) -> Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    /// Range of layer `l`'s weights (biases excluded).
    #[inline]
    pub fn layer_weight_range(&self, l: usize) -> Range<usize> {
        let start = self.offsets[l];
        start..start + self.segments[l].weight_count()
    }

    /// Range of layer `l`'s biases.
    #[inline]
    pub fn layer_bias_range(&self, l: usize) -> Range<usize> {
        let start = self.offsets[l] + self.segments[l].weight_count();
        start..self.offsets[l + 1]
    }

    #[inline]
    pub fn layer_values(&self, l: usize) -> &[F] {
        &self.values[self.layer_range(l)]
    }

    /// True when both vectors share the same segmentation.
    pub fn same_layout(&self, other: &ParamVector<F>) -> bool {
        self.segments == other.segments
    }

    /// self += a * other, in fixed index order.
    pub fn scaled_add(&mut self, a: F, other: &ParamVector<F>) {
        debug_assert!(self.same_layout(other));
        for (s, o) in self.values.iter_mut().zip(other.values.iter()) {
            *s = *s + a * *o;
        }
    }

    pub fn scale(&mut self, a: F) {
        for v in self.values.iter_mut() {
            *v = *v * a;
        }
    }

    /// Squared L2 distance accumulated in f64.
    pub fn l2_distance_sq(&self, other: &ParamVector<F>) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        let mut acc = 0.0f64;
        for (a, b) in self.values.iter().zip(other.values.iter()) {
            let d = a.as_f64() - b.as_f64();
            acc += d * d;
        }
        acc
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> ParamVector<G> {
        ParamVector {
            segments: self.segments.clone(),
            offsets: self.offsets.clone(),
            values: self.values.iter().map(|v| G::from_f64(v.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layers() -> Vec<LayerShape> {
        vec![
            LayerShape {
                layer_id: 0,
                kind: LayerKind::Conv,
                in_channels: 3,
                out_channels: 8,
                kernel: 3,
            },
            LayerShape {
                layer_id: 1,
                kind: LayerKind::Dense,
                in_channels: 8,
                out_channels: 10,
                kernel: 1,
            },
        ]
    }

    #[test]
    fn conv_param_count_is_weights_plus_bias() {
        let s = two_layers()[0];
        assert_eq!(s.weight_count(), 8 * 3 * 9);
        assert_eq!(s.param_count(), 8 * 3 * 9 + 8);
    }

    #[test]
    fn ranges_partition_the_vector() {
        let p = ParamVector::<f32>::zeros(two_layers());
        assert_eq!(p.len(), 224 + 90);
        assert_eq!(p.layer_range(0), 0..224);
        assert_eq!(p.layer_weight_range(0), 0..216);
        assert_eq!(p.layer_bias_range(0), 216..224);
        assert_eq!(p.layer_range(1), 224..314);
    }

    #[test]
    fn distance_and_axpy() {
        let segs = two_layers();
        let mut a = ParamVector::<f32>::zeros(segs.clone());
        let mut b = ParamVector::<f32>::zeros(segs);
        b.values_mut()[0] = 3.0;
        assert_eq!(a.l2_distance_sq(&b), 9.0);
        a.scaled_add(2.0, &b);
        assert_eq!(a.values()[0], 6.0);
    }
}
