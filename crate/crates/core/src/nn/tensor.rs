//! Dense 4D tensor in (batch, channels, height, width) layout.

use super::{NnError, Scalar};

/// Row-major NCHW tensor. All summations over its data run in index
/// order, which keeps every forward/backward pass bit-deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<F> {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<F>,
}

impl<F: Scalar> Tensor4<F> {
    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
            data: vec![F::zero(); batch * channels * height * width],
        }
    }

    pub fn filled(batch: usize, channels: usize, height: usize, width: usize, value: F) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
            data: vec![value; batch * channels * height * width],
        }
    }

    pub fn from_vec(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<F>,
    ) -> Result<Self, NnError> {
        if data.len() != batch * channels * height * width {
            return Err(NnError::ShapeMismatch(format!(
                "data length {} does not match dims {}x{}x{}x{}",
                data.len(),
                batch,
                channels,
                height,
                width
            )));
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            data,
        })
    }

    /// (batch, channels, height, width)
    #[inline]
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.channels, self.height, self.width)
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.batch
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.channels + c) * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> F {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: F) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// Extracts sample `n` as a batch-1 tensor.
    pub fn sample(&self, n: usize) -> Tensor4<F> {
        let per = self.channels * self.height * self.width;
        Tensor4 {
            batch: 1,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Stacks batch-1 tensors of identical spatial shape into one batch.
    pub fn stack(samples: &[Tensor4<F>]) -> Result<Tensor4<F>, NnError> {
        let first = samples.first().ok_or_else(|| {
            NnError::ShapeMismatch("cannot stack an empty sample list".to_string())
        })?;
        let (_, c, h, w) = first.dims();
        let mut data = Vec::with_capacity(samples.len() * c * h * w);
        for s in samples {
            if s.dims() != (1, c, h, w) {
                return Err(NnError::ShapeMismatch(format!(
                    "stack expects (1,{c},{h},{w}), got {:?}",
                    s.dims()
                )));
            }
            data.extend_from_slice(&s.data);
        }
        Ok(Tensor4 {
            batch: samples.len(),
            channels: c,
            height: h,
            width: w,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor4<F> {
        Tensor4 {
            batch: self.batch,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise cast, used to move between training and oracle precision.
    pub fn cast<G: Scalar>(&self) -> Tensor4<G> {
        Tensor4 {
            batch: self.batch,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| G::from_f64(v.as_f64())).collect(),
        }
    }
}
