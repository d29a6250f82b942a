//! Convolution layer: owned kernels and bias plus the tape wiring.

use rand::Rng;

use crate::tensor::ops::PaddingKind;
use crate::tensor::tape::{Tape, VarId};
use crate::tensor::{Tensor, TensorError};

/// 2-D convolution layer.
///
/// Kernels are stored as `(out_channels, kernel_h, kernel_w, in_channels)`
/// with one bias per output channel, so the trainable parameter count is
/// `out_channels · (kernel_h · kernel_w · in_channels) + out_channels`.
#[derive(Clone, Debug)]
pub struct Conv2DLayer {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: PaddingKind,
}

impl Conv2DLayer {
    /// Seeded initialization: kernels uniform on `±1/√fan_in` where
    /// `fan_in = kernel_h · kernel_w · in_channels`, biases zero.
    pub fn init<R: Rng + ?Sized>(
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        stride: usize,
        padding: PaddingKind,
        rng: &mut R,
    ) -> Self {
        let fan_in = (kernel_h * kernel_w * in_channels) as f64;
        let bound = 1.0 / fan_in.sqrt();
        Conv2DLayer {
            kernels: Tensor::uniform(&[out_channels, kernel_h, kernel_w, in_channels], -bound, bound, rng),
            bias: Tensor::zeros(&[out_channels]),
            stride,
            padding,
        }
    }

    /// Zero-filled layer of the given geometry, for checkpoint loading.
    pub fn zeroed(out_channels: usize, kernel_h: usize, kernel_w: usize, in_channels: usize, stride: usize, padding: PaddingKind) -> Self {
        Conv2DLayer {
            kernels: Tensor::zeros(&[out_channels, kernel_h, kernel_w, in_channels]),
            bias: Tensor::zeros(&[out_channels]),
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[3]
    }

    pub fn parameter_count(&self) -> usize {
        self.kernels.len() + self.bias.len()
    }

    /// Registers the parameters on `tape` and applies the convolution to
    /// `input` (an `(H, W, C_in)` image or `(B, H, W, C_in)` batch). The
    /// activation, if any, is the caller's business.
    ///
    /// Returns `(output, kernel var, bias var)` so gradients can be read back.
    pub fn forward(&self, tape: &mut Tape, input: VarId) -> Result<(VarId, VarId, VarId), TensorError> {
        let vars = self.bind(tape);
        let out = self.apply(tape, vars, input)?;
        Ok((out, vars.0, vars.1))
    }

    /// Registers kernels and bias once; the returned pair can drive several
    /// [`Conv2DLayer::apply`] calls on the same tape.
    pub fn bind(&self, tape: &mut Tape) -> (VarId, VarId) {
        (tape.param(self.kernels.clone()), tape.param(self.bias.clone()))
    }

    /// Applies the convolution using already-registered parameters.
    pub fn apply(&self, tape: &mut Tape, (kernels, bias): (VarId, VarId), input: VarId) -> Result<VarId, TensorError> {
        tape.conv2d(input, kernels, bias, self.stride, self.padding)
    }
}
