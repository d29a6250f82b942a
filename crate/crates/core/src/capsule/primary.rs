//! Primary capsule layer: a convolution whose channels are regrouped into
//! fixed-dimension capsule vectors.

use rand::Rng;

use crate::layers::Conv2DLayer;
use crate::tensor::ops::PaddingKind;
use crate::tensor::tape::{Tape, VarId};
use crate::tensor::TensorError;

/// Convolutional capsule layer.
///
/// The convolution (stride 1, zero padding, ReLU) produces `channels` feature
/// maps; consecutive groups of `capsule_dim` channels at each spatial
/// position form one capsule, so an `H×W` feature map yields
/// `H · W · channels / capsule_dim` capsules. Weight sharing within a capsule
/// type is inherent in the convolution. Each capsule is squashed on output.
#[derive(Clone, Debug)]
pub struct PrimaryCapsLayer {
    pub conv: Conv2DLayer,
    pub capsule_dim: usize,
}

impl PrimaryCapsLayer {
    pub fn init<R: Rng + ?Sized>(
        channels: usize,
        in_channels: usize,
        capsule_dim: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        if capsule_dim == 0 || !channels.is_multiple_of(capsule_dim) {
            return Err(TensorError::Invalid {
                op: "primary_caps",
                detail: format!("{channels} channels do not divide into capsules of dimension {capsule_dim}"),
            });
        }
        Ok(PrimaryCapsLayer {
            conv: Conv2DLayer::init(channels, 3, 3, in_channels, 1, PaddingKind::Same, rng),
            capsule_dim,
        })
    }

    pub fn zeroed(channels: usize, in_channels: usize, capsule_dim: usize) -> Self {
        PrimaryCapsLayer {
            conv: Conv2DLayer::zeroed(channels, 3, 3, in_channels, 1, PaddingKind::Same),
            capsule_dim,
        }
    }

    /// Capsule types per spatial position.
    pub fn capsule_types(&self) -> usize {
        self.conv.out_channels() / self.capsule_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.conv.parameter_count()
    }

    /// Number of capsules produced for an `h × w` feature map.
    pub fn capsule_count(&self, h: usize, w: usize) -> usize {
        h * w * self.capsule_types()
    }

    /// `(H, W, C_in)` features to `(H·W·types, capsule_dim)` squashed
    /// capsules. Returns `(capsules, kernel var, bias var)`.
    pub fn forward(&self, tape: &mut Tape, features: VarId) -> Result<(VarId, VarId, VarId), TensorError> {
        let vars = self.bind(tape);
        let out = self.apply(tape, vars, features)?;
        Ok((out, vars.0, vars.1))
    }

    /// Registers the convolution parameters once for reuse across samples.
    pub fn bind(&self, tape: &mut Tape) -> (VarId, VarId) {
        self.conv.bind(tape)
    }

    /// Applies the capsule formation using already-registered parameters.
    pub fn apply(&self, tape: &mut Tape, vars: (VarId, VarId), features: VarId) -> Result<VarId, TensorError> {
        let conv_out = self.conv.apply(tape, vars, features)?;
        let activated = tape.relu(conv_out);
        let shape = tape.shape(activated).to_vec();
        let [h, w, c] = match shape[..] {
            [h, w, c] => [h, w, c],
            _ => {
                return Err(TensorError::RankMismatch {
                    op: "primary_caps",
                    expected: 3,
                    shape,
                })
            }
        };
        // Channels are contiguous per position, so the capsule grouping is a
        // pure reshape: (H, W, types·dim) → (H·W·types, dim).
        let capsules = tape.reshape(activated, &[h * w * (c / self.capsule_dim), self.capsule_dim])?;
        tape.squash_rows(capsules)
    }
}
