//! Parameterized layers built on [`Graph`] ops.

use crate::float::Float;
use crate::graph::{Graph, NodeId};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::Result;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self::with_init(store, name, in_channels, out_channels, kernel, stride, pad, Init::he(fan_in))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_init<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init: Init,
    ) -> Self {
        let weight = store.add(
            &format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            init,
        );
        let bias = store.add(&format!("{name}.bias"), &[out_channels], Init::Zeros);
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: NodeId) -> Result<NodeId> {
        g.conv2d(x, p.node(self.weight), Some(p.node(self.bias)), self.stride, self.pad)
    }

    pub fn forward_depth_aware<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: NodeId,
        depth: &Tensor<T>,
    ) -> Result<NodeId> {
        g.conv2d_depth_aware(
            x,
            p.node(self.weight),
            Some(p.node(self.bias)),
            self.stride,
            self.pad,
            depth,
        )
    }

    /// Spatial output extent for an input extent.
    pub fn out_extent(&self, hw: usize) -> usize {
        (hw + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        // each output pixel sees roughly (k/s)^2 taps per input channel
        let taps = (kernel * kernel).div_ceil(stride * stride).max(1);
        Self::with_init(
            store,
            name,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            Init::he(in_channels * taps),
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_init<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init: Init,
    ) -> Self {
        let weight = store.add(
            &format!("{name}.weight"),
            &[in_channels, out_channels, kernel, kernel],
            init,
        );
        let bias = store.add(&format!("{name}.bias"), &[out_channels], Init::Zeros);
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: NodeId) -> Result<NodeId> {
        g.conv_transpose2d(x, p.node(self.weight), Some(p.node(self.bias)), self.stride, self.pad)
    }

    pub fn out_extent(&self, hw: usize) -> usize {
        (hw - 1) * self.stride + self.kernel - 2 * self.pad
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, in_features: usize, out_features: usize) -> Self {
        Self::with_init(store, name, in_features, out_features, Init::he(in_features))
    }

    pub fn with_init<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        init: Init,
    ) -> Self {
        let weight = store.add(&format!("{name}.weight"), &[out_features, in_features], init);
        let bias = store.add(&format!("{name}.bias"), &[out_features], Init::Zeros);
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: NodeId) -> Result<NodeId> {
        g.linear(x, p.node(self.weight), Some(p.node(self.bias)))
    }
}

/// Group normalization with a learned per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
    pub eps: f64,
}

impl GroupNorm {
    /// Uses up to `max_groups` groups, the largest count dividing `channels`.
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, channels: usize, max_groups: usize) -> Self {
        let groups = (1..=max_groups.min(channels).max(1))
            .rev()
            .find(|g| channels % g == 0)
            .unwrap_or(1);
        Self {
            gamma: store.add(&format!("{name}.gamma"), &[channels], Init::Constant(1.0)),
            beta: store.add(&format!("{name}.beta"), &[channels], Init::Zeros),
            groups,
            eps: 1e-5,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: NodeId) -> Result<NodeId> {
        g.group_norm(x, p.node(self.gamma), p.node(self.beta), self.groups, T::of(self.eps))
    }
}
