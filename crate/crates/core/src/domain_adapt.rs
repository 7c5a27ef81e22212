//! Unsupervised domain adaptation: gradient reversal, a head-feature domain
//! classifier, and RGB↔Depth translation decoders.

use depthgaze_autograd::nn::Linear;
use depthgaze_autograd::{Bound, Float, Graph, Init, NodeId, ParamStore};
use serde::{Deserialize, Serialize};

use crate::error::{GazeError, Result};
use crate::model::{plan_upsampling_exact, ForwardNodes, Model, UpDecoder};
use crate::types::ModelConfig;

/// Schedule of the gradient-reversal coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GrlSchedule {
    Fixed,
    /// `lambda · (2 / (1 + exp(-gamma · p)) - 1)` over training progress `p ∈ [0, 1]`.
    Ramp { gamma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrlConfig {
    pub lambda: f64,
    pub schedule: GrlSchedule,
}

impl Default for GrlConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            schedule: GrlSchedule::Fixed,
        }
    }
}

impl GrlConfig {
    pub fn fixed(lambda: f64) -> Self {
        Self {
            lambda,
            schedule: GrlSchedule::Fixed,
        }
    }

    pub fn ramp(lambda: f64) -> Self {
        Self {
            lambda,
            schedule: GrlSchedule::Ramp { gamma: 10.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(GazeError::Config(format!("grl lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Coefficient at training progress `progress ∈ [0, 1]`.
    pub fn lambda_at(&self, progress: f64) -> f64 {
        match self.schedule {
            GrlSchedule::Fixed => self.lambda,
            GrlSchedule::Ramp { gamma } => {
                let p = progress.clamp(0.0, 1.0);
                self.lambda * (2.0 / (1.0 + (-gamma * p).exp()) - 1.0)
            }
        }
    }
}

/// Identity forward; multiplies the incoming gradient by `-lambda`.
pub fn grl<T: Float>(g: &mut Graph<T>, x: NodeId, lambda: f64) -> NodeId {
    g.grl(x, T::of(lambda))
}

#[derive(Clone, Debug)]
pub(crate) struct DaHeads {
    fc1: Linear,
    fc2: Linear,
    rgb_to_depth: UpDecoder,
    depth_to_rgb: UpDecoder,
}

impl DaHeads {
    pub(crate) fn build<T: Float>(store: &mut ParamStore<T>, config: &ModelConfig) -> Result<Self> {
        let c = config.backbone_channels;
        let hidden = (c / 2).max(8);
        let plan = plan_upsampling_exact(config.feature_size(), config.input_size, 4).ok_or_else(|| {
            GazeError::Config(format!(
                "no 4-stage translation decoder from {} to {}",
                config.feature_size(),
                config.input_size
            ))
        })?;
        Ok(Self {
            fc1: Linear::new(store, "da.domain.fc1", c, hidden),
            fc2: Linear::with_init(store, "da.domain.fc2", hidden, 1, Init::lecun(hidden)),
            rgb_to_depth: UpDecoder::build(store, "da.rgb_to_depth", &plan, c, 3, true),
            depth_to_rgb: UpDecoder::build(store, "da.depth_to_rgb", &plan, c, 3, true),
        })
    }
}

/// DA outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct DaNodes {
    /// `[N, 1]`
    pub domain_logit: NodeId,
    /// `[N, 3, R, R]` colored depth predicted from the scene embedding.
    pub recon_depth: NodeId,
    /// `[N, 3, R, R]` RGB predicted from the depth embedding.
    pub recon_rgb: NodeId,
}

impl<T: Float> Model<T> {
    fn da_heads(&self) -> Result<&DaHeads> {
        self.da
            .as_ref()
            .ok_or_else(|| GazeError::Config("model was built without domain adaptation".into()))
    }

    /// Domain logit from the head embedding, read through a gradient reversal.
    pub fn domain_classifier(&self, g: &mut Graph<T>, p: &Bound, e_h: NodeId, lambda: f64) -> Result<NodeId> {
        let da = self.da_heads()?;
        let r = grl(g, e_h, lambda);
        let pooled = g.global_avg_pool(r)?;
        let z = da.fc1.forward(g, p, pooled)?;
        let z = g.relu(z);
        Ok(da.fc2.forward(g, p, z)?)
    }

    pub fn translate_rgb_to_depth(&self, g: &mut Graph<T>, p: &Bound, e_s: NodeId) -> Result<NodeId> {
        self.da_heads()?.rgb_to_depth.forward(g, p, e_s)
    }

    pub fn translate_depth_to_rgb(&self, g: &mut Graph<T>, p: &Bound, e_d: NodeId) -> Result<NodeId> {
        self.da_heads()?.depth_to_rgb.forward(g, p, e_d)
    }

    pub fn da_forward(&self, g: &mut Graph<T>, p: &Bound, fwd: &ForwardNodes, lambda: f64) -> Result<DaNodes> {
        let missing = || GazeError::Config("domain adaptation needs head, scene and depth embeddings".into());
        let (e_h, e_s, e_d) = (
            fwd.head.ok_or_else(missing)?,
            fwd.scene.ok_or_else(missing)?,
            fwd.depth.ok_or_else(missing)?,
        );
        Ok(DaNodes {
            domain_logit: self.domain_classifier(g, p, e_h, lambda)?,
            recon_depth: self.translate_rgb_to_depth(g, p, e_s)?,
            recon_rgb: self.translate_depth_to_rgb(g, p, e_d)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_schedule_endpoints() {
        let r = GrlConfig::ramp(1.0);
        assert_eq!(r.lambda_at(0.0), 0.0);
        assert!((r.lambda_at(1.0) - (2.0 / (1.0 + (-10.0f64).exp()) - 1.0)).abs() < 1e-15);
        assert_eq!(GrlConfig::fixed(0.7).lambda_at(0.3), 0.7);
        assert!(GrlConfig::fixed(-1.0).validate().is_err());
    }

    #[test]
    fn da_parameters_do_not_perturb_base_init() {
        let mut cfg = ModelConfig::toy(64, 16).with_seed(9);
        let plain = Model::<f32>::new(&cfg).unwrap();
        cfg.da_enabled = true;
        let da = Model::<f32>::new(&cfg).unwrap();
        assert!(da.params.len() > plain.params.len());
        for ((_, n1, a), (_, n2, b)) in plain.params.iter().zip(da.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(a, b);
        }
        assert!(da.params.iter().skip(plain.params.len()).all(|(_, n, _)| n.starts_with("da.")));
    }
}
