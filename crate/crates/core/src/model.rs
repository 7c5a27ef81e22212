//! Three-pathway gaze network: head, scene and depth backbones, head
//! attention gating, fusion encoders, heatmap decoder and in/out head, plus
//! the eleven ablation variants.

use depthgaze_autograd::nn::{Conv2d, ConvTranspose2d, GroupNorm, Linear};
use depthgaze_autograd::{Bound, Float, Graph, Init, NodeId, ParamStore, Tensor};

use crate::domain_adapt::DaHeads;
use crate::error::{GazeError, Result};
use crate::preprocess::ModelInput;
use crate::types::{AttentionNormalization, BackboneKind, FusionVariant, HeatmapGrid, ModelConfig};

/// Mini-batch of preprocessed inputs stacked along a leading axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBatch<T> {
    pub scene_plus_mask: Tensor<T>,
    pub depth_plus_mask: Tensor<T>,
    pub head_crop: Tensor<T>,
    pub depth_gray: Tensor<T>,
}

impl<T: Float> ModelBatch<T> {
    pub fn from_inputs(inputs: &[&ModelInput]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(GazeError::Config("empty batch".into()));
        }
        let stack = |f: &dyn Fn(&ModelInput) -> &Tensor<f32>| -> Result<Tensor<T>> {
            let parts: Vec<&Tensor<f32>> = inputs.iter().map(|i| f(i)).collect();
            Ok(Tensor::stack(&parts)?.cast::<T>())
        };
        Ok(Self {
            scene_plus_mask: stack(&|i| &i.scene_plus_mask)?,
            depth_plus_mask: stack(&|i| &i.depth_plus_mask)?,
            head_crop: stack(&|i| &i.head_crop)?,
            depth_gray: stack(&|i| &i.depth_gray)?,
        })
    }

    pub fn len(&self) -> usize {
        self.head_crop.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_size(&self) -> usize {
        self.head_crop.dim(2)
    }

    /// Leading `k` channels of a `[N, C, S, S]` tensor.
    fn leading_channels(t: &Tensor<T>, k: usize) -> Tensor<T> {
        let (n, plane) = (t.dim(0), t.dim(2) * t.dim(3));
        let mut out = Vec::with_capacity(n * k * plane);
        for i in 0..n {
            out.extend_from_slice(&t.outer(i)[..k * plane]);
        }
        Tensor::new(&[n, k, t.dim(2), t.dim(3)], out).expect("channel slice")
    }

    fn concat(parts: &[&Tensor<T>]) -> Tensor<T> {
        let n = parts[0].dim(0);
        let c: usize = parts.iter().map(|p| p.dim(1)).sum();
        let mut out = Vec::new();
        for i in 0..n {
            for p in parts {
                out.extend_from_slice(p.outer(i));
            }
        }
        Tensor::new(&[n, c, parts[0].dim(2), parts[0].dim(3)], out).expect("channel concat")
    }

    fn mask(&self) -> Tensor<T> {
        let (n, plane) = (self.len(), self.input_size() * self.input_size());
        let mut out = Vec::with_capacity(n * plane);
        for i in 0..n {
            out.extend_from_slice(&self.scene_plus_mask.outer(i)[3 * plane..]);
        }
        Tensor::new(&[n, 1, self.input_size(), self.input_size()], out).expect("mask slice")
    }

    /// Scene-pathway input tensor for a variant.
    pub fn scene_input(&self, variant: FusionVariant) -> Option<Tensor<T>> {
        use FusionVariant::*;
        match variant {
            Full | V1 | V2 | V8 | V9 | V10 | V11 => Some(self.scene_plus_mask.clone()),
            V5 => Some(Self::concat(&[
                &Self::leading_channels(&self.scene_plus_mask, 3),
                &self.depth_gray,
            ])),
            V6 => Some(Self::concat(&[&self.scene_plus_mask, &self.depth_gray])),
            V7 => Some(Self::concat(&[
                &self.scene_plus_mask,
                &Self::leading_channels(&self.depth_plus_mask, 3),
            ])),
            V3 | V4 => None,
        }
    }

    /// Depth-pathway input tensor for a variant.
    pub fn depth_input(&self, variant: FusionVariant) -> Option<Tensor<T>> {
        use FusionVariant::*;
        match variant {
            Full | V4 | V8 | V9 | V10 | V11 => Some(self.depth_plus_mask.clone()),
            V3 => Some(Self::concat(&[&self.depth_gray, &self.mask()])),
            V1 | V2 | V5 | V6 | V7 => None,
        }
    }

    /// RGB reconstruction target `[N, 3, S, S]`.
    pub fn rgb_target(&self) -> Tensor<T> {
        Self::leading_channels(&self.scene_plus_mask, 3)
    }

    /// Colored-depth reconstruction target `[N, 3, S, S]`.
    pub fn depth_target(&self) -> Tensor<T> {
        Self::leading_channels(&self.depth_plus_mask, 3)
    }
}

/// Which pathways and fusion operators a variant uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Topology {
    pub head: bool,
    pub scene_channels: Option<usize>,
    pub depth_channels: Option<usize>,
    pub depth_aware_scene: bool,
    pub late_fusion: LateFusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LateFusion {
    /// Only one fused embedding reaches the decoder.
    Single,
    Sum,
    Concat,
    Product,
    /// One encoder over head, scene and depth features together.
    JointEncoder,
}

impl Topology {
    pub fn of(variant: FusionVariant) -> Self {
        use FusionVariant::*;
        let t = |head, scene, depth, late| Topology {
            head,
            scene_channels: scene,
            depth_channels: depth,
            depth_aware_scene: false,
            late_fusion: late,
        };
        match variant {
            Full => t(true, Some(4), Some(4), LateFusion::Sum),
            V1 => t(false, Some(4), None, LateFusion::Single),
            V2 => t(true, Some(4), None, LateFusion::Single),
            V3 => t(true, None, Some(2), LateFusion::Single),
            V4 => t(true, None, Some(4), LateFusion::Single),
            V5 => t(true, Some(4), None, LateFusion::Single),
            V6 => t(true, Some(5), None, LateFusion::Single),
            V7 => t(true, Some(7), None, LateFusion::Single),
            V8 => t(true, Some(4), Some(4), LateFusion::JointEncoder),
            V9 => Topology {
                depth_aware_scene: true,
                ..t(true, Some(4), Some(4), LateFusion::Sum)
            },
            V10 => t(true, Some(4), Some(4), LateFusion::Concat),
            V11 => t(true, Some(4), Some(4), LateFusion::Product),
        }
    }

    /// Variants with all three pathways can host the domain-adaptation heads.
    pub fn supports_da(&self) -> bool {
        self.head && self.scene_channels.is_some() && self.depth_channels.is_some()
    }
}

#[derive(Clone, Debug)]
struct Bottleneck {
    reduce: Conv2d,
    reduce_norm: GroupNorm,
    spatial: Conv2d,
    spatial_norm: GroupNorm,
    expand: Conv2d,
    shortcut: Option<Conv2d>,
}

#[derive(Clone, Debug)]
enum Backbone {
    Toy(Vec<(Conv2d, GroupNorm)>),
    Residual {
        stem: [(Conv2d, GroupNorm); 2],
        blocks: Vec<Bottleneck>,
        proj: Conv2d,
    },
}

impl Backbone {
    fn build<T: Float>(store: &mut ParamStore<T>, name: &str, in_channels: usize, cfg: &ModelConfig) -> Self {
        match cfg.backbone_kind {
            BackboneKind::Toy => {
                let c = cfg.backbone_channels;
                let widths = if cfg.toy_widths.is_empty() {
                    vec![(c / 4).max(8), (c / 2).max(8), c, c, c]
                } else {
                    cfg.toy_widths.clone()
                };
                let mut cin = in_channels;
                let convs = widths
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| {
                        let conv = Conv2d::new(store, &format!("{name}.conv{i}"), cin, w, 3, 2, 1);
                        let norm = GroupNorm::new(store, &format!("{name}.norm{i}"), w, NORM_GROUPS);
                        cin = w;
                        (conv, norm)
                    })
                    .collect();
                Backbone::Toy(convs)
            }
            BackboneKind::PaperResnet50Like => {
                let stem = [
                    (
                        Conv2d::new(store, &format!("{name}.stem0"), in_channels, 64, 7, 2, 3),
                        GroupNorm::new(store, &format!("{name}.stem0_norm"), 64, NORM_GROUPS),
                    ),
                    (
                        Conv2d::new(store, &format!("{name}.stem1"), 64, 64, 3, 2, 1),
                        GroupNorm::new(store, &format!("{name}.stem1_norm"), 64, NORM_GROUPS),
                    ),
                ];
                let mut blocks = Vec::new();
                let mut cin = 64;
                for (stage, (&depth, &mid)) in [3usize, 4, 6, 3].iter().zip(&[64usize, 128, 256, 512]).enumerate() {
                    let out = mid * 4;
                    for b in 0..depth {
                        let stride = if b == 0 && stage > 0 { 2 } else { 1 };
                        let p = format!("{name}.layer{stage}.{b}");
                        let shortcut = (stride != 1 || cin != out)
                            .then(|| Conv2d::new(store, &format!("{p}.shortcut"), cin, out, 1, stride, 0));
                        blocks.push(Bottleneck {
                            reduce: Conv2d::new(store, &format!("{p}.reduce"), cin, mid, 1, 1, 0),
                            reduce_norm: GroupNorm::new(store, &format!("{p}.reduce_norm"), mid, NORM_GROUPS),
                            spatial: Conv2d::new(store, &format!("{p}.spatial"), mid, mid, 3, stride, 1),
                            spatial_norm: GroupNorm::new(store, &format!("{p}.spatial_norm"), mid, NORM_GROUPS),
                            // zero-initialized so every block starts as its shortcut
                            expand: Conv2d::with_init(store, &format!("{p}.expand"), mid, out, 1, 1, 0, Init::Zeros),
                            shortcut,
                        });
                        cin = out;
                    }
                }
                let proj = Conv2d::new(store, &format!("{name}.proj"), cin, cfg.backbone_channels, 1, 1, 0);
                Backbone::Residual { stem, blocks, proj }
            }
        }
    }

    fn input_channels(&self) -> usize {
        match self {
            Backbone::Toy(convs) => convs[0].0.in_channels,
            Backbone::Residual { stem, .. } => stem[0].0.in_channels,
        }
    }

    fn forward<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: NodeId,
        depth: Option<&Tensor<T>>,
    ) -> Result<NodeId> {
        let first = |g: &mut Graph<T>, conv: &Conv2d, x| match depth {
            Some(d) => conv.forward_depth_aware(g, p, x, d),
            None => conv.forward(g, p, x),
        };
        match self {
            Backbone::Toy(convs) => {
                let mut h = first(g, &convs[0].0, x)?;
                h = convs[0].1.forward(g, p, h)?;
                h = g.relu(h);
                for (conv, norm) in &convs[1..] {
                    h = conv.forward(g, p, h)?;
                    h = norm.forward(g, p, h)?;
                    h = g.relu(h);
                }
                Ok(h)
            }
            Backbone::Residual { stem, blocks, proj } => {
                let mut h = first(g, &stem[0].0, x)?;
                h = stem[0].1.forward(g, p, h)?;
                h = g.relu(h);
                h = stem[1].0.forward(g, p, h)?;
                h = stem[1].1.forward(g, p, h)?;
                h = g.relu(h);
                for b in blocks {
                    let mut y = b.reduce.forward(g, p, h)?;
                    y = b.reduce_norm.forward(g, p, y)?;
                    y = g.relu(y);
                    y = b.spatial.forward(g, p, y)?;
                    y = b.spatial_norm.forward(g, p, y)?;
                    y = g.relu(y);
                    y = b.expand.forward(g, p, y)?;
                    let skip = match &b.shortcut {
                        Some(s) => s.forward(g, p, h)?,
                        None => h,
                    };
                    let sum = g.add(y, skip)?;
                    h = g.relu(sum);
                }
                let out = proj.forward(g, p, h)?;
                Ok(g.relu(out))
            }
        }
    }
}

#[derive(Clone, Debug)]
struct HeadNet {
    backbone: Backbone,
    fc1: Linear,
    fc2: Linear,
}

/// Conv3x3 then conv1x1 over concatenated embeddings, each normalized and rectified.
#[derive(Clone, Debug)]
struct FusionEncoder {
    mix: Conv2d,
    mix_norm: GroupNorm,
    reduce: Conv2d,
    reduce_norm: GroupNorm,
}

impl FusionEncoder {
    fn build<T: Float>(store: &mut ParamStore<T>, name: &str, cin: usize, c: usize, cout: usize) -> Self {
        Self {
            mix: Conv2d::new(store, &format!("{name}.mix"), cin, c, 3, 1, 1),
            mix_norm: GroupNorm::new(store, &format!("{name}.mix_norm"), c, NORM_GROUPS),
            reduce: Conv2d::new(store, &format!("{name}.reduce"), c, cout, 1, 1, 0),
            reduce_norm: GroupNorm::new(store, &format!("{name}.reduce_norm"), cout, NORM_GROUPS),
        }
    }

    fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, parts: &[NodeId]) -> Result<NodeId> {
        let x = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_channels(parts)?
        };
        let h = self.mix.forward(g, p, x)?;
        let h = self.mix_norm.forward(g, p, h)?;
        let h = g.relu(h);
        let h = self.reduce.forward(g, p, h)?;
        let h = self.reduce_norm.forward(g, p, h)?;
        Ok(g.relu(h))
    }
}

const NORM_GROUPS: usize = 8;

/// One transposed-convolution upsampling step `(kernel, stride, pad)`.
pub type UpStage = (usize, usize, usize);

const UP_OPTIONS: [UpStage; 5] = [(4, 4, 0), (4, 2, 1), (2, 2, 0), (3, 2, 0), (4, 2, 0)];

fn up_extent(n: usize, (k, s, p): UpStage) -> usize {
    (n - 1) * s + k - 2 * p
}

/// Shortest sequence of upsampling stages taking `from` to exactly `to`.
pub fn plan_upsampling(from: usize, to: usize) -> Option<Vec<UpStage>> {
    if from == to {
        return Some(Vec::new());
    }
    let mut frontier = vec![(from, Vec::<UpStage>::new())];
    let mut seen = std::collections::HashSet::from([from]);
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for (n, path) in frontier {
            for op in UP_OPTIONS {
                let m = up_extent(n, op);
                if m > to || !seen.insert(m) {
                    continue;
                }
                let mut p = path.clone();
                p.push(op);
                if m == to {
                    return Some(p);
                }
                next.push((m, p));
            }
        }
        frontier = next;
    }
    None
}

/// Exactly `stages` upsampling steps from `from` to `to`.
pub fn plan_upsampling_exact(from: usize, to: usize, stages: usize) -> Option<Vec<UpStage>> {
    if stages == 0 {
        return (from == to).then(Vec::new);
    }
    for op in UP_OPTIONS {
        let m = up_extent(from, op);
        if m > to {
            continue;
        }
        if let Some(mut rest) = plan_upsampling_exact(m, to, stages - 1) {
            rest.insert(0, op);
            return Some(rest);
        }
    }
    None
}

/// Stack of transposed convolutions. Intermediate stages are normalized and
/// rectified; the last stage is optionally rectified.
#[derive(Clone, Debug)]
pub(crate) struct UpDecoder {
    stages: Vec<ConvTranspose2d>,
    norms: Vec<GroupNorm>,
    final_relu: bool,
}

impl UpDecoder {
    pub(crate) fn build<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        plan: &[UpStage],
        cin: usize,
        cout: usize,
        final_relu: bool,
    ) -> Self {
        let mut c = cin;
        let mut stages = Vec::new();
        let mut norms = Vec::new();
        for (i, &(k, s, p)) in plan.iter().enumerate() {
            let last = i + 1 == plan.len();
            let out = if last { cout } else { (c / 2).max(8) };
            let stage_name = format!("{name}.up{i}");
            stages.push(if last && !final_relu {
                // a linear output starts at exactly zero
                ConvTranspose2d::with_init(store, &stage_name, c, out, k, s, p, Init::Zeros)
            } else {
                ConvTranspose2d::new(store, &stage_name, c, out, k, s, p)
            });
            if !last {
                norms.push(GroupNorm::new(store, &format!("{name}.norm{i}"), out, NORM_GROUPS));
            }
            c = out;
        }
        Self {
            stages,
            norms,
            final_relu,
        }
    }

    pub(crate) fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (i, st) in self.stages.iter().enumerate() {
            h = st.forward(g, p, h)?;
            if let Some(norm) = self.norms.get(i) {
                h = norm.forward(g, p, h)?;
            }
            if self.final_relu || i + 1 < self.stages.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub(crate) fn input_channels(&self) -> usize {
        self.stages[0].in_channels
    }

    pub(crate) fn len(&self) -> usize {
        self.stages.len()
    }
}

#[derive(Clone, Debug)]
struct InOutHead {
    fc1: Linear,
    fc2: Linear,
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardNodes {
    /// `[N, 1, G, G]`
    pub heatmap: NodeId,
    /// `[N, 1]`
    pub inout_logit: NodeId,
    /// Raw backbone embeddings, where the variant has the pathway.
    pub head: Option<NodeId>,
    pub scene: Option<NodeId>,
    pub depth: Option<NodeId>,
    /// `[N, h·w]`
    pub attention: Option<NodeId>,
}

/// Per-sample inference result.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub heatmap: HeatmapGrid,
    pub inout_logit: f64,
}

/// The network and its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    topology: Topology,
    pub params: ParamStore<T>,
    head: Option<HeadNet>,
    scene: Option<Backbone>,
    depth: Option<Backbone>,
    fuse_scene: Option<FusionEncoder>,
    fuse_depth: Option<FusionEncoder>,
    fuse_joint: Option<FusionEncoder>,
    decoder: UpDecoder,
    inout: InOutHead,
    pub(crate) da: Option<DaHeads>,
}

/// Builds the network described by `config`; initialization depends only on `config.seed`.
pub fn build_model<T: Float>(config: &ModelConfig) -> Result<Model<T>> {
    Model::new(config)
}

impl<T: Float> Model<T> {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let topo = Topology::of(config.fusion_variant);
        if config.da_enabled && !topo.supports_da() {
            return Err(GazeError::Config(format!(
                "domain adaptation needs head, scene and depth pathways; variant {} lacks one",
                config.fusion_variant
            )));
        }
        let mut store = ParamStore::new(config.seed);
        let c = config.backbone_channels;
        let c_fused = (c / 2).max(1);
        let hw = config.feature_size() * config.feature_size();

        let head = topo.head.then(|| {
            let backbone = Backbone::build(&mut store, "head.backbone", 3, config);
            let hidden = c.max(16);
            HeadNet {
                backbone,
                fc1: Linear::new(&mut store, "head.attn.fc1", c, hidden),
                fc2: Linear::with_init(&mut store, "head.attn.fc2", hidden, hw, Init::lecun(hidden)),
            }
        });
        let scene = topo
            .scene_channels
            .map(|ch| Backbone::build(&mut store, "scene.backbone", ch, config));
        let depth = topo
            .depth_channels
            .map(|ch| Backbone::build(&mut store, "depth.backbone", ch, config));
        let with_head = if topo.head { 2 * c } else { c };
        let (fuse_scene, fuse_depth, fuse_joint) = if topo.late_fusion == LateFusion::JointEncoder {
            (None, None, Some(FusionEncoder::build(&mut store, "fuse_joint", 3 * c, c, c_fused)))
        } else {
            (
                scene
                    .as_ref()
                    .map(|_| FusionEncoder::build(&mut store, "fuse_scene", with_head, c, c_fused)),
                depth
                    .as_ref()
                    .map(|_| FusionEncoder::build(&mut store, "fuse_depth", with_head, c, c_fused)),
                None,
            )
        };
        let dec_in = if topo.late_fusion == LateFusion::Concat { 2 * c_fused } else { c_fused };
        let mut plan = plan_upsampling(config.feature_size(), config.heatmap_size).ok_or_else(|| {
            GazeError::Config(format!(
                "no upsampling plan from {} to heatmap_size {}",
                config.feature_size(),
                config.heatmap_size
            ))
        })?;
        while plan.len() < 3 {
            plan.insert(0, (3, 1, 1));
        }
        let decoder = UpDecoder::build(&mut store, "decoder", &plan, dec_in, 1, false);
        let io_hidden = (c_fused / 2).max(8);
        let inout = InOutHead {
            fc1: Linear::new(&mut store, "inout.fc1", c_fused, io_hidden),
            fc2: Linear::with_init(&mut store, "inout.fc2", io_hidden, 1, Init::lecun(io_hidden)),
        };
        let da = if config.da_enabled {
            Some(DaHeads::build(&mut store, config)?)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            topology: topo,
            params: store,
            head,
            scene,
            depth,
            fuse_scene,
            fuse_depth,
            fuse_joint,
            decoder,
            inout,
            da,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn has_da(&self) -> bool {
        self.da.is_some()
    }

    pub fn scene_input_channels(&self) -> Option<usize> {
        self.scene.as_ref().map(|b| b.input_channels())
    }

    pub fn depth_input_channels(&self) -> Option<usize> {
        self.depth.as_ref().map(|b| b.input_channels())
    }

    pub fn decoder_input_channels(&self) -> usize {
        self.decoder.input_channels()
    }

    pub fn decoder_stages(&self) -> usize {
        self.decoder.len()
    }

    /// Same architecture and parameter values in another precision.
    pub fn cast<U: Float>(&self) -> Model<U> {
        let mut params = ParamStore::<U>::new(self.params.seed());
        for (_, name, t) in self.params.iter() {
            params.add(name, t.shape(), Init::Zeros);
        }
        for (id, _, t) in self.params.iter() {
            params.set(id, t.cast::<U>()).expect("same shapes");
        }
        Model {
            config: self.config.clone(),
            topology: self.topology,
            params,
            head: self.head.clone(),
            scene: self.scene.clone(),
            depth: self.depth.clone(),
            fuse_scene: self.fuse_scene.clone(),
            fuse_depth: self.fuse_depth.clone(),
            fuse_joint: self.fuse_joint.clone(),
            decoder: self.decoder.clone(),
            inout: self.inout.clone(),
            da: self.da.clone(),
        }
    }

    /// Head backbone embedding `[N, C, h, w]` and spatial attention `[N, h·w]`.
    pub fn head_pathway(&self, g: &mut Graph<T>, p: &Bound, head_crop: NodeId) -> Result<Option<(NodeId, NodeId)>> {
        let Some(h) = &self.head else {
            return Ok(None);
        };
        let e = h.backbone.forward(g, p, head_crop, None)?;
        let pooled = g.global_avg_pool(e)?;
        let z = h.fc1.forward(g, p, pooled)?;
        let z = g.relu(z);
        let z = h.fc2.forward(g, p, z)?;
        let attn = match self.config.attention_normalization {
            AttentionNormalization::Softmax => g.softmax(z)?,
            AttentionNormalization::Sigmoid => g.sigmoid(z),
        };
        Ok(Some((e, attn)))
    }

    /// Decoder over the late-fused embeddings.
    pub fn predict_heatmap(&self, g: &mut Graph<T>, p: &Bound, hs: NodeId, hd: Option<NodeId>) -> Result<NodeId> {
        let x = match (self.topology.late_fusion, hd) {
            (LateFusion::Sum, Some(hd)) => g.add(hs, hd)?,
            (LateFusion::Concat, Some(hd)) => g.concat_channels(&[hs, hd])?,
            (LateFusion::Product, Some(hd)) => channel_product(g, hs, hd)?,
            _ => hs,
        };
        self.decoder.forward(g, p, x)
    }

    /// In/out logit `[N, 1]` from the Hadamard product of the fused embeddings.
    pub fn predict_inout(&self, g: &mut Graph<T>, p: &Bound, hs: NodeId, hd: Option<NodeId>) -> Result<NodeId> {
        let fused = match hd {
            Some(hd) => channel_product(g, hs, hd)?,
            None => hs,
        };
        let pooled = g.global_avg_pool(fused)?;
        let z = self.inout.fc1.forward(g, p, pooled)?;
        let z = g.relu(z);
        Ok(self.inout.fc2.forward(g, p, z)?)
    }

    pub fn forward_graph(&self, g: &mut Graph<T>, p: &Bound, batch: &ModelBatch<T>) -> Result<ForwardNodes> {
        if batch.input_size() != self.config.input_size {
            return Err(GazeError::Config(format!(
                "batch input size {} does not match model input_size {}",
                batch.input_size(),
                self.config.input_size
            )));
        }
        let variant = self.config.fusion_variant;
        let head = match &self.head {
            Some(_) => {
                let x = g.input(batch.head_crop.clone());
                self.head_pathway(g, p, x)?
            }
            None => None,
        };
        let scene = match (&self.scene, batch.scene_input(variant)) {
            (Some(b), Some(x)) => {
                let xn = g.input(x);
                let depth = self.topology.depth_aware_scene.then_some(&batch.depth_gray);
                Some(b.forward(g, p, xn, depth)?)
            }
            _ => None,
        };
        let depth = match (&self.depth, batch.depth_input(variant)) {
            (Some(b), Some(x)) => {
                let xn = g.input(x);
                Some(b.forward(g, p, xn, None)?)
            }
            _ => None,
        };
        let attend = |g: &mut Graph<T>, e: Option<NodeId>| -> Result<Option<NodeId>> {
            match (e, head) {
                (Some(e), Some((_, attn))) => Ok(Some(apply_attention(g, e, attn)?)),
                (e, _) => Ok(e),
            }
        };
        let scene_star = attend(g, scene)?;
        let depth_star = attend(g, depth)?;
        let e_h = head.map(|h| h.0);

        let (hs, hd) = if let Some(joint) = &self.fuse_joint {
            let parts: Vec<NodeId> = [e_h, scene_star, depth_star].into_iter().flatten().collect();
            (joint.forward(g, p, &parts)?, None)
        } else {
            let fuse = |g: &mut Graph<T>, enc: &Option<FusionEncoder>, x: Option<NodeId>| -> Result<Option<NodeId>> {
                match (enc, x) {
                    (Some(enc), Some(x)) => {
                        let parts: Vec<NodeId> = [e_h, Some(x)].into_iter().flatten().collect();
                        Ok(Some(enc.forward(g, p, &parts)?))
                    }
                    _ => Ok(None),
                }
            };
            let hs = fuse(g, &self.fuse_scene, scene_star)?;
            let hd = fuse(g, &self.fuse_depth, depth_star)?;
            match (hs, hd) {
                (Some(hs), hd) => (hs, hd),
                (None, Some(hd)) => (hd, None),
                (None, None) => return Err(GazeError::Config("variant has no scene or depth pathway".into())),
            }
        };
        let heatmap = self.predict_heatmap(g, p, hs, hd)?;
        let inout_logit = self.predict_inout(g, p, hs, hd)?;
        Ok(ForwardNodes {
            heatmap,
            inout_logit,
            head: e_h,
            scene,
            depth,
            attention: head.map(|h| h.1),
        })
    }

    /// Inference with frozen parameters.
    pub fn predict(&self, batch: &ModelBatch<T>) -> Result<Vec<ModelOutput>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let out = self.forward_graph(&mut g, &p, batch)?;
        let heat = g.value(out.heatmap);
        let logits = g.value(out.inout_logit);
        let size = self.config.heatmap_size;
        (0..batch.len())
            .map(|i| {
                let data = heat.outer(i).iter().map(|v| v.as_f64()).collect();
                Ok(ModelOutput {
                    heatmap: HeatmapGrid::new(size, size, data)?,
                    inout_logit: logits.data()[i].as_f64(),
                })
            })
            .collect()
    }
}

/// `out[n, c, i, j] = e[n, c, i, j] · attn[n, i·w + j]`.
pub fn apply_attention<T: Float>(g: &mut Graph<T>, e: NodeId, attn: NodeId) -> Result<NodeId> {
    let es = g.shape(e).to_vec();
    let a = g.shape(attn).to_vec();
    if es.len() != 4 || a.is_empty() || a[0] != es[0] || a.iter().skip(1).product::<usize>() != es[2] * es[3] {
        return Err(GazeError::Config(format!(
            "attention shape {a:?} does not match feature map {es:?}"
        )));
    }
    Ok(g.mul_spatial(e, attn)?)
}

/// Per-channel, per-position (Hadamard) product of two equal-shape maps.
pub fn channel_product<T: Float>(g: &mut Graph<T>, a: NodeId, b: NodeId) -> Result<NodeId> {
    if g.shape(a) != g.shape(b) {
        return Err(GazeError::Config(format!(
            "channel product of {:?} and {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(g.mul(a, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsampling_plans_hit_the_target() {
        for (from, to) in [(2, 64), (7, 64), (4, 64), (1, 64), (3, 32), (2, 16)] {
            let plan = plan_upsampling(from, to).unwrap();
            assert_eq!(plan.iter().fold(from, |n, &op| up_extent(n, op)), to, "{from}->{to}");
        }
        assert_eq!(plan_upsampling(2, 64).unwrap().len(), 3);
    }

    #[test]
    fn exact_plans_for_translation() {
        for (from, to) in [(2, 64), (7, 224), (4, 128)] {
            let plan = plan_upsampling_exact(from, to, 4).unwrap();
            assert_eq!(plan.len(), 4);
            assert_eq!(plan.iter().fold(from, |n, &op| up_extent(n, op)), to);
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = ModelConfig::toy(64, 16).with_seed(4);
        let a = build_model::<f32>(&cfg).unwrap();
        let b = build_model::<f32>(&cfg).unwrap();
        for ((_, _, x), (_, _, y)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn v10_doubles_decoder_input() {
        let base = ModelConfig::toy(64, 16);
        let full = build_model::<f32>(&base).unwrap();
        let v10 = build_model::<f32>(&base.clone().with_variant(FusionVariant::V10)).unwrap();
        let v11 = build_model::<f32>(&base.with_variant(FusionVariant::V11)).unwrap();
        assert_eq!(full.decoder_input_channels(), 8);
        assert_eq!(v11.decoder_input_channels(), 8);
        assert_eq!(v10.decoder_input_channels(), 16);
    }

    #[test]
    fn da_requires_all_pathways() {
        let mut cfg = ModelConfig::toy(64, 16).with_variant(FusionVariant::V2);
        cfg.da_enabled = true;
        assert!(matches!(build_model::<f32>(&cfg), Err(GazeError::Config(_))));
    }
}
