//! Shared data model: image planes, annotations, samples, heatmaps and the
//! model configuration.
//!
//! Coordinates are normalized to `[0, 1]` with the origin at the top-left
//! corner, `x` to the right and `y` downwards.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GazeError, Result};

/// Dense `[channels × height × width]` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePlane {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    /// Builds a plane; only the buffer length is checked here, value and size
    /// invariants are reported by [`ImagePlane::violations`].
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(GazeError::Config(format!(
                "image buffer has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn violations(&self, what: &str) -> Vec<String> {
        let mut v = Vec::new();
        if self.channels != 1 && self.channels != 3 {
            v.push(format!("{what}: channels must be 1 or 3, got {}", self.channels));
        }
        if self.height < 8 || self.width < 8 {
            v.push(format!(
                "{what}: size {}x{} below the 8x8 minimum",
                self.height, self.width
            ));
        }
        if let Some(bad) = self.data.iter().find(|x| !x.is_finite() || **x < 0.0 || **x > 1.0) {
            v.push(format!("{what}: value {bad} outside [0,1]"));
        }
        v
    }
}

/// Normalized axis-aligned head box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl HeadBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0) {
            v.push(format!("head_box: coordinates {coords:?} outside [0,1]"));
        }
        if self.x_min >= self.x_max {
            v.push(format!(
                "head_box: ordering requires x_min < x_max (got {} >= {})",
                self.x_min, self.x_max
            ));
        }
        if self.y_min >= self.y_max {
            v.push(format!(
                "head_box: ordering requires y_min < y_max (got {} >= {})",
                self.y_min, self.y_max
            ));
        }
        v
    }
}

/// Ground-truth gaze: one point per annotator plus an optional in-frame flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeAnnotation {
    pub points: Vec<[f64; 2]>,
    pub inside_frame: Option<bool>,
}

impl GazeAnnotation {
    pub fn single(x: f64, y: f64) -> Self {
        Self {
            points: vec![[x, y]],
            inside_frame: Some(true),
        }
    }

    /// Whether the gaze target is inside the frame (absent flag means inside).
    pub fn is_inside(&self) -> bool {
        self.inside_frame.unwrap_or(true)
    }

    /// Mean annotator point; `None` for an empty list.
    pub fn mean_point(&self) -> Option<[f64; 2]> {
        if self.points.is_empty() {
            return None;
        }
        let n = self.points.len() as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
        Some([sx / n, sy / n])
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (i, p) in self.points.iter().enumerate() {
            for (axis, val) in ["x", "y"].iter().zip(p) {
                if !val.is_finite() || *val < 0.0 || *val > 1.0 {
                    v.push(format!("points[{i}].{axis} out of range: {val}"));
                }
            }
        }
        if self.points.is_empty() && self.is_inside() {
            v.push("annotation: points must be non-empty for in-frame gaze".into());
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainRole {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainLabel {
    pub name: String,
    pub role: DomainRole,
}

impl DomainLabel {
    pub fn new(name: impl Into<String>, role: DomainRole) -> Self {
        Self {
            name: name.into(),
            role,
        }
    }
}

/// One scene observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub scene: ImagePlane,
    pub depth: ImagePlane,
    pub head_box: HeadBox,
    pub annotation: GazeAnnotation,
    pub domain: DomainLabel,
    pub sample_id: String,
}

/// Every invariant violation of a sample and its nested values; empty iff valid.
pub fn validate_sample(sample: &Sample) -> Vec<String> {
    let mut v = sample.scene.violations("scene");
    if sample.scene.channels() != 3 {
        v.push(format!(
            "scene: expected 3 channels, got {}",
            sample.scene.channels()
        ));
    }
    v.extend(sample.depth.violations("depth"));
    if sample.depth.channels() != 1 {
        v.push(format!(
            "depth: expected 1 channel, got {}",
            sample.depth.channels()
        ));
    }
    if (sample.scene.height(), sample.scene.width()) != (sample.depth.height(), sample.depth.width()) {
        v.push(format!(
            "shape mismatch: scene {}x{} vs depth {}x{}",
            sample.scene.height(),
            sample.scene.width(),
            sample.depth.height(),
            sample.depth.width()
        ));
    }
    v.extend(sample.head_box.violations());
    v.extend(sample.annotation.violations());
    if sample.sample_id.is_empty() {
        v.push("sample_id: empty".into());
    }
    v
}

/// Non-negative 2D score grid, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl HeatmapGrid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(GazeError::Config(format!(
                "heatmap buffer has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// `(row, col)` of the maximum; ties resolve to the lowest row-major index.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn violations(&self, ground_truth: bool) -> Vec<String> {
        let mut v = Vec::new();
        if let Some(bad) = self.data.iter().find(|x| !x.is_finite() || **x < 0.0) {
            v.push(format!("heatmap: value {bad} is negative or non-finite"));
        }
        if ground_truth && self.max() > 1.0 {
            v.push(format!("heatmap: ground-truth peak {} exceeds 1", self.max()));
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Bottleneck residual network with a final 1×1 embedding layer.
    PaperResnet50Like,
    /// Five stride-2 convolution blocks.
    Toy,
}

/// Network topology selector: the full model plus the eleven ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionVariant {
    Full,
    /// Scene network only.
    V1,
    /// Scene and head networks.
    V2,
    /// Grayscale depth and head networks.
    V3,
    /// Colored depth and head networks.
    V4,
    /// RGB + grayscale depth scene input, no mask, no depth network.
    V5,
    /// RGB + mask + grayscale depth scene input.
    V6,
    /// RGB + mask + colored depth scene input.
    V7,
    /// Single fusion encoder over head, scene and depth features.
    V8,
    /// Depth-aware scene convolution, no depth network.
    V9,
    /// Late fusion by concatenation.
    V10,
    /// Late fusion by channel-wise product.
    V11,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 12] = [
        FusionVariant::Full,
        FusionVariant::V1,
        FusionVariant::V2,
        FusionVariant::V3,
        FusionVariant::V4,
        FusionVariant::V5,
        FusionVariant::V6,
        FusionVariant::V7,
        FusionVariant::V8,
        FusionVariant::V9,
        FusionVariant::V10,
        FusionVariant::V11,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionVariant::Full => "full",
            FusionVariant::V1 => "v1",
            FusionVariant::V2 => "v2",
            FusionVariant::V3 => "v3",
            FusionVariant::V4 => "v4",
            FusionVariant::V5 => "v5",
            FusionVariant::V6 => "v6",
            FusionVariant::V7 => "v7",
            FusionVariant::V8 => "v8",
            FusionVariant::V9 => "v9",
            FusionVariant::V10 => "v10",
            FusionVariant::V11 => "v11",
        }
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionVariant {
    type Err = GazeError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| GazeError::UnknownVariant(s.to_string()))
    }
}

impl Serialize for FusionVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for FusionVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionNormalization {
    Softmax,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossWeighting {
    Fixed,
    LearnableUncertainty,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    pub heatmap_size: usize,
    pub backbone_kind: BackboneKind,
    pub backbone_channels: usize,
    /// Widths of the five toy stages; empty derives them from `backbone_channels`.
    pub toy_widths: Vec<usize>,
    pub fusion_variant: FusionVariant,
    pub attention_normalization: AttentionNormalization,
    pub da_enabled: bool,
    pub grl_lambda: f64,
    pub loss_weighting: LossWeighting,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 224,
            heatmap_size: 64,
            backbone_kind: BackboneKind::PaperResnet50Like,
            backbone_channels: 1024,
            toy_widths: Vec::new(),
            fusion_variant: FusionVariant::Full,
            attention_normalization: AttentionNormalization::Softmax,
            da_enabled: false,
            grl_lambda: 1.0,
            loss_weighting: LossWeighting::LearnableUncertainty,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration: toy backbone at the given input size and width.
    pub fn toy(input_size: usize, channels: usize) -> Self {
        Self {
            input_size,
            backbone_kind: BackboneKind::Toy,
            backbone_channels: channels,
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, v: FusionVariant) -> Self {
        self.fusion_variant = v;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Spatial side of every backbone embedding.
    pub fn feature_size(&self) -> usize {
        self.input_size / 32
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.input_size < 32 || self.input_size % 32 != 0 {
            v.push(format!(
                "input_size must be a positive multiple of 32, got {}",
                self.input_size
            ));
        }
        if self.heatmap_size < 8 {
            v.push(format!("heatmap_size must be >= 8, got {}", self.heatmap_size));
        }
        if self.backbone_channels < 2 {
            v.push(format!(
                "backbone_channels must be >= 2, got {}",
                self.backbone_channels
            ));
        }
        if !self.toy_widths.is_empty() && self.toy_widths.len() != 5 {
            v.push(format!(
                "toy_widths must list 5 stage widths, got {}",
                self.toy_widths.len()
            ));
        }
        if let Some(&last) = self.toy_widths.last() {
            if last != self.backbone_channels {
                v.push(format!(
                    "toy_widths must end at backbone_channels ({}), got {last}",
                    self.backbone_channels
                ));
            }
        }
        if self.toy_widths.contains(&0) {
            v.push("toy_widths entries must be positive".to_string());
        }
        if !(self.grl_lambda.is_finite() && self.grl_lambda >= 0.0) {
            v.push(format!("grl_lambda must be nonnegative, got {}", self.grl_lambda));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(GazeError::Config(v.join("; ")))
        }
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub(crate) fn tiny_sample() -> Sample {
        Sample {
            scene: ImagePlane::filled(3, 16, 16, 0.5),
            depth: ImagePlane::filled(1, 16, 16, 0.25),
            head_box: HeadBox::new(0.1, 0.1, 0.3, 0.3),
            annotation: GazeAnnotation::single(0.5, 0.5),
            domain: DomainLabel::new("style_a", DomainRole::Source),
            sample_id: "s0".into(),
        }
    }
}
