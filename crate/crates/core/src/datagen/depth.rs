//! Depth sources for scenes that ship without a depth map.

use std::collections::HashMap;
use std::sync::RwLock;

use crate::types::{ImagePlane, Sample};

/// Produces a relative depth map `[1,H,W]` for an RGB scene.
pub trait DepthProvider: Send + Sync {
    fn estimate(&self, scene: &ImagePlane) -> ImagePlane;
}

/// Pseudo-depth from luminance: brighter is nearer, `depth = clamp(1 - L)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LuminanceDepth;

impl DepthProvider for LuminanceDepth {
    fn estimate(&self, scene: &ImagePlane) -> ImagePlane {
        let (h, w) = (scene.height(), scene.width());
        let hw = h * w;
        let data = (0..hw)
            .map(|p| {
                let l = if scene.channels() >= 3 {
                    0.299 * scene.data()[p] + 0.587 * scene.data()[hw + p] + 0.114 * scene.data()[2 * hw + p]
                } else {
                    scene.data()[p]
                };
                (1.0 - l).clamp(0.0, 1.0)
            })
            .collect();
        ImagePlane::new(1, h, w, data).expect("shape computed from scene")
    }
}

fn scene_key(scene: &ImagePlane) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let dims = [scene.channels(), scene.height(), scene.width()];
    let bytes = dims
        .iter()
        .flat_map(|d| (*d as u64).to_le_bytes())
        .chain(scene.data().iter().flat_map(|v| v.to_bits().to_le_bytes()));
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Returns the generator's layered depth for scenes it has seen and falls
/// back to another provider for anything else.
pub struct SyntheticDepthProvider<F = LuminanceDepth> {
    known: RwLock<HashMap<u64, ImagePlane>>,
    fallback: F,
}

impl SyntheticDepthProvider<LuminanceDepth> {
    pub fn new() -> Self {
        Self::with_fallback(LuminanceDepth)
    }
}

impl Default for SyntheticDepthProvider<LuminanceDepth> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: DepthProvider> SyntheticDepthProvider<F> {
    pub fn with_fallback(fallback: F) -> Self {
        Self {
            known: RwLock::new(HashMap::new()),
            fallback,
        }
    }

    pub fn register(&self, scene: &ImagePlane, depth: ImagePlane) {
        self.known.write().expect("depth registry poisoned").insert(scene_key(scene), depth);
    }

    pub fn register_samples<'a>(&self, samples: impl IntoIterator<Item = &'a Sample>) {
        for s in samples {
            self.register(&s.scene, s.depth.clone());
        }
    }

    pub fn len(&self) -> usize {
        self.known.read().expect("depth registry poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<F: DepthProvider> DepthProvider for SyntheticDepthProvider<F> {
    fn estimate(&self, scene: &ImagePlane) -> ImagePlane {
        if let Some(d) = self.known.read().expect("depth registry poisoned").get(&scene_key(scene)) {
            return d.clone();
        }
        self.fallback.estimate(scene)
    }
}
