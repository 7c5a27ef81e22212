//! Deterministic synthetic gaze scenes.
//!
//! Every scene holds a head disc whose dark wedge points along the gaze
//! direction, a faint gaze ray from the head to the image border, one target
//! disc on that ray and a number of identical-looking distractor discs placed
//! at least [`OFF_RAY_MIN_ANGLE_DEG`] away from the ray. With probability 1/2
//! an extra distractor sits *on* the ray at a different depth layer, so only
//! depth tells it apart from the target.
//!
//! Depth is a layered plane: the head is always the nearest layer, the target
//! always sits on [`TARGET_DEPTH`], on-ray distractors on [`ALT_DEPTH`], and
//! the background recedes from near-bottom to far-top.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GazeError, Result};
use crate::types::{DomainLabel, DomainRole, GazeAnnotation, HeadBox, ImagePlane, Sample};

pub const HEAD_RADIUS: f64 = 0.075;
pub const MARKER_RADIUS: f64 = 0.05;
pub const OFF_RAY_MIN_ANGLE_DEG: f64 = 15.0;
pub const HEAD_DEPTH: f64 = 0.10;
pub const TARGET_DEPTH: f64 = 0.35;
pub const ALT_DEPTH: f64 = 0.60;
pub const ON_RAY_PROBABILITY: f64 = 0.5;

const MIN_TARGET_DISTANCE: f64 = 0.22;
const BORDER_MARGIN: f64 = MARKER_RADIUS + 0.01;
const MAX_ATTEMPTS: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainStyle {
    StyleA,
    StyleB,
}

impl DomainStyle {
    pub fn name(&self) -> &'static str {
        match self {
            DomainStyle::StyleA => "style_a",
            DomainStyle::StyleB => "style_b",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" | "style_a" => Some(DomainStyle::StyleA),
            "b" | "style_b" => Some(DomainStyle::StyleB),
            _ => None,
        }
    }

    fn palette(&self) -> Palette {
        match self {
            DomainStyle::StyleA => Palette {
                bg_top: [0.86, 0.80, 0.68],
                bg_bottom: [0.70, 0.64, 0.52],
                noise: 0.03,
                stripes: 0.0,
                head: [0.95, 0.78, 0.62],
                wedge: [0.35, 0.18, 0.10],
                ray: [0.40, 0.40, 0.45],
            },
            DomainStyle::StyleB => Palette {
                bg_top: [0.22, 0.30, 0.40],
                bg_bottom: [0.10, 0.16, 0.24],
                noise: 0.10,
                stripes: 0.06,
                head: [0.55, 0.60, 0.95],
                wedge: [0.95, 0.90, 0.20],
                ray: [0.75, 0.75, 0.70],
            },
        }
    }
}

struct Palette {
    bg_top: [f64; 3],
    bg_bottom: [f64; 3],
    noise: f64,
    stripes: f64,
    head: [f64; 3],
    wedge: [f64; 3],
    ray: [f64; 3],
}

const MARKER_COLOR: [f64; 3] = [0.15, 0.72, 0.30];
const WEDGE_HALF_ANGLE: f64 = 35.0 * PI / 180.0;

/// Parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub image_size: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub domain_style: DomainStyle,
    pub distractor_count: usize,
    /// Role recorded in every sample's domain label.
    #[serde(default = "default_role")]
    pub role: DomainRole,
}

fn default_role() -> DomainRole {
    DomainRole::Source
}

impl SynthSpec {
    pub fn new(image_size: usize, n_samples: usize, seed: u64, domain_style: DomainStyle) -> Self {
        Self {
            image_size,
            n_samples,
            seed,
            domain_style,
            distractor_count: 2,
            role: DomainRole::Source,
        }
    }

    pub fn with_distractors(mut self, n: usize) -> Self {
        self.distractor_count = n;
        self
    }

    pub fn with_role(mut self, role: DomainRole) -> Self {
        self.role = role;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.image_size < 32 {
            v.push(format!("image_size must be >= 32, got {}", self.image_size));
        }
        if self.n_samples < 1 {
            v.push("n_samples must be >= 1".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(GazeError::Config(v.join("; ")))
        }
    }
}

/// Ground-truth geometry of a generated scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneMeta {
    pub head_center: [f64; 2],
    /// Gaze/wedge orientation in radians (image axes, y down).
    pub orientation: f64,
    pub target: [f64; 2],
    /// `(center, depth layer, on_ray)` of every distractor.
    pub distractors: Vec<([f64; 2], f64, bool)>,
}

impl SceneMeta {
    pub fn has_on_ray_distractor(&self) -> bool {
        self.distractors.iter().any(|d| d.2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub sample: Sample,
    pub meta: SceneMeta,
}

/// Generates `spec.n_samples` scenes; identical specs give identical output.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<Sample>> {
    Ok(generate_synthetic_scenes(spec)?
        .into_iter()
        .map(|s| s.sample)
        .collect())
}

pub fn generate_synthetic_scenes(spec: &SynthSpec) -> Result<Vec<SynthScene>> {
    spec.validate()?;
    (0..spec.n_samples).map(|i| generate_one(spec, i)).collect()
}

/// Quantizes to the 8-bit grid so scenes survive PNG storage bit-exactly.
fn q8(v: f64) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8 as f32 / 255.0
}

/// Quantizes to the 16-bit grid (depth storage).
pub(crate) fn q16(v: f64) -> f32 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16 as f32 / 65535.0
}

fn angle_between(a: f64, b: f64) -> f64 {
    let mut d = (a - b) % (2.0 * PI);
    if d < 0.0 {
        d += 2.0 * PI;
    }
    d.min(2.0 * PI - d)
}

/// Distance along direction `theta` from `p` to the unit-square border shrunk by `margin`.
fn exit_distance(p: [f64; 2], theta: f64, margin: f64) -> f64 {
    let (dx, dy) = (theta.cos(), theta.sin());
    let mut t = f64::INFINITY;
    for (pos, d) in [(p[0], dx), (p[1], dy)] {
        if d > 1e-12 {
            t = t.min((1.0 - margin - pos) / d);
        } else if d < -1e-12 {
            t = t.min((margin - pos) / d);
        }
    }
    t.max(0.0)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn place(spec: &SynthSpec, index: usize, rng: &mut ChaCha8Rng) -> Result<SceneMeta> {
    let lo = HEAD_RADIUS + 0.05;
    for _ in 0..MAX_ATTEMPTS {
        let head = [rng.random_range(lo..1.0 - lo), rng.random_range(lo..1.0 - lo)];
        let theta = rng.random_range(0.0..2.0 * PI);
        let reach = exit_distance(head, theta, BORDER_MARGIN);
        if reach < MIN_TARGET_DISTANCE + 0.02 {
            continue;
        }
        let along = |t: f64| [head[0] + t * theta.cos(), head[1] + t * theta.sin()];
        let t_target = rng.random_range(MIN_TARGET_DISTANCE..reach);
        let target = along(t_target);
        let mut distractors: Vec<([f64; 2], f64, bool)> = Vec::new();

        if rng.random_bool(ON_RAY_PROBABILITY) {
            let gap = 2.0 * MARKER_RADIUS + 0.03;
            for _ in 0..30 {
                let t = rng.random_range(MIN_TARGET_DISTANCE..reach);
                if (t - t_target).abs() >= gap {
                    distractors.push((along(t), ALT_DEPTH, true));
                    break;
                }
            }
        }

        let mut placed_all = true;
        for _ in 0..spec.distractor_count {
            let mut ok = false;
            for _ in 0..200 {
                let m = BORDER_MARGIN;
                let p = [rng.random_range(m..1.0 - m), rng.random_range(m..1.0 - m)];
                let rel = [p[0] - head[0], p[1] - head[1]];
                if dist(p, head) < HEAD_RADIUS + MARKER_RADIUS + 0.03 {
                    continue;
                }
                let ang = angle_between(rel[1].atan2(rel[0]), theta);
                if ang < OFF_RAY_MIN_ANGLE_DEG.to_radians() {
                    continue;
                }
                let clear = 2.0 * MARKER_RADIUS + 0.02;
                if dist(p, target) < clear || distractors.iter().any(|d| dist(p, d.0) < clear) {
                    continue;
                }
                let layer = if rng.random_bool(0.5) { TARGET_DEPTH } else { ALT_DEPTH };
                distractors.push((p, layer, false));
                ok = true;
                break;
            }
            if !ok {
                placed_all = false;
                break;
            }
        }
        if !placed_all {
            continue;
        }
        return Ok(SceneMeta {
            head_center: head,
            orientation: theta,
            target,
            distractors,
        });
    }
    Err(GazeError::DegenerateGeometry {
        index,
        attempts: MAX_ATTEMPTS,
    })
}

fn generate_one(spec: &SynthSpec, index: usize) -> Result<SynthScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let meta = place(spec, index, &mut rng)?;
    let n = spec.image_size;
    let nf = n as f64;
    let pal = spec.domain_style.palette();

    let mut rgb = vec![[0.0f64; 3]; n * n];
    let mut depth = vec![0.0f64; n * n];
    let stripe_phase = rng.random_range(0.0..2.0 * PI);
    for i in 0..n {
        let y = (i as f64 + 0.5) / nf;
        for j in 0..n {
            let x = (j as f64 + 0.5) / nf;
            let noise = pal.noise * (rng.random::<f64>() * 2.0 - 1.0);
            let stripe = pal.stripes * (2.0 * PI * 6.0 * (x + y) + stripe_phase).sin();
            for c in 0..3 {
                rgb[i * n + j][c] = pal.bg_top[c] + (pal.bg_bottom[c] - pal.bg_top[c]) * y + noise + stripe;
            }
            depth[i * n + j] = 1.0 - 0.3 * y;
        }
    }

    // gaze ray, ~1px wide, from the head rim to the border
    let (dx, dy) = (meta.orientation.cos(), meta.orientation.sin());
    let hc = [meta.head_center[0] * nf, meta.head_center[1] * nf];
    for i in 0..n {
        for j in 0..n {
            let px = j as f64 + 0.5 - hc[0];
            let py = i as f64 + 0.5 - hc[1];
            let along = px * dx + py * dy;
            let across = (px * dy - py * dx).abs();
            if along > HEAD_RADIUS * nf && across <= 0.6 {
                for c in 0..3 {
                    let v = &mut rgb[i * n + j][c];
                    *v = 0.2 * *v + 0.8 * pal.ray[c];
                }
            }
        }
    }

    let mut disc = |center: [f64; 2], radius: f64, layer: f64, rgb: &mut Vec<[f64; 3]>, color: &dyn Fn(f64, f64) -> [f64; 3]| {
        let (cx, cy, r) = (center[0] * nf, center[1] * nf, radius * nf);
        let y0 = ((cy - r).floor().max(0.0)) as usize;
        let y1 = ((cy + r).ceil().min(nf - 1.0)) as usize;
        let x0 = ((cx - r).floor().max(0.0)) as usize;
        let x1 = ((cx + r).ceil().min(nf - 1.0)) as usize;
        for i in y0..=y1 {
            for j in x0..=x1 {
                let px = j as f64 + 0.5 - cx;
                let py = i as f64 + 0.5 - cy;
                let rr = (px * px + py * py).sqrt();
                if rr <= r {
                    rgb[i * n + j] = color(py.atan2(px), rr / r);
                    depth[i * n + j] = layer;
                }
            }
        }
    };
    let marker = |_: f64, _: f64| MARKER_COLOR;
    for d in &meta.distractors {
        disc(d.0, MARKER_RADIUS, d.1, &mut rgb, &marker);
    }
    disc(meta.target, MARKER_RADIUS, TARGET_DEPTH, &mut rgb, &marker);
    let theta = meta.orientation;
    let head_color = move |ang: f64, rel: f64| {
        if rel > 0.25 && angle_between(ang, theta) <= WEDGE_HALF_ANGLE {
            pal.wedge
        } else {
            pal.head
        }
    };
    disc(meta.head_center, HEAD_RADIUS, HEAD_DEPTH, &mut rgb, &head_color);

    let mut scene = vec![0.0f32; 3 * n * n];
    for (p, px) in rgb.iter().enumerate() {
        for c in 0..3 {
            scene[c * n * n + p] = q8(px[c]);
        }
    }
    let depth: Vec<f32> = depth.iter().map(|&d| q16(d)).collect();

    let hb = HeadBox::new(
        (meta.head_center[0] - HEAD_RADIUS).max(0.0),
        (meta.head_center[1] - HEAD_RADIUS).max(0.0),
        (meta.head_center[0] + HEAD_RADIUS).min(1.0),
        (meta.head_center[1] + HEAD_RADIUS).min(1.0),
    );
    let mut sample_id = format!("{}-s{}-{:05}", spec.domain_style.name(), spec.seed, index);
    if meta.has_on_ray_distractor() {
        sample_id.push_str("-onray");
    }
    let sample = Sample {
        scene: ImagePlane::new(3, n, n, scene)?,
        depth: ImagePlane::new(1, n, n, depth)?,
        head_box: hb,
        annotation: GazeAnnotation::single(meta.target[0], meta.target[1]),
        domain: DomainLabel::new(spec.domain_style.name(), spec.role),
        sample_id,
    };
    Ok(SynthScene { sample, meta })
}
