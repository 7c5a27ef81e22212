//! Dataset construction: synthetic generation, depth providers, file formats.

mod depth;
mod io;
mod synth;

pub use depth::{DepthProvider, LuminanceDepth, SyntheticDepthProvider};
pub use io::{
    load_annotations, read_depth_png, read_rgb_png, write_dataset, write_depth_png, write_rgb_png,
    AnnotationRecord,
};
pub use synth::{
    generate_synthetic, generate_synthetic_scenes, DomainStyle, SceneMeta, SynthScene, SynthSpec, ALT_DEPTH,
    HEAD_DEPTH, HEAD_RADIUS, MARKER_RADIUS, OFF_RAY_MIN_ANGLE_DEG, ON_RAY_PROBABILITY, TARGET_DEPTH,
};
