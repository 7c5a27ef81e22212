//! Canonical on-disk dataset: PNG images plus one JSON annotation per line.
//!
//! ```text
//! {"sample_id":"a1","image_path":"images/a1.png","depth_path":"depth/a1.png",
//!  "head_box":[0.1,0.1,0.3,0.3],"gaze_points":[[0.6,0.4]],"inside_frame":true,
//!  "domain":"style_a"}
//! ```
//!
//! Paths are relative to the image root. `depth_path` and `inside_frame` are
//! optional; without a depth file the [`DepthProvider`] estimates one.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::depth::DepthProvider;
use crate::error::{GazeError, Result};
use crate::types::{validate_sample, DomainLabel, DomainRole, GazeAnnotation, HeadBox, ImagePlane, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<String>,
    pub head_box: [f64; 4],
    pub gaze_points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inside_frame: Option<bool>,
    pub domain: String,
}

fn field_err(line: usize, field: &str, message: impl Into<String>) -> GazeError {
    GazeError::Annotation {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_record(line_no: usize, text: &str) -> Result<AnnotationRecord> {
    let value: Value = serde_json::from_str(text).map_err(|e| field_err(line_no, "<record>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| field_err(line_no, "<record>", "expected a JSON object"))?;
    for key in ["sample_id", "image_path", "head_box", "gaze_points", "domain"] {
        if !obj.contains_key(key) {
            return Err(field_err(line_no, key, "missing required field"));
        }
    }
    for (key, v) in obj {
        let check = match key.as_str() {
            "sample_id" | "image_path" | "domain" => serde_json::from_value::<String>(v.clone()).err(),
            "depth_path" => serde_json::from_value::<Option<String>>(v.clone()).err(),
            "head_box" => serde_json::from_value::<[f64; 4]>(v.clone()).err(),
            "gaze_points" => serde_json::from_value::<Vec<[f64; 2]>>(v.clone()).err(),
            "inside_frame" => serde_json::from_value::<Option<bool>>(v.clone()).err(),
            _ => return Err(field_err(line_no, key, "unknown field")),
        };
        if let Some(e) = check {
            return Err(field_err(line_no, key, e.to_string()));
        }
    }
    let rec: AnnotationRecord = serde_json::from_value(value).map_err(|e| field_err(line_no, "<record>", e.to_string()))?;
    if rec.gaze_points.is_empty() {
        return Err(field_err(line_no, "gaze_points", "at least one gaze point is required"));
    }
    Ok(rec)
}

pub fn read_rgb_png(path: &Path) -> Result<ImagePlane> {
    if !path.exists() {
        return Err(GazeError::MissingImage(path.to_path_buf()));
    }
    let img = image::open(path)
        .map_err(|e| GazeError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    ImagePlane::new(3, h, w, data)
}

pub fn read_depth_png(path: &Path) -> Result<ImagePlane> {
    if !path.exists() {
        return Err(GazeError::MissingImage(path.to_path_buf()));
    }
    let img = image::open(path)
        .map_err(|e| GazeError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p[0] as f32 / 65535.0).collect();
    ImagePlane::new(1, h, w, data)
}

fn image_err(path: &Path, e: impl ToString) -> GazeError {
    GazeError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| GazeError::io(dir, e))?;
    }
    Ok(())
}

pub fn write_rgb_png(path: &Path, plane: &ImagePlane) -> Result<()> {
    let (h, w) = (plane.height(), plane.width());
    let img = ImageBuffer::<Rgb<u8>, _>::from_fn(w as u32, h as u32, |x, y| {
        let c = |k: usize| {
            let v = plane.get(k.min(plane.channels() - 1), y as usize, x as usize);
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        Rgb([c(0), c(1), c(2)])
    });
    ensure_parent(path)?;
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn write_depth_png(path: &Path, plane: &ImagePlane) -> Result<()> {
    let (h, w) = (plane.height(), plane.width());
    let img = ImageBuffer::<Luma<u16>, _>::from_fn(w as u32, h as u32, |x, y| {
        Luma([(plane.get(0, y as usize, x as usize).clamp(0.0, 1.0) * 65535.0).round() as u16])
    });
    ensure_parent(path)?;
    img.save(path).map_err(|e| image_err(path, e))
}

/// Writes `images/`, `depth/` and `annotations.jsonl` under `root`.
pub fn write_dataset(samples: &[Sample], root: &Path) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| GazeError::io(root, e))?;
    let ann_path = root.join("annotations.jsonl");
    let file = fs::File::create(&ann_path).map_err(|e| GazeError::io(&ann_path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        let image_path = format!("images/{}.png", s.sample_id);
        let depth_path = format!("depth/{}.png", s.sample_id);
        write_rgb_png(&root.join(&image_path), &s.scene)?;
        write_depth_png(&root.join(&depth_path), &s.depth)?;
        let hb = s.head_box;
        let rec = AnnotationRecord {
            sample_id: s.sample_id.clone(),
            image_path,
            depth_path: Some(depth_path),
            head_box: [hb.x_min, hb.y_min, hb.x_max, hb.y_max],
            gaze_points: s.annotation.points.clone(),
            inside_frame: s.annotation.inside_frame,
            domain: s.domain.name.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| GazeError::io(&ann_path, e))?;
    }
    out.flush().map_err(|e| GazeError::io(&ann_path, e))?;
    Ok(ann_path)
}

/// Reads a JSONL annotation file into validated samples.
pub fn load_annotations(
    path: &Path,
    image_root: &Path,
    role: DomainRole,
    provider: &dyn DepthProvider,
) -> Result<Vec<Sample>> {
    let file = fs::File::open(path).map_err(|e| GazeError::io(path, e))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| GazeError::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let rec = parse_record(line_no, &text)?;
        let head_box = HeadBox::new(rec.head_box[0], rec.head_box[1], rec.head_box[2], rec.head_box[3]);
        if let Some(v) = head_box.violations().into_iter().next() {
            return Err(field_err(line_no, "head_box", v));
        }
        let annotation = GazeAnnotation {
            points: rec.gaze_points.clone(),
            inside_frame: rec.inside_frame,
        };
        if let Some(v) = annotation.violations().into_iter().next() {
            return Err(field_err(line_no, "gaze_points", v));
        }
        let scene = read_rgb_png(&image_root.join(&rec.image_path))?;
        let depth = match &rec.depth_path {
            Some(p) => read_depth_png(&image_root.join(p))?,
            None => provider.estimate(&scene),
        };
        let sample = Sample {
            scene,
            depth,
            head_box,
            annotation,
            domain: DomainLabel::new(rec.domain.clone(), role),
            sample_id: rec.sample_id.clone(),
        };
        let violations = validate_sample(&sample);
        if !violations.is_empty() {
            return Err(GazeError::InvalidSample {
                id: sample.sample_id,
                violations,
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::depth::LuminanceDepth;
    use crate::datagen::synth::{generate_synthetic, DomainStyle, SynthSpec};

    fn write_lines(dir: &Path, lines: &[&str]) -> PathBuf {
        let p = dir.join("ann.jsonl");
        fs::write(&p, lines.join("\n")).unwrap();
        p
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_synthetic(&SynthSpec::new(40, 3, 9, DomainStyle::StyleB)).unwrap();
        let ann = write_dataset(&samples, dir.path()).unwrap();
        let back = load_annotations(&ann, dir.path(), DomainRole::Source, &LuminanceDepth).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn out_of_range_point_names_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let good = r#"{"sample_id":"a","image_path":"a.png","head_box":[0.1,0.1,0.3,0.3],"gaze_points":[[0.5,0.5]],"domain":"d"}"#;
        let bad = r#"{"sample_id":"b","image_path":"b.png","head_box":[0.1,0.1,0.3,0.3],"gaze_points":[[1.5,0.5]],"domain":"d"}"#;
        write_rgb_png(&dir.path().join("a.png"), &ImagePlane::filled(3, 8, 8, 0.5)).unwrap();
        let p = write_lines(dir.path(), &[good, bad]);
        let err = load_annotations(&p, dir.path(), DomainRole::Source, &LuminanceDepth).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("points[0].x out of range"), "{msg}");
    }

    #[test]
    fn missing_and_mistyped_fields_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), &[r#"{"sample_id":"a","image_path":"a.png","gaze_points":[[0.5,0.5]],"domain":"d"}"#]);
        let msg = load_annotations(&p, dir.path(), DomainRole::Source, &LuminanceDepth)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("line 1") && msg.contains("head_box"), "{msg}");
        let p = write_lines(dir.path(), &[r#"{"sample_id":"a","image_path":"a.png","head_box":[0.1,0.1,0.3],"gaze_points":[[0.5,0.5]],"domain":"d"}"#]);
        let msg = load_annotations(&p, dir.path(), DomainRole::Source, &LuminanceDepth)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("head_box"), "{msg}");
    }

    #[test]
    fn missing_image_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), &[r#"{"sample_id":"a","image_path":"nope.png","head_box":[0.1,0.1,0.3,0.3],"gaze_points":[[0.5,0.5]],"domain":"d"}"#]);
        let err = load_annotations(&p, dir.path(), DomainRole::Target, &LuminanceDepth).unwrap_err();
        assert!(matches!(err, GazeError::MissingImage(_)));
    }

    #[test]
    fn absent_depth_uses_provider() {
        let dir = tempfile::tempdir().unwrap();
        write_rgb_png(&dir.path().join("a.png"), &ImagePlane::filled(3, 8, 8, 0.0)).unwrap();
        let p = write_lines(dir.path(), &[r#"{"sample_id":"a","image_path":"a.png","head_box":[0.1,0.1,0.3,0.3],"gaze_points":[[0.5,0.5]],"domain":"d"}"#]);
        let s = load_annotations(&p, dir.path(), DomainRole::Target, &LuminanceDepth).unwrap();
        assert_eq!(s[0].depth.data(), &[1.0f32; 64][..]);
        assert_eq!(s[0].domain.role, DomainRole::Target);
    }
}
