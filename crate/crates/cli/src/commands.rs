use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use depthgaze::datagen::{
    generate_synthetic, load_annotations, write_dataset, write_rgb_png, DomainStyle, SynthSpec,
    SyntheticDepthProvider,
};
use depthgaze::model::ModelBatch;
use depthgaze::train::{
    cross_domain_experiment, evaluate, fit, load_checkpoint, prepare, CrossDomainData, FitData,
    MetricReport, Precision, TrainMode, Trainer,
};
use depthgaze::{DomainRole, FusionVariant, Sample};
use depthgaze_autograd::Float;

use crate::config::{load_config, RunConfig};
use crate::manifest::RunManifest;
use crate::{npy, overlay};

pub const OUTPUT_ROOT_VAR: &str = "DEPTHGAZE_OUTPUT_ROOT";

/// `--out` if given, else `$DEPTHGAZE_OUTPUT_ROOT/<command>`, else `runs/<command>`.
pub fn output_dir(explicit: Option<&Path>, command: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUTPUT_ROOT_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(command),
    }
}

fn annotations(dir: &Path) -> PathBuf {
    dir.join("annotations.jsonl")
}

pub fn load_dataset(dir: &Path, role: DomainRole) -> Result<Vec<Sample>> {
    let provider = SyntheticDepthProvider::new();
    load_annotations(&annotations(dir), dir, role, &provider)
        .with_context(|| format!("loading {}", dir.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

pub struct GenSynth {
    pub out: PathBuf,
    pub n: usize,
    pub image_size: usize,
    pub seed: u64,
    pub style: DomainStyle,
    pub distractors: usize,
    pub role: DomainRole,
}

pub fn gen_synth(a: &GenSynth) -> Result<()> {
    let spec = SynthSpec::new(a.image_size, a.n, a.seed, a.style)
        .with_distractors(a.distractors)
        .with_role(a.role);
    spec.validate()?;
    RunManifest::new("gen-synth", &a.out)
        .with_config(&spec)
        .write()?;
    let samples = generate_synthetic(&spec)?;
    let path = write_dataset(&samples, &a.out)?;
    println!("wrote {} samples to {}", samples.len(), path.display());
    Ok(())
}

fn config_manifest(
    command: &str,
    out: &Path,
    config_path: &Path,
    cfg: &RunConfig,
    data: &[&Path],
) -> Result<()> {
    let mut m = RunManifest::new(command, out).with_config(cfg);
    m.add_input(config_path)?;
    for d in data {
        m.add_input(&annotations(d))
            .with_context(|| format!("hashing {}", d.display()))?;
    }
    m.write()?;
    Ok(())
}

fn print_report(name: &str, r: &MetricReport) {
    println!(
        "{name}: AUC {:.4}  Avg.Dist {:.4}  ({} scored)",
        r.auc, r.avg_distance, r.evaluated
    );
    for b in &r.baselines {
        println!(
            "  baseline {:<10} AUC {:.4}  Avg.Dist {:.4}",
            b.kind.as_str(),
            b.auc,
            b.avg_distance
        );
    }
}

fn fit_any(
    cfg: &RunConfig,
    data: FitData<'_>,
    ckpt: &Path,
) -> Result<depthgaze::train::ExperimentRecord> {
    fn go<T: Float>(
        cfg: &RunConfig,
        data: FitData<'_>,
        ckpt: &Path,
    ) -> Result<depthgaze::train::ExperimentRecord> {
        Ok(fit::<T>(&cfg.model, &cfg.train, data, TrainMode::Plain, Some(ckpt))?.1)
    }
    match cfg.train.precision {
        Precision::Standard => go::<f32>(cfg, data, ckpt),
        Precision::High => go::<f64>(cfg, data, ckpt),
    }
}

pub fn train(config: &Path, train_dir: &Path, val_dir: &Path, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    if cfg.model.da_enabled {
        log::info!("plain training ignores da_enabled; use train-da for domain adaptation");
        cfg.model.da_enabled = false;
    }
    config_manifest("train", out, config, &cfg, &[train_dir, val_dir])?;
    let train = load_dataset(train_dir, DomainRole::Source)?;
    let val = load_dataset(val_dir, DomainRole::Source)?;
    let data = FitData {
        train: &train,
        val: &val,
        target: None,
    };
    let record = fit_any(&cfg, data, &out.join("checkpoints"))?;
    write_json(&out.join("record.json"), &record)?;
    write_json(&out.join("metrics.json"), &record.final_metrics)?;
    print_report("validation", &record.final_metrics);
    Ok(())
}

pub struct TrainDa<'a> {
    pub config: &'a Path,
    pub source: &'a Path,
    pub source_val: &'a Path,
    pub target: &'a Path,
    pub target_eval: &'a Path,
    pub out: &'a Path,
    pub with_da: bool,
}

pub fn train_da(a: &TrainDa<'_>) -> Result<()> {
    let cfg = load_config(a.config)?;
    config_manifest(
        "train-da",
        a.out,
        a.config,
        &cfg,
        &[a.source, a.source_val, a.target, a.target_eval],
    )?;
    let source_train = load_dataset(a.source, DomainRole::Source)?;
    let source_val = load_dataset(a.source_val, DomainRole::Source)?;
    let target_train = load_dataset(a.target, DomainRole::Target)?;
    let target_eval = load_dataset(a.target_eval, DomainRole::Target)?;
    let data = CrossDomainData {
        source_train: &source_train,
        source_val: &source_val,
        target_train: &target_train,
        target_eval: &target_eval,
    };
    let report = match cfg.train.precision {
        Precision::Standard => {
            cross_domain_experiment::<f32>(data, &cfg.model, &cfg.train, a.with_da)?
        }
        Precision::High => cross_domain_experiment::<f64>(data, &cfg.model, &cfg.train, a.with_da)?,
    };
    write_json(&a.out.join("cross_domain.json"), &report)?;
    std::fs::write(a.out.join("table.md"), &report.table)?;
    print!("{}", report.table);
    Ok(())
}

fn with_checkpoint<R>(path: &Path, f: impl FnOnce(&Trainer<f32>) -> Result<R>) -> Result<R> {
    let trainer: Trainer<f32> =
        load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    f(&trainer)
}

pub fn eval(
    checkpoint: &Path,
    data_dir: &Path,
    train_dir: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut m = RunManifest::new("eval", out);
    m.add_input(checkpoint)?;
    m.add_input(&annotations(data_dir))?;
    if let Some(t) = train_dir {
        m.add_input(&annotations(t))?;
    }
    m.write()?;
    let samples = load_dataset(data_dir, DomainRole::Source)?;
    let train = match train_dir {
        Some(t) => load_dataset(t, DomainRole::Source)?,
        None => samples.clone(),
    };
    let report = with_checkpoint(checkpoint, |t| {
        Ok(evaluate(&t.model, &samples, &train, t.config.seed)?)
    })?;
    write_json(&out.join("metrics.json"), &report)?;
    print_report("evaluation", &report);
    Ok(())
}

pub fn predict(checkpoint: &Path, data_dir: &Path, out: &Path) -> Result<()> {
    let mut m = RunManifest::new("predict", out);
    m.add_input(checkpoint)?;
    m.add_input(&annotations(data_dir))?;
    m.write()?;
    let samples = load_dataset(data_dir, DomainRole::Source)?;
    with_checkpoint(checkpoint, |t| {
        let prepared = prepare(&samples, t.model.config())?;
        let mut summary = BTreeMap::new();
        for (chunk, chunk_samples) in prepared.chunks(32).zip(samples.chunks(32)) {
            let batch = ModelBatch::<f32>::from_inputs(
                &chunk.iter().map(|p| &p.input).collect::<Vec<_>>(),
            )?;
            for (o, s) in t.model.predict(&batch)?.into_iter().zip(chunk_samples) {
                let hm = &o.heatmap;
                let data: Vec<f32> = hm.data().iter().map(|&v| v as f32).collect();
                npy::write_f32(
                    &out.join(format!("{}.npy", s.sample_id)),
                    &[hm.height(), hm.width()],
                    &data,
                )?;
                write_rgb_png(
                    &out.join(format!("{}_overlay.png", s.sample_id)),
                    &overlay::render_overlay(&s.scene, hm),
                )?;
                let point = depthgaze::metrics::predicted_point(hm);
                let inside_prob = 1.0 / (1.0 + (-o.inout_logit).exp());
                summary.insert(
                    s.sample_id.clone(),
                    serde_json::json!({"point": point, "inside_prob": inside_prob}),
                );
            }
        }
        write_json(&out.join("predictions.json"), &summary)?;
        println!("wrote {} predictions to {}", summary.len(), out.display());
        Ok(())
    })
}

pub fn ablate(
    config: &Path,
    train_dir: &Path,
    val_dir: &Path,
    variants: &[FusionVariant],
    out: &Path,
) -> Result<()> {
    if variants.is_empty() {
        bail!("no variants selected");
    }
    let mut base = load_config(config)?;
    base.model.da_enabled = false;
    config_manifest("ablate", out, config, &base, &[train_dir, val_dir])?;
    let train = load_dataset(train_dir, DomainRole::Source)?;
    let val = load_dataset(val_dir, DomainRole::Source)?;
    let mut rows = BTreeMap::new();
    let mut table = String::from("| Variant | AUC | Avg.Dist. |\n|---|---|---|\n");
    for &v in variants {
        let mut cfg = base.clone();
        cfg.model.fusion_variant = v;
        let data = FitData {
            train: &train,
            val: &val,
            target: None,
        };
        let record = fit_any(&cfg, data, &out.join(v.as_str()))?;
        let m = &record.final_metrics;
        table.push_str(&format!(
            "| {} | {:.3} | {:.3} |\n",
            v.as_str(),
            m.auc,
            m.avg_distance
        ));
        rows.insert(v.as_str().to_string(), record);
    }
    write_json(&out.join("ablation.json"), &rows)?;
    std::fs::write(out.join("table.md"), &table)?;
    print!("{table}");
    Ok(())
}
