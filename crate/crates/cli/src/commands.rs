use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use polarfuse_core::eval::{backproject, depth_metrics_with_base, metrics_csv, metrics_table, write_ply};
use polarfuse_core::experiment::{build_model, per_mode_rows};
use polarfuse_core::io::{read_intrinsics, read_pft, write_pft, DType, WeightArchive};
use polarfuse_core::model::{
    load_checkpoint, pretrain_foundation, train_with, Ablation, Example, Model, ModelConfig, OptimizerConfig,
    OptimizerKind, TrainConfig,
};
use polarfuse_core::numerics::Tensor;
use polarfuse_core::polar::{build_guidance, decode_dofp, viewing_field, CameraIntrinsics, DofpCapture};
use polarfuse_core::simulate::{
    dataset, load_dataset, DegradationDistribution, DegradationMode, SceneDistribution, StoredSample, INTRINSICS_FILE,
};
use polarfuse_core::{DepthMap, Error};

use crate::failure::Failure;
use crate::settings::Settings;

pub const CHECKPOINT_FILE: &str = "checkpoint.pwa";
pub const FOUNDATION_FILE: &str = "foundation.pwa";
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_FILE: &str = "metrics.csv";

pub const DECODE_KEYS: &[&str] = &["input", "intrinsics"];
pub const SIMULATE_KEYS: &[&str] = &["seed", "scenes", "resolution", "degradation"];
pub const FOUNDATION_KEYS: &[&str] = &["seed", "data", "stages", "channels", "steps", "lr", "optimizer", "batch-size"];
pub const TRAIN_KEYS: &[&str] = &[
    "seed", "data", "foundation", "ablation", "stages", "channels", "freeze", "steps", "lr", "optimizer", "batch-size",
];
pub const EVAL_KEYS: &[&str] = &["seed", "data", "checkpoint", "predictions", "ablation", "stages", "channels", "threshold-base"];
pub const POINTCLOUD_KEYS: &[&str] = &["seed", "data", "index", "checkpoint", "ablation", "stages", "channels"];

/// File name of a stored prediction for sample `index`.
pub fn pred_file(index: usize) -> String {
    format!("pred_{index:05}.pft")
}

fn model_config(s: &Settings) -> Result<ModelConfig, Failure> {
    let stages: usize = s.get("stages")?;
    let channels: usize = s.get("channels")?;
    if stages == 0 || channels == 0 || stages > 8 {
        return Err(Failure::config(format!("need 1..=8 stages and at least one channel, got {stages} and {channels}")));
    }
    let config = ModelConfig {
        widths: (0..stages).map(|i| channels << i).collect(),
        // the foundation command has no ablation setting; it always trains the bare backbone
        ablation: if s.has("ablation") { s.get("ablation")? } else { Ablation::NoPpft },
        freeze_prefixes: if s.has("freeze") {
            s.raw("freeze")?.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
        } else {
            Vec::new()
        },
        ..ModelConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn train_config(s: &Settings) -> Result<TrainConfig, Failure> {
    let lr: f64 = s.get("lr")?;
    let optimizer = match s.get::<OptimizerKind>("optimizer")? {
        OptimizerKind::Sgd => OptimizerConfig::sgd(lr),
        OptimizerKind::Adam => OptimizerConfig::adam(lr),
    };
    Ok(TrainConfig {
        steps: s.get("steps")?,
        batch_size: s.get("batch-size")?,
        optimizer,
        seed: s.get("seed")?,
    })
}

fn load_data(s: &Settings) -> Result<Vec<StoredSample>, Failure> {
    let dir = s.path("data")?;
    let (samples, _) = load_dataset(&dir).map_err(Failure::reading(format!("dataset {}", dir.display())))?;
    if samples.is_empty() {
        return Err(Failure::input(format!("dataset {} has no samples", dir.display())));
    }
    Ok(samples)
}

fn examples(samples: &[StoredSample]) -> Vec<Example<'_>> {
    samples
        .iter()
        .map(|s| Example {
            guidance: &s.guidance,
            sensor: &s.sensor,
            gt: &s.gt,
        })
        .collect()
}

fn load_archive(path: &Path) -> Result<WeightArchive, Failure> {
    WeightArchive::load(path).map_err(Failure::reading(path.display()))
}

/// The trained model stored at `checkpoint`, rebuilt from the model settings.
fn restore(s: &Settings, checkpoint: &Path) -> Result<Model, Failure> {
    let mut model = Model::new(model_config(s)?, s.get("seed")?)?;
    load_checkpoint(&mut model.params, &load_archive(checkpoint)?).map_err(|e| {
        Failure::input(format!(
            "checkpoint {} does not fit the configured model (check ablation/stages/channels): {e}",
            checkpoint.display()
        ))
    })?;
    Ok(model)
}

fn write_f64(path: PathBuf, t: &Tensor) -> Result<(), Failure> {
    write_pft(path, t, DType::F64)?;
    Ok(())
}

pub fn decode(s: &Settings) -> Result<(), Failure> {
    let input = s.path("input")?;
    let intrinsics_path = match s.optional_path("intrinsics") {
        Some(p) => p,
        None => input.parent().unwrap_or(Path::new(".")).join(INTRINSICS_FILE),
    };
    let raw = read_pft(&input).map_err(Failure::reading(input.display()))?;
    let capture = DofpCapture::new(raw).map_err(Failure::reading(input.display()))?;
    let intrinsics = read_intrinsics(&intrinsics_path).map_err(Failure::reading(intrinsics_path.display()))?;
    let (_, state) = decode_dofp(&capture)?;
    let view = viewing_field(&intrinsics, capture.height(), capture.width())?;
    let guidance = build_guidance(&state, &view)?;
    s.echo()?;
    let out = s.out();
    write_f64(out.join("intensity.pft"), &state.intensity)?;
    write_f64(out.join("aolp.pft"), &state.aolp)?;
    write_f64(out.join("dolp.pft"), &state.dolp)?;
    write_f64(out.join("guidance.pft"), guidance.tensor())?;
    println!("decoded {}x{} capture into {}", capture.height(), capture.width(), out.display());
    Ok(())
}

fn degradations(spec: &str) -> Result<DegradationDistribution, Failure> {
    let modes = if spec == "mixed" {
        DegradationMode::ALL.to_vec()
    } else {
        spec.split(',').map(|m| m.trim().parse()).collect::<Result<Vec<DegradationMode>, Error>>()?
    };
    Ok(DegradationDistribution {
        modes,
        ..DegradationDistribution::default()
    })
}

pub fn simulate(s: &Settings) -> Result<(), Failure> {
    let n: usize = s.get("scenes")?;
    let res: usize = s.get("resolution")?;
    let scenes = SceneDistribution::new(res, res);
    scenes.validate().map_err(|e| Failure::config(e.to_string()))?;
    let degr = degradations(s.raw("degradation")?)?;
    if n == 0 {
        return Err(Failure::config("scenes must be at least 1"));
    }
    s.echo()?;
    let samples = dataset(s.out(), n, &scenes, &degr, s.get("seed")?)?;
    println!("wrote {} samples at {res}x{res} to {}", samples.len(), s.out().display());
    Ok(())
}

pub fn foundation(s: &Settings) -> Result<(), Failure> {
    let config = model_config(s)?;
    let tc = train_config(s)?;
    let samples = load_data(s)?;
    s.echo()?;
    let archive = pretrain_foundation(&config, &examples(&samples), &tc, tc.seed)?;
    let path = s.out().join(FOUNDATION_FILE);
    archive.save(&path)?;
    println!("pretrained backbone for {} steps, wrote {}", tc.steps, path.display());
    Ok(())
}

pub fn train(s: &Settings) -> Result<(), Failure> {
    let config = model_config(s)?;
    let tc = train_config(s)?;
    let samples = load_data(s)?;
    let archive = s.optional_path("foundation").map(|p| load_archive(&p)).transpose()?;
    s.echo()?;
    let (mut model, report) = build_model(&config, archive.as_ref(), tc.seed)?;
    match (&report, config.ablation.uses_foundation()) {
        (Some(r), _) => println!(
            "foundation: {} loaded, {} missing, {} shape mismatches, {} fusion kept fresh, {} frozen",
            r.loaded.len(),
            r.skipped_missing.len(),
            r.skipped_shape_mismatch.len(),
            r.kept_fresh.len(),
            r.frozen.len()
        ),
        (None, true) => eprintln!("note: no foundation given, {} starts from random weights", config.ablation),
        (None, false) => {}
    }
    let mut log = String::from("step,loss,rmse,mae\n");
    let result = train_with(&mut model, &examples(&samples), &tc, |step, r| {
        let _ = writeln!(log, "{step},{},{},{}", r.loss, r.rmse, r.mae);
    });
    fs::write(s.out().join(LOSS_FILE), &log)?;
    let reports = result?;
    let path = s.out().join(CHECKPOINT_FILE);
    WeightArchive::from_params(&model.params)?.save(&path)?;
    if let (Some(first), Some(last)) = (reports.first(), reports.last()) {
        println!(
            "{}: {} steps, loss {:.1} -> {:.1}, wrote {}",
            config.ablation,
            reports.len(),
            first.loss,
            last.loss,
            path.display()
        );
    }
    Ok(())
}

pub fn eval(s: &Settings) -> Result<(), Failure> {
    let base: f64 = s.get("threshold-base")?;
    if !(base > 1.0) {
        return Err(Failure::config(format!("threshold base {base} must exceed 1")));
    }
    let source = match (s.optional_path("checkpoint"), s.optional_path("predictions")) {
        (Some(c), None) => Ok(c),
        (None, Some(p)) => Err(p),
        _ => return Err(Failure::config("eval needs exactly one of --checkpoint and --predictions")),
    };
    let model = source.as_ref().ok().map(|c| restore(s, c)).transpose()?;
    let samples = load_data(s)?;
    s.echo()?;
    let mut scored = Vec::with_capacity(samples.len());
    for sample in &samples {
        let index = sample.row.index;
        let pred = match (&model, &source) {
            (Some(m), _) => {
                let pred = m.enhance(&sample.guidance, &sample.sensor)?;
                write_f64(s.out().join(pred_file(index)), &pred.to_zero_invalid())?;
                pred
            }
            (None, Err(dir)) => {
                let path = dir.join(pred_file(index));
                let t = read_pft(&path).map_err(Failure::reading(path.display()))?;
                DepthMap::from_zero_invalid(t).map_err(Failure::reading(path.display()))?
            }
            (None, Ok(_)) => unreachable!("checkpoint always yields a model"),
        };
        let metrics = depth_metrics_with_base(&pred, &sample.gt, base)
            .map_err(|e| Failure::input(format!("sample {index}: {e}")))?;
        scored.push((sample.mode, metrics));
    }
    let rows = per_mode_rows(scored)?;
    fs::write(s.out().join(METRICS_FILE), metrics_csv(&rows))?;
    print!("{}", metrics_table(&rows));
    Ok(())
}

fn write_cloud(path: PathBuf, depth: &DepthMap, intrinsics: &CameraIntrinsics) -> Result<(), Failure> {
    let points = backproject(depth, intrinsics)?;
    write_ply(BufWriter::new(fs::File::create(&path)?), &points)?;
    println!("{}: {} points", path.display(), points.len());
    Ok(())
}

pub fn pointcloud(s: &Settings) -> Result<(), Failure> {
    let index: usize = s.get("index")?;
    let model = s.optional_path("checkpoint").map(|c| restore(s, &c)).transpose()?;
    let dir = s.path("data")?;
    let (samples, intrinsics) = load_dataset(&dir).map_err(Failure::reading(format!("dataset {}", dir.display())))?;
    let sample = samples
        .iter()
        .find(|x| x.row.index == index)
        .ok_or_else(|| Failure::input(format!("dataset {} has no sample {index}", dir.display())))?;
    s.echo()?;
    write_cloud(s.out().join("sensor.ply"), &sample.sensor, &intrinsics)?;
    write_cloud(s.out().join("gt.ply"), &sample.gt, &intrinsics)?;
    if let Some(m) = model {
        write_cloud(s.out().join("pred.ply"), &m.enhance(&sample.guidance, &sample.sensor)?, &intrinsics)?;
    }
    Ok(())
}

