use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::degrade::{degrade, DegradationMode, DegradationSpec};
use super::render::render;
use super::scene::{Material, MaterialDolp, Primitive, SceneSpec, Shape};
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::io::{read_intrinsics, read_pft, write_intrinsics, write_pft, DType};
use crate::numerics::Tensor;
use crate::polar::{build_guidance, decode_dofp, normalize, viewing_field, CameraIntrinsics, DofpCapture, GuidanceTensor};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const INTRINSICS_FILE: &str = "intrinsics.txt";

/// Random desk scenes: a back wall, a textureless floor and a few objects.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDistribution {
    pub height: usize,
    pub width: usize,
    /// Focal length in pixels.
    pub focal: f64,
    pub dolp: MaterialDolp,
    pub light: f64,
    pub noise_sigma: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Probability that an object is transparent.
    pub transparent_prob: f64,
}

impl SceneDistribution {
    pub fn new(height: usize, width: usize) -> Self {
        SceneDistribution {
            height,
            width,
            focal: 0.9 * width as f64,
            dolp: MaterialDolp::default(),
            light: 1.0,
            noise_sigma: 0.005,
            min_objects: 1,
            max_objects: 3,
            transparent_prob: 0.5,
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::centered(self.focal, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics()?;
        if self.min_objects > self.max_objects {
            return Err(Error::Config("min_objects exceeds max_objects".into()));
        }
        if !(0.0..=1.0).contains(&self.transparent_prob) {
            return Err(Error::Domain("transparent probability outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, seed: u64) -> Result<SceneSpec> {
        self.validate()?;
        let half_h = self.height as f64 / 2.0 / self.focal;
        let half_w = self.width as f64 / 2.0 / self.focal;
        let wall_z = rng.gen_range(2400.0..3200.0);
        let wall = Primitive {
            shape: Shape::Plane {
                point: [0.0, 0.0, wall_z],
                normal: normalize([rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), -1.0]),
            },
            material: Material::Diffuse,
            albedo: rng.gen_range(0.5..0.9),
            textureless: false,
        };
        let floor_y = rng.gen_range(0.45..0.7) * wall_z * half_h;
        let floor = Primitive {
            shape: Shape::Plane {
                point: [0.0, floor_y, 0.0],
                normal: [0.0, -1.0, 0.0],
            },
            material: if rng.gen_bool(0.5) { Material::Specular } else { Material::Diffuse },
            albedo: rng.gen_range(0.4..0.8),
            textureless: true,
        };
        let mut primitives = vec![wall, floor];
        let count = rng.gen_range(self.min_objects..=self.max_objects);
        for _ in 0..count {
            let z = rng.gen_range(1000.0..0.8 * wall_z);
            let x = rng.gen_range(-0.6..0.6) * z * half_w;
            let y = rng.gen_range(-0.6..0.6) * z * half_h;
            let r = rng.gen_range(0.15..0.3) * z * half_h;
            let shape = if rng.gen_bool(0.5) {
                Shape::Sphere {
                    center: [x, y, z],
                    radius: r,
                }
            } else {
                let e: [f64; 3] = [rng.gen_range(0.6..1.0) * r, rng.gen_range(0.6..1.0) * r, rng.gen_range(0.6..1.0) * r];
                Shape::Cuboid {
                    min: [x - e[0], y - e[1], z - e[2]],
                    max: [x + e[0], y + e[1], z + e[2]],
                }
            };
            let material = if rng.gen_bool(self.transparent_prob) {
                Material::Transparent
            } else if rng.gen_bool(0.5) {
                Material::Specular
            } else {
                Material::Diffuse
            };
            primitives.push(Primitive {
                shape,
                material,
                albedo: rng.gen_range(0.3..0.9),
                textureless: false,
            });
        }
        Ok(SceneSpec {
            primitives,
            intrinsics: self.intrinsics()?,
            height: self.height,
            width: self.width,
            dolp: self.dolp,
            light: self.light,
            noise_sigma: self.noise_sigma,
            seed,
        })
    }
}

/// Sensor degradations, assigned round-robin over `modes` by sample index.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationDistribution {
    pub modes: Vec<DegradationMode>,
    pub hole_rate: f64,
    /// Crop band as a fraction of the smaller image extent.
    pub crop_fraction: f64,
    pub transparent_offset: f64,
    pub depth_noise: f64,
}

impl Default for DegradationDistribution {
    fn default() -> Self {
        DegradationDistribution {
            modes: DegradationMode::ALL.to_vec(),
            hole_rate: 0.1,
            crop_fraction: 0.125,
            transparent_offset: 0.0,
            depth_noise: 5.0,
        }
    }
}

impl DegradationDistribution {
    pub fn spec(&self, index: usize, height: usize, width: usize, seed: u64) -> Result<DegradationSpec> {
        if self.modes.is_empty() {
            return Err(Error::Config("no degradation modes".into()));
        }
        let spec = DegradationSpec {
            mode: self.modes[index % self.modes.len()],
            hole_rate: self.hole_rate,
            crop_margin: (self.crop_fraction * height.min(width) as f64).round() as usize,
            transparent_offset: self.transparent_offset,
            depth_noise: self.depth_noise,
            seed,
        };
        spec.validate(height, width)?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub index: usize,
    /// Seed of this sample's own stream.
    pub seed: u64,
    pub mode: DegradationMode,
    pub capture: DofpCapture,
    pub guidance: GuidanceTensor,
    pub sensor: DepthMap,
    pub gt: DepthMap,
    pub normals: Tensor,
}

/// Seed of sample `index` in a dataset seeded with `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.gen()
}

pub fn generate_sample(
    index: usize,
    scenes: &SceneDistribution,
    degradations: &DegradationDistribution,
    seed: u64,
) -> Result<Sample> {
    let own = sample_seed(seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(own);
    let render_seed = rng.gen();
    let degrade_seed = rng.gen();
    let scene = scenes.sample(&mut rng, render_seed)?;
    let r = render(&scene)?;
    let spec = degradations.spec(index, scene.height, scene.width, degrade_seed)?;
    let sensor = degrade(&r.gt, &spec, &r.surfaces)?;
    let (_, state) = decode_dofp(&r.capture)?;
    let guidance = build_guidance(&state, &viewing_field(&scene.intrinsics, scene.height, scene.width)?)?;
    Ok(Sample {
        index,
        seed: own,
        mode: spec.mode,
        capture: r.capture,
        guidance,
        sensor,
        gt: r.gt,
        normals: r.normals,
    })
}

/// Generates `n` samples in parallel; the result does not depend on the
/// thread count.
pub fn generate(
    n: usize,
    scenes: &SceneDistribution,
    degradations: &DegradationDistribution,
    seed: u64,
) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Domain("dataset needs at least one sample".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| generate_sample(i, scenes, degradations, seed))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub index: usize,
    pub guidance: String,
    pub sensor: String,
    pub gt: String,
    pub normals: String,
    pub degradation: String,
    pub seed: u64,
}

fn stem(index: usize) -> String {
    format!("sample_{index:05}")
}

/// Path of the raw four-angle capture stored next to a sample.
pub fn capture_file(index: usize) -> String {
    format!("{}_capture.pft", stem(index))
}

/// Writes samples as PFT1 files plus `manifest.csv` and `intrinsics.txt`.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[Sample], intrinsics: &CameraIntrinsics) -> Result<Vec<ManifestRow>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_intrinsics(dir.join(INTRINSICS_FILE), intrinsics)?;
    let rows: Vec<ManifestRow> = samples
        .iter()
        .map(|s| {
            let st = stem(s.index);
            ManifestRow {
                index: s.index,
                guidance: format!("{st}_guidance.pft"),
                sensor: format!("{st}_sensor.pft"),
                gt: format!("{st}_gt.pft"),
                normals: format!("{st}_normals.pft"),
                degradation: s.mode.to_string(),
                seed: s.seed,
            }
        })
        .collect();
    samples.par_iter().zip(&rows).try_for_each(|(s, row)| -> Result<()> {
        write_pft(dir.join(&row.guidance), s.guidance.tensor(), DType::F64)?;
        write_pft(dir.join(&row.sensor), &s.sensor.to_zero_invalid(), DType::F64)?;
        write_pft(dir.join(&row.gt), &s.gt.to_zero_invalid(), DType::F64)?;
        write_pft(dir.join(&row.normals), &s.normals, DType::F64)?;
        write_pft(dir.join(capture_file(s.index)), s.capture.tensor(), DType::F64)
    })?;
    let mut w = csv::Writer::from_path(dir.join(MANIFEST_FILE))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(rows)
}

/// Generates and writes a dataset of `n` samples.
pub fn dataset(
    dir: impl AsRef<Path>,
    n: usize,
    scenes: &SceneDistribution,
    degradations: &DegradationDistribution,
    seed: u64,
) -> Result<Vec<Sample>> {
    let samples = generate(n, scenes, degradations, seed)?;
    write_dataset(dir, &samples, &scenes.intrinsics()?)?;
    Ok(samples)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(dir.as_ref().join(MANIFEST_FILE))?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?)
}

/// A sample read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredSample {
    pub row: ManifestRow,
    pub mode: DegradationMode,
    pub guidance: GuidanceTensor,
    pub sensor: DepthMap,
    pub gt: DepthMap,
    pub normals: Tensor,
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Vec<StoredSample>, CameraIntrinsics)> {
    let dir = dir.as_ref();
    let intrinsics = read_intrinsics(dir.join(INTRINSICS_FILE))?;
    let path = |f: &str| -> PathBuf { dir.join(f) };
    let samples = read_manifest(dir)?
        .into_iter()
        .map(|row| {
            Ok(StoredSample {
                mode: row.degradation.parse()?,
                guidance: GuidanceTensor::new(read_pft(path(&row.guidance))?)?,
                sensor: DepthMap::from_zero_invalid(read_pft(path(&row.sensor))?)?,
                gt: DepthMap::from_zero_invalid(read_pft(path(&row.gt))?)?,
                normals: read_pft(path(&row.normals))?,
                row,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, intrinsics))
}
