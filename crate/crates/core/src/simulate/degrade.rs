use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::render::SurfaceMap;
use super::scene::Material;
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Smallest depth a noisy sensor reading is clamped to, in mm.
pub const MIN_SENSOR_DEPTH: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DegradationMode {
    /// Random holes plus textureless surfaces where matching fails.
    StereoHoles,
    /// Direct time-of-flight: transparent surfaces report what lies behind.
    DtofTransparent,
    /// Indirect time-of-flight with a narrower field of view.
    ItofFovCrop,
}

impl DegradationMode {
    pub const ALL: [DegradationMode; 3] = [
        DegradationMode::StereoHoles,
        DegradationMode::DtofTransparent,
        DegradationMode::ItofFovCrop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegradationMode::StereoHoles => "stereo-holes",
            DegradationMode::DtofTransparent => "dtof-transparent",
            DegradationMode::ItofFovCrop => "itof-fov-crop",
        }
    }
}

impl fmt::Display for DegradationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegradationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown degradation mode `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    pub mode: DegradationMode,
    /// Fraction of pixels dropped at random (stereo-holes).
    pub hole_rate: f64,
    /// Width of the invalid border band in pixels (itof-fov-crop).
    pub crop_margin: usize,
    /// Added to the see-through depth on transparent pixels, mm (dtof-transparent).
    pub transparent_offset: f64,
    /// Gaussian noise on surviving depths, mm.
    pub depth_noise: f64,
    pub seed: u64,
}

impl DegradationSpec {
    /// A spec that changes nothing in `mode`.
    pub fn identity(mode: DegradationMode) -> Self {
        DegradationSpec {
            mode,
            hole_rate: 0.0,
            crop_margin: 0,
            transparent_offset: 0.0,
            depth_noise: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hole_rate) {
            return Err(Error::Domain(format!("hole rate {} outside [0, 1]", self.hole_rate)));
        }
        if 2 * self.crop_margin >= height.min(width) && self.crop_margin > 0 {
            return Err(Error::Domain(format!(
                "crop margin {} not below half of {}x{}",
                self.crop_margin, height, width
            )));
        }
        if !(self.depth_noise >= 0.0) || !self.transparent_offset.is_finite() {
            return Err(Error::Domain("depth noise must be >= 0 and offset finite".into()));
        }
        Ok(())
    }
}

/// Simulates a depth sensor observing `gt`.
pub fn degrade(gt: &DepthMap, spec: &DegradationSpec, surfaces: &SurfaceMap) -> Result<DepthMap> {
    let (h, w) = gt.dims();
    if (surfaces.height, surfaces.width) != (h, w) {
        return Err(Error::dims("degrade surfaces", &[h, w], &[surfaces.height, surfaces.width]));
    }
    spec.validate(h, w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut depth = gt.depth().data().to_vec();
    let mut valid = gt.valid().to_vec();

    match spec.mode {
        DegradationMode::StereoHoles => {
            for p in 0..h * w {
                // one draw per pixel keeps the stream aligned across scenes
                let drop = rng.gen::<f64>() < spec.hole_rate;
                if drop || surfaces.textureless[p] {
                    valid[p] = false;
                }
            }
        }
        DegradationMode::DtofTransparent => {
            for p in 0..h * w {
                if surfaces.material[p] == Some(Material::Transparent) {
                    match surfaces.see_through[p] {
                        Some(d) if d + spec.transparent_offset > 0.0 => {
                            depth[p] = d + spec.transparent_offset;
                            valid[p] = true;
                        }
                        _ => valid[p] = false,
                    }
                }
            }
        }
        DegradationMode::ItofFovCrop => {
            let m = spec.crop_margin;
            for r in 0..h {
                for c in 0..w {
                    if r < m || r >= h - m || c < m || c >= w - m {
                        valid[r * w + c] = false;
                    }
                }
            }
        }
    }

    if spec.depth_noise > 0.0 {
        let noise = Normal::new(0.0, spec.depth_noise).map_err(|e| Error::Domain(e.to_string()))?;
        for p in 0..h * w {
            let e = noise.sample(&mut rng);
            if valid[p] {
                depth[p] = (depth[p] + e).max(MIN_SENSOR_DEPTH);
            }
        }
    }
    for p in 0..h * w {
        if !valid[p] {
            depth[p] = 0.0;
        }
    }
    DepthMap::new(Tensor::from_vec(&[h, w], depth)?, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polar::CameraIntrinsics;
    use crate::simulate::render::render;
    use crate::simulate::scene::{MaterialDolp, Primitive, SceneSpec, Shape};

    fn scene(primitives: Vec<Primitive>) -> SceneSpec {
        SceneSpec {
            primitives,
            intrinsics: CameraIntrinsics::centered(40.0, 40, 40).unwrap(),
            height: 40,
            width: 40,
            dolp: MaterialDolp::default(),
            light: 1.0,
            noise_sigma: 0.0,
            seed: 1,
        }
    }

    fn prim(shape: Shape, material: Material, textureless: bool) -> Primitive {
        Primitive {
            shape,
            material,
            albedo: 0.6,
            textureless,
        }
    }

    fn wall() -> Primitive {
        prim(
            Shape::Plane {
                point: [0.0, 0.0, 2000.0],
                normal: [0.1, 0.0, -1.0],
            },
            Material::Diffuse,
            false,
        )
    }

    fn sphere(material: Material) -> Primitive {
        prim(
            Shape::Sphere {
                center: [0.0, 0.0, 1200.0],
                radius: 300.0,
            },
            material,
            false,
        )
    }

    #[test]
    fn identity_degradation_preserves_gt() {
        let r = render(&scene(vec![wall(), sphere(Material::Specular)])).unwrap();
        for mode in DegradationMode::ALL {
            let s = degrade(&r.gt, &DegradationSpec::identity(mode), &r.surfaces).unwrap();
            assert_eq!(s, r.gt, "{mode}");
        }
    }

    #[test]
    fn crop_keeps_exact_inner_window() {
        let r = render(&scene(vec![wall()])).unwrap();
        for m in [1, 5, 19] {
            let spec = DegradationSpec {
                crop_margin: m,
                ..DegradationSpec::identity(DegradationMode::ItofFovCrop)
            };
            let s = degrade(&r.gt, &spec, &r.surfaces).unwrap();
            assert_eq!(s.valid_count(), (40 - 2 * m) * (40 - 2 * m));
            assert!(s.value(m, m).is_some() && s.value(m - 1, m).is_none());
        }
        let bad = DegradationSpec {
            crop_margin: 20,
            ..DegradationSpec::identity(DegradationMode::ItofFovCrop)
        };
        assert!(degrade(&r.gt, &bad, &r.surfaces).is_err());
    }

    #[test]
    fn transparent_sphere_reports_background_depth() {
        let sc = scene(vec![wall(), sphere(Material::Transparent)]);
        let r = render(&sc).unwrap();
        let back = render(&scene(vec![wall()])).unwrap();
        let s = degrade(&r.gt, &DegradationSpec::identity(DegradationMode::DtofTransparent), &r.surfaces).unwrap();
        let mut seen = 0;
        for p in 0..40 * 40 {
            if r.surfaces.material[p] == Some(Material::Transparent) {
                seen += 1;
                let got = s.depth().data()[p];
                assert!((got - back.gt.depth().data()[p]).abs() < 1e-9);
                assert!((got - r.gt.depth().data()[p]).abs() > 100.0);
            } else {
                assert_eq!(s.depth().data()[p], r.gt.depth().data()[p]);
            }
        }
        assert!(seen > 50);
    }

    #[test]
    fn hole_rate_matches_binomial_expectation() {
        let r = render(&scene(vec![wall()])).unwrap();
        for (seed, rate) in [(1, 0.1), (2, 0.3), (3, 0.5)] {
            let spec = DegradationSpec {
                hole_rate: rate,
                seed,
                ..DegradationSpec::identity(DegradationMode::StereoHoles)
            };
            let s = degrade(&r.gt, &spec, &r.surfaces).unwrap();
            let invalid = 1.0 - s.valid_count() as f64 / 1600.0;
            assert!((invalid - rate).abs() <= 0.05, "rate {rate}: {invalid}");
        }
    }

    #[test]
    fn textureless_surfaces_always_drop_in_stereo() {
        let mut floor = wall();
        floor.textureless = true;
        let r = render(&scene(vec![floor])).unwrap();
        let s = degrade(&r.gt, &DegradationSpec::identity(DegradationMode::StereoHoles), &r.surfaces).unwrap();
        assert_eq!(s.valid_count(), 0);
    }

    #[test]
    fn noise_only_touches_survivors_and_never_gt() {
        let r = render(&scene(vec![wall(), sphere(Material::Diffuse)])).unwrap();
        let before = r.gt.clone();
        let spec = DegradationSpec {
            hole_rate: 0.2,
            depth_noise: 5.0,
            seed: 9,
            ..DegradationSpec::identity(DegradationMode::StereoHoles)
        };
        let s = degrade(&r.gt, &spec, &r.surfaces).unwrap();
        assert_eq!(r.gt, before);
        assert!(s.valid().iter().zip(r.gt.valid()).all(|(&a, &b)| !a || b));
        assert_eq!(s, degrade(&r.gt, &spec, &r.surfaces).unwrap());
        assert!("bogus".parse::<DegradationMode>().is_err());
        assert_eq!("itof-fov-crop".parse::<DegradationMode>().unwrap(), DegradationMode::ItofFovCrop);
    }
}
