use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::polar::{dot, normalize, CameraIntrinsics, ReflectionMode, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Material {
    Diffuse,
    Specular,
    /// Polarizes like a specular surface but is invisible to depth sensors
    /// that see through it.
    Transparent,
}

impl Material {
    pub fn reflection_mode(self) -> ReflectionMode {
        match self {
            Material::Diffuse => ReflectionMode::Diffuse,
            Material::Specular | Material::Transparent => ReflectionMode::Specular,
        }
    }

    /// Raster code: 0 background, 1 diffuse, 2 specular, 3 transparent.
    pub fn code(self) -> u8 {
        match self {
            Material::Diffuse => 1,
            Material::Specular => 2,
            Material::Transparent => 3,
        }
    }
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Material::Diffuse => "diffuse",
            Material::Specular => "specular",
            Material::Transparent => "transparent",
        })
    }
}

impl FromStr for Material {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffuse" => Ok(Material::Diffuse),
            "specular" => Ok(Material::Specular),
            "transparent" => Ok(Material::Transparent),
            other => Err(Error::Config(format!("unknown material `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Plane { point: Vec3, normal: Vec3 },
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box.
    Cuboid { min: Vec3, max: Vec3 },
}

/// A ray hit: distance along the unit ray and the surface normal facing
/// the camera.
#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
}

const T_EPS: f64 = 1e-9;

impl Shape {
    /// Nearest intersection of the ray from the origin along unit `dir`.
    pub fn intersect(&self, dir: Vec3) -> Option<Hit> {
        let hit = match self {
            Shape::Plane { point, normal } => {
                let denom = dot(*normal, dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = dot(*normal, *point) / denom;
                (t > T_EPS).then_some(Hit { t, normal: *normal })
            }
            Shape::Sphere { center, radius } => {
                let b = dot(dir, *center);
                let disc = b * b - (dot(*center, *center) - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                let t = if b - root > T_EPS { b - root } else { b + root };
                if t <= T_EPS {
                    return None;
                }
                let p = [dir[0] * t, dir[1] * t, dir[2] * t];
                let normal = [
                    (p[0] - center[0]) / radius,
                    (p[1] - center[1]) / radius,
                    (p[2] - center[2]) / radius,
                ];
                Some(Hit { t, normal })
            }
            Shape::Cuboid { min, max } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let mut axis = 0;
                for a in 0..3 {
                    if dir[a].abs() < 1e-15 {
                        if 0.0 < min[a] || 0.0 > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (t0, t1) = {
                        let ta = min[a] / dir[a];
                        let tb = max[a] / dir[a];
                        (ta.min(tb), ta.max(tb))
                    };
                    if t0 > t_near {
                        t_near = t0;
                        axis = a;
                    }
                    t_far = t_far.min(t1);
                }
                if t_near > t_far || t_near <= T_EPS {
                    return None;
                }
                let mut normal = [0.0; 3];
                normal[axis] = 1.0;
                Some(Hit { t: t_near, normal })
            }
        }?;
        let n = normalize(hit.normal);
        let normal = if dot(n, dir) > 0.0 { [-n[0], -n[1], -n[2]] } else { n };
        Some(Hit { t: hit.t, normal })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub material: Material,
    /// Diffuse reflectance in `[0, 1]`.
    pub albedo: f64,
    /// Surfaces without texture, where stereo matching fails.
    pub textureless: bool,
}

/// Constant degree of linear polarization per material.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialDolp {
    pub diffuse: f64,
    pub specular: f64,
    pub transparent: f64,
}

impl MaterialDolp {
    pub fn of(&self, m: Material) -> f64 {
        match m {
            Material::Diffuse => self.diffuse,
            Material::Specular => self.specular,
            Material::Transparent => self.transparent,
        }
    }
}

impl Default for MaterialDolp {
    fn default() -> Self {
        MaterialDolp {
            diffuse: 0.12,
            specular: 0.5,
            transparent: 0.8,
        }
    }
}

pub const MIN_RESOLUTION: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub intrinsics: CameraIntrinsics,
    pub height: usize,
    pub width: usize,
    pub dolp: MaterialDolp,
    /// Light intensity scale.
    pub light: f64,
    /// Per-channel Gaussian intensity noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.height < MIN_RESOLUTION || self.width < MIN_RESOLUTION {
            return Err(Error::Domain(format!(
                "resolution {}x{} below {MIN_RESOLUTION}x{MIN_RESOLUTION}",
                self.height, self.width
            )));
        }
        for rho in [self.dolp.diffuse, self.dolp.specular, self.dolp.transparent] {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::Domain(format!("material DoLP {rho} outside [0, 1]")));
            }
        }
        if !(self.noise_sigma >= 0.0) || !(self.light >= 0.0) {
            return Err(Error::Domain("noise and light must be non-negative".into()));
        }
        for p in &self.primitives {
            if !(0.0..=1.0).contains(&p.albedo) {
                return Err(Error::Domain(format!("albedo {} outside [0, 1]", p.albedo)));
            }
            match &p.shape {
                Shape::Sphere { radius, .. } if !(*radius > 0.0) => {
                    return Err(Error::Domain("sphere radius must be positive".into()))
                }
                Shape::Cuboid { min, max } if (0..3).any(|a| min[a] >= max[a]) => {
                    return Err(Error::Domain("box min must be below max".into()))
                }
                Shape::Plane { normal, .. } if crate::polar::norm(*normal) == 0.0 => {
                    return Err(Error::Domain("plane normal must be non-zero".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_front_hit_faces_camera() {
        let s = Shape::Sphere {
            center: [0.0, 0.0, 1000.0],
            radius: 100.0,
        };
        let h = s.intersect([0.0, 0.0, 1.0]).unwrap();
        assert!((h.t - 900.0).abs() < 1e-9);
        assert_eq!(h.normal, [0.0, 0.0, -1.0]);
        assert!(s.intersect(normalize([1.0, 0.0, 1.0])).is_none());
    }

    #[test]
    fn box_hits_nearest_face() {
        let b = Shape::Cuboid {
            min: [-100.0, -100.0, 500.0],
            max: [100.0, 100.0, 700.0],
        };
        let h = b.intersect([0.0, 0.0, 1.0]).unwrap();
        assert!((h.t - 500.0).abs() < 1e-9);
        assert_eq!(h.normal, [0.0, 0.0, -1.0]);
        let offset = Shape::Cuboid {
            min: [100.0, -100.0, 500.0],
            max: [300.0, 100.0, 700.0],
        };
        let side = offset.intersect(normalize([0.18, 0.0, 1.0])).unwrap();
        assert_eq!(side.normal, [-1.0, 0.0, 0.0]);
        assert!(b.intersect(normalize([1.0, 0.0, 1.0])).is_none());
    }

    #[test]
    fn plane_normal_is_flipped_toward_camera() {
        let p = Shape::Plane {
            point: [0.0, 0.0, 1000.0],
            normal: [0.0, 0.0, 1.0],
        };
        let h = p.intersect([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(h.normal, [0.0, 0.0, -1.0]);
        assert!(p.intersect([1.0, 0.0, 0.0]).is_none());
    }
}
