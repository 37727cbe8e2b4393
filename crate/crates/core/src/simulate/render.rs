use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene::{Material, SceneSpec};
use crate::depth::DepthMap;
use crate::error::Result;
use crate::numerics::Tensor;
use crate::polar::{
    aolp_from_normal, dot, forward_malus, viewing_field, DofpCapture, PolarizationState, Vec3,
    POLARIZER_ANGLES,
};

/// Intensity of background pixels relative to the light.
pub const BACKGROUND_LEVEL: f64 = 0.1;
/// Fraction of the light reflected by a transparent surface itself.
const TRANSPARENT_REFLECTANCE: f64 = 0.25;
/// Fraction of the light behind a transparent surface that passes through it.
const TRANSPARENT_TRANSMITTANCE: f64 = 0.6;

/// Per-pixel surface labels the degradation models need.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceMap {
    pub height: usize,
    pub width: usize,
    /// Material of the nearest hit; `None` for background.
    pub material: Vec<Option<Material>>,
    pub textureless: Vec<bool>,
    /// Depth of the nearest opaque surface behind a transparent hit.
    pub see_through: Vec<Option<f64>>,
}

impl SurfaceMap {
    /// Material codes as an `[H, W]` raster (0 = background).
    pub fn material_raster(&self) -> Tensor {
        let data = self.material.iter().map(|m| m.map_or(0.0, |m| f64::from(m.code()))).collect();
        Tensor::from_vec(&[self.height, self.width], data).expect("sized by construction")
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RenderMetadata {
    pub background_pixels: usize,
    /// Hit pixels whose AoLP is undefined (normal aligned with the view).
    pub degenerate_pixels: usize,
    /// True when no ray hit any primitive.
    pub empty: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Render {
    pub capture: DofpCapture,
    pub gt: DepthMap,
    /// Unit normals facing the camera, `[3, H, W]`; zero on background.
    pub normals: Tensor,
    /// Noise-free polarization state that generated the capture.
    pub state: PolarizationState,
    /// Whether the analytic AoLP at the pixel is well defined.
    pub aolp_defined: Vec<bool>,
    pub surfaces: SurfaceMap,
    pub metadata: RenderMetadata,
}

struct Trace {
    depth: f64,
    normal: Vec3,
    prim: usize,
}

fn nearest(scene: &SceneSpec, dir: Vec3, opaque_only: bool) -> Option<Trace> {
    let mut best: Option<Trace> = None;
    for (i, p) in scene.primitives.iter().enumerate() {
        if opaque_only && p.material == Material::Transparent {
            continue;
        }
        if let Some(hit) = p.shape.intersect(dir) {
            if best.as_ref().map_or(true, |b| hit.t * dir[2] < b.depth) {
                best = Some(Trace {
                    depth: hit.t * dir[2],
                    normal: hit.normal,
                    prim: i,
                });
            }
        }
    }
    best
}

fn shade(scene: &SceneSpec, t: &Trace, dir: Vec3) -> f64 {
    let albedo = scene.primitives[t.prim].albedo;
    scene.light * albedo * (0.2 + 0.8 * (-dot(t.normal, dir)).max(0.0))
}

/// Ray-casts `scene` through every pixel.
pub fn render(scene: &SceneSpec) -> Result<Render> {
    scene.validate()?;
    let (h, w) = (scene.height, scene.width);
    let n = h * w;
    let view = viewing_field(&scene.intrinsics, h, w)?;

    let mut depth = vec![0.0; n];
    let mut valid = vec![false; n];
    let mut normals = vec![0.0; 3 * n];
    let mut intensity = vec![0.0; n];
    let mut aolp = vec![0.0; n];
    let mut dolp = vec![0.0; n];
    let mut aolp_defined = vec![false; n];
    let mut material = vec![None; n];
    let mut textureless = vec![false; n];
    let mut see_through = vec![None; n];
    let mut meta = RenderMetadata::default();

    for row in 0..h {
        for col in 0..w {
            let p = row * w + col;
            let dir = view.at(row, col);
            let Some(hit) = nearest(scene, dir, false) else {
                intensity[p] = BACKGROUND_LEVEL * scene.light;
                meta.background_pixels += 1;
                continue;
            };
            let prim = &scene.primitives[hit.prim];
            depth[p] = hit.depth;
            valid[p] = true;
            for k in 0..3 {
                normals[k * n + p] = hit.normal[k];
            }
            material[p] = Some(prim.material);
            textureless[p] = prim.textureless;
            intensity[p] = if prim.material == Material::Transparent {
                let behind = nearest(scene, dir, true);
                see_through[p] = behind.as_ref().map(|b| b.depth);
                let transmitted = behind.map_or(BACKGROUND_LEVEL * scene.light, |b| shade(scene, &b, dir));
                TRANSPARENT_REFLECTANCE * scene.light + TRANSPARENT_TRANSMITTANCE * transmitted
            } else {
                shade(scene, &hit, dir)
            };
            match aolp_from_normal(hit.normal, dir, prim.material.reflection_mode()) {
                Ok(phi) => {
                    aolp[p] = phi;
                    dolp[p] = scene.dolp.of(prim.material);
                    aolp_defined[p] = true;
                }
                Err(_) => meta.degenerate_pixels += 1,
            }
        }
    }
    meta.empty = meta.background_pixels == n;

    let t2 = |v: Vec<f64>| Tensor::from_vec(&[h, w], v);
    let state = PolarizationState::new(t2(intensity)?, t2(aolp)?, t2(dolp)?)?;

    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let noise = Normal::new(0.0, scene.noise_sigma).map_err(|e| crate::Error::Domain(e.to_string()))?;
    let mut raw = vec![0.0; 4 * n];
    for (k, &angle) in POLARIZER_ANGLES.iter().enumerate() {
        for p in 0..n {
            let clean = forward_malus(state.intensity.data()[p], state.dolp.data()[p], state.aolp.data()[p], angle)?;
            let noisy = if scene.noise_sigma > 0.0 {
                clean + noise.sample(&mut rng)
            } else {
                clean
            };
            raw[k * n + p] = noisy.max(0.0);
        }
    }

    Ok(Render {
        capture: DofpCapture::new(Tensor::from_vec(&[4, h, w], raw)?)?,
        gt: DepthMap::new(t2(depth)?, valid)?,
        normals: Tensor::from_vec(&[3, h, w], normals)?,
        state,
        aolp_defined,
        surfaces: SurfaceMap {
            height: h,
            width: w,
            material,
            textureless,
            see_through,
        },
        metadata: meta,
    })
}
