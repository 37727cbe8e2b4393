//! Polarizer forward model, DoFP decoding, viewing directions, AoLP from
//! surface normals, and guidance-tensor assembly.
//!
//! Stokes convention: `s0 = 2 * I_un`, so a polarizer at angle `a` measures
//! `(s0 + s1 cos 2a + s2 sin 2a) / 2`. AoLP values live in `[0, π)`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Polarizer orientations of a DoFP super-pixel, in capture channel order.
pub const POLARIZER_ANGLES: [f64; 4] = [0.0, FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4];

/// Below this `s0`, DoLP and AoLP are reported as zero.
pub const DARK_FLOOR: f64 = 1e-12;

/// Smallest in-plane magnitude of the AoLP direction vector.
pub const DEGENERATE_EPS: f64 = 1e-12;

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Maps an angle onto the canonical AoLP range `[0, π)`.
pub fn wrap_aolp(angle: f64) -> f64 {
    let r = angle.rem_euclid(PI);
    if r >= PI || r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Intensity behind a linear polarizer at `phi_pol`.
pub fn forward_malus(i_un: f64, rho: f64, phi: f64, phi_pol: f64) -> Result<f64> {
    if !(i_un >= 0.0) || !i_un.is_finite() {
        return Err(Error::Domain(format!("unpolarized intensity {i_un} must be finite and >= 0")));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("DoLP {rho} outside [0, 1]")));
    }
    Ok(i_un * (1.0 + rho * (2.0 * phi - 2.0 * phi_pol).cos()))
}

/// Four polarizer-angle intensity rasters, stored as a `[4, H, W]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct DofpCapture {
    data: Tensor,
}

impl DofpCapture {
    pub fn new(data: Tensor) -> Result<Self> {
        let (c, h, w) = data.chw()?;
        if c != 4 || h == 0 || w == 0 {
            return Err(Error::dims("DofpCapture", &[4, h.max(1), w.max(1)], data.dims()));
        }
        if data.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("DoFP capture (NaN)".into()));
        }
        if data.data().iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::Domain("DoFP intensities must be finite and >= 0".into()));
        }
        Ok(DofpCapture { data })
    }

    /// Assembles a capture from one raster per polarizer angle.
    pub fn from_rasters(rasters: [&Tensor; 4]) -> Result<Self> {
        let dims = rasters[0].dims().to_vec();
        let [h, w] = dims[..] else {
            return Err(Error::dims("DofpCapture raster", &[2], &[dims.len()]));
        };
        let mut data = Vec::with_capacity(4 * h * w);
        for r in rasters {
            if r.dims() != dims {
                return Err(Error::dims("DofpCapture raster", &dims, r.dims()));
            }
            data.extend_from_slice(r.data());
        }
        Self::new(Tensor::from_vec(&[4, h, w], data)?)
    }

    /// Synthesizes a noise-free capture of `state` through the forward model.
    pub fn synthesize(state: &PolarizationState) -> Result<Self> {
        let (h, w) = state.dims();
        let n = h * w;
        let mut data = vec![0.0; 4 * n];
        for (k, &angle) in POLARIZER_ANGLES.iter().enumerate() {
            for p in 0..n {
                data[k * n + p] = forward_malus(
                    state.intensity.data()[p],
                    state.dolp.data()[p],
                    state.aolp.data()[p],
                    angle,
                )?;
            }
        }
        Self::new(Tensor::from_vec(&[4, h, w], data)?)
    }

    pub fn height(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.data.dims()[2]
    }

    /// Raster for polarizer index `k` (see [`POLARIZER_ANGLES`]).
    pub fn angle(&self, k: usize) -> &[f64] {
        let n = self.height() * self.width();
        &self.data.data()[k * n..(k + 1) * n]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }
}

/// Linear Stokes rasters, each `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StokesImage {
    pub s0: Tensor,
    pub s1: Tensor,
    pub s2: Tensor,
}

/// Per-pixel intensity `I_un`, AoLP `φ ∈ [0, π)` and DoLP `ρ ∈ [0, 1]`, each `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarizationState {
    pub intensity: Tensor,
    pub aolp: Tensor,
    pub dolp: Tensor,
}

impl PolarizationState {
    pub fn new(intensity: Tensor, aolp: Tensor, dolp: Tensor) -> Result<Self> {
        let s = PolarizationState {
            intensity,
            aolp,
            dolp,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.intensity.dims()[0], self.intensity.dims()[1])
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.intensity.dims();
        if d.len() != 2 {
            return Err(Error::dims("PolarizationState", &[2], &[d.len()]));
        }
        self.aolp.same_dims(&self.intensity, "PolarizationState aolp")?;
        self.dolp.same_dims(&self.intensity, "PolarizationState dolp")?;
        for ((&i, &phi), &rho) in self
            .intensity
            .data()
            .iter()
            .zip(self.aolp.data())
            .zip(self.dolp.data())
        {
            if !(i.is_finite() && phi.is_finite() && rho.is_finite()) {
                return Err(Error::NonFinite("polarization state".into()));
            }
            if i < 0.0 || !(0.0..PI).contains(&phi) || !(0.0..=1.0).contains(&rho) {
                return Err(Error::Domain(format!(
                    "polarization state out of range (I={i}, φ={phi}, ρ={rho})"
                )));
            }
        }
        Ok(())
    }
}

/// Inverts the four-angle forward model per pixel.
pub fn decode_dofp(capture: &DofpCapture) -> Result<(StokesImage, PolarizationState)> {
    let (h, w) = (capture.height(), capture.width());
    let n = h * w;
    let (i0, i45, i90, i135) = (capture.angle(0), capture.angle(1), capture.angle(2), capture.angle(3));
    let mut s0 = vec![0.0; n];
    let mut s1 = vec![0.0; n];
    let mut s2 = vec![0.0; n];
    let mut intensity = vec![0.0; n];
    let mut aolp = vec![0.0; n];
    let mut dolp = vec![0.0; n];
    for p in 0..n {
        s0[p] = (i0[p] + i45[p] + i90[p] + i135[p]) / 2.0;
        s1[p] = i0[p] - i90[p];
        s2[p] = i45[p] - i135[p];
        intensity[p] = s0[p] / 2.0;
        if s0[p] >= DARK_FLOOR {
            dolp[p] = (s1[p].hypot(s2[p]) / s0[p]).clamp(0.0, 1.0);
            aolp[p] = wrap_aolp(0.5 * s2[p].atan2(s1[p]));
        }
    }
    let t = |v: Vec<f64>| Tensor::from_vec(&[h, w], v);
    Ok((
        StokesImage {
            s0: t(s0)?,
            s1: t(s1)?,
            s2: t(s2)?,
        },
        PolarizationState {
            intensity: t(intensity)?,
            aolp: t(aolp)?,
            dolp: t(dolp)?,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::Domain(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    /// Square-pixel camera with the principal point at the image centre.
    pub fn centered(focal: f64, height: usize, width: usize) -> Result<Self> {
        Self::new(focal, focal, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
    }

    /// Unit ray through pixel column `u`, row `w` (+z into the scene).
    pub fn ray(&self, u: f64, w: f64) -> Vec3 {
        normalize([(u - self.cx) / self.fx, (w - self.cy) / self.fy, 1.0])
    }

    /// Pixel coordinates `(u, w)` of a camera-frame point.
    pub fn project(&self, p: Vec3) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }
}

/// Unit viewing direction per pixel, `[3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewingField {
    pub directions: Tensor,
}

impl ViewingField {
    pub fn dims(&self) -> (usize, usize) {
        (self.directions.dims()[1], self.directions.dims()[2])
    }

    pub fn at(&self, row: usize, col: usize) -> Vec3 {
        let (h, w) = self.dims();
        let p = row * w + col;
        let d = self.directions.data();
        [d[p], d[h * w + p], d[2 * h * w + p]]
    }
}

pub fn viewing_field(intrinsics: &CameraIntrinsics, height: usize, width: usize) -> Result<ViewingField> {
    intrinsics.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::Domain("viewing field needs at least one pixel".into()));
    }
    let n = height * width;
    let mut data = vec![0.0; 3 * n];
    for row in 0..height {
        for col in 0..width {
            let v = intrinsics.ray(col as f64, row as f64);
            let p = row * width + col;
            data[p] = v[0];
            data[n + p] = v[1];
            data[2 * n + p] = v[2];
        }
    }
    Ok(ViewingField {
        directions: Tensor::from_vec(&[3, height, width], data)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReflectionMode {
    Diffuse,
    Specular,
}

/// AoLP predicted for surface normal `n` seen along `v`.
///
/// Diffuse: `Φ = (n × v) × z`; specular: `Φ = ((n × v) × v) × z`;
/// `φ = atan2(Φ_y, Φ_x)` wrapped into `[0, π)`.
pub fn aolp_from_normal(n: Vec3, v: Vec3, mode: ReflectionMode) -> Result<f64> {
    for (name, a) in [("normal", n), ("view", v)] {
        if (norm(a) - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!("{name} vector is not unit length ({})", norm(a))));
        }
    }
    const Z: Vec3 = [0.0, 0.0, 1.0];
    let nv = cross(n, v);
    let phi_vec = match mode {
        ReflectionMode::Diffuse => cross(nv, Z),
        ReflectionMode::Specular => cross(cross(nv, v), Z),
    };
    if phi_vec[0].hypot(phi_vec[1]) < DEGENERATE_EPS {
        return Err(Error::Degenerate("AoLP direction has no in-plane component".into()));
    }
    Ok(wrap_aolp(phi_vec[1].atan2(phi_vec[0])))
}

/// Number of guidance channels: `[I, φ, ρ, v_x, v_y, v_z]`.
pub const GUIDANCE_CHANNELS: usize = 6;

/// Polarization guidance `[I; φ; ρ; V]`, `[6, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceTensor {
    data: Tensor,
}

impl GuidanceTensor {
    pub fn new(data: Tensor) -> Result<Self> {
        let (c, h, w) = data.chw()?;
        if c != GUIDANCE_CHANNELS {
            return Err(Error::dims("GuidanceTensor", &[GUIDANCE_CHANNELS, h, w], data.dims()));
        }
        let g = GuidanceTensor { data };
        g.state()?.validate()?;
        g.check_view()?;
        Ok(g)
    }

    /// Skips range validation. For ablation inputs that deliberately put
    /// non-polarization signals in the φ/ρ slots.
    pub fn new_unchecked(data: Tensor) -> Result<Self> {
        let (c, h, w) = data.chw()?;
        if c != GUIDANCE_CHANNELS {
            return Err(Error::dims("GuidanceTensor", &[GUIDANCE_CHANNELS, h, w], data.dims()));
        }
        Ok(GuidanceTensor { data })
    }

    fn check_view(&self) -> Result<()> {
        let view = ViewingField {
            directions: self.data.channels(3, 6)?,
        };
        let (h, w) = view.dims();
        for r in 0..h {
            for c in 0..w {
                if (norm(view.at(r, c)) - 1.0).abs() > 1e-6 {
                    return Err(Error::Domain("viewing direction is not unit length".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.data.dims()[1], self.data.dims()[2])
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let (h, w) = self.dims();
        &self.data.data()[c * h * w..(c + 1) * h * w]
    }

    /// Channels 0..3 as a polarization state.
    pub fn state(&self) -> Result<PolarizationState> {
        let (h, w) = self.dims();
        let plane = |c: usize| Tensor::from_vec(&[h, w], self.channel(c).to_vec());
        Ok(PolarizationState {
            intensity: plane(0)?,
            aolp: plane(1)?,
            dolp: plane(2)?,
        })
    }

    /// Replaces the AoLP and DoLP channels by copies of the intensity,
    /// leaving the layout unchanged.
    pub fn with_intensity_substitution(&self) -> GuidanceTensor {
        let (h, w) = self.dims();
        let n = h * w;
        let mut data = self.data.clone();
        let d = data.data_mut();
        let (intensity, rest) = d.split_at_mut(n);
        rest[..n].copy_from_slice(intensity);
        rest[n..2 * n].copy_from_slice(intensity);
        GuidanceTensor { data }
    }
}

pub fn build_guidance(state: &PolarizationState, view: &ViewingField) -> Result<GuidanceTensor> {
    state.validate()?;
    let (h, w) = state.dims();
    if view.dims() != (h, w) {
        let (vh, vw) = view.dims();
        return Err(Error::dims("build_guidance", &[h, w], &[vh, vw]));
    }
    let plane = |t: &Tensor| t.clone().reshape(&[1, h, w]);
    let data = Tensor::concat_channels(&[
        &plane(&state.intensity)?,
        &plane(&state.aolp)?,
        &plane(&state.dolp)?,
        &view.directions,
    ])?;
    Ok(GuidanceTensor { data })
}
