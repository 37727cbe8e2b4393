//! Depth and surface-normal error metrics, and point-cloud back-projection.
//!
//! δ accuracies count pixels with `max(pred/gt, gt/pred) < base^i` for
//! `i = 1, 2, 3`, strict inequality, `base = 1.25` unless overridden.

use std::fmt::Write as _;
use std::io::Write;

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::polar::{CameraIntrinsics, Vec3};

pub const DELTA_BASE: f64 = 1.25;

/// Angular thresholds in degrees, as used for normal accuracy tables.
pub const NORMAL_THRESHOLDS: [f64; 3] = [11.5, 22.5, 30.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_pixels: usize,
}

/// Metrics over `gt`'s valid mask. Pixels where `pred` is invalid count as
/// depth zero.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMetrics> {
    depth_metrics_with_base(pred, gt, DELTA_BASE)
}

pub fn depth_metrics_with_base(pred: &DepthMap, gt: &DepthMap, base: f64) -> Result<DepthMetrics> {
    pred.same_dims(gt, "depth_metrics")?;
    if !(base > 1.0) {
        return Err(Error::Domain(format!("δ threshold base {base} must exceed 1")));
    }
    let thresholds = [base, base * base, base * base * base];
    let pred_values = pred.to_zero_invalid();
    let mut n = 0usize;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut hits = [0usize; 3];
    for ((&p, &g), &ok) in pred_values.data().iter().zip(gt.depth().data()).zip(gt.valid()) {
        if !ok {
            continue;
        }
        n += 1;
        let e = p - g;
        sq += e * e;
        abs += e.abs();
        let ratio = (p / g).max(g / p);
        for (h, t) in hits.iter_mut().zip(thresholds) {
            if ratio < t {
                *h += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let frac = |h: usize| h as f64 / n as f64;
    Ok(DepthMetrics {
        rmse: (sq / n as f64).sqrt(),
        mae: abs / n as f64,
        delta1: frac(hits[0]),
        delta2: frac(hits[1]),
        delta3: frac(hits[2]),
        n_pixels: n,
    })
}

/// Averages per-sample metrics.
#[derive(Clone, Debug, Default)]
pub struct MetricsMean {
    sum: [f64; 5],
    pixels: usize,
    samples: usize,
}

impl MetricsMean {
    pub fn push(&mut self, m: &DepthMetrics) {
        for (s, v) in self.sum.iter_mut().zip([m.rmse, m.mae, m.delta1, m.delta2, m.delta3]) {
            *s += v;
        }
        self.pixels += m.n_pixels;
        self.samples += 1;
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn mean(&self) -> Option<DepthMetrics> {
        if self.samples == 0 {
            return None;
        }
        let k = self.samples as f64;
        Some(DepthMetrics {
            rmse: self.sum[0] / k,
            mae: self.sum[1] / k,
            delta1: self.sum[2] / k,
            delta2: self.sum[3] / k,
            delta3: self.sum[4] / k,
            n_pixels: self.pixels,
        })
    }
}

pub const METRICS_CSV_HEADER: &str = "mode,samples,pixels,rmse_mm,mae_mm,delta1,delta2,delta3";

/// One CSV row per `(label, samples, metrics)` entry.
pub fn metrics_csv(rows: &[(String, usize, DepthMetrics)]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for (label, samples, m) in rows {
        let _ = writeln!(
            out,
            "{label},{samples},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.n_pixels, m.rmse, m.mae, m.delta1, m.delta2, m.delta3
        );
    }
    out
}

pub fn metrics_table(rows: &[(String, usize, DepthMetrics)]) -> String {
    let mut out = format!(
        "{:<18} {:>7} {:>10} {:>10} {:>7} {:>7} {:>7}\n",
        "mode", "samples", "RMSE(mm)", "MAE(mm)", "δ1", "δ2", "δ3"
    );
    for (label, samples, m) in rows {
        let _ = writeln!(
            out,
            "{label:<18} {samples:>7} {:>10.3} {:>10.3} {:>7.3} {:>7.3} {:>7.3}",
            m.rmse, m.mae, m.delta1, m.delta2, m.delta3
        );
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalMetrics {
    /// Degrees.
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
    /// Fractions of pixels below each threshold.
    pub pct_11_5: f64,
    pub pct_22_5: f64,
    pub pct_30: f64,
}

pub fn normal_metrics(pred: &Tensor, gt: &Tensor, mask: &[bool]) -> Result<NormalMetrics> {
    normal_metrics_with_thresholds(pred, gt, mask, NORMAL_THRESHOLDS)
}

/// Normals are `[3, H, W]` unit vectors; the first threshold replaces the
/// 11.5° default where a different convention is wanted.
pub fn normal_metrics_with_thresholds(
    pred: &Tensor,
    gt: &Tensor,
    mask: &[bool],
    thresholds: [f64; 3],
) -> Result<NormalMetrics> {
    pred.same_dims(gt, "normal_metrics")?;
    let (c, h, w) = gt.chw()?;
    let n = h * w;
    if c != 3 || mask.len() != n {
        return Err(Error::dims("normal_metrics", &[3, n], &[c, mask.len()]));
    }
    let vec_at = |t: &Tensor, i: usize| [t.data()[i], t.data()[n + i], t.data()[2 * n + i]];
    let mut angles = Vec::new();
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (a, b) = (vec_at(pred, i), vec_at(gt, i));
        for v in [a, b] {
            if (crate::polar::norm(v) - 1.0).abs() > 1e-3 {
                return Err(Error::Domain(format!("normal at pixel {i} is not unit length")));
            }
        }
        let d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        angles.push(d.clamp(-1.0, 1.0).acos().to_degrees());
    }
    if angles.is_empty() {
        return Err(Error::EmptyMask);
    }
    let k = angles.len() as f64;
    let mean = angles.iter().sum::<f64>() / k;
    let rmse = (angles.iter().map(|a| a * a).sum::<f64>() / k).sqrt();
    let within = |t: f64| angles.iter().filter(|&&a| a < t).count() as f64 / k;
    let (p1, p2, p3) = (within(thresholds[0]), within(thresholds[1]), within(thresholds[2]));
    let mut sorted = angles;
    sorted.sort_by(f64::total_cmp);
    Ok(NormalMetrics {
        mean,
        median: sorted[(sorted.len() - 1) / 2],
        rmse,
        pct_11_5: p1,
        pct_22_5: p2,
        pct_30: p3,
    })
}

/// Camera-frame points of every valid pixel, row-major.
pub fn backproject(depth: &DepthMap, intrinsics: &CameraIntrinsics) -> Result<Vec<Vec3>> {
    intrinsics.validate()?;
    let (h, w) = depth.dims();
    let mut points = Vec::with_capacity(depth.valid_count());
    for row in 0..h {
        for col in 0..w {
            if let Some(d) = depth.value(row, col) {
                points.push([
                    d * (col as f64 - intrinsics.cx) / intrinsics.fx,
                    d * (row as f64 - intrinsics.cy) / intrinsics.fy,
                    d,
                ]);
            }
        }
    }
    Ok(points)
}

/// ASCII PLY with float `x y z` vertex properties.
pub fn write_ply(mut out: impl Write, points: &[Vec3]) -> Result<()> {
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", points.len())?;
    writeln!(out, "property float x")?;
    writeln!(out, "property float y")?;
    writeln!(out, "property float z")?;
    writeln!(out, "end_header")?;
    for p in points {
        writeln!(out, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32)?;
    }
    Ok(())
}

/// Parses the vertex list back out of [`write_ply`] output.
pub fn read_ply(text: &str) -> Result<Vec<Vec3>> {
    let bad = |d: &str| Error::format("PLY", "header", d);
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing `ply` magic"));
    }
    let mut count = None;
    for line in lines.by_ref() {
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(n.trim().parse::<usize>().map_err(|e| bad(&e.to_string()))?);
        }
        if line == "end_header" {
            break;
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;
    let points: Vec<Vec3> = lines
        .take(count)
        .map(|l| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format("PLY", "vertex", e))?;
            match v[..] {
                [x, y, z] => Ok([x, y, z]),
                _ => Err(Error::format("PLY", "vertex", "expected 3 values")),
            }
        })
        .collect::<Result<_>>()?;
    if points.len() != count {
        return Err(Error::format("PLY", "vertex", "fewer vertices than declared"));
    }
    Ok(points)
}

/// `|pred − gt|` on gt-valid pixels, zero elsewhere.
pub fn abs_error_map(pred: &DepthMap, gt: &DepthMap) -> Result<Tensor> {
    pred.same_dims(gt, "abs_error_map")?;
    let p = pred.to_zero_invalid();
    let data = p
        .data()
        .iter()
        .zip(gt.depth().data())
        .zip(gt.valid())
        .map(|((a, b), &ok)| if ok { (a - b).abs() } else { 0.0 })
        .collect();
    Tensor::from_vec(gt.depth().dims(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use polarfuse_oracles::metrics::{depth_reference, normal_reference};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(values: &[f64]) -> DepthMap {
        DepthMap::dense(Tensor::from_vec(&[1, values.len()], values.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn identical_maps_are_perfect() {
        let gt = map(&[500.0, 1200.0, 3000.0]);
        let m = depth_metrics(&gt, &gt).unwrap();
        assert_eq!((m.rmse, m.mae), (0.0, 0.0));
        assert_eq!((m.delta1, m.delta2, m.delta3), (1.0, 1.0, 1.0));
        assert_eq!(m.n_pixels, 3);
    }

    #[test]
    fn hand_derived_two_pixel_case() {
        let m = depth_metrics(&map(&[1000.0, 1300.0]), &map(&[1000.0, 1000.0])).unwrap();
        assert_eq!(m.mae, 150.0);
        assert!((m.rmse - 45000f64.sqrt()).abs() < 1e-12);
        assert!((m.rmse - 212.13).abs() < 5e-3);
        assert_eq!((m.delta1, m.delta2, m.delta3), (0.5, 1.0, 1.0));
    }

    #[test]
    fn empty_mask_is_an_error() {
        let gt = DepthMap::new(Tensor::zeros(&[1, 2]), vec![false, false]).unwrap();
        assert!(matches!(depth_metrics(&gt, &gt), Err(Error::EmptyMask)));
        let n = Tensor::zeros(&[3, 1, 2]);
        assert!(matches!(normal_metrics(&n, &n, &[false, false]), Err(Error::EmptyMask)));
    }

    #[test]
    fn invalid_prediction_counts_as_zero_depth() {
        let pred = DepthMap::new(Tensor::from_vec(&[1, 2], vec![7.0, 1000.0]).unwrap(), vec![false, true]).unwrap();
        let m = depth_metrics(&pred, &map(&[1000.0, 1000.0])).unwrap();
        assert_eq!(m.mae, 500.0);
        assert_eq!(m.delta3, 0.5);
    }

    fn normals(v: &[[f64; 3]]) -> Tensor {
        let n = v.len();
        Tensor::from_fn(&[3, 1, n], |i| v[i % n][i / n])
    }

    #[test]
    fn normal_identity_and_antipodal() {
        let a = normals(&[[0.0, 0.0, -1.0], [0.6, 0.0, -0.8]]);
        let m = normal_metrics(&a, &a, &[true, true]).unwrap();
        assert_eq!((m.mean, m.median, m.rmse), (0.0, 0.0, 0.0));
        assert_eq!((m.pct_11_5, m.pct_22_5, m.pct_30), (1.0, 1.0, 1.0));
        let b = a.scale(-1.0);
        let m = normal_metrics(&a, &b, &[true, true]).unwrap();
        assert!((m.mean - 180.0).abs() < 1e-12 && (m.median - 180.0).abs() < 1e-12);
        assert_eq!((m.pct_11_5, m.pct_22_5, m.pct_30), (0.0, 0.0, 0.0));
    }

    #[test]
    fn median_is_lower_for_even_counts() {
        let gt = normals(&[[0.0, 0.0, 1.0]; 4]);
        let deg = |d: f64| [d.to_radians().sin(), 0.0, d.to_radians().cos()];
        let pred = normals(&[deg(40.0), deg(10.0), deg(30.0), deg(20.0)]);
        let m = normal_metrics(&pred, &gt, &[true; 4]).unwrap();
        assert!((m.median - 20.0).abs() < 1e-9);
    }

    #[test]
    fn backprojection_examples() {
        let k = CameraIntrinsics::new(500.0, 500.0, 1.0, 1.0).unwrap();
        let mut t = Tensor::filled(&[3, 3], 800.0);
        t.data_mut()[4] = 1000.0;
        t.data_mut()[0] = 0.0;
        let d = DepthMap::from_zero_invalid(t).unwrap();
        let pts = backproject(&d, &k).unwrap();
        assert_eq!(pts.len(), d.valid_count());
        assert_eq!(pts[3], [0.0, 0.0, 1000.0]);
        for (p, i) in pts.iter().zip((0..9).filter(|&i| i != 0)) {
            let (u, w) = k.project(*p);
            assert!((u - (i % 3) as f64).abs() < 1e-9 && (w - (i / 3) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn ply_round_trip() {
        let pts = vec![[1.0, -2.5, 1000.0], [0.0, 0.0, 250.0]];
        let mut buf = Vec::new();
        write_ply(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("ply\nformat ascii 1.0\nelement vertex 2\n"));
        assert_eq!(read_ply(&text).unwrap(), pts);
    }

    proptest! {
        #[test]
        fn depth_metrics_match_brute_force(seed in any::<u64>(), n in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt: Vec<f64> = (0..n).map(|_| rng.gen_range(200.0..5000.0)).collect();
            let pred: Vec<f64> = gt.iter().map(|g| g * rng.gen_range(0.4..2.5)).collect();
            let mut valid: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.8)).collect();
            valid[0] = true;
            let gt_map = DepthMap::new(Tensor::from_vec(&[1, n], gt.clone()).unwrap(), valid.clone()).unwrap();
            let m = depth_metrics(&map(&pred), &gt_map).unwrap();
            let r = depth_reference(&pred, &gt, &valid, DELTA_BASE);
            prop_assert_eq!((m.rmse, m.mae, m.n_pixels), (r.rmse, r.mae, r.n));
            prop_assert_eq!([m.delta1, m.delta2, m.delta3], r.delta);
            prop_assert!(m.rmse >= m.mae);
            prop_assert!(m.delta1 <= m.delta2 && m.delta2 <= m.delta3 && m.delta3 <= 1.0);
        }

        #[test]
        fn depth_metrics_scale_and_permutation(seed in any::<u64>(), k in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt: Vec<f64> = (0..6).map(|_| rng.gen_range(200.0..5000.0)).collect();
            let pred: Vec<f64> = gt.iter().map(|g| g * rng.gen_range(0.6..1.6)).collect();
            let base = depth_metrics(&map(&pred), &map(&gt)).unwrap();
            let scaled = depth_metrics(
                &map(&pred.iter().map(|v| v * k).collect::<Vec<_>>()),
                &map(&gt.iter().map(|v| v * k).collect::<Vec<_>>()),
            ).unwrap();
            prop_assert!((scaled.rmse - k * base.rmse).abs() <= 1e-9 * scaled.rmse.max(1.0));
            prop_assert!((scaled.mae - k * base.mae).abs() <= 1e-9 * scaled.mae.max(1.0));
            prop_assert_eq!(
                [scaled.delta1, scaled.delta2, scaled.delta3],
                [base.delta1, base.delta2, base.delta3]
            );
            let rev = |v: &[f64]| v.iter().rev().copied().collect::<Vec<_>>();
            let perm = depth_metrics(&map(&rev(&pred)), &map(&rev(&gt))).unwrap();
            prop_assert!((perm.rmse - base.rmse).abs() < 1e-9 && (perm.mae - base.mae).abs() < 1e-9);
            prop_assert_eq!(perm.delta1, base.delta1);
        }

        #[test]
        fn normal_metrics_match_brute_force(seed in any::<u64>(), n in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut unit = || crate::polar::normalize([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..-0.1)]);
            let a: Vec<[f64; 3]> = (0..n).map(|_| unit()).collect();
            let b: Vec<[f64; 3]> = (0..n).map(|_| unit()).collect();
            let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
            mask[n - 1] = true;
            let m = normal_metrics(&normals(&a), &normals(&b), &mask).unwrap();
            let r = normal_reference(&a, &b, &mask, &NORMAL_THRESHOLDS);
            prop_assert_eq!((m.mean, m.median, m.rmse), (r.mean, r.median, r.rmse));
            prop_assert_eq!(vec![m.pct_11_5, m.pct_22_5, m.pct_30], r.within);
        }
    }
}
