//! Brute-force depth and normal metrics.

#[derive(Clone, Debug, PartialEq)]
pub struct DepthReference {
    pub rmse: f64,
    pub mae: f64,
    pub delta: [f64; 3],
    pub n: usize,
}

pub fn depth_reference(pred: &[f64], gt: &[f64], valid: &[bool], base: f64) -> DepthReference {
    let mut n = 0usize;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut hits = [0usize; 3];
    for i in 0..gt.len() {
        if !valid[i] {
            continue;
        }
        n += 1;
        let e = pred[i] - gt[i];
        sq += e * e;
        abs += e.abs();
        let ratio = if pred[i] / gt[i] > gt[i] / pred[i] {
            pred[i] / gt[i]
        } else {
            gt[i] / pred[i]
        };
        let mut threshold = 1.0;
        for h in hits.iter_mut() {
            threshold *= base;
            if ratio < threshold {
                *h += 1;
            }
        }
    }
    DepthReference {
        rmse: (sq / n as f64).sqrt(),
        mae: abs / n as f64,
        delta: hits.map(|h| h as f64 / n as f64),
        n,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalReference {
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
    pub within: Vec<f64>,
}

/// Normals as `[x, y, z]` triples; `thresholds` in degrees.
pub fn normal_reference(pred: &[[f64; 3]], gt: &[[f64; 3]], valid: &[bool], thresholds: &[f64]) -> NormalReference {
    let mut angles = Vec::new();
    for i in 0..gt.len() {
        if valid[i] {
            let d = pred[i][0] * gt[i][0] + pred[i][1] * gt[i][1] + pred[i][2] * gt[i][2];
            angles.push(d.clamp(-1.0, 1.0).acos().to_degrees());
        }
    }
    let n = angles.len() as f64;
    let mean = angles.iter().sum::<f64>() / n;
    let rmse = (angles.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
    let within = thresholds
        .iter()
        .map(|&t| angles.iter().filter(|&&a| a < t).count() as f64 / n)
        .collect();
    // lower median by selection: smallest a with at least ceil(n/2) values <= a
    let need = (angles.len() + 1) / 2;
    let median = angles
        .iter()
        .copied()
        .filter(|&a| angles.iter().filter(|&&b| b <= a).count() >= need)
        .fold(f64::INFINITY, f64::min);
    NormalReference {
        mean,
        median,
        rmse,
        within,
    }
}
