//! Central finite-difference certification of analytic gradients.

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Maximum over every checked coordinate.
    pub max_rel_error: f64,
    /// `(name, max relative error)` per checked tensor, lexicographic.
    pub per_tensor: Vec<(String, f64)>,
    /// Location of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// `‖fd − analytic‖ / max(‖fd‖, ‖analytic‖)` per tensor; robust to
    /// single near-zero coordinates.
    pub per_tensor_norm: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_norm_error(&self) -> f64 {
        self.per_tensor_norm.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

pub fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(REL_FLOOR)
}

/// Compares `analytic_grads` against `(f(θ+h·e_i) − f(θ−h·e_i)) / 2h` for
/// every coordinate of every entry in `params`.
pub fn fd_gradcheck<F>(
    f: F,
    params: &ParamStore,
    analytic_grads: &ParamStore,
    h: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Domain(format!("finite-difference step {h} must be positive")));
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_tensor: Vec::new(),
        worst: None,
        per_tensor_norm: Vec::new(),
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let analytic = analytic_grads.get(&name)?.clone();
        let n = params.get(&name)?.len();
        if analytic.len() != n {
            return Err(Error::dims("fd_gradcheck", &[n], &[analytic.len()]));
        }
        let mut tensor_max = 0.0f64;
        let (mut diff_sq, mut fd_sq) = (0.0, 0.0);
        for i in 0..n {
            let orig = params.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = orig + h;
            let plus = f(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig - h;
            let minus = f(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("objective at {name}[{i}]")));
            }
            let fd = (plus - minus) / (2.0 * h);
            let err = relative_error(fd, analytic.data()[i]);
            diff_sq += (fd - analytic.data()[i]).powi(2);
            fd_sq += fd * fd;
            tensor_max = tensor_max.max(err);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
        let denom = fd_sq.sqrt().max(analytic.sum_sq().sqrt()).max(REL_FLOOR);
        report.per_tensor_norm.push((name.clone(), diff_sq.sqrt() / denom));
        report.per_tensor.push((name, tensor_max));
    }
    Ok(report)
}
