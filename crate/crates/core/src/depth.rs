use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Metric depth in millimetres with a validity mask.
///
/// On disk a depth map is an `[H, W]` PFT1 tensor with `0` marking invalid
/// pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    depth: Tensor,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(depth: Tensor, valid: Vec<bool>) -> Result<Self> {
        let [_, _] = depth.dims()[..] else {
            return Err(Error::dims("DepthMap", &[2], &[depth.rank()]));
        };
        if valid.len() != depth.len() {
            return Err(Error::dims("DepthMap mask", &[depth.len()], &[valid.len()]));
        }
        for (&d, &ok) in depth.data().iter().zip(&valid) {
            if ok && !(d.is_finite() && d > 0.0) {
                return Err(Error::Domain(format!("valid depth {d} must be finite and > 0")));
            }
        }
        Ok(DepthMap { depth, valid })
    }

    /// Every pixel valid.
    pub fn dense(depth: Tensor) -> Result<Self> {
        let n = depth.len();
        Self::new(depth, vec![true; n])
    }

    /// Pixels with value `> 0` are valid; others are stored as `0`.
    pub fn from_zero_invalid(depth: Tensor) -> Result<Self> {
        let valid: Vec<bool> = depth.data().iter().map(|&d| d > 0.0).collect();
        let depth = depth.map(|d| if d > 0.0 { d } else { 0.0 });
        Self::new(depth, valid)
    }

    /// Depth values with invalid pixels set to `0`.
    pub fn to_zero_invalid(&self) -> Tensor {
        let mut t = self.depth.clone();
        for (d, &ok) in t.data_mut().iter_mut().zip(&self.valid) {
            if !ok {
                *d = 0.0;
            }
        }
        t
    }

    pub fn height(&self) -> usize {
        self.depth.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.depth.dims()[1]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn depth(&self) -> &Tensor {
        &self.depth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.width() + col;
        self.valid[i].then(|| self.depth.data()[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn same_dims(&self, other: &DepthMap, context: &'static str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(context, self.depth.dims(), other.depth.dims()));
        }
        Ok(())
    }
}
