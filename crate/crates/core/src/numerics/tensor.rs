use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::dims("Tensor::from_vec", &[len], &[data.len()]));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != self.data.len() {
            return Err(Error::dims("Tensor::reshape", &[self.data.len()], &[len]));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::DimMismatch {
                context: "rank-3 tensor",
                expected: vec![3],
                found: vec![self.dims.len()],
            }),
        }
    }

    pub fn same_dims(&self, other: &Tensor, context: &'static str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::dims(context, &self.dims, &other.dims));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_dims(other, "Tensor::zip_map")?;
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.same_dims(other, "Tensor::add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Channel slice `[c0, c1)` of a rank-3 tensor.
    pub fn channels(&self, c0: usize, c1: usize) -> Result<Tensor> {
        let (c, h, w) = self.chw()?;
        if c0 > c1 || c1 > c {
            return Err(Error::dims("Tensor::channels", &[c], &[c0, c1]));
        }
        let plane = h * w;
        Tensor::from_vec(&[c1 - c0, h, w], self.data[c0 * plane..c1 * plane].to_vec())
    }

    /// Concatenate rank-3 tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Domain("concat of zero tensors".into()))?;
        let (_, h, w) = first.chw()?;
        let mut data = Vec::new();
        let mut c_total = 0;
        for p in parts {
            let (c, ph, pw) = p.chw()?;
            if (ph, pw) != (h, w) {
                return Err(Error::dims("Tensor::concat_channels", &[h, w], &[ph, pw]));
            }
            c_total += c;
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec(&[c_total, h, w], data)
    }

    /// `[C,H,W]` to token-major `[H*W, C]`.
    pub fn to_tokens(&self) -> Result<Tensor> {
        let (c, h, w) = self.chw()?;
        let n = h * w;
        let mut out = vec![0.0; n * c];
        for ch in 0..c {
            let src = &self.data[ch * n..(ch + 1) * n];
            for (t, &v) in src.iter().enumerate() {
                out[t * c + ch] = v;
            }
        }
        Tensor::from_vec(&[n, c], out)
    }

    /// Token-major `[H*W, C]` back to `[C,H,W]`.
    pub fn from_tokens(tokens: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        let (n, c) = match tokens.dims[..] {
            [n, c] => (n, c),
            _ => return Err(Error::dims("Tensor::from_tokens", &[2], &[tokens.rank()])),
        };
        if n != h * w {
            return Err(Error::dims("Tensor::from_tokens", &[h * w], &[n]));
        }
        let mut out = vec![0.0; n * c];
        for t in 0..n {
            for ch in 0..c {
                out[ch * n + t] = tokens.data[t * c + ch];
            }
        }
        Tensor::from_vec(&[c, h, w], out)
    }
}
