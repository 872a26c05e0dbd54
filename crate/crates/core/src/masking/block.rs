use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense activation array laid out `[sample, channel, row, column]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlock<T> {
    dims: (usize, usize, usize, usize),
    values: Vec<T>,
}

impl<T: Scalar> FeatureBlock<T> {
    pub fn new(dims: (usize, usize, usize, usize), values: Vec<T>) -> Result<Self> {
        let (b, c, h, w) = dims;
        if b == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::structural(format!("feature block dims must be positive, got {dims:?}")));
        }
        if values.len() != b * c * h * w {
            return Err(Error::structural(format!(
                "feature block {dims:?} needs {} values, got {}",
                b * c * h * w,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature block contains non-finite values".into()));
        }
        Ok(Self { dims, values })
    }

    pub fn filled(dims: (usize, usize, usize, usize), value: T) -> Result<Self> {
        let (b, c, h, w) = dims;
        Self::new(dims, vec![value; b * c * h * w])
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims.0
    }

    pub fn channels(&self) -> usize {
        self.dims.1
    }

    pub fn height(&self) -> usize {
        self.dims.2
    }

    pub fn width(&self) -> usize {
        self.dims.3
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        let (_, cs, h, w) = self.dims;
        ((b * cs + c) * h + y) * w + x
    }

    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.values[self.index(b, c, y, x)]
    }

    /// One `(sample, channel)` plane.
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let (_, _, h, w) = self.dims;
        let start = self.index(b, c, 0, 0);
        &self.values[start..start + h * w]
    }

    pub(crate) fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let (_, _, h, w) = self.dims;
        let start = self.index(b, c, 0, 0);
        &mut self.values[start..start + h * w]
    }

    /// Samples `range` as a new block.
    pub fn slice_samples(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let (b, c, h, w) = self.dims;
        if range.start >= range.end || range.end > b {
            return Err(Error::structural(format!("sample range {range:?} outside batch of {b}")));
        }
        let per = c * h * w;
        Self::new(
            (range.len(), c, h, w),
            self.values[range.start * per..range.end * per].to_vec(),
        )
    }

    pub fn cast<U: Scalar>(&self) -> FeatureBlock<U> {
        FeatureBlock {
            dims: self.dims,
            values: self.values.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}
