use crate::error::{Error, Result};

/// Dense n-dimensional float array, the universal payload for activations.
///
/// Storage is row-major; for the common H x W x C case the flat index is
/// `(h * W + w) * C + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::Dimension(format!(
                "tensor data length {} does not match shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[h, w, c] => Ok((h, w, c)),
            other => Err(Error::Shape(format!(
                "expected rank-3 tensor, got shape {other:?}"
            ))),
        }
    }

    #[inline]
    pub fn at3(&self, h: usize, w: usize, c: usize) -> f64 {
        let (_, wd, cd) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(h * wd + w) * cd + c]
    }

    #[inline]
    pub fn set3(&mut self, h: usize, w: usize, c: usize, v: f64) {
        let (_, wd, cd) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(h * wd + w) * cd + c] = v;
    }
}
