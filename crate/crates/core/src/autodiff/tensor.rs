use super::TensorError;

/// Dense row-major tensor of 64-bit floats.
///
/// Almost every tensor in this crate is a matrix; vectors are stored as
/// `[1, n]` rows so that bias-add and concatenation have one convention.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidShape { shape });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::DataLength { shape, len: data.len() });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self, TensorError> {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    /// A `[1, n]` row vector.
    pub fn row(values: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![1, values.len()], values)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<(), TensorError> {
        if delta.len() != self.data.len() {
            return Err(TensorError::DataLength {
                shape: self.shape.clone(),
                len: delta.len(),
            });
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("shape is non-empty")
    }

    /// Element `(r, c)` of a matrix.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    /// Row `r` of a matrix as a slice.
    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(TensorError::DataLength { .. })
        ));
        assert!(matches!(
            Tensor::new(vec![0, 3], vec![]),
            Err(TensorError::InvalidShape { .. })
        ));
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::row(vec![1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 1.0]).unwrap();
        t.accumulate_grad(&[0.5, -1.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[1.5, 0.0]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
    }
}
