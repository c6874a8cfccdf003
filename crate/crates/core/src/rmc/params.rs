use ndarray::Array2;
use rand::Rng;

/// Named parameter tensors in a fixed order.
///
/// Gradients and optimizer moments use the same type, so every structure
/// that mirrors a model is congruent with it by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl Parameters {
    pub(crate) fn new() -> Self {
        Parameters {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Array2<f64>>) -> Self {
        assert_eq!(names.len(), tensors.len());
        Parameters { names, tensors }
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, tensor: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn zeros_like(&self) -> Self {
        Parameters {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Array2::zeros(t.raw_dim()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            *t *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Same names and shapes, in the same order.
    pub fn is_congruent(&self, other: &Parameters) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }
}

/// Glorot-uniform matrix.
pub(crate) fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize, gain: f64) -> Array2<f64> {
    let limit = gain * (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
}
