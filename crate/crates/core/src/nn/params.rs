use indexmap::IndexMap;

use super::NnError;

/// Storage precision of a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    /// IEEE single precision.
    F32,
    /// Upper 16 bits of the single-precision word (sign, 8-bit exponent, 7 mantissa bits).
    T16,
}

impl DType {
    pub fn bits(self) -> u32 {
        match self {
            DType::F32 => 32,
            DType::T16 => 16,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::T16 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::T16),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub dtype: DType,
}

impl ParamTensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Ordered, uniquely named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    tensors: IndexMap<String, ParamTensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        data: Vec<f64>,
        dtype: DType,
    ) -> Result<(), NnError> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::Shape(format!(
                "{name}: shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        if self.tensors.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        self.tensors.insert(name, ParamTensor { shape, data, dtype });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ParamTensor, NnError> {
        self.tensors
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn data(&self, name: &str) -> Result<&[f64], NnError> {
        Ok(&self.get(name)?.data)
    }

    pub fn data_mut(&mut self, name: &str) -> Result<&mut [f64], NnError> {
        self.tensors
            .get_mut(name)
            .map(|t| t.data.as_mut_slice())
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamTensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Round every value to single precision, as it would be stored in an f32 model file.
    pub fn rounded_to_f32(&self) -> ModelParams {
        let mut out = self.clone();
        for (_, t) in out.iter_mut() {
            t.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        out
    }
}

/// Total entries, or only entries whose stored value is not exactly zero.
pub fn count_parameters(params: &ModelParams, include_zeros: bool) -> usize {
    params
        .iter()
        .map(|(_, t)| if include_zeros { t.len() } else { t.nonzero() })
        .sum()
}

/// Gradient buffers mirroring a parameter set's names and lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: IndexMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            grads: params
                .iter()
                .map(|(k, t)| (k.to_string(), vec![0.0; t.len()]))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn accumulate(&mut self, name: &str, delta: &[f64]) -> Result<(), NnError> {
        let g = self
            .grads
            .get_mut(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))?;
        if g.len() != delta.len() {
            return Err(NnError::Shape(format!(
                "{name}: gradient of length {} for {} parameters",
                delta.len(),
                g.len()
            )));
        }
        for (a, b) in g.iter_mut().zip(delta) {
            *a += b;
        }
        Ok(())
    }
}
