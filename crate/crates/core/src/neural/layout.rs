use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major dense array with an explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::shape(format!("{n} values for {shape:?}"), values.len()));
        }
        Ok(Tensor { shape, values })
    }

    pub fn vector(values: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    /// Size of the innermost dimension.
    pub fn inner(&self) -> usize {
        self.shape.last().copied().unwrap_or(0)
    }

    pub fn rows(&self) -> usize {
        self.values.len().checked_div(self.inner()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named tensor table describing a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    pub tensors: Vec<TensorInfo>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new() -> ParamLayout {
        ParamLayout::default()
    }

    /// Reserve a tensor and return its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.len;
        let info = TensorInfo {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        };
        self.len += info.len();
        self.tensors.push(info);
        offset
    }

    pub fn get(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn check(&self, data: &[f64]) -> Result<()> {
        if data.len() != self.len {
            return Err(Error::shape(self.len, data.len()));
        }
        Ok(())
    }
}
