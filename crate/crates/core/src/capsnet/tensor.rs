//! Dense row-major binary32 tensors with named capsule axes.

use std::fmt;

use super::CapsError;

/// Named axes a capsule tensor can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    /// Batch index `k`.
    Batch,
    /// Low-level capsule index `i`.
    Low,
    /// High-level capsule index `j`.
    High,
    /// Input scalar component (extent `C_L`).
    InDim,
    /// Output scalar component (extent `C_H`).
    OutDim,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::Batch => "batch (k)",
            Axis::Low => "low capsule (i)",
            Axis::High => "high capsule (j)",
            Axis::InDim => "input component (C_L)",
            Axis::OutDim => "output component (C_H)",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapsuleTensor {
    shape: Vec<(Axis, usize)>,
    data: Vec<f32>,
}

impl CapsuleTensor {
    pub fn zeros(shape: &[(Axis, usize)]) -> Self {
        let n = shape.iter().map(|(_, e)| *e).product();
        CapsuleTensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[(Axis, usize)], data: Vec<f32>) -> Result<Self, CapsError> {
        let n: usize = shape.iter().map(|(_, e)| *e).product();
        if n != data.len() {
            return Err(CapsError::DataLength {
                expected: n,
                got: data.len(),
            });
        }
        for (idx, (axis, _)) in shape.iter().enumerate() {
            if shape[..idx].iter().any(|(a, _)| a == axis) {
                return Err(CapsError::DuplicateAxis(*axis));
            }
        }
        let t = CapsuleTensor {
            shape: shape.to_vec(),
            data,
        };
        t.check_finite()?;
        Ok(t)
    }

    pub fn shape(&self) -> &[(Axis, usize)] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extent of `axis`, or `None` when the tensor does not carry it.
    pub fn extent(&self, axis: Axis) -> Option<usize> {
        self.shape.iter().find(|(a, _)| *a == axis).map(|(_, e)| *e)
    }

    /// Checks that the tensor carries exactly `axes` in that order.
    pub fn expect_axes(&self, axes: &[Axis]) -> Result<(), CapsError> {
        let got: Vec<Axis> = self.shape.iter().map(|(a, _)| *a).collect();
        if got != axes {
            return Err(CapsError::AxisLayout {
                expected: axes.to_vec(),
                got,
            });
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<(), CapsError> {
        match self.data.iter().position(|x| !x.is_finite()) {
            Some(index) => Err(CapsError::NonFinite {
                index,
                value: self.data[index],
            }),
            None => Ok(()),
        }
    }

    /// Flat offset of a full multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (i, (_, e))| {
            debug_assert!(i < e);
            acc * e + i
        })
    }

    pub fn get(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }
}

/// Errors for a mismatched axis between two operands.
pub(crate) fn same_extent(axis: Axis, a: &CapsuleTensor, b: &CapsuleTensor) -> Result<usize, CapsError> {
    let ea = a.extent(axis).ok_or(CapsError::MissingAxis(axis))?;
    let eb = b.extent(axis).ok_or(CapsError::MissingAxis(axis))?;
    if ea != eb {
        return Err(CapsError::ShapeMismatch {
            axis,
            left: ea,
            right: eb,
        });
    }
    Ok(ea)
}
