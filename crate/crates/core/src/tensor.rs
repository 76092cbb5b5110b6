//! Dense row-major tensors over real, complex, or byte scalars.
//!
//! A [`Tensor`] is the carrier type for every image, measurement and
//! intermediate in the crate: dimensions plus a flat row-major payload.
//! Arithmetic requires identical dimensions (or an explicit scalar), and
//! dtype mixing is always explicit via `promote`/`real_part`.

use crate::error::{Error, Result};
use num_complex::Complex64;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Dtype {
    Real64,
    Complex128,
    Byte,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::Real64 => 0,
            Dtype::Complex128 => 1,
            Dtype::Byte => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::Real64),
            1 => Ok(Dtype::Complex128),
            2 => Ok(Dtype::Byte),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }
}

#[derive(Clone, PartialEq)]
pub enum TensorData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
    Byte(Vec<u8>),
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor[{:?}; {:?}]", self.dtype(), self.dims)
    }
}

fn check_len(dims: &[usize], len: usize) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid("tensor extents must be positive"));
    }
    let expect: usize = dims.iter().product();
    if expect != len {
        return Err(Error::dims(format!(
            "dims {dims:?} require {expect} scalars, got {len}"
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn zeros_real(dims: &[usize]) -> Tensor {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: TensorData::Real(vec![0.0; n]),
        }
    }

    pub fn zeros_complex(dims: &[usize]) -> Tensor {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: TensorData::Complex(vec![Complex64::new(0.0, 0.0); n]),
        }
    }

    pub fn filled(dims: &[usize], value: f64) -> Tensor {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: TensorData::Real(vec![value; n]),
        }
    }

    pub fn from_real(dims: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_len(dims, data.len())?;
        Ok(Tensor {
            dims: dims.to_vec(),
            data: TensorData::Real(data),
        })
    }

    pub fn from_complex(dims: &[usize], data: Vec<Complex64>) -> Result<Tensor> {
        check_len(dims, data.len())?;
        Ok(Tensor {
            dims: dims.to_vec(),
            data: TensorData::Complex(data),
        })
    }

    pub fn from_bytes(dims: &[usize], data: Vec<u8>) -> Result<Tensor> {
        check_len(dims, data.len())?;
        Ok(Tensor {
            dims: dims.to_vec(),
            data: TensorData::Byte(data),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match &self.data {
            TensorData::Real(_) => Dtype::Real64,
            TensorData::Complex(_) => Dtype::Complex128,
            TensorData::Byte(_) => Dtype::Byte,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    /// Real payload. Panics if the tensor is not real64; use [`Tensor::try_real`]
    /// on untrusted data.
    pub fn real(&self) -> &[f64] {
        match &self.data {
            TensorData::Real(v) => v,
            _ => panic!("expected real64 tensor, got {:?}", self.dtype()),
        }
    }

    pub fn real_mut(&mut self) -> &mut [f64] {
        match &mut self.data {
            TensorData::Real(v) => v,
            other => panic!("expected real64 tensor, got {:?}", match other {
                TensorData::Real(_) => Dtype::Real64,
                TensorData::Complex(_) => Dtype::Complex128,
                TensorData::Byte(_) => Dtype::Byte,
            }),
        }
    }

    pub fn complex(&self) -> &[Complex64] {
        match &self.data {
            TensorData::Complex(v) => v,
            _ => panic!("expected complex128 tensor, got {:?}", self.dtype()),
        }
    }

    pub fn complex_mut(&mut self) -> &mut [Complex64] {
        match &mut self.data {
            TensorData::Complex(v) => v,
            _ => panic!("expected complex128 tensor"),
        }
    }

    pub fn bytes(&self) -> &[u8] {
        match &self.data {
            TensorData::Byte(v) => v,
            _ => panic!("expected byte tensor, got {:?}", self.dtype()),
        }
    }

    pub fn try_real(&self) -> Result<&[f64]> {
        match &self.data {
            TensorData::Real(v) => Ok(v),
            _ => Err(Error::DtypeMismatch(format!(
                "expected real64, got {:?}",
                self.dtype()
            ))),
        }
    }

    pub fn try_complex(&self) -> Result<&[Complex64]> {
        match &self.data {
            TensorData::Complex(v) => Ok(v),
            _ => Err(Error::DtypeMismatch(format!(
                "expected complex128, got {:?}",
                self.dtype()
            ))),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self.data, TensorData::Complex(_))
    }

    fn assert_same_shape(&self, other: &Tensor, op: &str) {
        assert_eq!(
            self.dims, other.dims,
            "{op}: dims {:?} vs {:?}",
            self.dims, other.dims
        );
    }

    /// Elementwise sum. Panics on dims/dtype mismatch (shape bugs are
    /// programming errors, matching ndarray-style semantics).
    pub fn add(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "add");
        match (&self.data, &other.data) {
            (TensorData::Real(a), TensorData::Real(b)) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Real(a.iter().zip(b).map(|(x, y)| x + y).collect()),
            },
            (TensorData::Complex(a), TensorData::Complex(b)) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Complex(a.iter().zip(b).map(|(x, y)| x + y).collect()),
            },
            _ => panic!("add: mixed dtypes"),
        }
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "sub");
        match (&self.data, &other.data) {
            (TensorData::Real(a), TensorData::Real(b)) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Real(a.iter().zip(b).map(|(x, y)| x - y).collect()),
            },
            (TensorData::Complex(a), TensorData::Complex(b)) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Complex(a.iter().zip(b).map(|(x, y)| x - y).collect()),
            },
            _ => panic!("sub: mixed dtypes"),
        }
    }

    /// Scalar broadcast: multiply every entry by `c`.
    pub fn scale(&self, c: f64) -> Tensor {
        match &self.data {
            TensorData::Real(a) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Real(a.iter().map(|x| x * c).collect()),
            },
            TensorData::Complex(a) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Complex(a.iter().map(|x| x * c).collect()),
            },
            TensorData::Byte(_) => panic!("scale: byte tensor"),
        }
    }

    /// Scalar broadcast: add `c` to every entry of a real tensor.
    pub fn shift(&self, c: f64) -> Tensor {
        match &self.data {
            TensorData::Real(a) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Real(a.iter().map(|x| x + c).collect()),
            },
            _ => panic!("shift: expected real tensor"),
        }
    }

    /// Elementwise product (same dtype).
    pub fn hadamard(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "hadamard");
        match (&self.data, &other.data) {
            (TensorData::Real(a), TensorData::Real(b)) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Real(a.iter().zip(b).map(|(x, y)| x * y).collect()),
            },
            (TensorData::Complex(a), TensorData::Complex(b)) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Complex(a.iter().zip(b).map(|(x, y)| x * y).collect()),
            },
            _ => panic!("hadamard: mixed dtypes"),
        }
    }

    /// Promote a real tensor to complex with zero imaginary part.
    /// Complex input is returned as-is.
    pub fn promote(&self) -> Tensor {
        match &self.data {
            TensorData::Real(a) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Complex(a.iter().map(|&x| Complex64::new(x, 0.0)).collect()),
            },
            TensorData::Complex(_) => self.clone(),
            TensorData::Byte(_) => panic!("promote: byte tensor"),
        }
    }

    pub fn real_part(&self) -> Tensor {
        match &self.data {
            TensorData::Real(_) => self.clone(),
            TensorData::Complex(a) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Real(a.iter().map(|c| c.re).collect()),
            },
            TensorData::Byte(_) => panic!("real_part: byte tensor"),
        }
    }

    pub fn imag_part(&self) -> Tensor {
        match &self.data {
            TensorData::Real(_) => Tensor::zeros_real(&self.dims),
            TensorData::Complex(a) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Real(a.iter().map(|c| c.im).collect()),
            },
            TensorData::Byte(_) => panic!("imag_part: byte tensor"),
        }
    }

    /// Entrywise modulus of a complex tensor (real output).
    pub fn abs(&self) -> Tensor {
        match &self.data {
            TensorData::Real(a) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Real(a.iter().map(|x| x.abs()).collect()),
            },
            TensorData::Complex(a) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Real(a.iter().map(|c| c.norm()).collect()),
            },
            TensorData::Byte(_) => panic!("abs: byte tensor"),
        }
    }

    pub fn conj(&self) -> Tensor {
        match &self.data {
            TensorData::Complex(a) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Complex(a.iter().map(|c| c.conj()).collect()),
            },
            _ => self.clone(),
        }
    }

    pub fn clip(&self, lo: f64, hi: f64) -> Tensor {
        match &self.data {
            TensorData::Real(a) => Tensor {
                dims: self.dims.clone(),
                data: TensorData::Real(a.iter().map(|x| x.clamp(lo, hi)).collect()),
            },
            _ => panic!("clip: expected real tensor"),
        }
    }

    pub fn sum(&self) -> f64 {
        self.real().iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.real().iter().map(|x| (x - m) * (x - m)).sum::<f64>() / self.len() as f64
    }

    /// Euclidean norm; for complex tensors this is the Frobenius norm.
    pub fn norm2(&self) -> f64 {
        match &self.data {
            TensorData::Real(a) => a.iter().map(|x| x * x).sum::<f64>().sqrt(),
            TensorData::Complex(a) => a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt(),
            TensorData::Byte(_) => panic!("norm2: byte tensor"),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match &self.data {
            TensorData::Real(a) => a.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
            TensorData::Complex(a) => a.iter().fold(0.0_f64, |m, c| m.max(c.norm())),
            TensorData::Byte(_) => panic!("max_abs: byte tensor"),
        }
    }

    pub fn all_finite(&self) -> bool {
        match &self.data {
            TensorData::Real(a) => a.iter().all(|x| x.is_finite()),
            TensorData::Complex(a) => a.iter().all(|c| c.re.is_finite() && c.im.is_finite()),
            TensorData::Byte(_) => true,
        }
    }
}

/// Maximum absolute entrywise difference, used pervasively in tests.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.dims(), b.dims(), "max_abs_diff: dims differ");
    match (a.data(), b.data()) {
        (TensorData::Real(x), TensorData::Real(y)) => x
            .iter()
            .zip(y)
            .fold(0.0_f64, |m, (p, q)| m.max((p - q).abs())),
        (TensorData::Complex(x), TensorData::Complex(y)) => x
            .iter()
            .zip(y)
            .fold(0.0_f64, |m, (p, q)| m.max((p - q).norm())),
        _ => panic!("max_abs_diff: mixed dtypes"),
    }
}
