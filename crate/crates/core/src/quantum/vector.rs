//! Real-vector encodings of states: all real parts first, then all
//! imaginary parts (row-major for matrices).

use super::matrix::{ComplexMatrix, C64};
use super::state::{DensityMatrix, QuantumState};
use crate::error::{check_len, Error, Result};

/// How a real vector encodes a quantum state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Ket,
    Rho,
}

fn split_complex(values: &[C64]) -> Vec<f64> {
    values
        .iter()
        .map(|c| c.re)
        .chain(values.iter().map(|c| c.im))
        .collect()
}

fn join_complex(v: &[f64]) -> Vec<C64> {
    let half = v.len() / 2;
    (0..half).map(|i| C64::new(v[i], v[half + i])).collect()
}

pub fn vectorize_ket(psi: &QuantumState) -> Vec<f64> {
    split_complex(psi.amplitudes())
}

pub fn vectorize_rho(rho: &DensityMatrix) -> Vec<f64> {
    split_complex(rho.matrix().as_slice())
}

/// Raw amplitudes from a length-4 or length-8 vector; no normalization.
pub fn devectorize_ket(v: &[f64]) -> Result<Vec<C64>> {
    if v.len() != 4 && v.len() != 8 {
        return Err(Error::Dimension(format!(
            "ket vectors have length 4 or 8, got {}",
            v.len()
        )));
    }
    Ok(join_complex(v))
}

/// Raw 2×2 matrix from a length-8 vector; no validity checks.
pub fn devectorize_rho(v: &[f64]) -> Result<ComplexMatrix> {
    check_len("density matrix vector", v.len(), 8)?;
    ComplexMatrix::from_vec(2, 2, join_complex(v))
}
