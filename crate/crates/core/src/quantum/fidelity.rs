//! State-prediction infidelity for unconstrained network outputs.

use super::matrix::{hermitian_function, ComplexMatrix, C64};
use super::vector::{devectorize_ket, devectorize_rho, StateKind};
use crate::error::{Error, Result};

/// `1 − F` between a predicted and a true state, both real-vectorized.
///
/// Kets: the prediction is normalized and `F = |⟨ψp|ψt⟩|²`. Density
/// matrices: the prediction is projected onto the nearest valid state
/// (Hermitian part, negative eigenvalues clipped, unit trace) and `F` is the
/// Uhlmann fidelity `(Tr √(√ρp ρt √ρp))²`.
pub fn infidelity(pred: &[f64], truth: &[f64], kind: StateKind) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "prediction length {} vs target length {}",
            pred.len(),
            truth.len()
        )));
    }
    let fidelity = match kind {
        StateKind::Ket => ket_fidelity(pred, truth)?,
        StateKind::Rho => rho_fidelity(pred, truth)?,
    };
    Ok((1.0 - fidelity).clamp(0.0, 1.0))
}

fn normalize(v: Vec<C64>) -> Result<Vec<C64>> {
    let n = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidArgument("cannot normalize a zero-norm prediction".into()));
    }
    Ok(v.into_iter().map(|c| c / n).collect())
}

fn ket_fidelity(pred: &[f64], truth: &[f64]) -> Result<f64> {
    let p = normalize(devectorize_ket(pred)?)?;
    let t = normalize(devectorize_ket(truth)?)?;
    let overlap: C64 = p.iter().zip(&t).map(|(a, b)| a.conj() * b).sum();
    Ok(overlap.norm_sqr())
}

/// Nearest density matrix to an arbitrary 2×2 complex matrix.
pub fn project_to_density(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let herm = m.hermitian_part();
    let (values, vectors) = herm.eigh()?;
    let clipped: Vec<f64> = values.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidArgument(
            "prediction has no positive spectral weight".into(),
        ));
    }
    let d = ComplexMatrix::diag(
        &clipped
            .iter()
            .map(|&l| C64::new(l / total, 0.0))
            .collect::<Vec<_>>(),
    );
    Ok(vectors.matmul(&d)?.matmul(&vectors.adjoint())?.hermitian_part())
}

fn psd_sqrt(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    Ok(hermitian_function(m, |l| C64::new(l.max(0.0).sqrt(), 0.0))?.hermitian_part())
}

fn rho_fidelity(pred: &[f64], truth: &[f64]) -> Result<f64> {
    let p = project_to_density(&devectorize_rho(pred)?)?;
    let t = project_to_density(&devectorize_rho(truth)?)?;
    let sp = psd_sqrt(&p)?;
    let inner = sp.matmul(&t)?.matmul(&sp)?.hermitian_part();
    let (values, _) = inner.eigh()?;
    let tr_sqrt: f64 = values.iter().map(|&l| l.max(0.0).sqrt()).sum();
    Ok(tr_sqrt * tr_sqrt)
}
