//! Pure and mixed states, Hamiltonians, and one-step propagators.

use rand::Rng;
use rand_distr::StandardNormal;

use super::matrix::{expm, expm_hermitian, sigma_x, sigma_y, sigma_z, ComplexMatrix, C64};
use crate::error::{Error, Result};

pub const NORM_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-10;

/// Normalized state vector of dimension 2 or 4.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    amplitudes: Vec<C64>,
}

impl QuantumState {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        let norm = ket_norm(&amplitudes);
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Invariant(format!("state norm {norm} is not 1")));
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes `amplitudes`; fails on a zero vector.
    pub fn normalized(amplitudes: Vec<C64>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        let norm = ket_norm(&amplitudes);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidArgument("cannot normalize a zero vector".into()));
        }
        Ok(Self {
            amplitudes: amplitudes.into_iter().map(|a| a / norm).collect(),
        })
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        check_dim(dim)?;
        if index >= dim {
            return Err(Error::InvalidArgument(format!("basis index {index} >= {dim}")));
        }
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[index] = C64::new(1.0, 0.0);
        Ok(Self { amplitudes: amps })
    }

    /// Haar-random pure state: a normalized complex Gaussian vector.
    pub fn haar_random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        let amps = (0..dim)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        Self::normalized(amps)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn projector(&self) -> ComplexMatrix {
        let d = self.dim();
        let mut m = ComplexMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = self.amplitudes[i] * self.amplitudes[j].conj();
            }
        }
        m
    }
}

/// Valid single-qubit density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if matrix.rows() != 2 || !matrix.is_square() {
            return Err(Error::Dimension("density matrices are 2x2".into()));
        }
        matrix.require_hermitian()?;
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::Invariant(format!("trace {tr} is not 1")));
        }
        let (values, _) = matrix.eigh()?;
        if values[0] < -POSITIVITY_TOL {
            return Err(Error::Invariant(format!(
                "negative eigenvalue {}",
                values[0]
            )));
        }
        Ok(Self { matrix })
    }

    pub fn from_pure(psi: &QuantumState) -> Result<Self> {
        Self::new(psi.projector())
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.eigh().expect("hermitian by construction").0[0]
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d == 2 || d == 4 {
        Ok(())
    } else {
        Err(Error::Dimension(format!("state dimension must be 2 or 4, got {d}")))
    }
}

fn ket_norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// `Δσx + (1 − Δ)σz`.
pub fn tls_hamiltonian(delta: f64) -> ComplexMatrix {
    sigma_x()
        .scale_real(delta)
        .add(&sigma_z().scale_real(1.0 - delta))
        .expect("2x2")
}

/// Two-spin Heisenberg exchange with local z fields:
/// `J(σx⊗σx + σy⊗σy + σz⊗σz) + c1 σz⊗I + c2 I⊗σz`.
pub fn heisenberg_hamiltonian(j: f64, c1: f64, c2: f64) -> ComplexMatrix {
    let id = ComplexMatrix::identity(2);
    let exchange = sigma_x()
        .kron(&sigma_x())
        .add(&sigma_y().kron(&sigma_y()))
        .and_then(|m| m.add(&sigma_z().kron(&sigma_z())))
        .expect("4x4");
    exchange
        .scale_real(j)
        .add(&sigma_z().kron(&id).scale_real(c1))
        .and_then(|m| m.add(&id.kron(&sigma_z()).scale_real(c2)))
        .expect("4x4")
}

/// `exp(−iH dt) ψ`.
pub fn propagate_closed(psi: &QuantumState, h: &ComplexMatrix, dt: f64) -> Result<QuantumState> {
    if h.rows() != psi.dim() || !h.is_square() {
        return Err(Error::Dimension(format!(
            "Hamiltonian {}x{} vs state of dimension {}",
            h.rows(),
            h.cols(),
            psi.dim()
        )));
    }
    let u = expm_hermitian(h, dt)?;
    apply_unitary(&u, psi)
}

pub fn apply_unitary(u: &ComplexMatrix, psi: &QuantumState) -> Result<QuantumState> {
    QuantumState::new(u.matvec(psi.amplitudes())?)
}

/// Dephasing Lindbladian `L` acting on row-major `vec(ρ)`:
/// `ρ̇ = −i[H, ρ] + γ(σz ρ σz − ρ)` with `H = Δσx + (1 − Δ)σz`.
pub fn lindblad_generator(delta: f64, gamma: f64) -> Result<ComplexMatrix> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "damping rate must be non-negative, got {gamma}"
        )));
    }
    let h = tls_hamiltonian(delta);
    let id = ComplexMatrix::identity(2);
    // Row-major vectorization: vec(A ρ B) = (A ⊗ Bᵀ) vec(ρ).
    let commutator = h.kron(&id).sub(&id.kron(&h.transpose()))?;
    let dephasing = sigma_z()
        .kron(&sigma_z().transpose())
        .sub(&ComplexMatrix::identity(4))?;
    commutator
        .scale(C64::new(0.0, -1.0))
        .add(&dephasing.scale_real(gamma))
}

/// One-step superoperator `exp(L dt)`.
pub fn lindblad_propagator(delta: f64, gamma: f64, dt: f64) -> Result<ComplexMatrix> {
    expm(&lindblad_generator(delta, gamma)?.scale_real(dt))
}

pub fn apply_superoperator(superop: &ComplexMatrix, rho: &DensityMatrix) -> Result<DensityMatrix> {
    let out = superop.matvec(rho.matrix().as_slice())?;
    let m = ComplexMatrix::from_vec(2, 2, out)?;
    DensityMatrix::new(m.hermitian_part())
}

/// Exact dephasing-channel propagation over `dt`.
pub fn propagate_lindblad(
    rho: &DensityMatrix,
    delta: f64,
    gamma: f64,
    dt: f64,
) -> Result<DensityMatrix> {
    apply_superoperator(&lindblad_propagator(delta, gamma, dt)?, rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

    #[test]
    fn eigenstate_gets_global_phase() {
        let psi = QuantumState::basis(2, 0).unwrap();
        let out = propagate_closed(&psi, &sigma_z(), 0.3).unwrap();
        let expected = C64::new(0.0, -0.3).exp();
        assert!((out.amplitudes()[0] - expected).norm() < 1e-14);
        assert!(out.amplitudes()[1].norm() < 1e-14);
    }

    #[test]
    fn zero_time_step_is_identity() {
        let mut rng = crate::seed::rng_from(3);
        let psi = QuantumState::haar_random(4, &mut rng).unwrap();
        let h = heisenberg_hamiltonian(0.4, 0.2, 0.9);
        let out = propagate_closed(&psi, &h, 0.0).unwrap();
        for (a, b) in out.amplitudes().iter().zip(psi.amplitudes()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn sigma_x_half_pi_flips_with_phase() {
        // exp(−iσx π/2) = −iσx
        let psi = QuantumState::basis(2, 0).unwrap();
        let out = propagate_closed(&psi, &sigma_x(), FRAC_PI_2).unwrap();
        assert!(out.amplitudes()[0].norm() < 1e-14);
        assert!((out.amplitudes()[1] - C64::new(0.0, -1.0)).norm() < 1e-14);
    }

    #[test]
    fn dimension_mismatch() {
        let psi = QuantumState::basis(2, 0).unwrap();
        let h = heisenberg_hamiltonian(1.0, 0.0, 0.0);
        assert!(matches!(propagate_closed(&psi, &h, 0.1), Err(Error::Dimension(_))));
    }

    #[test]
    fn heisenberg_examples() {
        let zero = heisenberg_hamiltonian(0.0, 0.0, 0.0);
        assert!(zero.max_abs_diff(&ComplexMatrix::zeros(4, 4)) == 0.0);

        let (vals, _) = heisenberg_hamiltonian(1.0, 0.0, 0.0).eigh().unwrap();
        let expected = [-3.0, 1.0, 1.0, 1.0];
        for (v, e) in vals.iter().zip(expected) {
            assert!((v - e).abs() < 1e-12, "{vals:?}");
        }

        let field = heisenberg_hamiltonian(0.0, 1.0, 0.0);
        let diag = ComplexMatrix::diag(
            &[1.0, 1.0, -1.0, -1.0].map(|x| C64::new(x, 0.0)),
        );
        assert!(field.max_abs_diff(&diag) < 1e-15);
    }

    #[test]
    fn closed_limit_of_lindblad() {
        let mut rng = crate::seed::rng_from(11);
        let psi = QuantumState::haar_random(2, &mut rng).unwrap();
        let rho = DensityMatrix::from_pure(&psi).unwrap();
        let (delta, dt) = (0.37, 0.25);
        let open = propagate_lindblad(&rho, delta, 0.0, dt).unwrap();
        let u = expm_hermitian(&tls_hamiltonian(delta), dt).unwrap();
        let closed = u.matmul(rho.matrix()).unwrap().matmul(&u.adjoint()).unwrap();
        assert!(open.matrix().max_abs_diff(&closed) < 1e-12);
    }

    #[test]
    fn pure_dephasing_under_sigma_z() {
        let plus = QuantumState::new(vec![C64::new(FRAC_1_SQRT_2, 0.0); 2]).unwrap();
        let rho = DensityMatrix::from_pure(&plus).unwrap();
        let (gamma, dt) = (0.3, 0.7);
        let out = propagate_lindblad(&rho, 0.0, gamma, dt).unwrap();
        let m = out.matrix();
        assert!((m[(0, 0)].re - 0.5).abs() < 1e-12);
        assert!((m[(1, 1)].re - 0.5).abs() < 1e-12);
        // H = σz rotates the coherence by e^{−2i dt}; dephasing shrinks it by e^{−2γ dt}.
        let expected = C64::new(0.0, -2.0 * dt).exp() * 0.5 * (-2.0 * gamma * dt).exp();
        assert!((m[(0, 1)] - expected).norm() < 1e-12);
    }

    #[test]
    fn lindblad_zero_dt_and_negative_gamma() {
        let rho = DensityMatrix::new(ComplexMatrix::identity(2).scale_real(0.5)).unwrap();
        let out = propagate_lindblad(&rho, 0.6, 0.4, 0.0).unwrap();
        assert!(out.matrix().max_abs_diff(rho.matrix()) < 1e-15);
        assert!(matches!(
            propagate_lindblad(&rho, 0.6, -0.1, 0.1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn density_matrix_validation() {
        let bad_trace = ComplexMatrix::identity(2);
        assert!(DensityMatrix::new(bad_trace).is_err());
        let negative = ComplexMatrix::from_real_rows(&[&[1.5, 0.0], &[0.0, -0.5]]).unwrap();
        assert!(DensityMatrix::new(negative).is_err());
    }
}
