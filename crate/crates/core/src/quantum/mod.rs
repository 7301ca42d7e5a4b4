//! Exact small-dimension quantum simulation: Hermitian exponentials,
//! unitary and dephasing propagation, state encodings and infidelity.

mod fidelity;
mod matrix;
mod state;
mod vector;

pub use fidelity::{infidelity, project_to_density};
pub use matrix::{
    expm, expm_hermitian, hermitian_function, sigma_x, sigma_y, sigma_z, ComplexMatrix, C64,
    HERMITIAN_TOL,
};
pub use state::{
    apply_superoperator, apply_unitary, heisenberg_hamiltonian, lindblad_generator,
    lindblad_propagator, propagate_closed, propagate_lindblad, tls_hamiltonian, DensityMatrix,
    QuantumState,
};
pub use vector::{devectorize_ket, devectorize_rho, vectorize_ket, vectorize_rho, StateKind};
