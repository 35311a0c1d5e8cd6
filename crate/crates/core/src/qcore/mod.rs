//! Complex linear algebra and quantum-state primitives.

pub mod eigen;
pub mod matrix;
pub mod random;
pub mod state;

pub use eigen::{eigh, eigvalsh, hermitian_sign, trace_distance, HermitianEigen};
pub use matrix::{kron_vec, ComplexMatrix};
pub use state::{
    fidelity_to_pure, partial_trace, partial_trace_multi, purity, target_amplitudes, DensityMatrix,
    Party, SchmidtState, TargetQubitState,
};

/// Kronecker product (free-function form).
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kron(b)
}
