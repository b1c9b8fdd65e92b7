//! Shared linear-algebra support: CSR sparse matrices, a banded LU, and a
//! dense stable-Lyapunov solver.

mod banded;
mod csr;
mod lyapunov;

pub use banded::BandedLu;
pub use csr::CsrMatrix;
pub use lyapunov::solve_stable_lyapunov;
